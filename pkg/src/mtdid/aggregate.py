"""Summary estimands built from group-time effects.

``aggregate_overall`` averages post-treatment cells (t >= g) with weights
proportional to cohort size; ``aggregate_event_study`` averages, for each
event time e, the cells with t - g = e across cohorts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

from .errors import EmptyAggregationError
from .panel import PanelDataset, TreatmentMask

OVERALL = "overall"
EVENT_STUDY = "event_study"


class _Cell(Protocol):
    g: int
    t: int
    estimate: float


@dataclass(frozen=True)
class AggregateResult:
    kind: str
    theta: float
    weights_used: dict = field(default_factory=dict)
    e: int | None = None
    cohorts: tuple[int, ...] = ()


def cohort_sizes(dataset: PanelDataset, mask: TreatmentMask) -> dict[int, float]:
    """Cohort size N_g: total cell weight (individuals) of the cohort's units."""
    sizes = dataset.unit_sizes()
    return {g: float(sizes[mask.in_cohort(g)].sum()) for g in mask.cohorts()}


def _normalize(raw: Mapping) -> dict:
    total = sum(raw.values())
    return {k: v / total for k, v in raw.items()}


def overall_cell_weights(cells: Iterable[tuple[int, int]], group_sizes: Mapping[int, float],
                         within_cohort_first: bool = False) -> dict:
    """Unnormalised weight of each post-treatment cell in the overall effect.

    By default every cell (g, t) with t >= g gets N_g. With
    ``within_cohort_first`` each cohort's cells share N_g equally, i.e. the
    cohort's post-period mean is weighted by N_g.
    """
    post = [(g, t) for g, t in cells if t >= g]
    missing = {g for g, _ in post} - set(group_sizes)
    if missing:
        raise ValueError(f"group_sizes lacks cohorts {sorted(missing)}")
    if not within_cohort_first:
        return {(g, t): float(group_sizes[g]) for g, t in post}
    counts: dict[int, int] = {}
    for g, _ in post:
        counts[g] = counts.get(g, 0) + 1
    return {(g, t): float(group_sizes[g]) / counts[g] for g, t in post}


def aggregate_overall(estimates: Sequence[_Cell], group_sizes: Mapping[int, float],
                      within_cohort_first: bool = False) -> AggregateResult:
    if not estimates:
        raise EmptyAggregationError("no estimates to aggregate")
    values = {(e.g, e.t): e.estimate for e in estimates}
    raw = overall_cell_weights(values, group_sizes, within_cohort_first)
    if not raw:
        raise EmptyAggregationError("no post-treatment cells (t >= g)")
    weights = _normalize(raw)
    theta = float(sum(w * values[c] for c, w in weights.items()))
    cohorts = tuple(sorted({g for g, _ in weights}))
    return AggregateResult(OVERALL, theta, weights, cohorts=cohorts)


def aggregate_event_study(estimates: Sequence[_Cell], group_sizes: Mapping[int, float],
                          e_range: Sequence[int] | None = None) -> list[AggregateResult]:
    """Cohort-size weighted mean of ATT(g, g + e) for each event time.

    The base period e = -1 is identically zero. Event times with no
    contributing cohort are omitted; ``cohorts`` on each result lists the
    cohorts behind it so compositional changes along the path are visible.
    """
    if not estimates:
        raise EmptyAggregationError("no estimates to aggregate")
    values = {(e.g, e.t): e.estimate for e in estimates}
    cohorts_all = sorted({g for g, _ in values})
    if e_range is None:
        times = [t - g for g, t in values] + [-1]
        e_range = (min(times), max(times))
    e_min, e_max = e_range
    if e_min > e_max:
        raise ValueError("empty event-time range")
    out = []
    for e in range(e_min, e_max + 1):
        if e == -1:
            raw = {(g, g - 1): float(group_sizes[g]) for g in cohorts_all}
            weights = _normalize(raw)
            out.append(AggregateResult(EVENT_STUDY, 0.0, weights, e=e, cohorts=tuple(cohorts_all)))
            continue
        cells = [(g, t) for g, t in values if t - g == e]
        if not cells:
            continue
        weights = _normalize({c: float(group_sizes[c[0]]) for c in cells})
        theta = float(sum(w * values[c] for c, w in weights.items()))
        out.append(AggregateResult(EVENT_STUDY, theta, weights, e=e,
                                   cohorts=tuple(sorted(g for g, _ in cells))))
    return out


def weights_sum_to_one(result: AggregateResult, tol: float = 1e-12) -> bool:
    return abs(sum(result.weights_used.values()) - 1.0) <= tol


def selection_rule_holds(result: AggregateResult) -> bool:
    if result.kind == OVERALL:
        return all(t >= g for g, t in result.weights_used)
    return all(t - g == result.e for g, t in result.weights_used)

