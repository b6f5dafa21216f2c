"""End-to-end point estimation: masks -> ATT(g, t) -> aggregates -> complements."""

from __future__ import annotations

from dataclasses import dataclass, field

from .aggregate import AggregateResult, aggregate_event_study, aggregate_overall, cohort_sizes
from .attgt import MODES, UNCONDITIONAL, AttGtEstimate, compute_all_att_gt
from .complement import (
    ComplementSet,
    aggregate_complementary,
    aggregate_complementary_event_study,
    pair_complementary,
)
from .errors import ConfigError, NoEstimatesError
from .panel import PanelDataset, TreatmentMask, assign_treatment_masks


@dataclass(frozen=True)
class Pipeline:
    """Which estimands to produce and how.

    ``e_range`` bounds the event-study path (``None``: every available event
    time). ``complement`` requests the d=4 minus d=2 triple differences and
    needs both masks in ``ds``.
    """

    ds: tuple[int, ...] = (1, 2, 3, 4)
    mode: str = UNCONDITIONAL
    covariate_names: tuple[str, ...] = ()
    e_range: tuple[int, int] | None = None
    complement: bool = False
    within_cohort_first: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.ds or any(d not in (1, 2, 3, 4) for d in self.ds):
            raise ConfigError("ds must be a non-empty subset of {1, 2, 3, 4}")
        if self.complement and not {2, 4} <= set(self.ds):
            raise ConfigError("complementary effects need d=2 and d=4")
        if self.e_range is not None and self.e_range[0] > self.e_range[1]:
            raise ConfigError("e_range must be ordered")


@dataclass
class TreatmentResult:
    mask: TreatmentMask
    estimates: list[AttGtEstimate]
    group_sizes: dict[int, float]
    overall: AggregateResult
    event_study: list[AggregateResult]


@dataclass
class PipelineResult:
    by_d: dict[int, TreatmentResult] = field(default_factory=dict)
    complement: ComplementSet | None = None
    complement_overall: AggregateResult | None = None
    complement_event_study: list[AggregateResult] = field(default_factory=list)

    def point_estimates(self) -> dict[str, float]:
        """Flat estimand-key -> value map (the keys used by the bootstrap)."""
        out: dict[str, float] = {}
        for d, res in self.by_d.items():
            for est in res.estimates:
                out[attgt_key(d, est.g, est.t)] = est.estimate
            out[overall_key(d)] = res.overall.theta
            for agg in res.event_study:
                out[event_key(d, agg.e)] = agg.theta
        if self.complement is not None:
            for c in self.complement.deltas:
                out[f"complement/g={c.g}/t={c.t}"] = c.delta
            if self.complement_overall is not None:
                out["complement/overall"] = self.complement_overall.theta
            for agg in self.complement_event_study:
                out[f"complement/event_study/e={agg.e}"] = agg.theta
        return out


def attgt_key(d: int, g: int, t: int) -> str:
    return f"attgt/d={d}/g={g}/t={t}"


def overall_key(d: int) -> str:
    return f"overall/d={d}"


def event_key(d: int, e: int) -> str:
    return f"event_study/d={d}/e={e}"


def family_of(key: str) -> str:
    """Family used for the uniform band: all members share one critical value."""
    parts = key.split("/")
    if parts[0] == "complement":
        if parts[1] == "overall":
            return "complement/overall"
        if parts[1] == "event_study":
            return "complement/event_study"
        return "complement/attgt"
    return f"{parts[0]}/{parts[1]}"


def run_pipeline(dataset: PanelDataset, pipeline: Pipeline) -> PipelineResult:
    masks = {m.d: m for m in assign_treatment_masks(dataset)}
    result = PipelineResult()
    for d in pipeline.ds:
        mask = masks[d]
        if not mask.treated.any():
            continue
        estimates = compute_all_att_gt(dataset, mask, pipeline.mode, pipeline.covariate_names)
        sizes = cohort_sizes(dataset, mask)
        overall = aggregate_overall(estimates, sizes, pipeline.within_cohort_first)
        event = aggregate_event_study(estimates, sizes, pipeline.e_range)
        result.by_d[d] = TreatmentResult(mask, estimates, sizes, overall, event)
    if not result.by_d:
        raise NoEstimatesError(f"no treated units for any of d={list(pipeline.ds)}")
    if pipeline.complement and 2 in result.by_d and 4 in result.by_d:
        pairs = pair_complementary(result.by_d[4].estimates, result.by_d[2].estimates)
        result.complement = pairs
        if pairs.deltas:
            sizes4 = result.by_d[4].group_sizes
            result.complement_overall = aggregate_complementary(
                pairs.deltas, sizes4, pipeline.within_cohort_first)
            result.complement_event_study = aggregate_complementary_event_study(
                pairs.deltas, sizes4, pipeline.e_range)
    return result
