"""Cluster multiplier bootstrap.

Each draw gives every unit (cluster) an independent unit-exponential weight,
multiplies that unit's cell weights by it and recomputes the whole pipeline:
ATT(g, t) for every mask, cohort sizes, aggregates and complementary effects.
Re-estimation is vectorised over draws; the reference implementation it must
agree with is simply :func:`mtdid.pipeline.run_pipeline` on a reweighted
dataset.

Draw ``b`` for unit ``i`` is a pure function of ``(seed, b, i)``: the
Philox counter-based generator is keyed by ``(seed, b)`` and the ``i``-th
output word is transformed. Draws are evaluated in fixed-size chunks, so the
results do not depend on how many worker threads run them.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attgt import CONDITIONAL
from .errors import ConfigError, UnstableBootstrapError
from .panel import PanelDataset
from .pipeline import (
    Pipeline,
    PipelineResult,
    attgt_key,
    event_key,
    family_of,
    overall_key,
    run_pipeline,
)

logger = logging.getLogger(__name__)

DEFAULT_B = 999
DEFAULT_ALPHA = 0.05
CHUNK_SIZE = 64
MAX_DISCARD_SHARE = 0.10

_U53 = 2.0**-53


def _stream(n: int, seed: int, draw_index: int) -> np.ndarray:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, draw_index], dtype=np.uint64)
    raw = np.random.Philox(key=key, counter=0).random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53
    return -np.log(u)


def cluster_weight_matrix(n_units: int, seed: int, draw_indices: Sequence[int]) -> np.ndarray:
    """Rows of unit-exponential cluster weights, one row per draw index."""
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    return np.vstack([_stream(n_units, seed, int(b)) for b in draw_indices])


def draw_cluster_weights(units: Sequence[str], seed: int, draw_index: int) -> dict[str, float]:
    """Mean-one, variance-one positive weight per unit for one bootstrap draw."""
    units = list(units)
    if not units:
        raise ValueError("no units")
    w = _stream(len(units), seed, draw_index)
    return {u: float(x) for u, x in zip(units, w)}


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    se: float
    ci_low: float
    ci_high: float
    band_low: float
    band_high: float
    draws: int
    seed: int
    discarded_draws: int = 0
    family: str = ""

    def as_dict(self) -> dict:
        return {
            "point": self.point, "se": self.se,
            "ci": [self.ci_low, self.ci_high], "band": [self.band_low, self.band_high],
            "B": self.draws, "seed": self.seed, "discarded_draws": self.discarded_draws,
        }


class _Ratio:
    """Unconditional ATT(g, t) for a block of cells as ratios of linear forms."""

    def __init__(self, n: int, estimates):
        C = len(estimates)
        self.tw = np.zeros((n, C))
        self.twy = np.zeros((n, C))
        self.cw = np.zeros((n, C))
        self.cwy = np.zeros((n, C))
        self.t_ref = np.zeros(C)
        self.c_ref = np.zeros(C)
        for c, est in enumerate(estimates):
            k = est.contributions
            # centring at a reference value makes constant data reproduce exactly
            self.t_ref[c] = k.treated_value[0]
            self.c_ref[c] = k.control_value[0]
            self.tw[k.treated_index, c] = k.treated_weight
            self.twy[k.treated_index, c] = k.treated_weight * (k.treated_value - self.t_ref[c])
            self.cw[k.control_index, c] = k.control_weight
            self.cwy[k.control_index, c] = k.control_weight * (k.control_value - self.c_ref[c])

    def __call__(self, omega: np.ndarray) -> np.ndarray:
        treated = self.t_ref + (omega @ self.twy) / (omega @ self.tw)
        control = self.c_ref + (omega @ self.cwy) / (omega @ self.cw)
        return treated - control


class _Adjusted:
    """Regression-adjusted ATT(g, t) refitted by batched QR for every draw."""

    def __init__(self, estimates):
        self.cells = []
        for est in estimates:
            k = est.contributions
            tx = np.column_stack([np.ones(len(k.treated_index)), k.treated_x])
            cx = np.column_stack([np.ones(len(k.control_index)), k.control_x])
            self.cells.append((k.treated_index, k.treated_weight, k.treated_value, tx,
                               k.control_index, k.control_weight, k.control_value, cx))

    def __call__(self, omega: np.ndarray) -> np.ndarray:
        out = np.empty((omega.shape[0], len(self.cells)))
        eps = np.finfo(float).eps
        for c, (ti, tw, tv, tx, ci, cw, cv, cx) in enumerate(self.cells):
            wc = omega[:, ci] * cw
            sw = np.sqrt(wc)
            Q, R = np.linalg.qr(sw[:, :, None] * cx[None, :, :])
            rhs = np.einsum("mnp,mn->mp", Q, sw * cv)
            diag = np.abs(np.diagonal(R, axis1=1, axis2=2))
            ok = diag.min(axis=1) > max(cx.shape) * eps * diag.max(axis=1)
            R = np.where(ok[:, None, None], R, np.eye(R.shape[1]))
            beta = np.linalg.solve(R, rhs[:, :, None])[:, :, 0]
            wt = omega[:, ti] * tw
            resid = tv[None, :] - beta @ tx.T
            att = np.sum(wt * resid, axis=1) / wt.sum(axis=1)
            out[:, c] = np.where(ok, att, np.nan)
        return out


class _Weighted:
    """A weighted mean of block columns with cohort-size weights recomputed per draw."""

    def __init__(self, columns: np.ndarray, size_cols: np.ndarray, multipliers: np.ndarray):
        self.columns = columns
        self.size_cols = size_cols
        self.multipliers = multipliers

    def __call__(self, values: np.ndarray, sizes: np.ndarray) -> np.ndarray:
        w = sizes[:, self.size_cols] * self.multipliers
        return np.sum(w * values[:, self.columns], axis=1) / w.sum(axis=1)


class BootstrapEngine:
    """Vectorised re-estimation of a :class:`PipelineResult` under cluster weights."""

    def __init__(self, dataset: PanelDataset, pipeline: Pipeline, point: PipelineResult):
        n = dataset.n_units
        unit_size = dataset.unit_sizes()
        self.keys: list[str] = []
        self.point = []
        self._blocks = []
        self._complement = None
        for d, res in point.by_d.items():
            ests = res.estimates
            cells = [(e.g, e.t) for e in ests]
            col = {c: i for i, c in enumerate(cells)}
            cohorts = sorted(res.group_sizes)
            gcol = {g: j for j, g in enumerate(cohorts)}
            G = np.zeros((n, len(cohorts)))
            for g, j in gcol.items():
                members = res.mask.in_cohort(g)
                G[members, j] = unit_size[members]
            solver = _Adjusted(ests) if pipeline.mode == CONDITIONAL else _Ratio(n, ests)
            overall = self._plan(res.overall.weights_used, col, gcol, pipeline.within_cohort_first)
            events = []
            for agg in res.event_study:
                if agg.e == -1:
                    events.append((agg.e, None))
                else:
                    events.append((agg.e, self._plan(agg.weights_used, col, gcol, False)))
            self._blocks.append((d, ests, solver, G, overall, events, col))
            for e in ests:
                self.keys.append(attgt_key(d, e.g, e.t))
                self.point.append(e.estimate)
            self.keys.append(overall_key(d))
            self.point.append(res.overall.theta)
            for agg in res.event_study:
                self.keys.append(event_key(d, agg.e))
                self.point.append(agg.theta)
        if point.complement is not None and point.complement.deltas:
            blocks = {b[0]: b for b in self._blocks}
            col4, col2 = blocks[4][6], blocks[2][6]
            deltas = point.complement.deltas
            idx4 = np.array([col4[(c.g, c.t)] for c in deltas])
            idx2 = np.array([col2[(c.g, c.t)] for c in deltas])
            dcol = {(c.g, c.t): i for i, c in enumerate(deltas)}
            cohorts4 = sorted(point.by_d[4].group_sizes)
            gcol4 = {g: j for j, g in enumerate(cohorts4)}
            overall = None
            if point.complement_overall is not None:
                overall = self._plan(point.complement_overall.weights_used, dcol, gcol4,
                                     pipeline.within_cohort_first)
            events = []
            for agg in point.complement_event_study:
                events.append((agg.e, None if agg.e == -1 else
                               self._plan(agg.weights_used, dcol, gcol4, False)))
            self._complement = (idx4, idx2, overall, events)
            for c in deltas:
                self.keys.append(f"complement/g={c.g}/t={c.t}")
                self.point.append(c.delta)
            if overall is not None:
                self.keys.append("complement/overall")
                self.point.append(point.complement_overall.theta)
            for agg in point.complement_event_study:
                self.keys.append(f"complement/event_study/e={agg.e}")
                self.point.append(agg.theta)
        self.point = np.array(self.point)

    @staticmethod
    def _plan(weights_used, col, gcol, within_cohort_first) -> _Weighted:
        cells = list(weights_used)
        counts: dict[int, int] = {}
        for g, _ in cells:
            counts[g] = counts.get(g, 0) + 1
        mult = np.array([1.0 / counts[g] if within_cohort_first else 1.0 for g, _ in cells])
        return _Weighted(np.array([col[c] for c in cells]),
                         np.array([gcol[g] for g, _ in cells]), mult)

    def evaluate(self, omega: np.ndarray) -> np.ndarray:
        """Estimand values for each row of cluster weights, columns ordered as ``keys``."""
        omega = np.atleast_2d(omega)
        out = []
        att_by_d = {}
        sizes_by_d = {}
        for d, ests, solver, G, overall, events, _ in self._blocks:
            att = solver(omega)
            sizes = omega @ G
            att_by_d[d], sizes_by_d[d] = att, sizes
            out.append(att)
            out.append(overall(att, sizes)[:, None])
            for e, plan in events:
                out.append(np.zeros((omega.shape[0], 1)) if plan is None else plan(att, sizes)[:, None])
        if self._complement is not None:
            idx4, idx2, overall, events = self._complement
            delta = att_by_d[4][:, idx4] - att_by_d[2][:, idx2]
            sizes4 = sizes_by_d[4]
            out.append(delta)
            if overall is not None:
                out.append(overall(delta, sizes4)[:, None])
            for e, plan in events:
                out.append(np.zeros((omega.shape[0], 1)) if plan is None else plan(delta, sizes4)[:, None])
        return np.hstack(out)


def _summarise(keys, point, draws, alpha, B, seed, discarded) -> dict[str, BootstrapResult]:
    dev = draws - point
    se = draws.std(axis=0, ddof=1)
    absdev = np.abs(dev)
    half = np.quantile(absdev, 1.0 - alpha, axis=0)
    live = se > 0
    half = np.where(live, half, 0.0)
    band_half = np.zeros_like(half)
    families: dict[str, list[int]] = {}
    for j, k in enumerate(keys):
        families.setdefault(family_of(k), []).append(j)
    family_names = [family_of(k) for k in keys]
    for name, members in families.items():
        members = np.array([j for j in members if live[j]], dtype=int)
        if members.size == 0:
            continue
        tmax = np.max(absdev[:, members] / se[members], axis=1)
        crit = np.quantile(tmax, 1.0 - alpha)
        band_half[members] = crit * se[members]
    # sup-t dominance: the family maximum cannot fall below any member
    bad = band_half < half * (1.0 - 1e-12)
    if bad.any():
        raise AssertionError(f"uniform band narrower than pointwise interval for {keys[int(np.argmax(bad))]}")
    out = {}
    for j, k in enumerate(keys):
        p = float(point[j])
        out[k] = BootstrapResult(
            point=p, se=float(se[j]),
            ci_low=p - float(half[j]), ci_high=p + float(half[j]),
            band_low=p - float(band_half[j]), band_high=p + float(band_half[j]),
            draws=B, seed=seed, discarded_draws=discarded, family=family_names[j],
        )
    return out


def bootstrap_estimates(dataset: PanelDataset, pipeline: Pipeline, B: int = DEFAULT_B,
                        alpha: float = DEFAULT_ALPHA, seed: int = 0, workers: int = 1,
                        point: PipelineResult | None = None) -> dict[str, BootstrapResult]:
    """Multiplier-bootstrap inference for every estimand of ``pipeline``.

    Returns estimand key -> :class:`BootstrapResult`. Standard errors are the
    standard deviation of the draws. The pointwise interval is the symmetric
    percentile interval ``point +/- q``, where ``q`` is the ``1 - alpha``
    quantile of ``|draw - point|``. The uniform band uses the sup-t critical
    value over the estimand's family (all ATT(g, t) of one mask, one
    event-study path, ...).

    Draws producing a non-finite value are discarded; more than 10% discarded
    raises :class:`UnstableBootstrapError`.
    """
    if B < 100:
        raise ConfigError("B must be at least 100")
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must be in (0, 1)")
    if point is None:
        point = run_pipeline(dataset, pipeline)
    engine = BootstrapEngine(dataset, pipeline, point)
    n = dataset.n_units
    chunks = [range(s, min(s + CHUNK_SIZE, B)) for s in range(0, B, CHUNK_SIZE)]

    def work(chunk):
        return engine.evaluate(cluster_weight_matrix(n, seed, chunk))

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    draws = np.vstack(parts)
    valid = np.all(np.isfinite(draws), axis=1)
    discarded = int(B - valid.sum())
    if discarded:
        logger.warning("discarded %d of %d bootstrap draws", discarded, B)
    if discarded > MAX_DISCARD_SHARE * B:
        raise UnstableBootstrapError(f"{discarded} of {B} bootstrap draws failed")
    return _summarise(engine.keys, engine.point, draws[valid], alpha, B, seed, discarded)
