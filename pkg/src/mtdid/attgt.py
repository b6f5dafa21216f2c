"""Group-time average treatment effects ATT(g, t, d).

Both estimators compare the outcome change from the base period ``g - 1`` to
``t`` between cohort-``g`` units of a treatment mask and never-treated
controls, using period-``t`` cell weights. The conditional version replaces
the control mean by a weighted linear regression of the change on unit
covariates, evaluated at each treated unit's covariates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DataError,
    EmptyCohortError,
    EstimationError,
    InsufficientControlsError,
    NoEstimatesError,
)
from .numerics import wls_fit
from .panel import PanelDataset, TreatmentMask

logger = logging.getLogger(__name__)

UNCONDITIONAL = "unconditional"
CONDITIONAL = "conditional"
MODES = (UNCONDITIONAL, CONDITIONAL)

_EMPTY_I = np.zeros(0, dtype=np.int64)
_EMPTY_F = np.zeros(0)


@dataclass(frozen=True, eq=False)
class ClusterContributions:
    """Per-unit pieces of one ATT(g, t) estimate.

    Indices refer to positions in ``unit_ids``. ``*_value`` is the outcome
    change and ``*_weight`` the period-``t`` cell weight. For
    regression-adjusted estimates the raw covariate rows are kept as well,
    which is what a refit under perturbed weights needs.
    """

    unit_ids: tuple[str, ...]
    treated_index: np.ndarray
    treated_weight: np.ndarray
    treated_value: np.ndarray
    control_index: np.ndarray
    control_weight: np.ndarray
    control_value: np.ndarray
    treated_x: np.ndarray | None = None
    control_x: np.ndarray | None = None

    @property
    def conditional(self) -> bool:
        return self.control_x is not None

    @property
    def empty(self) -> bool:
        return self.treated_index.size == 0

    def as_mapping(self) -> dict[str, tuple[tuple[float, float], tuple[float, float]]]:
        """unit -> ((treated weight, treated value), (control weight, control value))."""
        out = {}
        for i, w, v in zip(self.treated_index, self.treated_weight, self.treated_value):
            out[self.unit_ids[i]] = ((float(w), float(v)), (0.0, 0.0))
        for i, w, v in zip(self.control_index, self.control_weight, self.control_value):
            out[self.unit_ids[i]] = ((0.0, 0.0), (float(w), float(v)))
        return out

    def reevaluate(self, cluster_weights=None) -> float:
        """Recompute the estimate with every unit's weight scaled by a cluster factor.

        ``cluster_weights`` is an array over ``unit_ids`` or a mapping from
        unit id; ``None`` means all ones.
        """
        if self.empty:
            return 0.0
        if cluster_weights is None:
            omega = np.ones(len(self.unit_ids))
        elif isinstance(cluster_weights, Mapping):
            omega = np.array([cluster_weights[u] for u in self.unit_ids], dtype=float)
        else:
            omega = np.asarray(cluster_weights, dtype=float)
        wt = omega[self.treated_index] * self.treated_weight
        wc = omega[self.control_index] * self.control_weight
        if not self.conditional:
            return float(wt @ self.treated_value / wt.sum() - wc @ self.control_value / wc.sum())
        return _adjusted(self.treated_value, wt, self.treated_x,
                         self.control_value, wc, self.control_x)


@dataclass(frozen=True, eq=False)
class AttGtEstimate:
    g: int
    t: int
    d: int
    estimate: float
    n_treated: float
    n_control: float
    contributions: ClusterContributions

    @property
    def event_time(self) -> int:
        return self.t - self.g


def _with_intercept(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(x)), x])


def _adjusted(dy_t, w_t, x_t, dy_c, w_c, x_c) -> float:
    fit = wls_fit(_with_intercept(x_c), dy_c, w_c)
    counterfactual = fit.predict(_with_intercept(x_t))
    return float(w_t @ (dy_t - counterfactual) / w_t.sum())


def _cell_inputs(dataset: PanelDataset, mask: TreatmentMask, g: int, t: int):
    try:
        jb = dataset.period_index(g - 1)
        jt = dataset.period_index(t)
    except IndexError as exc:
        raise DataError(f"ATT({g}, {t}): {exc}") from None
    treated = np.flatnonzero(mask.in_cohort(g))
    if treated.size == 0:
        raise EmptyCohortError(f"no treated units in cohort {g} for d={mask.d}")
    control = np.flatnonzero(mask.control)
    if control.size == 0:
        raise InsufficientControlsError("no control units")
    dy = dataset.outcome[:, jt] - dataset.outcome[:, jb]
    w = dataset.weight[:, jt]
    return treated, control, dy, w


def _degenerate(dataset, mask, g, t, treated, control, w) -> AttGtEstimate:
    contrib = ClusterContributions(dataset.unit_ids, _EMPTY_I, _EMPTY_F, _EMPTY_F,
                                   _EMPTY_I, _EMPTY_F, _EMPTY_F)
    return AttGtEstimate(g, t, mask.d, 0.0, float(w[treated].sum()), float(w[control].sum()), contrib)


def att_gt_unconditional(dataset: PanelDataset, mask: TreatmentMask, g: int, t: int) -> AttGtEstimate:
    """Weighted difference in mean outcome change, cohort ``g`` vs never-treated."""
    treated, control, dy, w = _cell_inputs(dataset, mask, g, t)
    if t == g - 1:
        return _degenerate(dataset, mask, g, t, treated, control, w)
    contrib = ClusterContributions(
        dataset.unit_ids, treated, w[treated], dy[treated], control, w[control], dy[control]
    )
    wt, wc = w[treated], w[control]
    est = wt @ dy[treated] / wt.sum() - wc @ dy[control] / wc.sum()
    return AttGtEstimate(g, t, mask.d, float(est), float(wt.sum()), float(wc.sum()), contrib)


def att_gt_conditional(dataset: PanelDataset, mask: TreatmentMask, g: int, t: int,
                       covariate_names: Sequence[str]) -> AttGtEstimate:
    """Regression-adjusted ATT(g, t).

    Fits WLS of the control outcome change on an intercept and the unit
    covariates, then averages ``dY - m(X)`` over the treated cohort.
    Covariates that are constant over the cohort and its controls are
    dropped, since the intercept already spans them.
    """
    covariate_names = list(covariate_names)
    X = dataset.unit_covariates(covariate_names)
    treated, control, dy, w = _cell_inputs(dataset, mask, g, t)
    # a column constant over the cell's units is absorbed by the intercept
    used = np.concatenate([treated, control])
    X = X[:, np.ptp(X[used], axis=0) > 0] if X.shape[1] else X
    if control.size <= X.shape[1] + 1:
        raise InsufficientControlsError(
            f"{control.size} controls for {X.shape[1]} covariates plus intercept"
        )
    if t == g - 1:
        return _degenerate(dataset, mask, g, t, treated, control, w)
    contrib = ClusterContributions(
        dataset.unit_ids, treated, w[treated], dy[treated], control, w[control], dy[control],
        treated_x=X[treated], control_x=X[control],
    )
    est = _adjusted(dy[treated], w[treated], X[treated], dy[control], w[control], X[control])
    return AttGtEstimate(g, t, mask.d, est, float(w[treated].sum()), float(w[control].sum()), contrib)


def compute_all_att_gt(dataset: PanelDataset, mask: TreatmentMask, mode: str = UNCONDITIONAL,
                       covariate_names: Sequence[str] = (), cohorts: Sequence[int] | None = None
                       ) -> list[AttGtEstimate]:
    """Every ATT(g, t) for the mask's cohorts, sorted by ``(g, t)``.

    ``t`` runs over ``t_min + 1 .. t_max`` except the base period ``g - 1``.
    A cohort is skipped (with a warning) when it has no base period inside
    the panel, no treated units, or any of its cells fails to estimate.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == CONDITIONAL:
        dataset.unit_covariates(covariate_names)
    cohorts = mask.cohorts() if cohorts is None else sorted(int(g) for g in cohorts)
    periods = [int(t) for t in dataset.periods if t >= dataset.t_min + 1]
    out: list[AttGtEstimate] = []
    for g in cohorts:
        if g - 1 < dataset.t_min:
            logger.warning("skipping cohort %d (d=%d): base period %d before panel start",
                           g, mask.d, g - 1)
            continue
        if not mask.in_cohort(g).any():
            logger.warning("skipping cohort %d (d=%d): no treated units", g, mask.d)
            continue
        cells = []
        try:
            for t in periods:
                if t == g - 1:
                    continue
                if mode == UNCONDITIONAL:
                    cells.append(att_gt_unconditional(dataset, mask, g, t))
                else:
                    cells.append(att_gt_conditional(dataset, mask, g, t, covariate_names))
        except EstimationError as exc:
            logger.warning("skipping cohort %d (d=%d): %s", g, mask.d, exc)
            continue
        out.extend(cells)
    if not out:
        raise NoEstimatesError(f"no ATT(g, t) could be estimated for d={mask.d}")
    return out
