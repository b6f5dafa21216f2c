"""Two-way fixed-effects baseline.

Outcome and treatment indicators are stripped of weighted unit and period
means by alternating projections, then the demeaned outcome is regressed on
the demeaned indicators. No dummy matrices are built, so memory stays linear
in the number of cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CollinearTreatmentError, InsufficientDataError, SingularDesignError
from .numerics import wls_fit
from .panel import NEVER_CODE, PanelDataset

DEMEAN_TOL = 1e-10
MAX_SWEEPS = 10_000


@dataclass(frozen=True)
class TwfeFit:
    coefficients: np.ndarray
    names: tuple[str, ...]
    resid_variance: float
    n_cells: int

    def __getitem__(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])


def within_transform(values: np.ndarray, weight: np.ndarray, tol: float = DEMEAN_TOL) -> np.ndarray:
    """Weighted two-way demeaning of a units x periods array (or a stack of them).

    Sweeps unit and period means alternately until the largest remaining mean
    falls below ``tol`` times the scale of the input.
    """
    x = np.array(values, dtype=float)
    w = np.asarray(weight, dtype=float)
    scale = max(1.0, float(np.abs(x).max(initial=0.0)))
    w_unit = w.sum(axis=-1)
    w_period = w.sum(axis=-2)
    for _ in range(MAX_SWEEPS):
        x -= ((x * w).sum(axis=-1) / w_unit)[..., :, None]
        period_mean = (x * w).sum(axis=-2) / w_period
        x -= period_mean[..., None, :]
        unit_mean = (x * w).sum(axis=-1) / w_unit
        if max(np.abs(unit_mean).max(), np.abs(period_mean).max()) <= tol * scale:
            break
    return x


def _indicator(first: np.ndarray, periods: np.ndarray) -> np.ndarray:
    live = first != NEVER_CODE
    return (live[:, None] & (periods[None, :] >= first[:, None])).astype(float)


def twfe_estimate(dataset: PanelDataset, treatments: Sequence[str] = ("a",),
                  include_interaction: bool = False) -> TwfeFit:
    """Weighted within estimator on post-adoption indicators.

    ``treatments`` selects the reform indicators (``"a"``, ``"b"``);
    ``include_interaction`` adds their product and needs both. Always-treated
    units are dropped, as in the robust estimators.

    Raises
    ------
    CollinearTreatmentError
        If an indicator has no variation left after the within transform.
    """
    treatments = tuple(treatments)
    if not treatments or any(t not in ("a", "b") for t in treatments) or len(set(treatments)) != len(treatments):
        raise ValueError("treatments must be a non-empty subset of ('a', 'b')")
    if include_interaction and set(treatments) != {"a", "b"}:
        raise ValueError("the interaction term needs both treatments")
    keep = ~dataset.excluded
    if keep.sum() < 2 or dataset.n_periods < 2:
        raise InsufficientDataError("TWFE needs at least 2 units and 2 periods")
    periods = dataset.periods
    w = dataset.weight[keep]
    first = {"a": dataset.first_a[keep], "b": dataset.first_b[keep]}
    columns = [_indicator(first[t], periods) for t in treatments]
    names = list(treatments)
    if include_interaction:
        columns.append(columns[0] * columns[1])
        names.append("a:b")
    stack = np.stack([dataset.outcome[keep]] + columns)
    demeaned = within_transform(stack, np.broadcast_to(w, stack.shape))
    y = demeaned[0].ravel()
    X = np.column_stack([c.ravel() for c in demeaned[1:]])
    dead = [names[k] for k in range(X.shape[1]) if np.abs(X[:, k]).max() <= 1e-8]
    if dead:
        raise CollinearTreatmentError(f"no treatment variation after demeaning: {', '.join(dead)}")
    try:
        fit = wls_fit(X, y, w.ravel())
    except SingularDesignError as exc:
        raise CollinearTreatmentError(
            f"treatment indicator {names[min(exc.column, len(names) - 1)]!r} is collinear after demeaning"
        ) from None
    return TwfeFit(fit.coefficients, tuple(names), fit.rss / float(w.sum()), int(y.size))
