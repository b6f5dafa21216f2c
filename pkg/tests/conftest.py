import numpy as np
import pytest

from mtdid.panel import NEVER_CODE, PanelDataset

NEVER = NEVER_CODE


def make_panel(outcome, weight=None, first_a=None, first_b=None, covariates=None, names=(),
               t0=1, always_a=None, always_b=None, unit_ids=None):
    """Small PanelDataset from plain lists; cohorts given as ints or None for never."""
    y = np.asarray(outcome, dtype=float)
    n, T = y.shape
    w = np.ones((n, T)) if weight is None else np.asarray(weight, dtype=float)

    def cohort(values):
        if values is None:
            return np.full(n, NEVER, dtype=np.int64)
        return np.array([NEVER if v is None else v for v in values], dtype=np.int64)

    if covariates is None:
        x = np.zeros((n, T, 0))
    else:
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 2:  # units x k, time-invariant
            x = np.broadcast_to(x[:, None, :], (n, T, x.shape[1])).copy()
    return PanelDataset(
        unit_ids=tuple(unit_ids or (f"u{i}" if n <= 10 else f"u{i:04d}" for i in range(n))),
        periods=np.arange(t0, t0 + T, dtype=np.int64),
        outcome=y, weight=w, covariates=x, covariate_names=tuple(names),
        first_a=cohort(first_a), first_b=cohort(first_b),
        always_a=np.zeros(n, bool) if always_a is None else np.asarray(always_a, bool),
        always_b=np.zeros(n, bool) if always_b is None else np.asarray(always_b, bool),
    )


@pytest.fixture
def panel_factory():
    return make_panel
