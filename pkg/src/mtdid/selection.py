"""Corrections for selective inclusion of units.

The first stage is a unit-level probit of an inclusion flag on observables.
Its fitted index feeds either an inverse-Mills-ratio covariate for the
regression-adjusted estimator (two-step Heckman) or inverse-probability
weights on the retained units' cells.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import CoverageError, DimensionError, SchemaError
from .numerics import ProbitFit, inverse_mills, norm_cdf, probit_fit
from .panel import PanelDataset

logger = logging.getLogger(__name__)

MILLS_COLUMN = "inverse_mills"
DEFAULT_TRIM = (0.01, 0.99)


@dataclass(frozen=True)
class FirstStage:
    """One row per unit: inclusion flag and first-stage covariates."""

    unit_ids: tuple[str, ...]
    included: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] = ()

    @classmethod
    def from_csv(cls, path, covariates: Sequence[str] | None = None) -> "FirstStage":
        frame = pd.read_csv(path, dtype={"unit": str}, encoding="utf-8")
        missing = [c for c in ("unit", "included") if c not in frame.columns]
        if missing:
            raise SchemaError(f"first-stage file lacks column(s): {', '.join(missing)}")
        names = [c for c in frame.columns if c not in ("unit", "included")] if covariates is None else list(covariates)
        absent = [c for c in names if c not in frame.columns]
        if absent:
            raise SchemaError(f"first-stage file lacks column(s): {', '.join(absent)}")
        return cls(tuple(frame["unit"].astype(str)), frame["included"].to_numpy(float),
                   frame[names].to_numpy(float).reshape(len(frame), len(names)), tuple(names))

    def write_csv(self, path) -> None:
        frame = pd.DataFrame({"unit": list(self.unit_ids), "included": self.included.astype(int)})
        for k, name in enumerate(self.covariate_names):
            frame[name] = self.covariates[:, k]
        frame.to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True)
class SelectionModel:
    probit: ProbitFit
    mills: dict[str, float]
    inclusion_prob: dict[str, float]


def _design(stage: FirstStage) -> np.ndarray:
    X = np.asarray(stage.covariates, dtype=float).reshape(len(stage.unit_ids), -1)
    varying = [k for k in range(X.shape[1]) if np.ptp(X[:, k]) > 0]
    if len(varying) < X.shape[1]:
        logger.info("dropping %d constant first-stage column(s); the intercept absorbs them",
                    X.shape[1] - len(varying))
    return np.column_stack([np.ones(len(X)), X[:, varying]])


def fit_selection_model(first_stage: FirstStage) -> SelectionModel:
    """Probit of inclusion on an intercept plus the non-constant first-stage covariates."""
    y = np.asarray(first_stage.included, dtype=float)
    X = _design(first_stage)
    fit = probit_fit(X, y)
    index = fit.index(X)
    mills = inverse_mills(index)
    prob = norm_cdf(index)
    units = first_stage.unit_ids
    return SelectionModel(fit, dict(zip(units, map(float, mills))), dict(zip(units, map(float, prob))))


def augment_with_mills(dataset: PanelDataset, model: SelectionModel) -> PanelDataset:
    """Append the fitted inverse Mills ratio as a trailing covariate column."""
    if MILLS_COLUMN in dataset.covariate_names:
        raise DimensionError("dataset already carries an inverse Mills ratio column")
    missing = [u for u in dataset.unit_ids if u not in model.mills]
    if missing:
        raise CoverageError(f"selection model lacks {len(missing)} unit(s), e.g. {missing[0]!r}")
    return dataset.with_covariate(MILLS_COLUMN, [model.mills[u] for u in dataset.unit_ids])


@dataclass(frozen=True)
class IpwWeights:
    weights: dict[str, float]
    trimmed: frozenset

    @property
    def n_trimmed(self) -> int:
        return len(self.trimmed)


def ipw_weights(model: SelectionModel, trim: tuple[float, float] = DEFAULT_TRIM) -> IpwWeights:
    low, high = trim
    if not 0.0 < low < high < 1.0:
        raise ValueError("trim bounds must satisfy 0 < low < high < 1")
    weights, trimmed = {}, set()
    for unit, p in model.inclusion_prob.items():
        q = min(max(p, low), high)
        if q != p:
            trimmed.add(unit)
        weights[unit] = 1.0 / q
    if trimmed:
        logger.info("trimmed %d inclusion probabilities to [%g, %g]", len(trimmed), low, high)
    return IpwWeights(weights, frozenset(trimmed))


def apply_ipw(dataset: PanelDataset, weights: IpwWeights | Mapping[str, float]) -> PanelDataset:
    mapping = weights.weights if isinstance(weights, IpwWeights) else weights
    missing = [u for u in dataset.unit_ids if u not in mapping]
    if missing:
        raise CoverageError(f"no IPW weight for {len(missing)} unit(s), e.g. {missing[0]!r}")
    return dataset.with_unit_weights(mapping)
