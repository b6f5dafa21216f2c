"""Panel data model, CSV ingestion, treatment masks and balance diagnostics.

A :class:`PanelDataset` is a balanced unit-by-period grid of cells. Each cell
carries an outcome, a positive weight (the number of individuals collapsed
into it) and a covariate vector. Units carry a treatment profile: the first
treated cohort under each of two reforms, or a never/always-treated status.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import (
    DataError,
    DimensionError,
    EmptyDatasetError,
    InsufficientDataError,
    SchemaError,
    UnusableControlError,
)

logger = logging.getLogger(__name__)

NEVER_CODE = np.iinfo(np.int64).max

REQUIRED_COLUMNS = ("unit", "period", "outcome", "weight", "reform_a_year", "reform_b_year")


class Untreated(enum.Enum):
    NEVER = "never"
    ALWAYS_TREATED = "always_treated"


NEVER = Untreated.NEVER
ALWAYS_TREATED = Untreated.ALWAYS_TREATED


def map_reform_year_to_first_cohort(reform_year, school_leaving_age: int, window: Sequence[int]):
    """Translate a calendar reform year into the first birth cohort it reaches.

    Pupils leave school at ``school_leaving_age``, so a reform introduced in
    year ``y`` first reaches the cohort born in ``y - school_leaving_age``.
    Reforms before the window make the unit always treated; reforms after it
    (or no reform at all, ``None``/NaN) leave it never treated.
    """
    first_year, last_year = window
    if school_leaving_age < 1:
        raise ValueError("school_leaving_age must be >= 1")
    if first_year > last_year:
        raise ValueError("window must be ordered")
    if reform_year is None or (isinstance(reform_year, float) and math.isnan(reform_year)):
        return NEVER
    reform_year = int(reform_year)
    if reform_year < first_year:
        return ALWAYS_TREATED
    if reform_year > last_year:
        return NEVER
    return reform_year - school_leaving_age


@dataclass(frozen=True)
class TreatmentProfile:
    unit_id: str
    first_cohort_reform_a: int | Untreated
    first_cohort_reform_b: int | Untreated
    always_treated_a: bool = False
    always_treated_b: bool = False

    @property
    def excluded(self) -> bool:
        return self.always_treated_a or self.always_treated_b


@dataclass(frozen=True)
class Cell:
    unit_id: str
    period: int
    outcome: float
    weight: float
    covariates: tuple[float, ...] = ()


@dataclass(frozen=True)
class IngestionReport:
    rejected_rows: tuple[tuple[int, str], ...] = ()
    dropped_units: tuple[str, ...] = ()

    @property
    def n_dropped(self) -> int:
        return len(self.dropped_units)


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Balanced panel of cells; arrays are read-only after construction.

    Units are stored in sorted order so any permutation of the input rows
    yields the same dataset.
    """

    unit_ids: tuple[str, ...]
    periods: np.ndarray
    outcome: np.ndarray
    weight: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    first_a: np.ndarray
    first_b: np.ndarray
    always_a: np.ndarray
    always_b: np.ndarray
    report: IngestionReport = field(default_factory=IngestionReport)

    def __post_init__(self):
        n, T = len(self.unit_ids), len(self.periods)
        if n == 0 or T == 0:
            raise EmptyDatasetError("panel has no cells")
        if len(set(self.unit_ids)) != n:
            raise DataError("unit ids must be unique")
        if list(self.unit_ids) != sorted(self.unit_ids):
            raise DataError("unit ids must be sorted")
        if np.any(np.diff(self.periods) != 1):
            raise DataError("periods must be consecutive integers")
        k = len(self.covariate_names)
        if self.outcome.shape != (n, T) or self.weight.shape != (n, T):
            raise DataError("outcome/weight arrays must be units x periods")
        if self.covariates.shape != (n, T, k):
            raise DataError("covariate array must be units x periods x covariates")
        if not np.all(np.isfinite(self.outcome)):
            raise DataError("outcomes must be finite")
        if not np.all(self.weight > 0):
            raise DataError("weights must be positive")
        for name in ("first_a", "first_b"):
            g = getattr(self, name)
            live = g[g != NEVER_CODE]
            if live.size and (live.min() < self.t_min or live.max() > self.t_max):
                raise DataError(f"{name} cohort outside the period range")
        for arr in (self.periods, self.outcome, self.weight, self.covariates,
                    self.first_a, self.first_b, self.always_a, self.always_b):
            arr.setflags(write=False)

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    @property
    def t_min(self) -> int:
        return int(self.periods[0])

    @property
    def t_max(self) -> int:
        return int(self.periods[-1])

    def period_index(self, t: int) -> int:
        i = int(t) - self.t_min
        if not 0 <= i < self.n_periods:
            raise IndexError(f"period {t} outside [{self.t_min}, {self.t_max}]")
        return i

    def unit_index(self, unit_id: str) -> int:
        lookup = self.__dict__.get("_unit_lookup")
        if lookup is None:
            lookup = {u: i for i, u in enumerate(self.unit_ids)}
            object.__setattr__(self, "_unit_lookup", lookup)
        return lookup[unit_id]

    @property
    def excluded(self) -> np.ndarray:
        return self.always_a | self.always_b

    @property
    def profiles(self) -> tuple[TreatmentProfile, ...]:
        def code(g, always):
            if always:
                return ALWAYS_TREATED
            return NEVER if g == NEVER_CODE else int(g)

        return tuple(
            TreatmentProfile(u, code(ga, aa), code(gb, ab), bool(aa), bool(ab))
            for u, ga, gb, aa, ab in zip(self.unit_ids, self.first_a, self.first_b, self.always_a, self.always_b)
        )

    def cells(self) -> Iterable[Cell]:
        for i, u in enumerate(self.unit_ids):
            for j, t in enumerate(self.periods):
                yield Cell(u, int(t), float(self.outcome[i, j]), float(self.weight[i, j]),
                           tuple(float(v) for v in self.covariates[i, j]))

    def _replace(self, **changes) -> "PanelDataset":
        fields = {name: getattr(self, name) for name in self.__dataclass_fields__}
        fields.update(changes)
        return PanelDataset(**fields)

    def with_weight(self, weight: np.ndarray) -> "PanelDataset":
        return self._replace(weight=np.array(weight, dtype=float))

    def with_unit_weights(self, unit_weights) -> "PanelDataset":
        """Multiply every cell weight by a per-unit factor (array or mapping)."""
        if isinstance(unit_weights, Mapping):
            try:
                factor = np.array([unit_weights[u] for u in self.unit_ids], dtype=float)
            except KeyError as exc:
                raise DataError(f"no weight for unit {exc.args[0]!r}") from None
        else:
            factor = np.asarray(unit_weights, dtype=float)
        return self.with_weight(self.weight * factor[:, None])

    def with_covariate(self, name: str, unit_values) -> "PanelDataset":
        """Append a time-invariant covariate column."""
        if name in self.covariate_names:
            raise DimensionError(f"covariate {name!r} already present")
        values = np.asarray(unit_values, dtype=float)
        if values.shape != (self.n_units,):
            raise DimensionError("expected one value per unit")
        extra = np.broadcast_to(values[:, None, None], (self.n_units, self.n_periods, 1))
        return self._replace(
            covariates=np.concatenate([self.covariates, extra], axis=2),
            covariate_names=self.covariate_names + (name,),
        )

    def subset(self, keep) -> "PanelDataset":
        keep = np.asarray(keep, dtype=bool)
        if not keep.any():
            raise EmptyDatasetError("subset retains no units")
        return self._replace(
            unit_ids=tuple(u for u, k in zip(self.unit_ids, keep) if k),
            outcome=self.outcome[keep], weight=self.weight[keep], covariates=self.covariates[keep],
            first_a=self.first_a[keep], first_b=self.first_b[keep],
            always_a=self.always_a[keep], always_b=self.always_b[keep],
        )

    def unit_covariates(self, names: Sequence[str]) -> np.ndarray:
        """Time-invariant covariates as a units x len(names) matrix."""
        idx = []
        for name in names:
            if name not in self.covariate_names:
                raise DimensionError(f"unknown covariate {name!r}")
            idx.append(self.covariate_names.index(name))
        block = self.covariates[:, :, idx]
        if not np.all(block == block[:, :1, :]):
            raise DimensionError(
                "covariates must be time-invariant within unit for regression adjustment"
            )
        return np.array(block[:, 0, :])

    def unit_sizes(self) -> np.ndarray:
        """Total weight (individuals) per unit over all periods."""
        return self.weight.sum(axis=1)

    def equals(self, other: "PanelDataset") -> bool:
        return (
            self.unit_ids == other.unit_ids
            and self.covariate_names == other.covariate_names
            and all(
                np.array_equal(getattr(self, a), getattr(other, a))
                for a in ("periods", "outcome", "weight", "covariates",
                          "first_a", "first_b", "always_a", "always_b")
            )
        )

    def to_frame(self) -> pd.DataFrame:
        n, T = self.n_units, self.n_periods
        frame = pd.DataFrame({
            "unit": np.repeat(np.array(self.unit_ids, dtype=object), T),
            "period": np.tile(self.periods, n),
            "outcome": self.outcome.ravel(),
            "weight": self.weight.ravel(),
        })
        for k, name in enumerate(self.covariate_names):
            frame[name] = self.covariates[:, :, k].ravel()
        return frame

    def write_csv(self, path, school_leaving_age: int = 14) -> None:
        """Write the standard input schema; reform years are ``cohort + school_leaving_age``.

        Always-treated units get the year just below the default ingestion
        window so that :func:`load_panel_csv` restores the same profiles.
        """
        def year(g, always):
            if always:
                return str(self.t_min + school_leaving_age)
            return "" if g == NEVER_CODE else str(int(g) + school_leaving_age)

        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(list(REQUIRED_COLUMNS) + list(self.covariate_names))
            for i, u in enumerate(self.unit_ids):
                ya = year(self.first_a[i], self.always_a[i])
                yb = year(self.first_b[i], self.always_b[i])
                for j, t in enumerate(self.periods):
                    out.writerow(
                        [u, int(t), repr(float(self.outcome[i, j])), repr(float(self.weight[i, j])), ya, yb]
                        + [repr(float(v)) for v in self.covariates[i, j]]
                    )


def _cohort_codes(year, age, window) -> tuple[int, bool]:
    code = map_reform_year_to_first_cohort(year, age, window)
    if code is ALWAYS_TREATED:
        return NEVER_CODE, True
    if code is NEVER:
        return NEVER_CODE, False
    return int(code), False


def _assemble(frame: pd.DataFrame, covariate_names: Sequence[str], cohort_info: Mapping,
              rejected=()) -> PanelDataset:
    """Drop unbalanced units and pack a long frame into a :class:`PanelDataset`.

    ``cohort_info`` maps unit -> (first_a, first_b, always_a, always_b), with
    cohorts as ints or ``NEVER_CODE``.
    """
    if frame.empty:
        raise EmptyDatasetError("no valid rows")
    t_min, t_max = int(frame["period"].min()), int(frame["period"].max())
    periods = np.arange(t_min, t_max + 1, dtype=np.int64)
    counts = frame.groupby("unit")["period"].nunique()
    complete = set(counts.index[counts == len(periods)])
    dropped = tuple(sorted(set(counts.index) - complete))
    for u in dropped:
        logger.warning("dropping unit %s: not observed in every period %d..%d", u, t_min, t_max)
    frame = frame[frame["unit"].isin(complete)]
    if frame.empty:
        raise EmptyDatasetError("no unit is observed in every period")
    frame = frame.sort_values(["unit", "period"], kind="mergesort")
    units = tuple(sorted(complete))
    n, T, k = len(units), len(periods), len(covariate_names)
    outcome = frame["outcome"].to_numpy(float).reshape(n, T)
    weight = frame["weight"].to_numpy(float).reshape(n, T)
    if k:
        covs = frame[list(covariate_names)].to_numpy(float).reshape(n, T, k)
    else:
        covs = np.zeros((n, T, 0))
    first_a = np.empty(n, dtype=np.int64)
    first_b = np.empty(n, dtype=np.int64)
    always_a = np.zeros(n, dtype=bool)
    always_b = np.zeros(n, dtype=bool)
    for i, u in enumerate(units):
        ga, gb, aa, ab = cohort_info.get(u, (NEVER_CODE, NEVER_CODE, False, False))
        # a cohort without an untreated base period inside the panel cannot be
        # told apart from always-treated
        if ga != NEVER_CODE and ga <= t_min:
            ga, aa = NEVER_CODE, True
        if gb != NEVER_CODE and gb <= t_min:
            gb, ab = NEVER_CODE, True
        if ga != NEVER_CODE and ga > t_max:
            ga = NEVER_CODE
        if gb != NEVER_CODE and gb > t_max:
            gb = NEVER_CODE
        first_a[i], first_b[i], always_a[i], always_b[i] = ga, gb, aa, ab
    return PanelDataset(
        unit_ids=units, periods=periods, outcome=outcome, weight=weight, covariates=covs,
        covariate_names=tuple(covariate_names), first_a=first_a, first_b=first_b,
        always_a=always_a, always_b=always_b,
        report=IngestionReport(rejected_rows=tuple(rejected), dropped_units=dropped),
    )


def _resolve_schema(columns: Sequence[str], schema: Mapping | None) -> tuple[dict, list[str]]:
    schema = dict(schema or {})
    resolved: dict[str, list[str]] = {}
    missing = []
    for key in REQUIRED_COLUMNS:
        spec = schema.get(key, key)
        names = [spec] if isinstance(spec, str) else list(spec)
        absent = [c for c in names if c not in columns]
        if absent:
            missing.extend(absent)
        resolved[key] = names
    if "covariates" in schema:
        covariates = list(schema["covariates"])
        missing.extend(c for c in covariates if c not in columns)
    else:
        used = {c for names in resolved.values() for c in names}
        covariates = [c for c in columns if c not in used]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    return resolved, covariates


def _parse_float(text: str) -> float | None:
    text = text.strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_panel_csv(path, schema: Mapping | None = None, school_leaving_age: int = 14,
                   window: Sequence[int] | None = None) -> PanelDataset:
    """Read a panel CSV into a balanced :class:`PanelDataset`.

    Parameters
    ----------
    path : path-like
        UTF-8, comma separated, header row.
    schema : mapping, optional
        Canonical name -> column name. ``reform_a_year``/``reform_b_year`` may
        map to a list of columns; the earliest non-empty year wins. A
        ``covariates`` entry lists covariate columns; by default every
        unmapped column is a covariate.
    school_leaving_age : int
        Passed to :func:`map_reform_year_to_first_cohort`.
    window : (first_year, last_year), optional
        Reform-year window. Defaults to the span that maps onto cohorts
        ``t_min + 1 .. t_max`` of the panel.

    Rows with a missing outcome or covariate, or a non-positive weight, are
    rejected and reported with their line number. Units not observed in
    every period are dropped.
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    resolved, covariates = _resolve_schema(list(frame.columns), schema)

    rows = []
    seen: dict[tuple[str, int], int] = {}
    rejected: list[tuple[int, str]] = []
    reform_years: dict[str, list[list[int]]] = {}
    unit_col = resolved["unit"][0]
    period_col = resolved["period"][0]
    outcome_col = resolved["outcome"][0]
    weight_col = resolved["weight"][0]
    for line, rec in enumerate(frame.to_dict("records"), start=2):
        unit = rec[unit_col].strip()
        try:
            period = int(rec[period_col].strip())
        except ValueError:
            rejected.append((line, f"unparseable period {rec[period_col]!r}"))
            continue
        if not unit:
            rejected.append((line, "missing unit"))
            continue
        key = (unit, period)
        if key in seen:
            raise DataError(f"duplicate cell ({unit}, {period}) at lines {seen[key]} and {line}")
        seen[key] = line
        years = reform_years.setdefault(unit, [[], []])
        for slot, name in enumerate(("reform_a_year", "reform_b_year")):
            for col in resolved[name]:
                y = _parse_float(rec[col])
                if y is not None:
                    years[slot].append(int(y))
        outcome = _parse_float(rec[outcome_col])
        weight = _parse_float(rec[weight_col])
        if outcome is None:
            rejected.append((line, "missing or non-finite outcome"))
            continue
        if weight is None or weight <= 0:
            rejected.append((line, "missing or non-positive weight"))
            continue
        covs = [_parse_float(rec[c]) for c in covariates]
        if any(v is None for v in covs):
            bad = [c for c, v in zip(covariates, covs) if v is None]
            rejected.append((line, f"missing covariate(s) {', '.join(bad)}"))
            continue
        rows.append((unit, period, outcome, weight, *covs))
    for line, reason in rejected:
        logger.warning("line %d rejected: %s", line, reason)

    long = pd.DataFrame(rows, columns=["unit", "period", "outcome", "weight", *covariates])
    if long.empty:
        raise EmptyDatasetError(f"{path}: no valid rows")
    t_min, t_max = int(long["period"].min()), int(long["period"].max())
    if window is None:
        window = (t_min + 1 + school_leaving_age, t_max + school_leaving_age)

    info = {}
    for unit, (ya, yb) in reform_years.items():
        for slot, ys in (("a", ya), ("b", yb)):
            if len(set(ys)) > 1:
                logger.warning("unit %s: conflicting reform_%s years %s, using %d",
                               unit, slot, sorted(set(ys)), min(ys))
        ga, aa = _cohort_codes(min(ya) if ya else None, school_leaving_age, window)
        gb, ab = _cohort_codes(min(yb) if yb else None, school_leaving_age, window)
        info[unit] = (ga, gb, aa, ab)
    return _assemble(long, covariates, info, rejected)


def collapse_to_cells(records, covariates: Sequence[str] = (), profiles: Mapping | None = None) -> PanelDataset:
    """Collapse individual records into unit-by-period cells.

    Each cell's outcome and covariates are the record means and its weight is
    the record count. ``records`` is a DataFrame (or iterable of mappings)
    with ``unit``, ``period``, ``outcome`` and the covariate columns.
    ``profiles`` maps unit -> :class:`TreatmentProfile`; units without one are
    never treated.
    """
    frame = records if isinstance(records, pd.DataFrame) else pd.DataFrame(list(records))
    covariates = list(covariates)
    missing = [c for c in ("unit", "period", "outcome", *covariates) if c not in frame.columns]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    frame = frame.assign(unit=frame["unit"].astype(str), period=frame["period"].astype(np.int64))
    grouped = frame.groupby(["unit", "period"], sort=True)
    cells = grouped[["outcome", *covariates]].mean()
    cells["weight"] = grouped.size().astype(float)
    cells = cells.reset_index()

    info = {}
    for unit, prof in (profiles or {}).items():
        def code(c, always):
            return (NEVER_CODE, True) if always or c is ALWAYS_TREATED else (
                (NEVER_CODE, False) if c is NEVER or c is None else (int(c), False))
        ga, aa = code(prof.first_cohort_reform_a, prof.always_treated_a)
        gb, ab = code(prof.first_cohort_reform_b, prof.always_treated_b)
        info[str(unit)] = (ga, gb, aa, ab)
    return _assemble(cells, covariates, info)


@dataclass(frozen=True, eq=False)
class TreatmentMask:
    """Treated and control membership for one treatment combination ``d``.

    ``cohort`` holds each treated unit's first cohort under the reform that
    defines timing for ``d`` (reform A for d = 1, 2, 4; reform B for d = 3)
    and ``NEVER_CODE`` elsewhere.
    """

    d: int
    unit_ids: tuple[str, ...]
    treated: np.ndarray
    control: np.ndarray
    cohort: np.ndarray

    @property
    def treated_units(self) -> frozenset:
        return frozenset(u for u, f in zip(self.unit_ids, self.treated) if f)

    @property
    def control_units(self) -> frozenset:
        return frozenset(u for u, f in zip(self.unit_ids, self.control) if f)

    def cohorts(self) -> list[int]:
        return sorted(int(g) for g in np.unique(self.cohort[self.treated]))

    def in_cohort(self, g: int) -> np.ndarray:
        return self.treated & (self.cohort == g)


def assign_treatment_masks(dataset: PanelDataset) -> list[TreatmentMask]:
    """Build the four treatment-combination masks.

    ======  =========================================
    d = 1   ever treated by reform A
    d = 2   reform A, never reform B
    d = 3   reform B, never reform A
    d = 4   both reforms
    ======  =========================================

    The control group is the never-treated-by-both set for every ``d``.
    Units always treated under either reform belong to no set.
    """
    keep = ~dataset.excluded
    has_a = keep & (dataset.first_a != NEVER_CODE)
    has_b = keep & (dataset.first_b != NEVER_CODE)
    control = keep & ~has_a & ~has_b
    if not control.any():
        raise UnusableControlError("no never-treated units available as controls")
    specs = {
        1: (has_a, dataset.first_a),
        2: (has_a & ~has_b, dataset.first_a),
        3: (has_b & ~has_a, dataset.first_b),
        4: (has_a & has_b, dataset.first_a),
    }
    masks = []
    for d, (treated, timing) in specs.items():
        cohort = np.where(treated, timing, NEVER_CODE)
        for arr in (treated, cohort):
            arr.setflags(write=False)
        ctrl = control.copy()
        ctrl.setflags(write=False)
        masks.append(TreatmentMask(d, dataset.unit_ids, treated, ctrl, cohort))
    return masks


def _weighted_welch(x1, w1, x2, w2) -> tuple[float, float]:
    """Difference of weighted means and its unequal-variance t-test p-value.

    Weights are rescaled to sum to the number of units on each side, so the
    unit (not the individual) is the sampling unit.
    """
    out = []
    for x, w in ((x1, w1), (x2, w2)):
        n = len(x)
        w = w * (n / w.sum())
        m = np.sum(w * x) / n
        v = np.sum(w * (x - m) ** 2) / (n - 1)
        out.append((m, v, n))
    (m1, v1, n1), (m2, v2, n2) = out
    diff = m1 - m2
    a, b = v1 / n1, v2 / n2
    se2 = a + b
    if se2 <= 0:
        return float(diff), 1.0 if diff == 0 else 0.0
    tstat = diff / math.sqrt(se2)
    df = se2**2 / (a**2 / (n1 - 1) + b**2 / (n2 - 1))
    return float(diff), float(2.0 * stats.t.sf(abs(tstat), df))


def balance_table(dataset: PanelDataset, mask: TreatmentMask, variables: Sequence[str],
                  pre_period: int) -> pd.DataFrame:
    """Weighted treated-minus-control covariate differences at ``pre_period``.

    Returns a frame indexed by variable with ``difference`` and ``p_value``
    columns.
    """
    treated_cohorts = mask.cohorts()
    if treated_cohorts and pre_period >= min(treated_cohorts):
        raise DataError(f"pre_period {pre_period} does not precede cohort {min(treated_cohorts)}")
    j = dataset.period_index(pre_period)
    w = dataset.weight[:, j]
    rows = []
    for name in variables:
        if name not in dataset.covariate_names:
            raise DimensionError(f"unknown covariate {name!r}")
        x = dataset.covariates[:, j, dataset.covariate_names.index(name)]
        if mask.treated.sum() < 2 or mask.control.sum() < 2:
            raise InsufficientDataError(f"{name}: need at least 2 units per group")
        diff, p = _weighted_welch(x[mask.treated], w[mask.treated], x[mask.control], w[mask.control])
        rows.append((name, diff, p))
    return pd.DataFrame(rows, columns=["variable", "difference", "p_value"]).set_index("variable")
