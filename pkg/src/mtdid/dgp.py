"""Synthetic panels with known effect surfaces.

Outcome model for unit i in period t::

    Y_it = a_i + l_t + trend_coef * x_i * (t - first_period) + tau_i(t) + e_it

``a_i`` is a unit effect (optionally loading on the covariate), ``l_t`` a
random-walk period effect, ``x_i`` a time-invariant covariate and ``tau_i`` the
treatment effect of the unit's type evaluated at its event time. Unit types
are reform-A only (d=2), reform-B only (d=3), both (d=4, adopting both reforms
in the same cohort) and never treated.

All structural draws (types, cohorts, weights, covariates, fixed effects,
selection) come from one stream and the noise from another, so
:func:`true_effects` can rebuild the truth from the config alone.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError
from .panel import NEVER_CODE, PanelDataset
from .selection import FirstStage

NEVER_TYPE, A_ONLY, B_ONLY, BOTH = 0, 1, 2, 3
SCENARIOS = ("S1", "S2", "S3", "S4", "S5", "S2-additive")


@dataclass(frozen=True)
class EffectSpec:
    """Effect ``base + slope * e`` at event time ``e >= 0``; zero before."""

    base: float = 0.0
    slope: float = 0.0

    def at(self, e):
        e = np.asarray(e, dtype=float)
        return np.where(e >= 0, self.base + self.slope * e, 0.0)

    def __add__(self, other: "EffectSpec") -> "EffectSpec":
        return EffectSpec(self.base + other.base, self.slope + other.slope)


@dataclass(frozen=True)
class SelectionSpec:
    """Unit kept with probability Phi(intercept + slope * x)."""

    intercept: float = 0.5
    slope: float = 1.0


@dataclass(frozen=True)
class DgpConfig:
    scenario: str = "custom"
    n_units: int = 200
    n_periods: int = 20
    first_period: int = 1
    share_a_only: float = 0.5
    share_b_only: float = 0.0
    share_both: float = 0.0
    cohorts_a: tuple[int, ...] = ()
    cohorts_b: tuple[int, ...] = ()
    cohorts_both: tuple[int, ...] = ()
    effect_a: EffectSpec = field(default_factory=lambda: EffectSpec(2.0))
    effect_b: EffectSpec = field(default_factory=EffectSpec)
    effect_both: EffectSpec = field(default_factory=EffectSpec)
    trend_coef: float = 0.0
    covariate_mean: float = 0.0
    covariate_gap: float = 0.0
    covariate_sd: float = 1.0
    covariate_sd_control: float | None = None
    unit_effect_sd: float = 1.0
    unit_effect_loading: float = 0.0
    period_effect_sd: float = 0.5
    noise_sd: float = 1.0
    weight_range: tuple[int, int] = (5, 50)
    selection: SelectionSpec | None = None
    seed: int = 0

    def __post_init__(self):
        shares = (self.share_a_only, self.share_b_only, self.share_both)
        if any(s < 0 for s in shares) or sum(shares) > 1 + 1e-12:
            raise ConfigError("treatment shares must be non-negative and sum to at most 1")
        if self.n_units < 20:
            raise ConfigError("n_units must be at least 20")
        if self.n_periods < 2:
            raise ConfigError("n_periods must be at least 2")
        if self.noise_sd < 0 or self.covariate_sd < 0 or (self.covariate_sd_control or 0) < 0:
            raise ConfigError("standard deviations must be non-negative")
        lo, hi = self.weight_range
        if not 1 <= lo <= hi:
            raise ConfigError("weight_range must satisfy 1 <= low <= high")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        first, last = self.first_period + 1, self.last_period
        for name in ("cohorts_a", "cohorts_b", "cohorts_both"):
            for g in self.resolved_cohorts(name):
                if not first <= g <= last:
                    raise ConfigError(f"{name}: cohort {g} outside [{first}, {last}]")

    @property
    def last_period(self) -> int:
        return self.first_period + self.n_periods - 1

    def resolved_cohorts(self, name: str) -> tuple[int, ...]:
        given = getattr(self, name)
        if given:
            return tuple(int(g) for g in given)
        T, p0 = self.n_periods, self.first_period
        start = p0 + max(1, T // 4 + 1)
        stop = max(start, p0 + (3 * T) // 4)
        return tuple(sorted({int(round(v)) for v in np.linspace(start, stop, 4)}))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "DgpConfig":
        raw = dict(raw)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown DGP field(s): {', '.join(sorted(unknown))}")
        base = scenario_config(raw.pop("scenario")) if raw.get("scenario") in SCENARIOS else cls()
        for key in ("effect_a", "effect_b", "effect_both"):
            if key in raw and isinstance(raw[key], Mapping):
                raw[key] = EffectSpec(**raw[key])
            elif key in raw and not isinstance(raw[key], EffectSpec):
                raw[key] = EffectSpec(float(raw[key]))
        if isinstance(raw.get("selection"), Mapping):
            raw["selection"] = SelectionSpec(**raw["selection"])
        for key in ("cohorts_a", "cohorts_b", "cohorts_both", "weight_range"):
            if key in raw:
                raw[key] = tuple(raw[key])
        try:
            return replace(base, **raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def scenario_config(name: str, **overrides) -> DgpConfig:
    """Preset configurations for the validation scenarios.

    S1  homogeneous effect 2 for every treatment type
    S2  staggered reform-A adoption with effect ``1 + 0.5 e``
    S3  covariate-dependent trends and a treated/control covariate gap, one cohort
        with ten post periods (unconditional parallel trends fail)
    S4  joint effect 3 against singular effects 1 (A) and 0.5 (B)
    S5  selection on the covariate, which also drives trends; equal covariate means but a
        wider spread among controls, so selection shifts the groups apart
    S2-additive  staggered dynamic effects that add up exactly under joint treatment;
        joint adopters never use the latest cohort
    """
    presets = {
        "S1": dict(share_a_only=0.2, share_b_only=0.15, share_both=0.15,
                   effect_a=EffectSpec(2.0), effect_b=EffectSpec(2.0), effect_both=EffectSpec(2.0)),
        "S2": dict(share_a_only=0.5, effect_a=EffectSpec(1.0, 0.5)),
        "S3": dict(n_units=400, share_a_only=0.5, cohorts_a=(11,), effect_a=EffectSpec(2.0), trend_coef=1.0,
                   covariate_gap=0.5, covariate_sd=0.2),
        "S4": dict(share_a_only=0.25, share_b_only=0.15, share_both=0.25,
                   effect_a=EffectSpec(1.0), effect_b=EffectSpec(0.5), effect_both=EffectSpec(3.0)),
        "S5": dict(n_units=800, share_a_only=0.5, effect_a=EffectSpec(2.0), trend_coef=0.3,
                   covariate_mean=-1.0, covariate_sd=0.3, covariate_sd_control=1.0,
                   unit_effect_loading=1.0, selection=SelectionSpec(0.5, 1.0)),
        "S2-additive": dict(n_units=400, share_a_only=0.2, share_b_only=0.2, share_both=0.2,
                            cohorts_a=(8, 12, 16), cohorts_b=(8, 12, 16), cohorts_both=(8, 12),
                            effect_a=EffectSpec(1.0, 0.5), effect_b=EffectSpec(0.5, 0.25),
                            effect_both=EffectSpec(1.5, 0.75)),
    }
    if name not in presets:
        raise ConfigError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    return replace(DgpConfig(scenario=name, **presets[name]), **overrides)


@dataclass(frozen=True, eq=False)
class _Structure:
    unit_ids: tuple[str, ...]
    types: np.ndarray
    cohort: np.ndarray
    weight: np.ndarray
    x: np.ndarray
    unit_effect: np.ndarray
    period_effect: np.ndarray
    included: np.ndarray
    effect: np.ndarray


def _draw_structure(cfg: DgpConfig) -> _Structure:
    rng = np.random.default_rng([cfg.seed, 0])
    n, T = cfg.n_units, cfg.n_periods
    counts = [int(round(s * n)) for s in (cfg.share_a_only, cfg.share_b_only, cfg.share_both)]
    if sum(counts) > n:
        raise ConfigError("treatment shares round to more units than available")
    types = np.concatenate([
        np.full(counts[0], A_ONLY), np.full(counts[1], B_ONLY), np.full(counts[2], BOTH),
        np.full(n - sum(counts), NEVER_TYPE),
    ])
    types = rng.permutation(types)
    cohort = np.full(n, NEVER_CODE, dtype=np.int64)
    for kind, name in ((A_ONLY, "cohorts_a"), (B_ONLY, "cohorts_b"), (BOTH, "cohorts_both")):
        members = np.flatnonzero(types == kind)
        options = np.array(cfg.resolved_cohorts(name), dtype=np.int64)
        cohort[members] = rng.choice(options, size=members.size)
    lo, hi = cfg.weight_range
    weight = rng.integers(lo, hi + 1, size=(n, T)).astype(float)
    z = rng.standard_normal(n)
    treated = types != NEVER_TYPE
    sd_c = cfg.covariate_sd if cfg.covariate_sd_control is None else cfg.covariate_sd_control
    x = cfg.covariate_mean + np.where(treated, cfg.covariate_gap + cfg.covariate_sd * z, sd_c * z)
    unit_effect = cfg.unit_effect_sd * rng.standard_normal(n) + cfg.unit_effect_loading * x
    period_effect = np.cumsum(cfg.period_effect_sd * rng.standard_normal(T))
    v = rng.standard_normal(n)
    if cfg.selection is None:
        included = np.ones(n, dtype=bool)
    else:
        included = cfg.selection.intercept + cfg.selection.slope * x + v > 0
    periods = np.arange(cfg.first_period, cfg.first_period + T)
    event = periods[None, :] - np.where(treated, cohort, 0)[:, None]
    effect = np.zeros((n, T))
    for kind, spec in ((A_ONLY, cfg.effect_a), (B_ONLY, cfg.effect_b), (BOTH, cfg.effect_both)):
        rows = types == kind
        effect[rows] = spec.at(event[rows])
    width = len(str(n))
    unit_ids = tuple(f"u{i:0{width}d}" for i in range(n))
    return _Structure(unit_ids, types, cohort, weight, x, unit_effect, period_effect, included, effect)


@dataclass
class DgpTruth:
    """Finite-sample effect surface of the generated population.

    ``att`` holds ATT(g, t, d) for post-treatment cells, weighted by the
    period-t cell weights of the cohort's units. Aggregates use the same
    cohort-size weights as the estimators. For selection scenarios the truth
    refers to the full population before selection.
    """

    att: dict[tuple[int, int, int], float]
    theta_w: dict[int, float]
    theta_es: dict[int, dict[int, float]]
    complement_att: dict[tuple[int, int], float]
    complement_theta: float | None
    complement_es: dict[int, float]


def _truth(cfg: DgpConfig, s: _Structure) -> DgpTruth:
    p0, pT = cfg.first_period, cfg.last_period
    groups = {
        1: (s.types == A_ONLY) | (s.types == BOTH),
        2: s.types == A_ONLY,
        3: s.types == B_ONLY,
        4: s.types == BOTH,
    }
    unit_size = s.weight.sum(axis=1)
    att: dict = {}
    theta_w: dict = {}
    theta_es: dict = {}
    cells_by_d: dict = {}
    sizes_by_d: dict = {}
    for d, members in groups.items():
        cohorts = sorted(set(s.cohort[members].tolist()))
        if not cohorts:
            continue
        sizes = {g: unit_size[members & (s.cohort == g)].sum() for g in cohorts}
        cells = {}
        for g in cohorts:
            rows = members & (s.cohort == g)
            for t in range(p0 + 1, pT + 1):
                if t == g - 1:
                    continue
                j = t - p0
                w = s.weight[rows, j]
                cells[(g, t)] = float(w @ s.effect[rows, j] / w.sum())
        cells_by_d[d], sizes_by_d[d] = cells, sizes
        att.update({(g, t, d): v for (g, t), v in cells.items() if t >= g})
        theta_w[d] = _weighted(cells, sizes, lambda g, t: t >= g)
        theta_es[d] = _event_path(cells, sizes)
    comp, comp_theta, comp_es = {}, None, {}
    if 4 in cells_by_d and 2 in cells_by_d:
        shared = set(sizes_by_d[4]) & set(sizes_by_d[2])
        comp = {c: v - cells_by_d[2][c] for c, v in cells_by_d[4].items() if c[0] in shared}
        if comp:
            sizes4 = {g: sizes_by_d[4][g] for g in shared}
            if any(t >= g for g, t in comp):
                comp_theta = _weighted(comp, sizes4, lambda g, t: t >= g)
            comp_es = _event_path(comp, sizes4)
    return DgpTruth(att, theta_w, theta_es, comp, comp_theta, comp_es)


def _weighted(cells, sizes, keep) -> float:
    num = den = 0.0
    for (g, t), v in cells.items():
        if keep(g, t):
            num += sizes[g] * v
            den += sizes[g]
    return num / den


def _event_path(cells, sizes) -> dict[int, float]:
    times = sorted({t - g for g, t in cells} | {-1})
    path = {}
    for e in times:
        if e == -1:
            path[e] = 0.0
            continue
        path[e] = _weighted(cells, sizes, lambda g, t, e=e: t - g == e)
    return path


def true_effects(config: DgpConfig) -> DgpTruth:
    return _truth(config, _draw_structure(config))


def generate_panel(config: DgpConfig) -> tuple[PanelDataset, DgpTruth]:
    """Draw a panel and its truth; with a selection rule only included units are returned."""
    s = _draw_structure(config)
    n, T = config.n_units, config.n_periods
    periods = np.arange(config.first_period, config.first_period + T, dtype=np.int64)
    noise = np.random.default_rng([config.seed, 1]).standard_normal((n, T))
    outcome = (
        s.unit_effect[:, None] + s.period_effect[None, :]
        + config.trend_coef * s.x[:, None] * (periods - config.first_period)[None, :]
        + s.effect
    )
    if config.noise_sd > 0:
        outcome = outcome + config.noise_sd * noise
    has_a = (s.types == A_ONLY) | (s.types == BOTH)
    has_b = (s.types == B_ONLY) | (s.types == BOTH)
    full = PanelDataset(
        unit_ids=s.unit_ids, periods=periods, outcome=outcome, weight=s.weight.copy(),
        covariates=np.broadcast_to(s.x[:, None, None], (n, T, 1)).copy(), covariate_names=("x",),
        first_a=np.where(has_a, s.cohort, NEVER_CODE), first_b=np.where(has_b, s.cohort, NEVER_CODE),
        always_a=np.zeros(n, dtype=bool), always_b=np.zeros(n, dtype=bool),
    )
    truth = _truth(config, s)
    if config.selection is not None:
        return full.subset(s.included), truth
    return full, truth


def first_stage(config: DgpConfig) -> FirstStage:
    """Unit-level inclusion flags and the covariate driving them, for every unit."""
    s = _draw_structure(config)
    return FirstStage(s.unit_ids, s.included.astype(float), s.x[:, None].copy(), ("x",))


def closed_form_unconditional_bias(config: DgpConfig, d: int = 1) -> float:
    """Expected bias of the unconditional overall effect from covariate-driven trends.

    Each ATT(g, t) is off by ``trend_coef * gap * (t - g + 1)``; the overall
    effect averages the elapsed time ``t - g + 1`` with cohort-size weights.
    Cohort sizes are replaced by their expectations, which is exact when d
    has a single cohort.
    """
    kinds = {1: ("cohorts_a", "cohorts_both"), 2: ("cohorts_a",), 3: ("cohorts_b",), 4: ("cohorts_both",)}[d]
    shares = {"cohorts_a": config.share_a_only, "cohorts_b": config.share_b_only,
              "cohorts_both": config.share_both}
    expected: dict[int, float] = {}
    for name in kinds:
        options = config.resolved_cohorts(name)
        for g in options:
            expected[g] = expected.get(g, 0.0) + shares[name] / len(options)
    num = den = 0.0
    for g, size in expected.items():
        for t in range(g, config.last_period + 1):
            num += size * (t - g + 1)
            den += size
    return config.trend_coef * config.covariate_gap * num / den
