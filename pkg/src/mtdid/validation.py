"""Built-in validation suite run by ``mtdid validate``.

Each check builds its own data from the generator presets, runs at the
sizes stated in its docstring and returns a :class:`CriterionResult`.
"""

from __future__ import annotations

import contextlib
import filecmp
import logging
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import aggregate
from .aggregate import selection_rule_holds, weights_sum_to_one
from .attgt import CONDITIONAL, att_gt_unconditional
from .config import parse_config
from .dgp import closed_form_unconditional_bias, first_stage, generate_panel, scenario_config
from .inference import BootstrapEngine, bootstrap_estimates, cluster_weight_matrix
from .panel import NEVER_CODE, PanelDataset, assign_treatment_masks
from .pipeline import Pipeline, run_pipeline
from .runner import run_estimate, simulate, truth_points, write_simulation_outputs
from .selection import MILLS_COLUMN, apply_ipw, augment_with_mills, fit_selection_model, ipw_weights
from .twfe import twfe_estimate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CriterionResult:
    name: str
    passed: bool
    detail: str
    runtime: float

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.runtime:.1f}s)"


def _mc(cfg, reps: int, fn: Callable) -> np.ndarray:
    return np.array([fn(*generate_panel(replace(cfg, seed=cfg.seed + r))) for r in range(reps)])


def _overall(ds: PanelDataset, d: int = 1, **kw) -> float:
    return run_pipeline(ds, Pipeline(ds=(d,), **kw)).by_d[d].overall.theta


# oracle equivalence -----------------------------------------------------------

def random_small_panel(rng: np.random.Generator) -> PanelDataset:
    """Random panel with 2-5 units and 2-4 periods and at least one never-treated unit."""
    n = int(rng.integers(2, 6))
    T = int(rng.integers(2, 5))
    t0 = int(rng.integers(-3, 4))
    periods = np.arange(t0, t0 + T, dtype=np.int64)

    def cohorts():
        g = rng.integers(t0 + 1, t0 + T, size=n)
        return np.where(rng.random(n) < 0.5, NEVER_CODE, g).astype(np.int64)

    first_a, first_b = cohorts(), cohorts()
    always_a = rng.random(n) < 0.1
    always_b = rng.random(n) < 0.1
    first_a[always_a] = NEVER_CODE
    first_b[always_b] = NEVER_CODE
    control = rng.integers(n)
    first_a[control] = first_b[control] = NEVER_CODE
    always_a[control] = always_b[control] = False
    return PanelDataset(
        unit_ids=tuple(f"m{i}" for i in range(n)), periods=periods,
        outcome=rng.normal(0.0, 10.0, size=(n, T)), weight=rng.uniform(0.5, 5.0, size=(n, T)),
        covariates=np.zeros((n, T, 0)), covariate_names=(),
        first_a=first_a, first_b=first_b, always_a=always_a, always_b=always_b,
    )


def brute_force_att(ds: PanelDataset, d: int, g: int, t: int) -> float:
    """Weighted treated-minus-control mean of Y_t - Y_{g-1}, written with plain loops."""
    sums = {"treated": [0.0, 0.0], "control": [0.0, 0.0]}
    for i in range(ds.n_units):
        if ds.always_a[i] or ds.always_b[i]:
            continue
        a, b = int(ds.first_a[i]), int(ds.first_b[i])
        ever_a, ever_b = a != NEVER_CODE, b != NEVER_CODE
        if d == 1:
            treated = ever_a and a == g
        elif d == 2:
            treated = ever_a and not ever_b and a == g
        elif d == 3:
            treated = ever_b and not ever_a and b == g
        else:
            treated = ever_a and ever_b and a == g
        side = "treated" if treated else "control" if not (ever_a or ever_b) else None
        if side is None:
            continue
        jt, jb = t - ds.t_min, g - 1 - ds.t_min
        w = float(ds.weight[i][jt])
        sums[side][0] += w * (float(ds.outcome[i][jt]) - float(ds.outcome[i][jb]))
        sums[side][1] += w
    return sums["treated"][0] / sums["treated"][1] - sums["control"][0] / sums["control"][1]


def check_oracle_equivalence(n_panels: int = 1000, seed: int = 2024) -> tuple[bool, str]:
    """ATT(g, t) on >= 1000 random tiny panels equals the brute-force oracle to 1e-12, in < 10 s."""
    rng = np.random.default_rng(seed)
    worst, cells, panels = 0.0, 0, 0
    while panels < n_panels:
        ds = random_small_panel(rng)
        masks = assign_treatment_masks(ds)
        used = False
        for mask in masks:
            for g in mask.cohorts():
                if g - 1 < ds.t_min:
                    continue
                for t in range(ds.t_min + 1, ds.t_max + 1):
                    if t == g - 1:
                        continue
                    est = att_gt_unconditional(ds, mask, g, t).estimate
                    worst = max(worst, abs(est - brute_force_att(ds, mask.d, g, t)))
                    cells += 1
                    used = True
        panels += used
    return worst <= 1e-12, f"{panels} panels, {cells} cells, max |diff| {worst:.2e}"


# noiseless recovery -------------------------------------------------------------

def check_noiseless_recovery(tol: float = 1e-10) -> tuple[bool, str]:
    """S1-S4 without noise: every estimator whose identifying assumption holds hits the truth."""
    worst = {}
    for name in ("S1", "S2", "S3", "S4"):
        cfg = scenario_config(name, noise_sd=0.0)
        ds, truth = generate_panel(cfg)
        true = truth_points(truth)
        modes = [("unconditional", ())] if cfg.trend_coef == 0 else []
        modes.append((CONDITIONAL, ("x",)))
        for mode, cov in modes:
            res = run_pipeline(ds, Pipeline(mode=mode, covariate_names=cov, complement=True))
            est = res.point_estimates()
            keys = [k for k in est if k in true or k.startswith("attgt/") or k.startswith("complement/g=")]
            err = max(abs(est[k] - true.get(k, 0.0)) for k in keys)
            if name in ("S1", "S4") and "complement/overall" not in est:
                err = np.inf
            worst[f"{name}/{mode}"] = err
    top = max(worst.values())
    return top <= tol, f"max |estimate - truth| {top:.1e} over {len(worst)} scenario/mode runs"


# Monte Carlo criteria -------------------------------------------------------------

def check_unbiasedness(reps: int = 200) -> tuple[bool, str]:
    """S1: |mean theta_w - 2| < 0.05 over 200 replications, in < 2 min."""
    cfg = scenario_config("S1")
    est = _mc(cfg, reps, lambda ds, tr: _overall(ds))
    bias = float(est.mean() - 2.0)
    return abs(bias) < 0.05, f"mean theta_w {est.mean():.4f} (bias {bias:+.4f}, MC se {est.std(ddof=1) / np.sqrt(reps):.4f})"


def check_pretrend_null(reps: int = 200) -> tuple[bool, str]:
    """S1 and S2: |mean theta_es(e)| < 0.05 for e in [-5, -2]."""
    worst, detail = 0.0, []
    for name in ("S1", "S2"):
        def path(ds, tr):
            es = {a.e: a.theta for a in run_pipeline(ds, Pipeline(ds=(1,))).by_d[1].event_study}
            return [es[e] for e in range(-5, -1)]
        means = _mc(scenario_config(name), reps, path).mean(axis=0)
        top = float(np.abs(means).max())
        worst = max(worst, top)
        detail.append(f"{name} max |mean| {top:.4f}")
    return worst < 0.05, ", ".join(detail)


def check_conditional_contrast(reps: int = 200) -> tuple[bool, str]:
    """S3: unconditional bias matches its closed form within 0.05 and exceeds 0.2; conditional |bias| < 0.05."""
    cfg = scenario_config("S3")
    closed = closed_form_unconditional_bias(cfg)

    def both(ds, tr):
        t = tr.theta_w[1]
        return _overall(ds) - t, _overall(ds, mode=CONDITIONAL, covariate_names=("x",)) - t

    bias = _mc(cfg, reps, both).mean(axis=0)
    ok = abs(bias[0] - closed) < 0.05 and abs(bias[0]) > 0.2 and abs(bias[1]) < 0.05
    return ok, f"unconditional bias {bias[0]:.4f} (closed form {closed:.4f}), conditional bias {bias[1]:+.4f}"


def check_contamination(reps: int = 200) -> tuple[bool, str]:
    """TWFE is biased where the robust estimators are not.

    S2: static TWFE coefficient vs the true overall effect. S2-additive: the
    TWFE interaction coefficient vs its true value 0, and the complementary
    estimator vs its own truth.
    """
    s2 = _mc(scenario_config("S2"), reps,
             lambda ds, tr: (twfe_estimate(ds)["a"] - tr.theta_w[1], _overall(ds) - tr.theta_w[1]))
    b_twfe, b_cs = s2.mean(axis=0)

    def interaction(ds, tr):
        fit = twfe_estimate(ds, ("a", "b"), include_interaction=True)
        res = run_pipeline(ds, Pipeline(complement=True))
        return fit["a:b"], res.complement_overall.theta - tr.complement_theta

    add = _mc(scenario_config("S2-additive"), reps, interaction)
    b_int, b_comp = add.mean(axis=0)
    ok = abs(b_twfe) > 0.1 and abs(b_cs) < 0.05 and abs(b_int) > 0.1 and abs(b_comp) < 0.05
    return ok, (f"S2 TWFE bias {b_twfe:+.3f} vs robust {b_cs:+.4f}; "
                f"additive interaction bias {b_int:+.3f} vs complementary {b_comp:+.4f}")


def check_complementarity(reps: int = 200) -> tuple[bool, str]:
    """S4: mean aggregate complementary effect 2.0 +/- 0.1; delta equals ATT(4) - ATT(2) to 1e-12."""
    worst = 0.0

    def one(ds, tr):
        nonlocal worst
        res = run_pipeline(ds, Pipeline(complement=True))
        masks = {m.d: m for m in assign_treatment_masks(ds)}
        for c in res.complement.deltas:
            ref = (att_gt_unconditional(ds, masks[4], c.g, c.t).estimate
                   - att_gt_unconditional(ds, masks[2], c.g, c.t).estimate)
            worst = max(worst, abs(c.delta - ref))
        return res.complement_overall.theta

    est = _mc(scenario_config("S4"), reps, one)
    mean = float(est.mean())
    return abs(mean - 2.0) <= 0.1 and worst <= 1e-12, f"mean complementary effect {mean:.4f}, identity max |diff| {worst:.1e}"


def check_bootstrap_coverage(reps: int = 500, B: int = 499) -> tuple[bool, str]:
    """S1, B = 499, 500 replications: theta_w CI coverage in [0.90, 0.98]; band path coverage >= pointwise."""
    cfg = parse_config({"dgp": {"scenario": "S1"}, "estimands": {"ds": [1]},
                        "bootstrap": {"B": B, "seed": 101}})
    table = simulate(cfg, replications=reps, workers=1).table.set_index("estimand")
    cover = float(table.loc["overall/d=1", "coverage"])
    path_ci = float(table.loc["event_study/d=1/path", "coverage"])
    path_band = float(table.loc["event_study/d=1/path", "band_coverage"])
    ok = 0.90 <= cover <= 0.98 and path_band >= path_ci
    return ok, (f"theta_w coverage {cover:.3f}; full event-study path covered by band {path_band:.3f} "
                f"vs by pointwise intervals {path_ci:.3f}")


def check_selection_correction(reps: int = 200) -> tuple[bool, str]:
    """S5: the Mills-ratio estimator halves the uncorrected bias; IPW lies within 2 SEs of it.

    The SE is the Monte Carlo standard deviation of the Mills-ratio estimate.
    """
    cfg = scenario_config("S5")
    rows = []
    for r in range(reps):
        c = replace(cfg, seed=cfg.seed + r)
        ds, truth = generate_panel(c)
        model = fit_selection_model(first_stage(c))
        t = truth.theta_w[1]
        rows.append((
            _overall(ds) - t,
            _overall(augment_with_mills(ds, model), mode=CONDITIONAL, covariate_names=(MILLS_COLUMN,)) - t,
            _overall(apply_ipw(ds, ipw_weights(model))) - t,
        ))
    rows = np.array(rows)
    b_un, b_mills, b_ipw = rows.mean(axis=0)
    se = float(rows[:, 1].std(ddof=1))
    reduction = 1.0 - abs(b_mills) / abs(b_un)
    ok = reduction >= 0.5 and abs(b_ipw - b_mills) <= 2.0 * se
    return ok, (f"bias uncorrected {b_un:+.3f}, Mills {b_mills:+.3f} ({reduction:.0%} reduction), "
                f"IPW {b_ipw:+.3f}; |IPW - Mills| {abs(b_ipw - b_mills):.3f} vs 2 SE {2 * se:.3f}")


# plumbing checks -----------------------------------------------------------------

def _same_tree(a: Path, b: Path) -> bool:
    names = sorted(p.name for p in a.iterdir())
    if names != sorted(p.name for p in b.iterdir()):
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    return not mismatch and not errors


def check_determinism() -> tuple[bool, str]:
    """estimate and simulate outputs are byte-identical across reruns and worker counts 1 and 8."""
    results = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        est_cfg = {"dgp": {"scenario": "S4", "seed": 5}, "estimands": {"complement": True},
                   "bootstrap": {"B": 199, "seed": 9}}
        sim_cfg = {"dgp": {"scenario": "S1", "seed": 3}, "estimands": {"ds": [1]},
                   "bootstrap": {"B": 100, "seed": 4}, "simulate": {"replications": 4}}
        for label, raw in (("estimate", est_cfg), ("simulate", sim_cfg)):
            dirs = []
            for run, workers in enumerate((1, 1, 8)):
                cfg = replace(parse_config(raw), output_dir=str(tmp / f"{label}{run}"), workers=workers)
                if label == "estimate":
                    run_estimate(cfg)
                else:
                    write_simulation_outputs(cfg, simulate(cfg))
                dirs.append(Path(cfg.output_dir))
            results.append((label, _same_tree(dirs[0], dirs[1]) and _same_tree(dirs[0], dirs[2])))
    ok = all(r for _, r in results)
    return ok, ", ".join(f"{label} {'identical' if r else 'DIFFERS'}" for label, r in results)


def check_weights_sum_to_one() -> tuple[bool, str]:
    """Every aggregation uses weights summing to one over the cells its rule selects."""
    ds, _ = generate_panel(scenario_config("S4"))
    res = run_pipeline(ds, Pipeline(complement=True))
    aggs = [r.overall for r in res.by_d.values()] + [a for r in res.by_d.values() for a in r.event_study]
    aggs += [res.complement_overall] + list(res.complement_event_study)
    bad = [a for a in aggs if not (weights_sum_to_one(a) and selection_rule_holds(a))]
    return not bad, f"{len(aggs) - len(bad)} of {len(aggs)} aggregates valid"


def bootstrap_se_spread(draws: np.ndarray, n_resamples: int = 200, seed: int = 0) -> np.ndarray:
    """Bootstrap-of-bootstrap standard error of the draw standard deviation, per column."""
    rng = np.random.default_rng(seed)
    B = draws.shape[0]
    sds = np.array([draws[rng.integers(0, B, B)].std(axis=0, ddof=1) for _ in range(n_resamples)])
    return sds.std(axis=0, ddof=1)


def check_bootstrap_stability(B: int = 499) -> tuple[bool, str]:
    """Doubling B moves every se by less than 3 bootstrap-of-bootstrap SEs."""
    ds, _ = generate_panel(scenario_config("S1"))
    pipe = Pipeline(ds=(1,))
    small = bootstrap_estimates(ds, pipe, B=B, seed=7)
    large = bootstrap_estimates(ds, pipe, B=2 * B, seed=7)
    engine = BootstrapEngine(ds, pipe, run_pipeline(ds, pipe))
    spread = bootstrap_se_spread(engine.evaluate(cluster_weight_matrix(ds.n_units, 7, range(B))))
    keys = engine.keys
    ratio = np.array([abs(large[k].se - small[k].se) / s if s > 0 else 0.0 for k, s in zip(keys, spread)])
    return bool(np.all(ratio < 3.0)), f"max |se(2B) - se(B)| = {ratio.max():.2f} bootstrap-of-bootstrap SEs"


def _limited(fn: Callable, limit: float) -> Callable:
    def run():
        start = time.perf_counter()
        ok, detail = fn()
        elapsed = time.perf_counter() - start
        if elapsed >= limit:
            return False, f"{detail}; runtime {elapsed:.1f}s exceeds {limit:.0f}s"
        return ok, detail
    return run


CRITERIA: dict[str, Callable[[], tuple[bool, str]]] = {
    "oracle equivalence": _limited(check_oracle_equivalence, 10.0),
    "noiseless recovery": check_noiseless_recovery,
    "unbiasedness": _limited(check_unbiasedness, 120.0),
    "pretrend null": check_pretrend_null,
    "conditional vs unconditional": check_conditional_contrast,
    "contamination": check_contamination,
    "complementarity recovery": check_complementarity,
    "bootstrap coverage": _limited(check_bootstrap_coverage, 900.0),
    "selection correction": check_selection_correction,
    "determinism": check_determinism,
    "weights sum to one": check_weights_sum_to_one,
    "bootstrap stability": check_bootstrap_stability,
}


def run_criterion(name: str) -> CriterionResult:
    start = time.perf_counter()
    try:
        ok, detail = CRITERIA[name]()
    except Exception as exc:  # a crash is a failure of that criterion, not of the suite
        logger.exception("criterion %r raised", name)
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    return CriterionResult(name, bool(ok), detail, time.perf_counter() - start)


def run_suite(names=None, report: Callable[[CriterionResult], None] | None = None) -> list[CriterionResult]:
    names = list(CRITERIA) if names is None else list(names)
    unknown = [n for n in names if n not in CRITERIA]
    if unknown:
        raise KeyError(f"unknown criteria: {', '.join(unknown)}")
    out = []
    for name in names:
        res = run_criterion(name)
        if report is not None:
            report(res)
        out.append(res)
    return out


FAULTS = ("weights",)


@contextlib.contextmanager
def inject_fault(name: str):
    """Test hook: deliberately break part of the pipeline for the duration of the block."""
    if name not in FAULTS:
        raise ValueError(f"unknown fault {name!r}; choose from {FAULTS}")
    original = aggregate._normalize

    def broken(raw):
        total = sum(raw.values())
        return {k: 1.1 * v / total for k, v in raw.items()}

    aggregate._normalize = broken
    try:
        yield
    finally:
        aggregate._normalize = original
