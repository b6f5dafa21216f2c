"""Library-level drivers behind the ``estimate`` and ``simulate`` commands."""

from __future__ import annotations

import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from . import io
from .config import RunConfig
from .dgp import DgpConfig, DgpTruth, first_stage, generate_panel
from .errors import MtdidError
from .inference import BootstrapResult, bootstrap_estimates
from .panel import PanelDataset, load_panel_csv
from .pipeline import PipelineResult, attgt_key, event_key, overall_key, run_pipeline
from .selection import FirstStage, apply_ipw, augment_with_mills, fit_selection_model, ipw_weights

logger = logging.getLogger(__name__)

SIMULATION_COLUMNS = ("estimand", "replications", "mean_truth", "mean_estimate", "bias", "rmse",
                      "coverage", "band_coverage")


class StageError(MtdidError):
    """Wraps a package error with the pipeline stage it came from."""

    def __init__(self, stage: str, error: MtdidError):
        super().__init__(f"{stage}: {error}")
        self.stage = stage
        self.error = error


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except MtdidError as exc:
        raise StageError(name, exc) from exc


def versions() -> dict:
    return {"mtdid": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pandas": pd.__version__}


def prepare_data(config: RunConfig, dgp: DgpConfig | None = None) -> tuple[PanelDataset, DgpTruth | None]:
    """Load or generate the panel and apply the configured selection correction."""
    dgp = dgp or config.dgp
    if config.input is not None:
        dataset = _stage("ingest", load_panel_csv, config.input, config.schema, config.school_leaving_age)
        truth = None
    else:
        dataset, truth = _stage("generate", generate_panel, dgp)
    sel = config.selection
    if sel.enabled:
        if config.input is not None:
            stage = _stage("selection", FirstStage.from_csv, sel.first_stage)
        else:
            stage = first_stage(dgp)
        model = _stage("selection", fit_selection_model, stage)
        if sel.method == "mills":
            dataset = _stage("selection", augment_with_mills, dataset, model)
        else:
            dataset = _stage("selection", apply_ipw, dataset, ipw_weights(model, sel.trim))
    return dataset, truth


def estimate(config: RunConfig, dataset: PanelDataset, bootstrap_seed: int | None = None,
             workers: int | None = None) -> tuple[PipelineResult, dict[str, BootstrapResult] | None]:
    result = _stage("estimate", run_pipeline, dataset, config.pipeline)
    if not config.bootstrap.enabled:
        return result, None
    boot = config.bootstrap
    seed = boot.seed if bootstrap_seed is None else bootstrap_seed
    inference = _stage("bootstrap", bootstrap_estimates, dataset, config.pipeline, B=boot.B,
                       alpha=boot.alpha, seed=seed, workers=workers or config.workers, point=result)
    return result, inference


def write_estimate_outputs(config: RunConfig, dataset: PanelDataset, result: PipelineResult,
                           inference, command: str = "estimate") -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = ["attgt.csv"]
    io.write_attgt(out / "attgt.csv", result, inference)
    for d in sorted(result.by_d):
        name = f"eventstudy_d{d}.csv"
        io.write_event_study(out / name, result, d, inference)
        files.append(name)
    if config.pipeline.complement:
        io.write_complement(out / "complement.csv", result, inference)
        files.append("complement.csv")
    io.write_json(out / "aggregates.json", io.aggregates_payload(result, inference))
    files.append("aggregates.json")
    manifest = _manifest(config, command, {f: io.file_digest(out / f) for f in files})
    manifest["ingestion"] = {"rejected_rows": len(dataset.report.rejected_rows),
                             "dropped_units": list(dataset.report.dropped_units)}
    io.write_json(out / "manifest.json", manifest)
    return out


def _manifest(config: RunConfig, command: str, outputs: dict) -> dict:
    view = config.manifest_view()
    manifest = {"command": command, "config": view, "config_hash": io.canonical_hash(view),
                "seed": config.bootstrap.seed, "versions": versions(), "outputs": outputs}
    if config.input is not None:
        manifest["input_sha256"] = io.file_digest(config.input)
    return manifest


def run_estimate(config: RunConfig) -> Path:
    dataset, _ = prepare_data(config)
    result, inference = estimate(config, dataset)
    return _stage("write", write_estimate_outputs, config, dataset, result, inference)


def truth_points(truth: DgpTruth) -> dict[str, float]:
    """The DGP truth under the same keys as :meth:`PipelineResult.point_estimates`."""
    out: dict[str, float] = {}
    for d, path in truth.theta_es.items():
        out[overall_key(d)] = truth.theta_w[d]
        for e, v in path.items():
            out[event_key(d, e)] = v
    for (g, t, d), v in truth.att.items():
        out[attgt_key(d, g, t)] = v
    for (g, t), v in truth.complement_att.items():
        out[f"complement/g={g}/t={t}"] = v
    if truth.complement_theta is not None:
        out["complement/overall"] = truth.complement_theta
    for e, v in truth.complement_es.items():
        out[f"complement/event_study/e={e}"] = v
    return out


def _truth_for(key: str, truth: dict[str, float]) -> float:
    if key in truth:
        return truth[key]
    if key.startswith("attgt/") or key.startswith("complement/g="):
        return 0.0  # pre-treatment cell
    raise KeyError(key)


def replicate(config: RunConfig, r: int) -> dict:
    """One generate -> estimate replication; key -> (estimate, truth, ci hit, band hit)."""
    dgp = replace(config.dgp, seed=config.dgp.seed + r)
    dataset, truth = prepare_data(config, dgp)
    result, inference = estimate(config, dataset, bootstrap_seed=config.bootstrap.seed + r, workers=1)
    true = truth_points(truth)
    out = {}
    paths: dict[str, tuple[bool, bool]] = {}
    for key, est in result.point_estimates().items():
        tv = _truth_for(key, true)
        ci = band = None
        if inference is not None:
            b = inference[key]
            ci = b.ci_low <= tv <= b.ci_high
            band = b.band_low <= tv <= b.band_high
            if key.startswith("event_study/") or key.startswith("complement/event_study"):
                path = key.rsplit("/", 1)[0] + "/path"
                ci_all, band_all = paths.get(path, (True, True))
                paths[path] = (ci_all and ci, band_all and band)
        out[key] = (est, tv, ci, band)
    # a path is covered when every event time is covered at once
    for path, (ci_all, band_all) in paths.items():
        out[path] = (math.nan, math.nan, ci_all, band_all)
    return out


@dataclass
class SimulationReport:
    table: pd.DataFrame
    replications: int
    coverage_available: bool

    def summary(self) -> str:
        lines = [f"replications: {self.replications}"]
        if not self.coverage_available:
            lines.append("coverage: NA (needs at least 2 replications and bootstrap enabled)")
        for row in self.table.itertuples(index=False):
            if row.estimand.startswith("overall/") or row.estimand.startswith("complement/overall"):
                lines.append(f"{row.estimand}: bias {row.bias:+.4f}  rmse {row.rmse:.4f}  "
                             f"coverage {_pct(row.coverage)}")
            elif row.estimand.endswith("/path"):
                lines.append(f"{row.estimand}: joint coverage pointwise {_pct(row.coverage)}  "
                             f"uniform band {_pct(row.band_coverage)}")
        return "\n".join(lines) + "\n"


def _pct(v) -> str:
    return "NA" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.3f}"


def simulate(config: RunConfig, replications: int | None = None, workers: int | None = None) -> SimulationReport:
    """Monte Carlo over DGP seeds ``dgp.seed + r``; bootstrap seed ``bootstrap.seed + r``."""
    if config.dgp is None:
        raise StageError("simulate", MtdidError("simulate needs a dgp section"))
    reps = replications or config.replications
    workers = workers or config.workers
    if workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(replicate, [config] * reps, range(reps)))
    else:
        results = [replicate(config, r) for r in range(reps)]
    acc: dict[str, list] = {}
    for res in results:
        for key, row in res.items():
            acc.setdefault(key, []).append(row)
    coverage_ok = reps > 1 and config.bootstrap.enabled
    rows = []
    for key, items in acc.items():
        est = np.array([i[0] for i in items])
        tv = np.array([i[1] for i in items])
        err = est - tv
        ci = [i[2] for i in items if i[2] is not None]
        band = [i[3] for i in items if i[3] is not None]
        cover = float(np.mean(ci)) if coverage_ok and ci else math.nan
        bcover = float(np.mean(band)) if coverage_ok and band else math.nan
        if key.endswith("/path"):
            rows.append([key, len(items), math.nan, math.nan, math.nan, math.nan, cover, bcover])
            continue
        rows.append([key, len(items), float(tv.mean()), float(est.mean()), float(err.mean()),
                     float(np.sqrt(np.mean(err**2))), cover, bcover])
    table = pd.DataFrame(rows, columns=list(SIMULATION_COLUMNS))
    return SimulationReport(table, reps, coverage_ok)


def write_simulation_outputs(config: RunConfig, report: SimulationReport) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_table(out / "simulation.csv", SIMULATION_COLUMNS, report.table.itertuples(index=False))
    (out / "summary.txt").write_text(report.summary(), encoding="utf-8")
    files = ["simulation.csv", "summary.txt"]
    manifest = _manifest(config, "simulate", {f: io.file_digest(out / f) for f in files})
    io.write_json(out / "manifest.json", manifest)
    return out


def read_simulation(path) -> pd.DataFrame:
    return io.read_table(path, SIMULATION_COLUMNS)
