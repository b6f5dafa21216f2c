"""Run configuration read from a YAML (or JSON) file.

Example::

    dgp: {scenario: S1, seed: 7}        # or  input: panel.csv
    mode: unconditional
    covariates: []
    estimands: {ds: [1, 2, 3, 4], complement: true}
    bootstrap: {B: 999, alpha: 0.05, seed: 0}
    selection: {enabled: false, method: mills}
    simulate: {replications: 200}
    output_dir: out
    workers: 1

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .attgt import MODES, UNCONDITIONAL
from .dgp import DgpConfig
from .errors import ConfigError
from .inference import DEFAULT_ALPHA, DEFAULT_B
from .pipeline import Pipeline
from .selection import DEFAULT_TRIM

WORKERS_ENV = "MTDID_WORKERS"
SELECTION_METHODS = ("mills", "ipw")
_TOP_LEVEL = {"input", "dgp", "schema", "school_leaving_age", "mode", "covariates", "estimands",
              "bootstrap", "selection", "simulate", "output_dir", "workers", "validate"}


@dataclass(frozen=True)
class BootstrapConfig:
    enabled: bool = True
    B: int = DEFAULT_B
    alpha: float = DEFAULT_ALPHA
    seed: int = 0

    def __post_init__(self):
        if self.B < 100:
            raise ConfigError("bootstrap.B must be at least 100")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("bootstrap.alpha must be in (0, 1)")
        if self.seed < 0:
            raise ConfigError("bootstrap.seed must be non-negative")


@dataclass(frozen=True)
class SelectionConfig:
    enabled: bool = False
    method: str = "mills"
    first_stage: str | None = None
    trim: tuple[float, float] = DEFAULT_TRIM


@dataclass(frozen=True)
class RunConfig:
    input: str | None = None
    dgp: DgpConfig | None = None
    schema: dict | None = None
    school_leaving_age: int = 14
    mode: str = UNCONDITIONAL
    covariates: tuple[str, ...] = ()
    pipeline: Pipeline = field(default_factory=Pipeline)
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    replications: int = 1
    output_dir: str = "out"
    workers: int = 1
    criteria: tuple[str, ...] | None = None

    def __post_init__(self):
        if (self.input is None) == (self.dgp is None):
            raise ConfigError("config must name exactly one input source (input or dgp)")
        if self.replications < 1:
            raise ConfigError("simulate.replications must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.selection.enabled:
            if self.selection.method not in SELECTION_METHODS:
                raise ConfigError(f"selection.method must be one of {SELECTION_METHODS}")
            if self.input is not None and self.selection.first_stage is None:
                raise ConfigError("selection on an input file needs selection.first_stage")
            if self.selection.method == "mills" and self.pipeline.mode != "conditional":
                raise ConfigError("the Mills-ratio correction needs mode: conditional")

    def manifest_view(self) -> dict:
        """Everything that determines the outputs; the worker count is deliberately absent."""
        view = {
            "input": self.input,
            "dgp": None if self.dgp is None else self.dgp.to_dict(),
            "schema": self.schema,
            "school_leaving_age": self.school_leaving_age,
            "pipeline": asdict(self.pipeline),
            "bootstrap": asdict(self.bootstrap),
            "selection": asdict(self.selection),
            "replications": self.replications,
        }
        return _jsonable(view)


def _jsonable(value):
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _section(raw: Mapping, key: str, cls):
    part = raw.get(key) or {}
    if not isinstance(part, Mapping):
        raise ConfigError(f"{key} must be a mapping")
    unknown = set(part) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"{key}: unknown field(s) {', '.join(sorted(unknown))}")
    return part


def _resolve(path: str | None, base: Path | None) -> str | None:
    if path is None or base is None or os.path.isabs(path):
        return path
    return str((base / path).resolve())


def parse_config(raw: Mapping[str, Any], base_dir: str | Path | None = None) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - _TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    base = None if base_dir is None else Path(base_dir)
    mode = raw.get("mode", UNCONDITIONAL)
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    covariates = tuple(raw.get("covariates") or ())
    est = dict(raw.get("estimands") or {})
    unknown = set(est) - {"ds", "complement", "e_range", "within_cohort_first"}
    if unknown:
        raise ConfigError(f"estimands: unknown field(s) {', '.join(sorted(unknown))}")
    boot = _section(raw, "bootstrap", BootstrapConfig)
    sel = dict(_section(raw, "selection", SelectionConfig))
    if sel.get("first_stage") is not None:
        sel["first_stage"] = _resolve(str(sel["first_stage"]), base)
    if "trim" in sel:
        sel["trim"] = tuple(float(v) for v in sel["trim"])
    selection = SelectionConfig(**sel)
    if selection.enabled and selection.method == "mills" and "inverse_mills" not in covariates:
        covariates = covariates + ("inverse_mills",)
    try:
        pipeline = Pipeline(
            ds=tuple(int(d) for d in est.get("ds", (1, 2, 3, 4))),
            mode=mode,
            covariate_names=covariates,
            e_range=None if est.get("e_range") is None else tuple(int(e) for e in est["e_range"]),
            complement=bool(est.get("complement", False)),
            within_cohort_first=bool(est.get("within_cohort_first", False)),
        )
        bootstrap = BootstrapConfig(**boot)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    dgp = raw.get("dgp")
    if dgp is not None:
        if not isinstance(dgp, Mapping):
            raise ConfigError("dgp must be a mapping")
        dgp = DgpConfig.from_dict(dgp)
    sim = raw.get("simulate") or {}
    validate = raw.get("validate") or {}
    workers = int(raw.get("workers", 1))
    if os.environ.get(WORKERS_ENV):
        try:
            workers = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer") from None
    input_path = raw.get("input")
    return RunConfig(
        input=_resolve(None if input_path is None else str(input_path), base),
        dgp=dgp,
        schema=None if raw.get("schema") is None else dict(raw["schema"]),
        school_leaving_age=int(raw.get("school_leaving_age", 14)),
        mode=mode,
        covariates=covariates,
        pipeline=pipeline,
        bootstrap=bootstrap,
        selection=selection,
        replications=int(sim.get("replications", 1)),
        output_dir=_resolve(str(raw.get("output_dir", "out")), base),
        workers=workers,
        criteria=None if validate.get("criteria") is None else tuple(map(str, validate["criteria"])),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return parse_config(raw if raw is not None else {}, path.parent)
