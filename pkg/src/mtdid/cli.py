"""Command-line entry point: ``mtdid {estimate,simulate,validate}``.

Everything that shapes a run lives in the config file, so the manifest
written next to the outputs is enough to reproduce it. Exit codes: 0 ok,
1 config error, 2 data error, 3 estimation failure; ``validate`` exits with
the number of failed criteria (at most 125).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import yaml

from .config import load_config
from .errors import ConfigError, DataError, EstimationError, MtdidError
from .runner import StageError, run_estimate, simulate, write_simulation_outputs

logger = logging.getLogger("mtdid")

EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 1, 2, 3
MAX_EXIT = 125


def _exit_code(exc: MtdidError) -> int:
    inner = exc.error if isinstance(exc, StageError) else exc
    if isinstance(inner, DataError):
        return EXIT_DATA
    if isinstance(inner, EstimationError):
        return EXIT_ESTIMATION
    if isinstance(inner, ConfigError):
        return EXIT_CONFIG
    return EXIT_ESTIMATION


def _report_error(exc: MtdidError) -> int:
    stage = exc.stage if isinstance(exc, StageError) else "config"
    inner = exc.error if isinstance(exc, StageError) else exc
    print(f"mtdid: {stage} failed: {inner}", file=sys.stderr)
    return _exit_code(exc)


def cmd_estimate(args) -> int:
    config = load_config(args.config)
    out = run_estimate(config)
    print(f"wrote results to {out}")
    return 0


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    if config.dgp is None:
        raise ConfigError("simulate needs a dgp section")
    report = simulate(config)
    out = write_simulation_outputs(config, report)
    sys.stdout.write(report.summary())
    print(f"wrote report to {out}")
    return 0


def _validate_names(path) -> list[str] | None:
    if path is None:
        return None
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    names = (raw.get("validate") or {}).get("criteria")
    return None if names is None else [str(n) for n in names]


def cmd_validate(args) -> int:
    from . import validation

    names = _validate_names(args.config)
    if names is not None:
        unknown = [n for n in names if n not in validation.CRITERIA]
        if unknown:
            raise ConfigError(f"unknown criteria: {', '.join(unknown)}")
    start = time.perf_counter()

    def report(res):
        print(res.line(), flush=True)

    if args.inject_fault:
        with validation.inject_fault(args.inject_fault):
            results = validation.run_suite(names, report)
    else:
        results = validation.run_suite(names, report)
    failed = [r.name for r in results if not r.passed]
    elapsed = time.perf_counter() - start
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed in {elapsed:.1f}s")
    if failed:
        print("failed: " + ", ".join(failed))
    return min(len(failed), MAX_EXIT)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtdid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    parser.add_argument("-q", "--quiet", action="store_true", help="only errors")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("estimate", help="estimate effects with bootstrap inference")
    p.add_argument("config", help="YAML or JSON run configuration")
    p.set_defaults(func=cmd_estimate)
    p = sub.add_parser("simulate", help="Monte Carlo bias, RMSE and coverage against the generator truth")
    p.add_argument("config", help="YAML or JSON run configuration with a dgp section")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("validate", help="run the built-in validation suite")
    p.add_argument("config", nargs="?", default=None, help="optional config selecting criteria")
    p.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MtdidError as exc:
        return _report_error(exc)


if __name__ == "__main__":
    sys.exit(main())
