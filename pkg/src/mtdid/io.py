"""Result files: writers and matching readers.

Tabular series go to CSV, nested inference objects to JSON. Floats are
written with ``repr`` so every file round-trips exactly through its reader.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import pandas as pd

from .inference import BootstrapResult
from .pipeline import PipelineResult, attgt_key, event_key, overall_key

INFERENCE_COLUMNS = ("se", "ci_low", "ci_high", "band_low", "band_high")
ATTGT_COLUMNS = ("d", "g", "t", "e", "estimate", "n_treated", "n_control") + INFERENCE_COLUMNS
EVENT_COLUMNS = ("e", "theta", "n_cohorts") + INFERENCE_COLUMNS
COMPLEMENT_COLUMNS = ("g", "t", "e", "delta", "joint", "singular") + INFERENCE_COLUMNS


def _fmt(value) -> str:
    if isinstance(value, float):
        return "NA" if math.isnan(value) else repr(value)
    return str(value)


def write_table(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(columns)
        for row in rows:
            out.writerow([_fmt(v) for v in row])


def read_table(path, columns: Sequence[str] | None = None) -> pd.DataFrame:
    frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip", na_values=["NA"],
                        keep_default_na=False)
    if columns is not None and tuple(frame.columns) != tuple(columns):
        raise ValueError(f"{path}: unexpected columns {list(frame.columns)}")
    return frame


def _inference(inference: Mapping[str, BootstrapResult] | None, key: str) -> list[float]:
    res = (inference or {}).get(key)
    if res is None:
        return [math.nan] * len(INFERENCE_COLUMNS)
    return [res.se, res.ci_low, res.ci_high, res.band_low, res.band_high]


def write_attgt(path, result: PipelineResult, inference=None) -> None:
    rows = []
    for d, res in sorted(result.by_d.items()):
        for est in res.estimates:
            rows.append([d, est.g, est.t, est.event_time, float(est.estimate), est.n_treated, est.n_control]
                        + _inference(inference, attgt_key(d, est.g, est.t)))
    write_table(path, ATTGT_COLUMNS, rows)


def read_attgt(path) -> pd.DataFrame:
    return read_table(path, ATTGT_COLUMNS)


def write_event_study(path, result: PipelineResult, d: int, inference=None) -> None:
    rows = [[agg.e, float(agg.theta), len(agg.cohorts)] + _inference(inference, event_key(d, agg.e))
            for agg in result.by_d[d].event_study]
    write_table(path, EVENT_COLUMNS, rows)


def read_event_study(path) -> pd.DataFrame:
    return read_table(path, EVENT_COLUMNS)


def write_complement(path, result: PipelineResult, inference=None) -> None:
    rows = []
    for c in result.complement.deltas if result.complement else ():
        rows.append([c.g, c.t, c.t - c.g, float(c.delta), float(c.joint.estimate), float(c.singular.estimate)]
                    + _inference(inference, f"complement/g={c.g}/t={c.t}"))
    write_table(path, COMPLEMENT_COLUMNS, rows)


def read_complement(path) -> pd.DataFrame:
    return read_table(path, COMPLEMENT_COLUMNS)


def aggregates_payload(result: PipelineResult, inference=None) -> dict:
    def entry(key: str, theta: float) -> dict:
        res = (inference or {}).get(key)
        if res is None:
            return {"point": float(theta)}
        return res.as_dict()

    payload: dict = {"overall": {}, "event_study": {}}
    for d, res in sorted(result.by_d.items()):
        payload["overall"][f"d={d}"] = entry(overall_key(d), res.overall.theta)
        payload["event_study"][f"d={d}"] = {
            str(agg.e): entry(event_key(d, agg.e), agg.theta) for agg in res.event_study
        }
    if result.complement_overall is not None:
        payload["complement"] = {
            "overall": entry("complement/overall", result.complement_overall.theta),
            "event_study": {
                str(agg.e): entry(f"complement/event_study/e={agg.e}", agg.theta)
                for agg in result.complement_event_study
            },
        }
    return payload


def write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def canonical_hash(payload) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
