import shutil
from pathlib import Path

import pytest
import yaml

from mtdid import io
from mtdid.cli import main
from mtdid.config import parse_config
from mtdid.dgp import generate_panel, scenario_config
from mtdid.errors import ConfigError
from mtdid.inference import bootstrap_estimates
from mtdid.pipeline import Pipeline, run_pipeline
from mtdid.runner import read_simulation

FIXTURES = Path(__file__).parent / "fixtures"


def write_config(tmp_path, raw, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return path


def fixture_config(tmp_path, **extra):
    shutil.copy(FIXTURES / "s1_panel.csv", tmp_path / "s1_panel.csv")
    raw = yaml.safe_load((FIXTURES / "s1_estimate.yaml").read_text())
    raw.update(extra)
    return write_config(tmp_path, raw)


def test_table_round_trips(tmp_path):
    ds, _ = generate_panel(scenario_config("S4", n_units=120, seed=1))
    pipe = Pipeline(complement=True)
    res = run_pipeline(ds, pipe)
    inf = bootstrap_estimates(ds, pipe, B=100, seed=0, point=res)
    io.write_attgt(tmp_path / "a.csv", res, inf)
    frame = io.read_attgt(tmp_path / "a.csv")
    ests = [(d, e) for d, r in sorted(res.by_d.items()) for e in r.estimates]
    assert len(frame) == len(ests)
    for row, (d, e) in zip(frame.itertuples(), ests):
        assert (row.d, row.g, row.t, row.estimate) == (d, e.g, e.t, e.estimate)
        assert row.se == inf[f"attgt/d={d}/g={e.g}/t={e.t}"].se
    io.write_event_study(tmp_path / "e.csv", res, 1, inf)
    es = io.read_event_study(tmp_path / "e.csv")
    assert es.theta.tolist() == [a.theta for a in res.by_d[1].event_study]
    io.write_complement(tmp_path / "c.csv", res, None)
    comp = io.read_complement(tmp_path / "c.csv")
    assert comp.delta.tolist() == [c.delta for c in res.complement.deltas]
    assert comp.se.isna().all()
    payload = io.aggregates_payload(res, inf)
    io.write_json(tmp_path / "g.json", payload)
    assert io.read_json(tmp_path / "g.json") == payload
    with pytest.raises(ValueError):
        io.read_table(tmp_path / "a.csv", io.EVENT_COLUMNS)


def test_canonical_hash_ignores_key_order():
    assert io.canonical_hash({"a": 1, "b": [1, 2]}) == io.canonical_hash({"b": [1, 2], "a": 1})
    assert io.canonical_hash({"a": 1}) != io.canonical_hash({"a": 2})


def test_config_rules(tmp_path, monkeypatch):
    with pytest.raises(ConfigError, match="exactly one input source"):
        parse_config({})
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config({"dgp": {"scenario": "S1"}, "bogus": 1})
    with pytest.raises(ConfigError):
        parse_config({"dgp": {"scenario": "S1"}, "bootstrap": {"B": 50}})
    with pytest.raises(ConfigError):
        parse_config({"dgp": {"scenario": "S5"}, "selection": {"enabled": True}})
    cfg = parse_config({"dgp": {"scenario": "S5"}, "mode": "conditional", "selection": {"enabled": True}})
    assert cfg.pipeline.covariate_names == ("inverse_mills",)
    cfg = parse_config({"input": "p.csv"}, tmp_path)
    assert cfg.input == str((tmp_path / "p.csv").resolve())
    monkeypatch.setenv("MTDID_WORKERS", "4")
    cfg = parse_config({"dgp": {"scenario": "S1"}})
    assert cfg.workers == 4
    assert "workers" not in cfg.manifest_view()


def test_estimate_fixture(tmp_path, capsys):
    path = fixture_config(tmp_path)
    assert main(["-q", "estimate", str(path)]) == 0
    out = tmp_path / "out"
    agg = io.read_json(out / "aggregates.json")
    theta = agg["overall"]["d=1"]
    assert abs(theta["point"] - 2.0) < 4 * theta["se"]
    assert theta["ci"][0] < theta["point"] < theta["ci"][1]
    manifest = io.read_json(out / "manifest.json")
    assert manifest["input_sha256"] == io.file_digest(tmp_path / "s1_panel.csv")
    for name, digest in manifest["outputs"].items():
        assert io.file_digest(out / name) == digest
    assert {"attgt.csv", "eventstudy_d1.csv", "complement.csv", "aggregates.json"} <= set(manifest["outputs"])
    es = io.read_event_study(out / "eventstudy_d1.csv")
    assert es.e.min() >= -5 and es.e.max() <= 5
    # reruns, including with more workers, are byte identical
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    path2 = fixture_config(tmp_path, workers=4)
    assert main(["-q", "estimate", str(path2)]) == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first


def test_exit_codes(tmp_path, capsys):
    both = write_config(tmp_path, {"input": "x.csv", "dgp": {"scenario": "S1"}})
    assert main(["estimate", str(both)]) == 1
    assert "exactly one input source" in capsys.readouterr().err
    assert main(["estimate", str(tmp_path / "missing.yaml")]) == 1
    assert "cannot read config" in capsys.readouterr().err
    (tmp_path / "bad.csv").write_text("unit,period\nu1,1\n")
    bad = write_config(tmp_path, {"input": "bad.csv"}, "bad.yaml")
    assert main(["estimate", str(bad)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("mtdid: ingest failed:")
    # a panel with no treated cohort that has a base period: estimation fails
    rows = ["unit,period,outcome,weight,reform_a_year,reform_b_year"]
    for u, year in (("a", "1944"), ("b", "")):
        rows += [f"{u},{t},{t * 0.1},1,{year}," for t in range(1930, 1933)]
    (tmp_path / "est.csv").write_text("\n".join(rows) + "\n")
    est = write_config(tmp_path, {"input": "est.csv"}, "est.yaml")
    assert main(["estimate", str(est)]) == 3
    assert "estimate failed" in capsys.readouterr().err


def test_simulate_single_replication(tmp_path, capsys):
    path = write_config(tmp_path, {"dgp": {"scenario": "S1", "n_units": 80}, "bootstrap": {"B": 100},
                                   "simulate": {"replications": 1}, "output_dir": "sim"})
    assert main(["-q", "simulate", str(path)]) == 0
    table = read_simulation(tmp_path / "sim" / "simulation.csv")
    assert table.coverage.isna().all() and table.band_coverage.isna().all()
    assert "NA" in (tmp_path / "sim" / "summary.txt").read_text()
    assert "coverage: NA" in capsys.readouterr().out


def test_simulate_deterministic(tmp_path):
    raw = {"dgp": {"scenario": "S1", "n_units": 80}, "bootstrap": {"B": 100, "seed": 2},
           "simulate": {"replications": 3}, "output_dir": "a"}
    assert main(["-q", "simulate", str(write_config(tmp_path, raw, "a.yaml"))]) == 0
    raw.update(output_dir="b", workers=2)
    assert main(["-q", "simulate", str(write_config(tmp_path, raw, "b.yaml"))]) == 0
    for name in ("simulation.csv", "summary.txt", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    table = read_simulation(tmp_path / "a" / "simulation.csv")
    row = table.set_index("estimand").loc["overall/d=1"]
    assert row.replications == 3 and 0.0 <= row.coverage <= 1.0
    assert row.mean_truth == pytest.approx(2.0)


def test_simulate_needs_dgp(tmp_path):
    path = fixture_config(tmp_path)
    assert main(["-q", "simulate", str(path)]) == 1


def test_validate_subset_and_fault(tmp_path, capsys):
    path = write_config(tmp_path, {"validate": {"criteria": ["weights sum to one"]}})
    assert main(["validate", str(path)]) == 0
    assert "[PASS] weights sum to one" in capsys.readouterr().out
    code = main(["validate", str(path), "--inject-fault", "weights"])
    out = capsys.readouterr().out
    assert code >= 1 and "[FAIL] weights sum to one" in out and "failed: weights sum to one" in out
    bad = write_config(tmp_path, {"validate": {"criteria": ["nope"]}}, "bad.yaml")
    assert main(["validate", str(bad)]) == 1
