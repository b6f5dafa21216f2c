import pytest

from mtdid.dgp import (SCENARIOS, DgpConfig, EffectSpec, closed_form_unconditional_bias, first_stage,
                       generate_panel, scenario_config, true_effects)
from mtdid.errors import ConfigError
from mtdid.panel import load_panel_csv
from mtdid.pipeline import Pipeline, run_pipeline


def test_s1_noiseless_gap_is_exactly_two():
    ds, truth = generate_panel(scenario_config("S1", noise_sd=0.0))
    res = run_pipeline(ds, Pipeline())
    for d, r in res.by_d.items():
        for est in r.estimates:
            assert est.estimate == pytest.approx(2.0 if est.t >= est.g else 0.0, abs=1e-12)
        assert r.overall.theta == pytest.approx(2.0, abs=1e-12)
        assert truth.theta_w[d] == pytest.approx(2.0, abs=1e-12)


def test_same_seed_same_bytes(tmp_path):
    cfg = scenario_config("S4", seed=11)
    generate_panel(cfg)[0].write_csv(tmp_path / "a.csv")
    generate_panel(cfg)[0].write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    generate_panel(scenario_config("S4", seed=12))[0].write_csv(tmp_path / "c.csv")
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


@pytest.mark.parametrize("name", SCENARIOS)
def test_output_passes_ingestion(tmp_path, name):
    ds, _ = generate_panel(scenario_config(name, n_units=120, seed=3))
    ds.write_csv(tmp_path / "p.csv")
    back = load_panel_csv(tmp_path / "p.csv")
    assert back.equals(ds) and back.report.n_dropped == 0


def test_truth_by_construction():
    s2 = true_effects(scenario_config("S2"))
    for e, v in s2.theta_es[1].items():
        assert v == pytest.approx(1.0 + 0.5 * e if e >= 0 else 0.0, abs=1e-12)
    s4 = true_effects(scenario_config("S4"))
    assert s4.complement_theta == pytest.approx(2.0, abs=1e-12)
    assert all(v == pytest.approx(2.0) for (g, t), v in s4.complement_att.items() if t >= g)
    s1 = true_effects(scenario_config("S1"))
    assert all(v == pytest.approx(2.0) for v in s1.theta_w.values())


def test_effect_spec():
    eff = EffectSpec(1.0, 0.5)
    assert eff.at(-1) == 0.0 and eff.at(0) == 1.0 and eff.at(4) == 3.0
    assert (eff + EffectSpec(2.0)).at(2) == 4.0


def test_infeasible_configs():
    with pytest.raises(ConfigError):
        scenario_config("S1", share_a_only=0.6, share_b_only=0.3, share_both=0.2)
    with pytest.raises(ConfigError):
        scenario_config("S1", share_a_only=-0.1)
    with pytest.raises(ConfigError):
        DgpConfig(scenario="S1", cohorts_a=(1,))
    with pytest.raises(ConfigError):
        scenario_config("S9")
    with pytest.raises(ConfigError):
        DgpConfig.from_dict({"scenario": "S1", "bogus": 1})


def test_dict_round_trip():
    cfg = scenario_config("S5", seed=4)
    assert DgpConfig.from_dict(cfg.to_dict()) == cfg
    assert DgpConfig.from_dict({"scenario": "S3", "seed": 9}) == scenario_config("S3", seed=9)


def test_closed_form_bias_matches_noiseless_estimate():
    cfg = scenario_config("S3", noise_sd=0.0, unit_effect_sd=0.0, period_effect_sd=0.0)
    ds, truth = generate_panel(cfg)
    theta = run_pipeline(ds, Pipeline(ds=(1,))).by_d[1].overall.theta
    est_bias = theta - truth.theta_w[1]
    closed = closed_form_unconditional_bias(cfg)
    assert closed > 0.2
    assert est_bias == pytest.approx(closed, rel=0.25)
    cond = run_pipeline(ds, Pipeline(ds=(1,), mode="conditional", covariate_names=("x",)))
    assert cond.by_d[1].overall.theta == pytest.approx(truth.theta_w[1], abs=1e-10)


def test_selection_subsets_units():
    cfg = scenario_config("S5", seed=2)
    ds, _ = generate_panel(cfg)
    fs = first_stage(cfg)
    assert len(fs.unit_ids) == cfg.n_units
    kept = {u for u, f in zip(fs.unit_ids, fs.included) if f == 1}
    assert set(ds.unit_ids) == kept and 0 < len(kept) < cfg.n_units
