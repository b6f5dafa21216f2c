import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_panel
from mtdid.attgt import CONDITIONAL, att_gt_conditional, att_gt_unconditional, compute_all_att_gt
from mtdid.errors import EmptyCohortError, InsufficientControlsError, NoEstimatesError, SingularDesignError
from mtdid.panel import assign_treatment_masks


def mask_d(ds, d=1):
    return {m.d: m for m in assign_treatment_masks(ds)}[d]


def att_oracle(ds, g, t, treated, control):
    """Plain-loop weighted difference of mean changes."""
    jb, jt = ds.period_index(g - 1), ds.period_index(t)

    def mean(units):
        num = sum(ds.weight[i, jt] * (ds.outcome[i, jt] - ds.outcome[i, jb]) for i in units)
        return num / sum(ds.weight[i, jt] for i in units)
    return mean(treated) - mean(control)


def two_by_two():
    y = [[0, 3], [0, 5], [0, 1], [0, 1]]
    w = [[1, 1], [1, 1], [1, 1], [3, 3]]
    return make_panel(y, w, first_a=[2, 2, None, None])


def test_weighted_difference_example():
    ds = two_by_two()
    est = att_gt_unconditional(ds, mask_d(ds), 2, 2)
    assert est.estimate == pytest.approx(3.0, abs=1e-12)
    assert est.n_treated == 2.0 and est.n_control == 4.0
    mapping = est.contributions.as_mapping()
    assert mapping["u3"] == ((0.0, 0.0), (3.0, 1.0))
    assert mapping["u0"] == ((1.0, 3.0), (0.0, 0.0))


def test_identical_groups_zero():
    y = np.tile([[0.0, 2.0, 5.0]], (4, 1))
    ds = make_panel(y, first_a=[2, 2, None, None])
    assert att_gt_unconditional(ds, mask_d(ds), 2, 3).estimate == 0.0


def test_base_period_is_exact_zero():
    rng = np.random.default_rng(0)
    ds = make_panel(rng.normal(size=(5, 4)), first_a=[3, 3, None, None, None])
    est = att_gt_unconditional(ds, mask_d(ds), 3, 2)
    assert est.estimate == 0.0 and est.contributions.empty and est.contributions.reevaluate() == 0.0


def test_empty_cohort():
    ds = two_by_two()
    with pytest.raises(EmptyCohortError):
        att_gt_unconditional(ds, mask_d(ds), 3, 2)


def test_conditional_exact_fit_example():
    y = [[0, 5], [0, 5], [0, 0], [0, 2], [0, 4]]
    x = [[1.0], [1.0], [0.0], [1.0], [2.0]]
    ds = make_panel(y, [[1, 2]] * 5, first_a=[2, 2, None, None, None], covariates=x, names=("x",))
    est = att_gt_conditional(ds, mask_d(ds), 2, 2, ["x"])
    assert est.estimate == pytest.approx(3.0, abs=1e-12)


def test_conditional_intercept_only_equals_unconditional():
    rng = np.random.default_rng(3)
    ds = make_panel(rng.normal(size=(9, 5)), rng.uniform(1, 5, (9, 5)), first_a=[3, 3, 4, 4, None, None, None, None, None])
    m = mask_d(ds)
    for g, t in [(3, 2), (3, 3), (3, 5), (4, 2), (4, 5)]:
        a = att_gt_unconditional(ds, m, g, t).estimate
        b = att_gt_conditional(ds, m, g, t, []).estimate
        assert a == pytest.approx(b, abs=1e-12)


def test_conditional_errors():
    x = np.c_[[0.0, 1.0, 2.0, 3.0]]
    ds = make_panel(np.zeros((4, 3)), first_a=[2, 2, None, None], covariates=x, names=("x",))
    with pytest.raises(InsufficientControlsError):
        att_gt_conditional(ds, mask_d(ds), 2, 3, ["x"])
    z = np.random.default_rng(0).normal(size=6)
    ds = make_panel(np.random.default_rng(0).normal(size=(6, 3)), first_a=[2, 2, None, None, None, None],
                    covariates=np.c_[z, 2 * z], names=("x", "x2"))
    with pytest.raises(SingularDesignError):
        att_gt_conditional(ds, mask_d(ds), 2, 3, ["x", "x2"])


def test_constant_covariate_absorbed():
    rng = np.random.default_rng(6)
    z = rng.normal(size=7)
    first = [2, 2, 3, None, None, None, None]
    y = rng.normal(size=(7, 3))
    plain = make_panel(y, first_a=first, covariates=np.c_[z], names=("x",))
    extra = make_panel(y, first_a=first, covariates=np.c_[z, np.full(7, 4.0)], names=("x", "c"))
    for g, t in [(2, 3), (3, 3)]:
        a = att_gt_conditional(plain, mask_d(plain), g, t, ["x"]).estimate
        b = att_gt_conditional(extra, mask_d(extra), g, t, ["x", "c"]).estimate
        assert b == pytest.approx(a, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 100), st.floats(-50, 50))
def test_unconditional_matches_oracle_and_invariances(seed, scale, shift):
    rng = np.random.default_rng(seed)
    n, T = 8, 5
    y = rng.normal(size=(n, T))
    w = rng.uniform(0.5, 4, (n, T))
    first = [3, 3, 4, 5, None, None, None, None]
    ds = make_panel(y, w, first_a=first)
    m = mask_d(ds)
    for g in (3, 4, 5):
        treated = [i for i, c in enumerate(first) if c == g]
        for t in range(2, T + 1):
            est = att_gt_unconditional(ds, m, g, t).estimate
            ref = 0.0 if t == g - 1 else att_oracle(ds, g, t, treated, [4, 5, 6, 7])
            assert est == pytest.approx(ref, abs=1e-10)
            # weight scale and additive outcome shifts leave the estimate unchanged
            ds2 = make_panel(y + shift + rng.normal(size=(n, 1)), w * scale, first_a=first)
            assert att_gt_unconditional(ds2, mask_d(ds2), g, t).estimate == pytest.approx(est, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_reevaluate_matches_reweighted_data(seed):
    rng = np.random.default_rng(seed)
    n, T = 10, 4
    first = [3, 3, 3, 4, None, None, None, None, None, None]
    y, w = rng.normal(size=(n, T)), rng.uniform(1, 3, (n, T))
    x = rng.normal(size=(n, 1))
    omega = rng.exponential(size=n)
    base = make_panel(y, w, first_a=first, covariates=x, names=("x",))
    moved = make_panel(y, w * omega[:, None], first_a=first, covariates=x, names=("x",))
    for cond in (False, True):
        for g, t in [(3, 3), (3, 4), (4, 2)]:
            if cond:
                est = att_gt_conditional(base, mask_d(base), g, t, ["x"])
                ref = att_gt_conditional(moved, mask_d(moved), g, t, ["x"]).estimate
            else:
                est = att_gt_unconditional(base, mask_d(base), g, t)
                ref = att_gt_unconditional(moved, mask_d(moved), g, t).estimate
            assert est.contributions.reevaluate() == pytest.approx(est.estimate, abs=1e-12)
            assert est.contributions.reevaluate(omega) == pytest.approx(ref, abs=1e-10)
            as_map = dict(zip(base.unit_ids, omega))
            assert est.contributions.reevaluate(as_map) == pytest.approx(ref, abs=1e-10)


def test_compute_all_enumeration():
    rng = np.random.default_rng(1)
    ds = make_panel(rng.normal(size=(4, 6)), first_a=[4, 4, None, None])
    cells = compute_all_att_gt(ds, mask_d(ds))
    ts = [c.t for c in cells]
    assert ts == [2, 4, 5, 6]  # t > t_min, skipping the base period g - 1 = 3
    assert sum(c.t >= c.g for c in cells) == 3
    assert all(c.g == 4 for c in cells)


def test_compute_all_skips_cohort_without_base(caplog):
    rng = np.random.default_rng(2)
    ds = make_panel(rng.normal(size=(4, 4)), first_a=[1, 3, None, None])
    with caplog.at_level(logging.WARNING):
        cells = compute_all_att_gt(ds, mask_d(ds))
    assert {c.g for c in cells} == {3}
    assert "cohort 1" in caplog.text


def test_compute_all_no_estimates():
    ds = make_panel(np.zeros((3, 3)), first_a=[1, None, None])
    with pytest.raises(NoEstimatesError):
        compute_all_att_gt(ds, mask_d(ds))


def test_conditional_mode_skips_cohort_on_failure(caplog):
    rng = np.random.default_rng(4)
    z = rng.normal(size=5)
    ds = make_panel(rng.normal(size=(5, 3)), first_a=[2, 3, None, None, None],
                    covariates=np.c_[z, -z], names=("x", "x2"))
    with caplog.at_level(logging.WARNING), pytest.raises(NoEstimatesError):
        compute_all_att_gt(ds, mask_d(ds), CONDITIONAL, ["x", "x2"])
    assert "skipping cohort 2" in caplog.text


def test_null_data_near_zero():
    rng = np.random.default_rng(5)
    n, T = 4000, 6
    y = rng.normal(size=(n, 1)) + rng.normal(size=(n, T))
    first = [4 if i < n // 2 else None for i in range(n)]
    ds = make_panel(y, first_a=first)
    cells = compute_all_att_gt(ds, mask_d(ds))
    se = np.sqrt(2 * 2 / (n // 2))  # sd of a difference of mean changes
    assert max(abs(c.estimate) for c in cells) < 4 * se
