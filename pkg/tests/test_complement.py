from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_panel
from mtdid.attgt import att_gt_unconditional
from mtdid.complement import (aggregate_complementary, aggregate_complementary_event_study,
                              complementary_att_gt)
from mtdid.errors import EmptyAggregationError, PairingError
from mtdid.pipeline import Pipeline, run_pipeline

from test_attgt import mask_d


def panel(seed=0):
    rng = np.random.default_rng(seed)
    first_a = [3, 3, 4, 4, 3, 4, None, None, None, 5]
    first_b = [None, None, None, None, 3, 4, None, None, None, 5]
    return make_panel(rng.normal(size=(10, 5)), rng.uniform(1, 3, (10, 5)), first_a=first_a, first_b=first_b)


def cell(ds, d, g, t):
    return att_gt_unconditional(ds, mask_d(ds, d), g, t)


def test_delta_definition():
    ds = panel()
    e4, e2 = cell(ds, 4, 3, 4), cell(ds, 2, 3, 4)
    est4 = replace(e4, estimate=3.0)
    est2 = replace(e2, estimate=1.0)
    assert complementary_att_gt(est4, est2).delta == 2.0
    same = complementary_att_gt(e4, replace(e2, estimate=e4.estimate))
    assert same.delta == 0.0


def test_pairing_errors():
    ds = panel()
    with pytest.raises(PairingError):
        complementary_att_gt(cell(ds, 2, 3, 4), cell(ds, 4, 3, 4))
    with pytest.raises(PairingError):
        complementary_att_gt(cell(ds, 4, 3, 4), cell(ds, 2, 3, 5))


def test_aggregate_examples():
    ds = panel()
    base = complementary_att_gt(cell(ds, 4, 3, 4), cell(ds, 2, 3, 4))
    d1 = replace(base, g=3, t=3, delta=2.0)
    d2 = replace(base, g=4, t=4, delta=4.0)
    assert aggregate_complementary([d1, d2], {3: 10, 4: 10}).theta == pytest.approx(3.0)
    assert aggregate_complementary([d1], {3: 10}).theta == 2.0
    with pytest.raises(EmptyAggregationError):
        aggregate_complementary([], {})
    with pytest.raises(EmptyAggregationError):
        aggregate_complementary_event_study([], {})


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_pipeline_identity(seed):
    ds = panel(seed)
    res = run_pipeline(ds, Pipeline(complement=True))
    cells4 = {(e.g, e.t): e.estimate for e in res.by_d[4].estimates}
    cells2 = {(e.g, e.t): e.estimate for e in res.by_d[2].estimates}
    for c in res.complement.deltas:
        assert c.delta == pytest.approx(cells4[(c.g, c.t)] - cells2[(c.g, c.t)], abs=1e-12)
        assert c.reevaluate() == pytest.approx(c.delta, abs=1e-12)
    # cohort 5 is joint-only
    assert res.complement.excluded_joint == (5,)
    assert {c.g for c in res.complement.deltas} == {3, 4}
    sizes4 = res.by_d[4].group_sizes
    post = [c for c in res.complement.deltas if c.t >= c.g]
    ref = sum(sizes4[c.g] * c.delta for c in post) / sum(sizes4[c.g] for c in post)
    assert res.complement_overall.theta == pytest.approx(ref, abs=1e-12)


def test_no_overlap_leaves_complement_empty():
    rng = np.random.default_rng(0)
    ds = make_panel(rng.normal(size=(5, 4)), first_a=[2, 3, None, None, 3], first_b=[None, None, None, None, 3])
    # d=2 has cohorts {2, 3}, d=4 has {3}: overlap {3}
    res = run_pipeline(ds, Pipeline(complement=True))
    assert {c.g for c in res.complement.deltas} == {3}
    ds = make_panel(rng.normal(size=(5, 4)), first_a=[2, 2, None, None, 3], first_b=[None, None, None, None, 3])
    res = run_pipeline(ds, Pipeline(complement=True))
    assert res.complement.deltas == [] and res.complement_overall is None
