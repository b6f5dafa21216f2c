from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_panel
from mtdid.aggregate import (aggregate_event_study, aggregate_overall, cohort_sizes,
                             overall_cell_weights, selection_rule_holds, weights_sum_to_one)
from mtdid.errors import EmptyAggregationError
from mtdid.panel import assign_treatment_masks


@dataclass
class Cell:
    g: int
    t: int
    estimate: float


def test_weighted_mean_example():
    res = aggregate_overall([Cell(3, 3, 1.0), Cell(5, 5, 2.0)], {3: 10, 5: 30})
    assert res.theta == pytest.approx(1.75, abs=1e-15)
    assert res.weights_used == {(3, 3): 0.25, (5, 5): 0.75}


def test_pre_cells_ignored_and_singleton():
    res = aggregate_overall([Cell(3, 2, 99.0), Cell(3, 4, 1.5)], {3: 7})
    assert res.theta == 1.5 and list(res.weights_used) == [(3, 4)]


def test_no_post_cells():
    with pytest.raises(EmptyAggregationError):
        aggregate_overall([Cell(3, 2, 1.0)], {3: 1})
    with pytest.raises(EmptyAggregationError):
        aggregate_overall([], {})


def test_within_cohort_first():
    cells = [Cell(2, 2, 1.0), Cell(2, 3, 3.0), Cell(3, 3, 10.0)]
    raw = overall_cell_weights([(c.g, c.t) for c in cells], {2: 10, 3: 10}, within_cohort_first=True)
    assert raw == {(2, 2): 5.0, (2, 3): 5.0, (3, 3): 10.0}
    res = aggregate_overall(cells, {2: 10, 3: 10}, within_cohort_first=True)
    assert res.theta == pytest.approx((2.0 + 10.0) / 2)


def test_event_study_examples():
    cells = [Cell(3, 2, 0.5), Cell(3, 3, 1.0), Cell(4, 4, 3.0), Cell(4, 2, -0.5), Cell(4, 5, 7.0)]
    res = {a.e: a for a in aggregate_event_study(cells, {3: 5, 4: 5})}
    assert res[0].theta == pytest.approx(2.0)
    assert res[-1].theta == 0.0 and res[-1].cohorts == (3, 4)
    assert res[-2].theta == -0.5 and res[-2].cohorts == (4,)
    assert res[1].theta == 7.0
    assert sorted(res) == [-2, -1, 0, 1]


def test_event_study_single_cohort_and_range():
    cells = [Cell(4, t, float(t)) for t in (2, 4, 5, 6)]
    path = aggregate_event_study(cells, {4: 3}, e_range=(-1, 1))
    assert [(a.e, a.theta) for a in path] == [(-1, 0.0), (0, 4.0), (1, 5.0)]


def test_cohort_sizes():
    w = np.array([[1, 2, 3], [4, 4, 4], [1, 1, 1]], float)
    ds = make_panel(np.zeros((3, 3)), w, first_a=[2, 2, None])
    sizes = cohort_sizes(ds, assign_treatment_masks(ds)[0])
    assert sizes == {2: 18.0}


cell_lists = st.lists(st.tuples(st.integers(2, 6), st.integers(1, 8), st.floats(-10, 10)),
                      min_size=1, max_size=25, unique_by=lambda c: (c[0], c[1]))


@settings(max_examples=150, deadline=None)
@given(cell_lists, st.floats(0.01, 100), st.floats(-5, 5), st.data())
def test_aggregation_invariants(raw, scale, shift, data):
    cells = [Cell(g, t, v) for g, t, v in raw]
    sizes = {g: data.draw(st.floats(0.5, 50)) for g in {c.g for c in cells}}
    if not any(c.t >= c.g for c in cells):
        with pytest.raises(EmptyAggregationError):
            aggregate_overall(cells, sizes)
        return
    for wcf in (False, True):
        res = aggregate_overall(cells, sizes, wcf)
        assert weights_sum_to_one(res) and selection_rule_holds(res)
        # size rescaling leaves theta unchanged
        scaled = aggregate_overall(cells, {g: s * scale for g, s in sizes.items()}, wcf)
        assert scaled.theta == pytest.approx(res.theta, abs=1e-9)
        # linear in the cell estimates
        moved = aggregate_overall([Cell(c.g, c.t, 2 * c.estimate + shift) for c in cells], sizes, wcf)
        assert moved.theta == pytest.approx(2 * res.theta + shift, abs=1e-9)
        post = [c.estimate for c in cells if c.t >= c.g]
        assert min(post) - 1e-9 <= res.theta <= max(post) + 1e-9
    for agg in aggregate_event_study(cells, sizes):
        assert weights_sum_to_one(agg) and selection_rule_holds(agg)
        if agg.e == -1:
            assert agg.theta == 0.0
        else:
            vals = [c.estimate for c in cells if c.t - c.g == agg.e]
            assert min(vals) - 1e-9 <= agg.theta <= max(vals) + 1e-9


@settings(max_examples=50, deadline=None)
@given(cell_lists, st.floats(-5, 5))
def test_constant_effects(raw, tau):
    cells = [Cell(g, t, tau) for g, t, _ in raw if t >= g]
    if not cells:
        return
    sizes = {g: float(g) for g in {c.g for c in cells}}
    assert aggregate_overall(cells, sizes).theta == pytest.approx(tau, abs=1e-12)
