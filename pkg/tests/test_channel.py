import numpy as np
import pytest
from hypothesis import given, strategies as st

from crosslayer.channel import (
    CQI_TO_MCS, RB_BYTES, CqiProcess, cqi_to_max_mcs, max_mcs, profile_means, rb_capacity, set_capacity,
)
from oracles import RB, mcs_of


def test_rb_capacity_table():
    assert rb_capacity(1) == 21
    assert rb_capacity(6) == 94
    assert [rb_capacity(j) for j in range(1, 7)] == RB[1:]
    assert all(rb_capacity(j) <= rb_capacity(j + 1) for j in range(1, 6))
    with pytest.raises(ValueError):
        rb_capacity(0)
    with pytest.raises(ValueError):
        rb_capacity(7)


def test_cqi_thresholds():
    assert [cqi_to_max_mcs(c) for c in range(1, 16)] == [mcs_of(c) for c in range(1, 16)]
    assert max_mcs([15] * 4) == 6
    assert max_mcs([15, 3]) == 2
    assert max_mcs([1]) == 1
    with pytest.raises(ValueError):
        max_mcs([])
    with pytest.raises(ValueError):
        cqi_to_max_mcs(16)


@given(st.lists(st.integers(1, 15), min_size=1, max_size=10), st.integers(1, 15))
def test_superset_never_raises_mcs(cqis, extra):
    assert max_mcs(cqis + [extra]) <= max_mcs(cqis)


@given(st.lists(st.integers(1, 15), max_size=10))
def test_set_capacity_reproducible(cqis):
    expect = len(cqis) * RB[mcs_of(min(cqis))] if cqis else 0
    assert set_capacity(cqis) == expect


def test_frozen_chain():
    p = CqiProcess([8.0, 4.0], 5, np.random.default_rng(0), stay_prob=1.0)
    first = p.step().values
    for _ in range(50):
        assert np.array_equal(p.step().values, first)


def test_same_seed_same_grids():
    a = CqiProcess([8.0, 4.0], 6, np.random.default_rng(7))
    b = CqiProcess([8.0, 4.0], 6, np.random.default_rng(7))
    for _ in range(200):
        ga, gb = a.step(), b.step()
        assert ga.tti == gb.tti
        assert np.array_equal(ga.values, gb.values)


def test_grid_is_read_only_and_in_range():
    p = CqiProcess([2.0, 14.0], 8, np.random.default_rng(1))
    for _ in range(500):
        g = p.step().values
        assert g.min() >= 1 and g.max() <= 15
    with pytest.raises(ValueError):
        g[0, 0] = 3


@pytest.mark.parametrize("mean", [3.0, 7.0, 9.0, 13.5])
def test_stationary_mean_monte_carlo(mean):
    # 1000 independent cells x 1000 steps = 10^6 samples
    p = CqiProcess([mean], 1000, np.random.default_rng(3))
    total = 0.0
    for _ in range(1000):
        total += p.step().values.sum()
    assert total / 1e6 == pytest.approx(mean, abs=0.5)


def test_moves_at_most_one_step():
    p = CqiProcess([8.0], 200, np.random.default_rng(2))
    prev = p.step().values
    moved = 0
    for _ in range(100):
        cur = p.step().values
        assert np.abs(cur - prev).max() <= 1
        moved += np.count_nonzero(cur != prev)
        prev = cur
    # stay probability 0.9, minus reflections at the band edges
    assert 0.05 < moved / (100 * 200) < 0.11


def test_profiles():
    assert list(profile_means("poor", 3)) == [5.0, 3.0, 6.0]
    assert len(profile_means("average", 20)) == 20
    with pytest.raises(ValueError):
        profile_means("stormy", 2)
    assert CQI_TO_MCS[7] == 3 and RB_BYTES[3] == 42
