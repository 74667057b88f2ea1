"""Zipf model, popularity window, prefix sizing and placement."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vodsim.cache import CacheLayer, SegmentKind
from vodsim.catalog import (
    Catalog,
    PopularityWindow,
    Scope,
    VideoEntry,
    build_catalog,
    classify_and_place,
    default_k,
    estimate_x,
    size_prefixes,
    zipf_pmf,
)
from vodsim.errors import EmptyCatalogError, InvalidParameterError
from vodsim.topology import build_topology, proxy_node, tracker_node


def ks_distance(samples, pmf):
    """Largest gap between the empirical and model cdf over the support."""
    counts = np.bincount(np.asarray(samples) - 1, minlength=len(pmf))
    emp = np.cumsum(counts) / len(samples)
    return float(np.max(np.abs(emp - np.cumsum(pmf))))


# ---------------------------------------------------------------- zipf


def test_zipf_single_video():
    model = zipf_pmf(1, 1.0)
    assert model.pmf.tolist() == [1.0]
    assert model.cdf[-1] == 1.0


def test_zipf_four_videos_matches_harmonic_weights():
    # exact rationals: weights 1, 1/2, 1/3, 1/4 over their sum 25/12
    weights = [Fraction(1, i) for i in range(1, 5)]
    expected = [float(w / sum(weights)) for w in weights]
    assert expected == pytest.approx([0.48, 0.24, 0.16, 0.12], abs=1e-15)
    assert zipf_pmf(4, 1.0).pmf == pytest.approx(expected, abs=1e-15)


def test_zipf_default_skew_is_normalized_and_decreasing():
    model = zipf_pmf(100, 0.73)
    assert abs(math.fsum(model.pmf) - 1.0) <= 1e-12
    assert model.pmf[0] > model.pmf[99]
    assert model.skew == 0.73


def test_zipf_rejects_bad_arguments():
    with pytest.raises(EmptyCatalogError):
        zipf_pmf(0, 1.0)
    for skew in (0.0, -1.0, float("nan"), float("inf")):
        with pytest.raises(InvalidParameterError):
            zipf_pmf(10, skew)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5000), st.floats(0.05, 3.0))
def test_zipf_invariants(n, skew):
    model = zipf_pmf(n, skew)
    assert abs(math.fsum(model.pmf) - 1.0) <= 1e-12
    assert np.all(np.diff(model.pmf) <= 0)
    assert np.all(np.diff(model.cdf) >= 0)
    assert abs(model.cdf[-1] - 1.0) <= 1e-12
    # brute-force pmf from the definition
    if n <= 200:
        w = [i ** -skew for i in range(1, n + 1)]
        z = math.fsum(w)
        assert model.pmf == pytest.approx([x / z for x in w], rel=1e-12, abs=1e-15)


def test_sampling_matches_pmf_at_a_million_draws():
    model = zipf_pmf(200, 0.73)
    draws = model.sample(np.random.default_rng(7), 10**6)
    assert draws.min() >= 1 and draws.max() <= 200
    assert ks_distance(draws, model.pmf) <= 0.005


def test_sampling_is_reproducible():
    model = zipf_pmf(50, 1.0)
    a = model.sample(np.random.default_rng(3), 1000)
    b = model.sample(np.random.default_rng(3), 1000)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------- window


def test_estimate_from_direct_counts():
    w = PopularityWindow(60.0, 4)
    for t, v in ((1.0, 1), (2.0, 1), (3.0, 2)):
        w.record(v, t)
    x = estimate_x(w, 10.0)
    assert x.tolist() == pytest.approx([2 / 3, 1 / 3, 0.0, 0.0])


def test_empty_window_is_all_zero():
    assert estimate_x(PopularityWindow(60.0, 3), 50.0).tolist() == [0.0, 0.0, 0.0]


def test_old_records_expire():
    w = PopularityWindow(60.0, 2)
    w.record(1, 10.0)
    w.record(1, 100.0)
    assert w.count_of(1, 130.0) == (1, 1)
    assert w.counts(130.0).tolist() == [1, 0]


def test_window_boundaries_are_half_open():
    w = PopularityWindow(60.0, 1)
    w.record(1, 40.0)
    assert w.count_of(1, 100.0) == (0, 0)  # 40 == now - window, excluded
    assert w.count_of(1, 99.999) == (1, 1)
    assert w.count_of(1, 39.0) == (0, 0)  # future records are ignored


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.tuples(st.floats(0, 500), st.integers(1, 6), st.integers(0, 2)), max_size=60),
    st.floats(0, 600),
    st.floats(1, 200),
)
def test_window_matches_brute_force_filter(log, now, span):
    nodes = [None, proxy_node(1, 1), proxy_node(1, 2)]
    w = PopularityWindow(span, 6)
    for t, v, n in log:
        w.record(v, t, nodes[n])
    for node in (None, nodes[1], nodes[2]):
        kept = [v for t, v, n in log if now - span < t <= now and (node is None or nodes[n] == node)]
        expected = np.zeros(6)
        for v in kept:
            expected[v - 1] += 1
        assert w.counts(now, node).tolist() == expected.tolist()
        x = w.estimate_x(now, node)
        if kept:
            assert abs(math.fsum(x) - 1.0) <= 1e-12
            assert x.tolist() == pytest.approx((expected / len(kept)).tolist())
        else:
            assert not x.any()


def test_prune_keeps_live_records():
    w = PopularityWindow(60.0, 2)
    for t in (5.0, 50.0, 70.0):
        w.record(1, t)
    w.prune(100.0)
    assert w.times == [50.0, 70.0]
    assert w.count_of(1, 100.0) == (2, 2)


# ---------------------------------------------------------------- sizing


@pytest.mark.parametrize(
    "duration, x, expected",
    [(100, 0.5, (50, 25)), (100, 0.9, (90, 9)), (25, 0.02, (1, 1))],
)
def test_size_prefixes_examples(duration, x, expected):
    assert size_prefixes(duration, x) == expected


def test_clamp_ceiling_and_error():
    assert size_prefixes(100, 0.999) == (96, 4)  # clamped to 0.96
    assert size_prefixes(10, 0.33) == (4, 2)  # ceil(3.3), ceil(0.33 * 6)
    with pytest.raises(InvalidParameterError):
        size_prefixes(100, 0.0, clamp=None)
    with pytest.raises(InvalidParameterError):
        size_prefixes(100, 1.0, clamp=None)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 400), st.floats(0, 1), st.floats(0, 1))
def test_sizes_are_valid_and_monotone(duration, a, b):
    lo, hi = sorted((a, b))
    w1_lo, w2_lo = size_prefixes(duration, lo)
    w1_hi, w2_hi = size_prefixes(duration, hi)
    for w1, w2 in ((w1_lo, w2_lo), (w1_hi, w2_hi)):
        assert 1 <= w1 < duration
        assert 1 <= w2 <= duration - w1
    assert w1_lo <= w1_hi
    # prefix-2 alone is x * (S - w1), which peaks near x = 0.5; the cached
    # total w1 + w2 is what grows with popularity
    assert w1_lo + w2_lo <= w1_hi + w2_hi


def test_prefix2_shrinks_for_very_popular_videos():
    # x (1 - x) S: prefix-2 is largest for mid-popularity videos
    assert size_prefixes(100, 0.5) == (50, 25)
    assert size_prefixes(100, 0.9) == (90, 9)
    assert size_prefixes(6, 0.5)[1] > size_prefixes(6, 0.96)[1]


def test_video_entry_invariants():
    e = VideoEntry(1, 100.0, 50, 25)
    assert e.suffix_min == 25
    with pytest.raises(InvalidParameterError):
        VideoEntry(1, 100.0, 100, 1)
    with pytest.raises(InvalidParameterError):
        VideoEntry(1, 100.0, 50, 51)


def test_build_catalog_durations_and_scope():
    cat = build_catalog(50, 0.73, (25, 112), np.random.default_rng(1), global_k=5)
    assert len(cat) == 50
    assert all(25 <= v.duration_min <= 112 and v.duration_min == int(v.duration_min) for v in cat.videos)
    assert [v.scope.is_global for v in cat.videos[:6]] == [True] * 5 + [False]
    assert 50 in cat and 51 not in cat and 0 not in cat


# ---------------------------------------------------------------- placement


def uniform_catalog(n, duration=100.0):
    videos = [VideoEntry(i, duration, 10, 10) for i in range(1, n + 1)]
    return Catalog(videos, zipf_pmf(n, 1.0))


def test_two_by_two_argmax_rule():
    topo = build_topology(2, 2, 1)
    cat = uniform_catalog(2)
    pop = np.array([[1.0, 0.0], [0.0, 1.0]])
    layer = CacheLayer(topo, 300, 800)
    plan = classify_and_place(cat, pop, 0, 1, topo, layer)
    assert plan.global_videos == []
    assert plan.local_home == {1: 1, 2: 2}
    assert {p.tracker for p in plan.targets[1]} == {1}
    assert {p.tracker for p in plan.targets[2]} == {2}
    for p, store in layer.proxy_stores.items():
        for v in store.entries:
            assert plan.local_home[v] == p.tracker
    assert 1 in layer.tracker_stores[tracker_node(1)]
    assert 2 in layer.tracker_stores[tracker_node(2)]
    assert 2 not in layer.tracker_stores[tracker_node(1)]


def test_two_by_two_exhaustive_demand_patterns():
    """Every video lands in the group whose demand for it is largest."""
    topo = build_topology(2, 2, 1)
    cat = uniform_catalog(2)
    levels = (0.0, 0.25, 0.5, 1.0)
    for a in levels:
        for b in levels:
            for c in levels:
                for d in levels:
                    pop = np.array([[a, b], [c, d]])
                    plan = classify_and_place(cat, pop, 0, 1, topo)
                    for v in (1, 2):
                        col = pop[:, v - 1]
                        if col.sum() == 0:
                            assert v not in plan.local_home
                            continue
                        best = {g + 1 for g in range(2) if col[g] == col.max()}
                        assert plan.local_home[v] in best


def test_k_equal_n_makes_everything_global():
    topo = build_topology(2, 3, 1)
    cat = uniform_catalog(3, duration=20.0)
    pop = np.full((2, 3), 1 / 3)
    layer = CacheLayer(topo, 300, 800)
    plan = classify_and_place(cat, pop, 3, 1, topo, layer)
    assert sorted(plan.global_videos) == [1, 2, 3]
    for store in layer.proxy_stores.values():
        assert sorted(store.entries) == [1, 2, 3]
    for store in layer.tracker_stores.values():
        assert sorted(store.entries) == [1, 2, 3]


def test_k_zero_places_each_video_in_one_group():
    topo = build_topology(3, 3, 1)
    cat = uniform_catalog(6)
    pop = np.random.default_rng(0).random((3, 6))
    layer = CacheLayer(topo, 300, 800)
    plan = classify_and_place(cat, pop, 0, 2, topo, layer)
    for v in range(1, 7):
        home = plan.local_home[v]
        assert home == int(np.argmax(pop[:, v - 1])) + 1
        groups = {p.tracker for p, s in layer.proxy_stores.items() if v in s}
        assert groups == {home}
        assert len(plan.targets[v]) == 2


def test_placement_respects_budgets():
    topo = build_topology(2, 3, 1)
    cat = build_catalog(80, 0.73, (25, 112), np.random.default_rng(2))
    pop = np.vstack([cat.popularity.pmf, cat.popularity.pmf[::-1]])
    layer = CacheLayer(topo, 60, 120)
    plan = classify_and_place(cat, pop, default_k(80), 2, topo, layer)
    for store in layer.all_stores():
        assert store.used_blocks <= store.budget_blocks
        assert store.used_blocks == sum(e.size_blocks for e in store.entries.values())
    assert plan.refused
    for t in topo.trackers:
        assert layer.audit(t)
    assert all(e.kind is SegmentKind.PREF1 for s in layer.proxy_stores.values() for e in s.entries.values())


def test_placement_argument_checks():
    topo = build_topology(2, 2, 1)
    cat = uniform_catalog(2)
    pop = np.ones((2, 2))
    with pytest.raises(InvalidParameterError):
        classify_and_place(cat, pop, 3, 1, topo)
    with pytest.raises(InvalidParameterError):
        classify_and_place(cat, pop, 0, 3, topo)
    with pytest.raises(InvalidParameterError):
        classify_and_place(cat, np.ones((3, 2)), 0, 1, topo)


def test_scope_helpers():
    assert Scope.global_().is_global
    assert Scope.local([2, 1]).groups == frozenset({1, 2})
