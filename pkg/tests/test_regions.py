import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nets import abs_net, one_neuron
from oracles import chord_crossings, uniform_distance_mean
from relu_manifold.curves import Chord, Circle, Polyline, Tractrix
from relu_manifold.network import Network, NeuronId, init_random, preactivation
from relu_manifold.regions import (RegionReport, boundary_distance_ambient, boundary_distance_on_curve,
                                   brute_force_count, count_regions, default_grid_n, distance_statistics,
                                   neuron_boundaries)

COS_NET = one_neuron([1.0, 0.0], 0.0)


def zero_net():
    return Network((2, 3, 2, 1), (np.zeros((3, 2)), np.zeros((2, 3)), np.zeros((1, 2))), (np.zeros(3), np.zeros(2)))


def test_one_neuron_circle_roots():
    roots = neuron_boundaries(COS_NET, Circle(), NeuronId(1, 0))
    assert len(roots) == 2
    assert roots[0] == pytest.approx(-math.pi / 2, abs=1e-9)
    assert roots[1] == pytest.approx(math.pi / 2, abs=1e-9)


def test_unreachable_threshold_has_no_roots():
    assert neuron_boundaries(one_neuron([1.0, 0.0], 2.0), Circle(), NeuronId(1, 0)) == []


def test_one_neuron_circle_counts():
    rep = count_regions(COS_NET, Circle())
    assert rep.region_count == 3 and rep.crossings_total == 2
    assert brute_force_count(COS_NET, Circle(), 10**5) == 3


def test_zero_net_has_one_region():
    rep = count_regions(zero_net(), Circle())
    assert rep.crossings_total == 0 and rep.region_count == 1
    assert brute_force_count(zero_net(), Circle(), 1000) == 1


def test_brute_force_needs_two_samples():
    with pytest.raises(ValueError):
        brute_force_count(COS_NET, Circle(), 1)


def test_default_grid_scales_with_domain():
    assert default_grid_n(Circle()) == math.ceil(4096 * 2 * math.pi)
    assert default_grid_n(Tractrix()) == 4096 * 6
    assert default_grid_n(Chord([0, 0], [1, 1])) == 4096


def test_merge_tol_must_exceed_refine_tol():
    with pytest.raises(ValueError):
        count_regions(COS_NET, Circle(), refine_tol=1e-8, merge_tol=1e-8)


@given(st.integers(0, 10**6))
def test_chord_roots_match_cellwise_linear_solve(seed):
    rng = np.random.default_rng(seed)
    net = init_random([3, 6, 5, 1], seed)
    p, q = 2 * rng.standard_normal(3), 2 * rng.standard_normal(3)
    exact = chord_crossings(net.weights, net.biases, p, q)
    rep = count_regions(net, Chord(p, q))
    got = [(bp.t_star, net.flat_index(bp.neuron)) for bp in rep.boundary_points]
    # adjacent exact crossings closer than the grid spacing could hide in one bracket
    gaps = np.diff([t for t, _ in exact]) if len(exact) > 1 else np.array([1.0])
    if np.min(gaps, initial=1.0) < 1e-3:
        return
    assert len(got) == len(exact)
    got.sort(key=lambda r: (round(r[0], 7), r[1]))
    exact.sort(key=lambda r: (round(r[0], 7), r[1]))
    for (tg, cg), (te, ce) in zip(got, exact):
        assert cg == ce
        assert abs(tg - te) <= 2e-10


def test_soundness_and_residuals():
    for seed in range(10):
        net = init_random([2, 10, 16, 1], seed)
        for curve in (Circle(), Tractrix()):
            rep = count_regions(net, curve)
            for bp in rep.boundary_points:
                assert curve.t_lo <= bp.t_star <= curve.t_hi
                b = net.biases[bp.neuron.layer - 1][bp.neuron.index]
                g = preactivation(net, curve.eval(bp.t_star), bp.neuron) - b
                assert abs(g) <= 1e-6 * (1 + abs(b))
                assert bp.residual <= 1e-10


def test_report_invariants():
    net = init_random([2, 10, 16, 1], 3)
    rep = count_regions(net, Tractrix())
    ts = [bp.t_star for bp in rep.boundary_points]
    assert ts == sorted(ts)
    assert rep.crossings_total >= rep.region_count - 1
    assert rep.density_per_arclength == pytest.approx((rep.region_count - 1) / rep.curve_arclength)
    assert sum(rep.per_neuron.values()) == rep.crossings_total
    assert all(b - a > 1e-8 for a, b in zip(rep.cuts, rep.cuts[1:]))


def test_coincident_crossings_count_once():
    # two copies of the same neuron kink at identical parameters
    net = Network((2, 2, 1), (np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 1.0]])), (np.zeros(2),))
    rep = count_regions(net, Circle())
    assert rep.crossings_total == 4 and rep.region_count == 3


def test_exact_grid_hit_is_reported():
    # chord from -1 to 1 along x: the grid point t = 0.5 lands exactly on x = 0
    net = one_neuron([1.0, 0.0], 0.0)
    rep = count_regions(net, Chord([-1.0, 0.0], [1.0, 0.0]), grid_n=5)
    assert [bp.t_star for bp in rep.boundary_points] == [0.5]
    assert rep.boundary_points[0].residual == 0.0


@given(st.integers(0, 10**6), st.integers(2, 300))
def test_doubling_grid_intervals_never_loses_crossings(seed, grid_n):
    # n points -> 2n - 1 points keeps every old grid point, so each sign-change bracket survives
    net = init_random([2, 8, 8, 1], seed)
    curve = Circle()
    a = count_regions(net, curve, grid_n).crossings_total
    b = count_regions(net, curve, 2 * grid_n - 1).crossings_total
    assert b >= a


def test_doubling_grid_points_is_not_nested():
    # 64 points do not contain the 32-point grid; a close root pair straddled by
    # the coarse grid falls inside a single fine cell
    net = init_random([2, 8, 8, 1], 871826)
    counts = [count_regions(net, Circle(), n).crossings_total for n in (32, 63, 64, 4096)]
    assert counts == [28, 28, 26, 28]
    assert brute_force_count(net, Circle(), 10**6) == 29


@given(st.integers(0, 10**6))
def test_refining_nested_grids_never_loses_crossings(seed):
    # grids of 2^k + 1 points are nested, so every coarse bracket is split, never removed
    net = init_random([2, 8, 8, 1], seed)
    curve = Chord([-1.5, -1.0], [1.0, 1.5])
    counts = [count_regions(net, curve, n).crossings_total for n in (33, 65, 129, 257)]
    assert counts == sorted(counts)


def test_report_serialization_round_trip():
    rep = count_regions(init_random([2, 10, 16, 1], 1), Circle())
    back = RegionReport.from_json(rep.to_json())
    assert back.cuts == rep.cuts and back.boundary_points == rep.boundary_points
    assert back.region_count == rep.region_count
    lines = rep.to_csv().splitlines()
    assert lines[0] == "t_star,layer,index,residual"
    assert len(lines) == rep.crossings_total + 1


# ---------------------------------------------------------------------------
# distances


def test_ambient_distance_examples():
    assert boundary_distance_ambient(one_neuron([3.0, 4.0], 5.0), [0.0, 0.0]) == 1.0
    assert boundary_distance_ambient(one_neuron([3.0, 4.0], 5.0), [1.0, 0.5]) == 0.0
    assert boundary_distance_ambient(abs_net(), [2.0]) == 2.0


def test_ambient_distance_without_gradients_is_infinite():
    assert boundary_distance_ambient(zero_net(), [0.1, 0.2]) == math.inf


def test_on_curve_distance_examples():
    rep = count_regions(COS_NET, Circle())
    assert boundary_distance_on_curve(rep, Circle(), 0.0) == pytest.approx(math.pi / 2, abs=1e-9)
    assert boundary_distance_on_curve(rep, Circle(), rep.cuts[0]) == 0.0


def test_on_curve_distance_without_cuts_uses_endpoints():
    rep = count_regions(zero_net(), Circle())
    assert boundary_distance_on_curve(rep, Circle(), -3.0) == pytest.approx(math.pi - 3.0)
    assert boundary_distance_on_curve(rep, Circle(), 0.5) == pytest.approx(math.pi - 0.5)


def test_ambient_distance_bounded_by_chord_to_nearest_boundary():
    rng = np.random.default_rng(2)
    for seed in range(10):
        net = init_random([2, 10, 16, 1], seed)
        curve = Circle()
        rep = count_regions(net, curve)
        pts = curve.eval(np.array([bp.t_star for bp in rep.boundary_points]))
        for t in rng.uniform(-math.pi, math.pi, 20):
            x = curve.eval(t)
            chord = np.min(np.linalg.norm(pts - x, axis=1))
            assert boundary_distance_ambient(net, x) <= chord + 1e-9


def test_single_midpoint_cut_mean_distance():
    # cut at t = 0 on the circle, L = 2 pi: uniform mean distance L/4
    net = one_neuron([0.0, 1.0], 0.0)
    rep = count_regions(net, Circle())
    assert rep.cuts == [pytest.approx(0.0, abs=1e-9)]
    st_ = distance_statistics(net, Circle(), rep, sample_n=200_000, seed=1)
    L = 2 * math.pi
    assert uniform_distance_mean(L, L / 2) == pytest.approx(L / 4)
    assert st_.mean == pytest.approx(L / 4, rel=0.01)


def test_normalized_maximum_is_one():
    net = init_random([2, 10, 16, 1], 4)
    st_ = distance_statistics(net, Tractrix(), sample_n=300, seed=2)
    assert np.max(st_.distances) / st_.max == 1.0
    assert st_.normalized_mean == pytest.approx(st_.mean / st_.max)
    raw = distance_statistics(net, Tractrix(), sample_n=300, seed=2, normalize=False)
    assert raw.normalized_mean == raw.mean


def test_zero_boundary_statistics_flagged():
    st_ = distance_statistics(zero_net(), Circle(), sample_n=100, seed=0)
    assert st_.no_boundaries
    assert 0 < st_.mean <= math.pi


def test_polyline_counts_match_oracle():
    rng = np.random.default_rng(5)
    P = rng.standard_normal((8, 3))
    net = init_random([3, 12, 1], 5)
    pl = Polyline(P)
    assert count_regions(net, pl).region_count == brute_force_count(net, pl, 10**5)
