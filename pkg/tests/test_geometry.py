import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import FROZEN_SUPREMA, rotation
from relu_manifold.curves import Circle, Tractrix, embedded_circle
from relu_manifold.geometry import (PolynomialSpec, TangentFrame, gram_jacobian, monotonicity_violations,
                                    polynomial_supremum, simplified_polynomial, supremum_sweep, sweep_csv,
                                    tangent_frame, tangent_project)
from relu_manifold.network import init_random, input_gradient, preactivation


def test_tangent_project_examples():
    frame = tangent_frame(Circle(), 0.0)
    assert np.allclose(frame.unit_tangent, [0, 1])
    c, _ = tangent_project(frame, [1.0, 0.0])
    assert c == pytest.approx(0.0, abs=1e-16)
    c, proj = tangent_project(frame, [0.0, 2.0])
    assert c == pytest.approx(2.0) and np.allclose(proj, [0, 2])


@given(st.floats(-3, 3), st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2))
def test_projection_never_longer_than_vector(t, v):
    if abs(t) < 1e-6:
        return
    _, proj = tangent_project(tangent_frame(Tractrix(), t), v)
    assert np.linalg.norm(proj) <= np.linalg.norm(v) * (1 + 1e-12) + 1e-300


def test_zero_speed_has_no_frame():
    with pytest.raises(ValueError):
        tangent_frame(Tractrix(), 0.0)
    with pytest.raises(ValueError):
        TangentFrame(np.zeros(2), np.array([1.0, 1.0]))


def test_tangent_project_dimension_mismatch():
    with pytest.raises(ValueError):
        tangent_project(tangent_frame(Circle(), 0.0), [1.0, 2.0, 3.0])


def test_gram_examples(rng):
    v = rng.standard_normal(5)
    assert gram_jacobian([v]) == pytest.approx(np.linalg.norm(v), rel=1e-12)
    Q = rotation(5, rng)
    assert gram_jacobian(Q[:2]) == pytest.approx(1.0, rel=1e-12)
    assert gram_jacobian([v, 2 * v]) == pytest.approx(0.0, abs=1e-6)


@given(st.integers(0, 10**6), st.integers(1, 4))
def test_gram_is_rotation_invariant(seed, k):
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((k, 6))
    Q = rotation(6, rng)
    a, b = gram_jacobian(V), gram_jacobian(V @ Q.T)
    assert b == pytest.approx(a, rel=1e-9)


def test_gram_rejects_empty():
    with pytest.raises(ValueError):
        gram_jacobian(np.zeros((0, 3)))


def test_chain_rule_and_gram_identity():
    rng = np.random.default_rng(0)
    h = 1e-6
    curves = [Circle(), Tractrix(), embedded_circle(5, 1)]
    nets = {2: [init_random([2, 10, 16, 1], s) for s in range(5)], 5: [init_random([5, 10, 16, 1], s) for s in range(5)]}
    checked = 0
    for trial in range(1000):
        curve = curves[trial % 3]
        net = nets[curve.ambient_dim][trial % 5]
        t = rng.uniform(curve.t_lo + 0.01, curve.t_hi - 0.01)
        if isinstance(curve, Tractrix) and abs(t) < 1e-3:
            continue
        neuron = net.neurons()[int(rng.integers(net.n_hidden))]
        x, vel = curve.eval(t), curve.velocity(t)
        g = input_gradient(net, x, neuron)
        directional = float(g @ vel)
        fd = (preactivation(net, curve.eval(t + h), neuron) - preactivation(net, curve.eval(t - h), neuron)) / (2 * h)
        # a kink inside the stencil breaks the identity; detect it by the one-sided slopes
        left = (preactivation(net, x, neuron) - preactivation(net, curve.eval(t - h), neuron)) / h
        right = (preactivation(net, curve.eval(t + h), neuron) - preactivation(net, x, neuron)) / h
        if abs(left - right) > 1e-4 * (1 + abs(directional)):
            continue
        assert abs(directional - fd) <= 1e-6 * (1 + abs(directional))
        _, proj = tangent_project(tangent_frame(curve, t), g)
        assert abs(gram_jacobian([proj]) - abs(directional) / np.linalg.norm(vel)) <= 1e-8
        checked += 1
    assert checked > 950


# ---------------------------------------------------------------------------
# simplified polynomial


def test_polynomial_examples():
    spec = PolynomialSpec(2, 1)
    assert simplified_polynomial(spec, 1 / 3) == pytest.approx(5 / 27, abs=1e-16)
    assert simplified_polynomial(spec, 1e-12) == pytest.approx(0.0, abs=1e-11)
    for n, m in [(2, 1), (5, 3), (30, 29)]:
        assert simplified_polynomial(PolynomialSpec(n, m), 1.0) == -m


@pytest.mark.parametrize("n,m", [(1, 1), (3, 0), (3, 3)])
def test_invalid_spec(n, m):
    with pytest.raises(ValueError):
        PolynomialSpec(n, m)


def test_supremum_2_1_is_five_twenty_sevenths():
    z, p = polynomial_supremum(PolynomialSpec(2, 1))
    assert z == pytest.approx(1 / 3, abs=1e-10)
    assert p == pytest.approx(5 / 27, abs=1e-9)


@pytest.mark.parametrize("key", sorted(FROZEN_SUPREMA))
def test_supremum_matches_high_precision_oracle(key):
    z_ref, p_ref = FROZEN_SUPREMA[key]
    z, p = polynomial_supremum(PolynomialSpec(*key))
    assert z == pytest.approx(z_ref, abs=1e-10)
    assert p == pytest.approx(p_ref, abs=1e-14)


@given(st.integers(2, 30).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n - 1))))
def test_maximizer_is_stationary_by_central_difference(nm):
    spec = PolynomialSpec(*nm)
    z, p = polynomial_supremum(spec)
    h = 1e-6
    dp = (simplified_polynomial(spec, z + h) - simplified_polynomial(spec, z - h)) / (2 * h)
    assert abs(dp) <= 1e-8
    grid = np.linspace(1e-6, 1 - 1e-6, 10_001)
    assert p >= float(np.max(simplified_polynomial(spec, grid))) - 1e-15


def test_sweep_rows_values_and_monotonicity():
    rows = supremum_sweep()
    assert len(rows) == sum(n - 1 for n in range(2, 31)) == 435
    assert [(n, m) for n, m, _, _ in rows] == [(n, m) for n in range(2, 31) for m in range(1, n)]
    assert all(0 < p < 1 for _, _, _, p in rows)
    assert monotonicity_violations(rows) == []


def test_monotonicity_validator_detects_violations():
    rows = [(2, 1, 0.3, 0.2), (3, 1, 0.4, 0.1), (3, 2, 0.3, 0.15)]
    bad = monotonicity_violations(rows)
    assert any("p*(3,1)" in b for b in bad) and any("p*(3,2)" in b for b in bad)


def test_sweep_csv_is_deterministic():
    a = sweep_csv(supremum_sweep(range(2, 8)))
    b = sweep_csv(supremum_sweep(range(2, 8)))
    assert a == b
    assert a.splitlines()[0] == "n_in,m,zeta_star,p_star"
    assert len(a.splitlines()) == 1 + sum(n - 1 for n in range(2, 8))


def test_custom_m_rule():
    rows = supremum_sweep(range(3, 6), m_rule=lambda n: [1])
    assert [(n, m) for n, m, _, _ in rows] == [(3, 1), (4, 1), (5, 1)]
    assert math.isclose(rows[0][3], FROZEN_SUPREMA[(3, 1)][1], abs_tol=1e-14)
