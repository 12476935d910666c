import math

import numpy as np
import pytest
from hypothesis import given, settings

from bazykin_af.equilibria import (
    Kind,
    PredatorCase,
    PreyCase,
    Stability,
    boundary_equilibria,
    classify_trace_det,
    equilibria,
    interior_equilibria,
    jacobian_stability,
    nullcline_case,
    nullcline_curves,
    nullcline_residuals,
    quintic_coefficients,
    real_positive_roots,
)
from bazykin_af.errors import InvalidInputError
from bazykin_af.model import denominator, jacobian, vector_field
from bazykin_af.simulate import integrate

from conftest import HOPF_SET, SET_A, parameters_st, random_parameters


def by_kind(eqs, kind):
    return [e for e in eqs if e.kind is kind]


def test_boundary_points_of_reference_set():
    eqs = boundary_equilibria(SET_A)
    (e0,) = by_kind(eqs, Kind.TRIVIAL)
    (e1,) = by_kind(eqs, Kind.PREDATOR_FREE)
    assert not by_kind(eqs, Kind.PREY_FREE)
    assert e0.stability is Stability.SADDLE
    assert sorted(v.real for v in e0.eigenvalues) == pytest.approx([-2 / 3, 1.0], abs=1e-14)
    assert e1.stability is Stability.STABLE_NODE
    assert sorted(v.real for v in e1.eigenvalues) == pytest.approx([-1.0, -0.5], abs=1e-14)


def test_prey_free_point_appears_with_more_food():
    eqs = boundary_equilibria(SET_A.replace(xi=3.5))
    (e2,) = by_kind(eqs, Kind.PREY_FREE)
    assert e2.location.x == 0.0
    assert e2.location.y == pytest.approx(4 / 9, abs=1e-14)
    assert e2.stability is Stability.SADDLE


def test_no_food_origin_is_saddle_without_prey_free_point():
    eqs = boundary_equilibria(SET_A.replace(xi=0.0))
    assert by_kind(eqs, Kind.TRIVIAL)[0].stability is Stability.SADDLE
    assert not by_kind(eqs, Kind.PREY_FREE)


@settings(max_examples=200, deadline=None)
@given(parameters_st)
def test_boundary_eigenvalues_match_jacobian(p):
    for e in boundary_equilibria(p):
        J = jacobian(p, e.location).matrix()
        ref = np.sort_complex(np.linalg.eigvals(J))
        got = np.sort_complex(np.array(e.eigenvalues))
        assert np.allclose(got, ref, atol=1e-9 * max(1.0, np.abs(J).max()))


def test_quintic_without_interference_is_the_reduced_quadratic():
    q = quintic_coefficients(SET_A.replace(epsilon=0.0))
    assert tuple(q) == pytest.approx((0, 0, 0, -8.0, 2.0, -2.0), abs=1e-14)


def test_quintic_constant_term(rng):
    for _ in range(100):
        p = random_parameters(rng)
        expected = p.delta * p.xi - p.m * p.handling - p.epsilon * p.handling**2
        assert quintic_coefficients(p).c0 == pytest.approx(expected, rel=1e-13, abs=1e-13)


def test_quintic_is_substituted_nullcline(rng):
    # along the prey nullcline, D times the predator residual is the quintic
    for _ in range(200):
        p = random_parameters(rng)
        q = quintic_coefficients(p)
        for x in rng.uniform(0, p.gamma, 5):
            D = denominator(x, p.alpha, p.xi, p.omega)
            y = (1.0 - x / p.gamma) * D
            _, pred = nullcline_residuals(p, x, y)
            scale = max(1.0, np.polyval(np.abs(q.as_array()), x))
            assert abs(q(x) - D * pred) < 1e-9 * scale


def test_roots_of_reduced_quadratic_are_empty():
    assert real_positive_roots([-8.0, 2.0, -2.0], 1.0) == []


def test_roots_of_constructed_factorisation():
    roots = real_positive_roots(3.0 * np.poly([0.3, 0.7]), 1.0)
    assert [r.x for r in roots] == pytest.approx([0.3, 0.7], abs=1e-14)
    assert all(r.multiplicity == 1 for r in roots)


def test_double_root_reported_once():
    (r,) = real_positive_roots(np.poly([0.4, 0.4, -2.0]), 1.0)
    assert r.x == pytest.approx(0.4, abs=1e-7) and r.multiplicity == 2


def test_all_zero_polynomial_rejected():
    with pytest.raises(InvalidInputError):
        real_positive_roots([0.0] * 6, 1.0)


def test_roots_agree_with_bisection_oracle():
    rng = np.random.default_rng(99)
    grid = np.linspace(0.0, 1.0, 10**6 + 1)
    for _ in range(1000):
        c = rng.normal(size=6)
        v = np.polyval(c, grid)
        idx = np.nonzero(v[:-1] * v[1:] < 0)[0]
        oracle = 0.5 * (grid[idx] + grid[idx + 1])
        got = [r.x for r in real_positive_roots(c, 1.0) if r.multiplicity % 2 == 1]
        assert len(got) == len(oracle)
        assert np.allclose(got, oracle, atol=2e-6)


def test_root_residual_gate(rng):
    for _ in range(300):
        c = rng.normal(size=6) * 10.0 ** rng.uniform(-3, 3, 6)
        for r in real_positive_roots(c, 5.0):
            if r.multiplicity == 1:
                assert abs(np.polyval(c, r.x)) < 1e-10 * max(1.0, np.abs(c).max())


def test_no_interior_point_without_interference():
    assert interior_equilibria(SET_A.replace(epsilon=0.0)) == []


def test_interior_point_attracts_simulation_above_cycle_threshold():
    p = HOPF_SET.replace(epsilon=0.03)
    stable = [e for e in interior_equilibria(p) if e.stability.is_stable]
    assert len(stable) == 1
    end = integrate(p, (10.0, 4.0), 3000.0, 0.05).final
    assert np.hypot(*(np.array(end) - np.array(stable[0].location))) < 1e-4


def test_interior_point_unstable_below_cycle_threshold():
    (e,) = interior_equilibria(HOPF_SET.replace(epsilon=0.024))
    assert e.eigenvalues[0].real > 0
    assert e.stability in (Stability.UNSTABLE_FOCUS, Stability.UNSTABLE_NODE)


@settings(max_examples=300, deadline=None)
@given(parameters_st)
def test_equilibria_are_zeros_of_field(p):
    # absolute for states of order one, relative once roundoff in y ~ 1/epsilon dominates
    for e in equilibria(p):
        scale = max(1.0, *e.location)
        assert max(abs(v) for v in vector_field(p, e.location)) < 1e-8 * scale


@settings(max_examples=300, deadline=None)
@given(parameters_st)
def test_classification_agrees_with_jacobian(p):
    for e in interior_equilibria(p):
        J = jacobian(p, e.location)
        assert classify_trace_det(J.trace, J.det) is e.stability
        assert jacobian_stability(p, e.location)[0] is e.stability


@settings(max_examples=300, deadline=None)
@given(parameters_st)
def test_interior_count_bounds(p):
    assert len(interior_equilibria(p)) <= 5


def test_interior_count_without_interference(rng):
    for _ in range(300):
        assert len(interior_equilibria(random_parameters(rng, eps_zero=True))) <= 2


def test_nullcline_intersections_match_interior_points(rng):
    checked = 0
    while checked < 50:
        p = random_parameters(rng)
        if p.epsilon < 0.05:
            continue
        x = np.linspace(1e-9, p.gamma, 200001)
        c = nullcline_curves(p, x)
        diff = c.prey_y - c.predator_y
        idx = np.nonzero(diff[:-1] * diff[1:] < 0)[0]
        crossings = [0.5 * (x[i] + x[i + 1]) for i in idx if c.prey_y[i] > 0]
        interior = [e.location.x for e in interior_equilibria(p) if e.multiplicity % 2 == 1]
        assert len(crossings) == len(interior)
        assert np.allclose(crossings, interior, atol=2 * (x[1] - x[0]))
        checked += 1


def test_prey_free_point_toggles_across_margin_curve():
    # margin delta*xi - m*(1 + alpha*xi) vanishes at xi = m / (delta - m*alpha) = 3
    for xi, present in [(3.0 - 1e-6, False), (3.0 + 1e-6, True)]:
        eqs = boundary_equilibria(SET_A.replace(xi=xi))
        assert bool(by_kind(eqs, Kind.PREY_FREE)) is present


def test_nullcline_case_examples():
    assert nullcline_case(SET_A).prey_case is PreyCase.CASE2
    assert nullcline_case(HOPF_SET).prey_case is PreyCase.CASE1
    assert nullcline_case(SET_A.replace(xi=3.5)).predator_case is PredatorCase.CASE_P


def test_nullcline_case_q_and_zero_omega():
    assert nullcline_case(SET_A.replace(xi=2.9)).predator_case is PredatorCase.CASE_Q
    c = nullcline_case(SET_A.replace(omega=0.0))
    assert c.omega_zero and c.predator_case is PredatorCase.CASE_Q


def test_nullcline_case_tie_is_flagged():
    c = nullcline_case(SET_A.replace(gamma=3.0))
    assert c.degenerate and c.prey_case is not PreyCase.CASE1


def test_nullcline_curve_intercepts():
    p = SET_A.replace(xi=3.5)
    c = nullcline_curves(p, [0.0, p.gamma])
    assert c.prey_y[0] == pytest.approx(p.handling)
    assert c.prey_y[1] == pytest.approx(0.0, abs=1e-15)
    assert c.predator_y[0] == pytest.approx(p.food_margin / (p.epsilon * p.handling))


def test_predator_nullcline_maximum():
    p = SET_A.replace(xi=3.5)
    x_star = 1.0 / math.sqrt(p.omega)
    D = denominator(x_star, p.alpha, p.xi, p.omega)
    expected = ((p.delta - p.m) / math.sqrt(p.omega) + 2.0 * p.food_margin) / (p.epsilon * D)
    grid = np.linspace(0.0, 5.0, 500001)
    c = nullcline_curves(p, grid)
    assert c.predator_y.max() == pytest.approx(expected, rel=1e-9)
    assert grid[np.argmax(c.predator_y)] == pytest.approx(x_star, abs=2e-5)


def test_vertical_predator_nullcline_without_interference():
    c = nullcline_curves(SET_A.replace(epsilon=0.0, xi=0.0, delta=0.5), [0.5])
    assert c.predator_y is None
    assert isinstance(c.predator_vertical_x, tuple)
