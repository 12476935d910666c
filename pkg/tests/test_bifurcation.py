import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bazykin_af.bifurcation import (
    BifurcationKind,
    classify_region,
    cusp_scan,
    equilibrium_curve,
    hopf_epsilon,
    interior_folds,
    outcome_from_attractors,
    phi_class,
    phi_curves,
    region_atlas,
    saddlenode_xi,
    sotomayor_quantities,
    transcritical_xi,
)
from bazykin_af.equilibria import Kind, boundary_equilibria, equilibria, interior_equilibria
from bazykin_af.errors import DegenerateParameterError, InvalidInputError, NoHopfFoundError
from bazykin_af.model import jacobian
from bazykin_af.simulate import detect_limit_cycle, integrate

from conftest import CUSP_SET, HOPF_SET, SET_A


def e1_second_eigenvalue(p):
    e1 = next(e for e in boundary_equilibria(p) if e.kind is Kind.PREDATOR_FREE)
    return max(ev.real for ev in e1.eigenvalues)


def test_transcritical_value():
    assert transcritical_xi(SET_A) == pytest.approx(2.8, abs=1e-12)


def test_transcritical_sign_change():
    xs = transcritical_xi(SET_A)
    below = e1_second_eigenvalue(SET_A.replace(xi=xs - 1e-3))
    above = e1_second_eigenvalue(SET_A.replace(xi=xs + 1e-3))
    assert below * above < 0


def test_transcritical_zero_numerator():
    # alpha = 0 and m (omega g^2 + g + 1) = delta g
    p = SET_A.replace(alpha=0.0, gamma=1.0, omega=4.0, m=8.0 / 6.0)
    assert transcritical_xi(p) == pytest.approx(0.0, abs=1e-14)


def test_saddle_node_value_and_collision():
    xs = saddlenode_xi(SET_A)
    assert xs == pytest.approx(3.0, abs=1e-12)
    assert SET_A.replace(xi=xs).food_margin == pytest.approx(0.0, abs=1e-12)


def test_saddle_node_toggles_prey_free_point():
    xs = saddlenode_xi(SET_A)
    kinds = [{e.kind for e in boundary_equilibria(SET_A.replace(xi=xs + d))} for d in (-1e-3, 1e-3)]
    assert Kind.PREY_FREE not in kinds[0] and Kind.PREY_FREE in kinds[1]


@pytest.mark.parametrize("fn", [transcritical_xi, saddlenode_xi])
def test_degenerate_food_efficiency(fn):
    with pytest.raises(DegenerateParameterError):
        fn(SET_A.replace(delta=6.0, m=6.0, alpha=1.0))


def test_critical_values_agree_with_sweeps(rng):
    for _ in range(100):
        p = SET_A.replace(
            gamma=rng.uniform(0.5, 5), alpha=rng.uniform(0, 1), omega=rng.uniform(0.1, 4),
            delta=rng.uniform(4, 10), m=rng.uniform(0.5, 3), epsilon=rng.uniform(0.1, 2),
        )
        xt = transcritical_xi(p)
        if xt > 2e-3:
            assert e1_second_eigenvalue(p.replace(xi=xt - 1e-3)) * e1_second_eigenvalue(p.replace(xi=xt + 1e-3)) < 0
        xs = saddlenode_xi(p)
        if xs > 2e-3:
            assert p.replace(xi=xs - 1e-3).food_margin < 0 < p.replace(xi=xs + 1e-3).food_margin


def closed_form_transcritical(p, xi):
    """Sotomayor scalars at E1 from hand-differentiated expressions."""
    g, a, w, e, d = p.gamma, p.alpha, p.omega, p.epsilon, p.delta
    A = 1 + a * xi
    k = w * g * g + 1
    D = A * k + g
    num = g + xi * k
    V2 = -D / g
    dJ22_dxi = d * (k * D - num * a * k) / D**2
    dg_dx = d * ((1 + 2 * xi * w * g) * D - num * (2 * A * w * g + 1)) / D**2
    return dJ22_dxi * V2, 2 * V2 * dg_dx - 2 * e * V2 * V2


def test_sotomayor_transcritical_matches_closed_form():
    rep = sotomayor_quantities(SET_A, "Transcritical")
    b, c = closed_form_transcritical(SET_A, 2.8)
    assert rep.wT_Hxi == 0.0
    assert rep.wT_DHxiV == pytest.approx(b, rel=1e-6)
    assert rep.wT_D2HVV == pytest.approx(c, rel=1e-6)
    assert (b, c) == pytest.approx((-10.0, -397.6), rel=1e-12)
    assert rep.pattern is BifurcationKind.TRANSCRITICAL and rep.nondegenerate


def test_sotomayor_parameter_projection_vanishes_off_critical_value():
    # E1 sits on y = 0 for every xi, where the field has no xi dependence
    for dxi in (0.01, 0.05, 0.1):
        assert sotomayor_quantities(SET_A, "Transcritical", xi=2.8 + dxi).wT_Hxi == 0.0


def test_sotomayor_at_prey_free_collision():
    # E2 meets E0 at the origin: J = diag(1, 0), V = W = (0, 1)
    rep = sotomayor_quantities(SET_A, "SaddleNode")
    assert rep.location == (0.0, 0.0)
    assert rep.V == pytest.approx((0.0, 1.0)) and rep.W == pytest.approx((0.0, 1.0))
    p = SET_A.replace(xi=3.0)
    # d/dxi of the prey-free growth rate (delta xi - m A) / A, and -2 epsilon
    gap = p.delta - p.m * p.alpha
    assert rep.wT_DHxiV == pytest.approx(gap / p.handling - p.food_margin * p.alpha / p.handling**2, rel=1e-6)
    assert rep.wT_D2HVV == pytest.approx(-2.0 * p.epsilon, rel=1e-6)
    assert rep.wT_Hxi == 0.0


def test_sotomayor_rejects_hopf():
    with pytest.raises(InvalidInputError):
        sotomayor_quantities(SET_A, "Hopf")


def test_hopf_search_on_reference_set():
    # along the equilibrium curve the trace vanishes only at a saddle
    assert hopf_epsilon(HOPF_SET) is None
    folds = interior_folds(HOPF_SET, (0.02, 0.04))
    assert any(0.024 < e < 0.03 for e, _ in folds)


def test_hopf_no_sign_change_raises():
    with pytest.raises(NoHopfFoundError):
        hopf_epsilon(HOPF_SET, bracket=(0.5, 1.0))


def test_hopf_bad_bracket():
    with pytest.raises(InvalidInputError):
        hopf_epsilon(HOPF_SET, bracket=(0.04, 0.02))


def test_hopf_point_when_one_exists():
    # the no-food interior focus loses stability as epsilon decreases
    p = HOPF_SET.replace(xi=0.0, gamma=10.0)
    hp = hopf_epsilon(p, bracket=(1e-4, 1.0))
    assert hp is not None
    q = p.replace(epsilon=hp.epsilon)
    loc = min(interior_equilibria(q), key=lambda e: abs(e.location.x - hp.location.x)).location
    J = jacobian(q, loc)
    assert abs(J.trace) < 1e-8 and J.det > 0
    assert hp.transversal


def test_equilibrium_curve_points_are_equilibria():
    x = np.linspace(0.5, 14.0, 50)
    eps, y, tr, det = equilibrium_curve(HOPF_SET, x)
    for xi_, e, yi, t, d in zip(x, eps, y, tr, det):
        if e <= 0:
            continue
        J = jacobian(HOPF_SET.replace(epsilon=float(e)), (xi_, yi))
        assert J.trace == pytest.approx(t, abs=1e-12) and J.det == pytest.approx(d, abs=1e-12)


def test_phi_examples():
    assert phi_curves(SET_A, 1.0, 3.0).phi1 == pytest.approx(0.0, abs=1e-14)
    assert phi_curves(SET_A, 1.0, 3.5).phi3 == pytest.approx(1.0 - 10.125, abs=1e-12)
    assert not phi_curves(SET_A.replace(omega=0.0), 1.0, 1.0).phi4_defined


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 3), st.floats(0, 5))
def test_phi2_offset_is_constant(a, xi):
    phi = phi_curves(SET_A, a, xi)
    g, w = SET_A.gamma, SET_A.omega
    assert phi.phi2 - phi.phi1 == pytest.approx((SET_A.delta - SET_A.m) * g / (w * g * g + 1), abs=1e-12)


def test_phi_zero_sets_match_boundary_changes():
    # phi1 = 0 is where the prey-free point appears; phi2 = 0 where E1 changes type
    xis = np.linspace(0.0, 5.0, 2001)
    for a in (0.2, 0.7, 1.0):
        phi1 = phi_curves(SET_A, a, xis).phi1
        present = np.array([any(e.kind is Kind.PREY_FREE for e in boundary_equilibria(SET_A.replace(alpha=a, xi=x)))
                            for x in xis])
        assert np.array_equal(present, phi1 > 1e-12)
        phi2 = phi_curves(SET_A, a, xis).phi2
        unstable = np.array([e1_second_eigenvalue(SET_A.replace(alpha=a, xi=x)) > 0 for x in xis])
        assert np.array_equal(unstable, phi2 > 0)


def test_region_examples():
    # bistable witness: stable prey-free point and interior equilibria present
    lab = classify_region(SET_A, 0.65, 2.2)
    assert lab.phi.phi1 > lab.phi.phi3 > 0
    assert "E2" in lab.stable_attractors and lab.outcome == "BistableEradication"
    # little food: E1 stable, no interior
    lab = classify_region(SET_A, 0.5, 0.1)
    assert lab.phi.phi2 < 0 and lab.phi.phi4 < 0
    assert lab.outcome == "Dominance"


def test_region_without_food_is_base_region():
    lab = classify_region(SET_A, 0.5, 0.0)
    assert lab.subregion == lab.base_region


def test_region_purity():
    a = classify_region(SET_A, 0.3, 1.7)
    b = classify_region(SET_A.replace(alpha=2.0, xi=4.0), 0.3, 1.7)
    assert (a.subregion, a.stable_attractors, a.outcome) == (b.subregion, b.stable_attractors, b.outcome)


def test_region_boundary_flag():
    lab = classify_region(SET_A, 1.0, 3.0)  # phi1 = 0
    assert lab.boundary and lab.outcome is None


def test_outcome_mapping():
    assert outcome_from_attractors(frozenset({"E2"})) == "Eradication"
    assert outcome_from_attractors(frozenset({"E2", "Interior"})) == "BistableEradication"
    assert outcome_from_attractors(frozenset({"E1"})) == "Dominance"
    assert outcome_from_attractors(frozenset({"E1", "Cycle"})) == "BistableDominance"
    assert outcome_from_attractors(frozenset({"Cycle"})) == "Coexistence"


def test_atlas_total_and_consistent():
    alphas = np.linspace(0.0, 2.0, 21)
    xis = np.linspace(0.0, 5.0, 21)
    for lab in region_atlas(SET_A, alphas, xis):
        assert lab.boundary or lab.outcome is not None
        if lab.boundary:
            continue
        eqs = equilibria(SET_A.replace(alpha=lab.alpha, xi=lab.xi))
        stable_kinds = {e.kind for e in eqs if e.stability.is_stable}
        assert ("E1" in lab.stable_attractors) == (Kind.PREDATOR_FREE in stable_kinds)
        assert ("E2" in lab.stable_attractors) == (Kind.PREY_FREE in stable_kinds)
        assert ("Interior" in lab.stable_attractors) == (Kind.INTERIOR in stable_kinds)
        assert 1 <= lab.phi_class <= 5 and lab.phi_class == phi_class(lab.phi)


def test_atlas_cycle_detection_agrees_with_simulation():
    # unstable focus for the no-food reference set surrounded by a cycle
    lab = classify_region(HOPF_SET, 0.1, 0.45)
    tr = integrate(HOPF_SET, (1.01 * 1.2024170162497767, 1.01 * 2.0811590696224163), 2000.0, 0.05, record_every=4)
    assert ("Cycle" in lab.stable_attractors) == (detect_limit_cycle(tr) is not None)


def test_cusp_uniform_region():
    cm = cusp_scan(SET_A, "alpha-epsilon", (0.1, 0.3), (1.0, 2.0), (5, 5))
    assert np.all(cm.counts == 1) and cm.boundary == []


def test_cusp_grid_doubling_stable():
    p = SET_A.replace(alpha=0.65)
    coarse = cusp_scan(p, "xi-epsilon", (1.5, 3.5), (0.2, 1.0), (20, 20))
    fine = cusp_scan(p, "xi-epsilon", (1.5, 3.5), (0.2, 1.0), (40, 40))
    assert coarse.bistable.any()
    assert abs(coarse.bistable_fraction - fine.bistable_fraction) < 0.05


def test_cusp_reference_scan_counts():
    cm = cusp_scan(CUSP_SET, "alpha-epsilon", (0.0, 1.0), (0.01, 1.0), (10, 10))
    assert cm.counts.shape == (10, 10) and cm.counts.min() >= 1


@pytest.mark.parametrize("kw", [{"plane": "gamma-epsilon"}, {"resolution": (1, 5)}])
def test_cusp_rejects_bad_input(kw):
    with pytest.raises(InvalidInputError):
        cusp_scan(SET_A, **kw)
