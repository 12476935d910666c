import io

import numpy as np
import pytest

from bazykin_af.equilibria import Kind, equilibria, interior_equilibria
from bazykin_af.errors import DivergenceError, InsufficientDataError, InvalidInputError, PositivityViolationError
from bazykin_af.model import bound_constant, jacobian
from bazykin_af.simulate import (
    Trajectory,
    detect_limit_cycle,
    integrate,
    integrate_adaptive,
    integrate_batch,
    phase_portrait,
    read_trajectory_csv,
    write_trajectory_csv,
)

from conftest import HOPF_SET, SET_A, random_parameters


def stable_points(p):
    return [e.location for e in equilibria(p) if e.stability.is_stable]


def test_origin_is_fixed():
    tr = integrate(SET_A, (0.0, 0.0), 10.0, 0.1)
    assert np.all(tr.x == 0.0) and np.all(tr.y == 0.0)


def test_prey_only_equilibrium_is_fixed():
    tr = integrate(SET_A, (SET_A.gamma, 0.0), 10.0, 0.1)
    assert np.allclose(tr.states, [SET_A.gamma, 0.0], atol=1e-13)


def test_converges_to_reported_stable_equilibrium():
    tr = integrate(SET_A, (0.5, 0.5), 200.0, 0.01)
    dist = min(np.hypot(*(np.array(tr.final) - s)) for s in stable_points(SET_A))
    assert dist < 1e-4


def test_times_strictly_increasing_and_end_exact():
    tr = integrate(SET_A, (0.5, 0.5), 1.0, 0.3, record_every=2)
    assert np.all(np.diff(tr.t) > 0)
    assert tr.t[-1] == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("args", [(0.0, 0.1), (1.0, 0.0), (1.0, -0.1), (np.inf, 0.1)])
def test_integrate_rejects_bad_horizon(args):
    with pytest.raises(InvalidInputError):
        integrate(SET_A, (0.5, 0.5), *args)


def test_integrate_rejects_negative_start():
    with pytest.raises(InvalidInputError):
        integrate(SET_A, (-0.1, 0.5), 1.0, 0.1)


def test_blow_up_is_reported():
    # an enormous step makes RK4 leave the positive quadrant or overflow
    with pytest.raises((DivergenceError, PositivityViolationError)):
        integrate(SET_A.replace(delta=500.0), (5.0, 50.0), 100.0, 10.0)


@pytest.mark.parametrize("s0", [(0.0, 0.0), (1.0, 0.0), (0.5, 0.5)])
def test_adaptive_agrees_with_fixed_step(s0):
    fixed = integrate(SET_A, s0, 20.0, 1e-3)
    adapt = integrate_adaptive(SET_A, s0, 20.0, rel_tol=1e-10, abs_tol=1e-12)
    assert np.max(np.abs(np.array(fixed.final) - np.array(adapt.final))) < 1e-5


def test_adaptive_near_prey_free_point_with_large_growth():
    p = SET_A.replace(xi=3.5, delta=50.0)
    e2 = next(e for e in equilibria(p) if e.kind is Kind.PREY_FREE)
    tr = integrate_adaptive(p, (0.01, 1.1 * e2.location.y), 50.0)
    assert np.all(tr.states >= 0.0)


def test_adaptive_rejects_zero_tolerance():
    with pytest.raises(InvalidInputError):
        integrate_adaptive(SET_A, (0.5, 0.5), 1.0, rel_tol=0.0)


def test_fourth_order_convergence():
    def end(dt):
        return np.array(integrate(SET_A, (0.5, 0.5), 5.0, dt).final)

    ref = end(0.04 / 8)
    e1 = np.linalg.norm(end(0.04) - ref)
    e2 = np.linalg.norm(end(0.02) - ref)
    assert 12.0 < e1 / e2 < 20.0


def test_positivity_random_sets():
    rng = np.random.default_rng(7)
    for _ in range(100):
        p = random_parameters(rng)
        tr = integrate(p, (rng.uniform(0, 10), rng.uniform(0, 10)), 20.0, 0.01, record_every=10)
        assert tr.states.min() >= -1e-9


def test_batch_matches_scalar_runs():
    xs = np.array([0.2, 0.5, 0.9])
    ys = np.array([0.3, 0.5, 1.2])
    t, X, Y = integrate_batch(SET_A.as_dict(), xs, ys, 5.0, 0.01, record_every=50)
    for j in range(3):
        tr = integrate(SET_A, (xs[j], ys[j]), 5.0, 0.01, record_every=50)
        assert np.allclose(X[:, j], tr.x, rtol=0, atol=1e-12)
        assert np.allclose(Y[:, j], tr.y, rtol=0, atol=1e-12)
    assert np.allclose(t, tr.t)


def near_interior(p):
    # lowest-prey interior equilibrium, nudged off it
    eq = min(interior_equilibria(p), key=lambda e: e.location.x)
    return (1.01 * eq.location.x, 1.01 * eq.location.y)


def test_limit_cycle_detected_below_threshold():
    tr = integrate(HOPF_SET, near_interior(HOPF_SET), 2000.0, 0.05, record_every=4)
    info = detect_limit_cycle(tr)
    assert info is not None and info.period > 0 and info.amplitude_x > 1e-3


def test_no_cycle_above_threshold():
    p = HOPF_SET.replace(epsilon=0.03)
    tr = integrate(p, near_interior(p), 2000.0, 0.05, record_every=4)
    assert detect_limit_cycle(tr) is None


def test_no_cycle_when_converging_to_prey_only_point():
    p = SET_A.replace(xi=0.0, delta=0.5)
    tr = integrate(p, (0.5, 0.5), 200.0, 0.05)
    assert detect_limit_cycle(tr) is None


def test_short_trajectory_is_insufficient():
    tr = integrate(SET_A, (0.5, 0.5), 1.0, 0.1)
    with pytest.raises(InsufficientDataError):
        detect_limit_cycle(tr)


def test_phase_portrait_common_attractor():
    p = HOPF_SET.replace(epsilon=0.05)
    (s,) = [e.location for e in interior_equilibria(p)]
    starts = [(s.x * fx, s.y * fy) for fx in (0.9, 1.1) for fy in (0.9, 1.1)]
    ends = np.array([tr.final for tr in phase_portrait(p, starts, 1500.0, 0.05, record_every=100)])
    assert np.max(np.ptp(ends, axis=0)) < 1e-3


def test_phase_portrait_empty_list():
    with pytest.raises(InvalidInputError):
        phase_portrait(SET_A, [], 1.0, 0.1)


def test_phase_portrait_keeps_going_after_a_failure():
    out = phase_portrait(SET_A, [(0.5, 0.5), (-1.0, 0.5), (0.2, 0.2)], 1.0, 0.1)
    assert isinstance(out[0], Trajectory) and isinstance(out[2], Trajectory)
    assert isinstance(out[1], InvalidInputError)


def test_phase_portrait_bistability_witness():
    # a cell of the (alpha, xi) atlas with a stable prey-free point and a stable interior node
    p = SET_A.replace(alpha=0.65, xi=2.2)
    saddle = next(e for e in interior_equilibria(p) if e.stability.name == "SADDLE")
    w, v = np.linalg.eig(jacobian(p, saddle.location).matrix())
    unstable = np.real(v[:, np.argmax(np.real(w))])
    starts = [tuple(np.array(saddle.location) + sgn * 0.01 * unstable) for sgn in (1.0, -1.0)]
    ends = [np.array(tr.final) for tr in phase_portrait(p, starts, 400.0, 0.01, record_every=100)]
    assert np.linalg.norm(ends[0] - ends[1]) > 0.1
    stable = np.array(stable_points(p))
    for e in ends:
        assert np.min(np.linalg.norm(stable - e, axis=1)) < 1e-4


def test_boundedness_property():
    rng = np.random.default_rng(11)
    for _ in range(20):
        p = random_parameters(rng).replace(epsilon=rng.uniform(0.05, 2.0))
        x0, y0 = rng.uniform(0, 10), rng.uniform(0, 10)
        tr = integrate(p, (x0, y0), 50.0, 0.01, record_every=5)
        W = tr.x + tr.y / p.delta
        assert W.max() <= max(W[0], bound_constant(p, 1.0).ultimate_bound) + 1e-6


def test_csv_round_trip_and_format():
    tr = integrate(SET_A, (0.5, 0.5), 1.0, 0.25)
    buf = io.StringIO()
    write_trajectory_csv(tr, buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == "t,x,y" and "\r" not in text
    back = read_trajectory_csv(io.StringIO(text))
    assert np.array_equal(back.x, tr.x) and np.array_equal(back.t, tr.t)
