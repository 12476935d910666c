"""Time-optimal control of the food quality or quantity.

Both problems are posed in the transformed time s with dt/ds = D, where the
field becomes polynomial:

    dx/ds = x (1 - x/gamma) D - x y
    dy/ds = delta (x + xi (omega x^2 + 1)) y - D (m y + epsilon y^2)

The control replaces alpha (quality) or xi (quantity) and enters the field
affinely.  The optimal control is found by direct multiple shooting: node
states, piecewise-constant controls and the horizon S are decision
variables, intervals are integrated with RK4 on the state augmented by
physical time.  Seeds from random bang-bang plans are made feasible by a
projected Gauss-Newton restoration, improved by an augmented Lagrangian
around a bounded quasi-Newton inner solver, and finished by active-set SQP.
``refine_solution`` repeats the last stage on a finer RK4 substep grid.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy.optimize import minimize

from .errors import InvalidInputError, NoConvergenceError, VerificationFailedError
from .model import Parameters, State
from .simulate import integrate


class Which(enum.Enum):
    QUALITY = "QualityControl"
    QUANTITY = "QuantityControl"


def _which(w) -> Which:
    if isinstance(w, Which):
        return w
    aliases = {"quality": Which.QUALITY, "alpha": Which.QUALITY, "quantity": Which.QUANTITY, "xi": Which.QUANTITY}
    try:
        return aliases.get(str(w).lower()) or Which(w)
    except ValueError:
        raise InvalidInputError(f"unknown control type {w!r}") from None


class Costate(tuple):
    """Costate pair (p, q)."""

    def __new__(cls, p, q):
        return super().__new__(cls, (float(p), float(q)))

    @property
    def p(self):
        return self[0]

    @property
    def q(self):
        return self[1]


# ---------------------------------------------------------------------------
# field kernel (scalar, compiled; the single source of the field formulas)


@njit(cache=True)
def _field(x, y, u, g, alpha, xi, w, e, d, m, quality):
    """Transformed field, D, and their first partial derivatives.

    Returns (f1, f2, D, f1x, f1y, f1u, f2x, f2y, f2u, Dx, Du).
    """
    if quality:
        alpha = u
    else:
        xi = u
    A = 1.0 + alpha * xi
    q2 = w * x * x + 1.0
    D = A * q2 + x
    Dx = 2.0 * w * x * A + 1.0
    Du = (xi if quality else alpha) * q2
    logistic = x * (1.0 - x / g)
    loss = m * y + e * y * y
    f1 = logistic * D - x * y
    f2 = d * (x + xi * q2) * y - D * loss
    f1x = (1.0 - 2.0 * x / g) * D + logistic * Dx - y
    f1y = -x
    f1u = logistic * Du
    f2x = d * (1.0 + 2.0 * xi * w * x) * y - Dx * loss
    f2y = d * (x + xi * q2) - D * (m + 2.0 * e * y)
    if quality:
        f2u = -Du * loss
    else:
        f2u = d * q2 * y - Du * loss
    return f1, f2, D, f1x, f1y, f1u, f2x, f2y, f2u, Dx, Du


def _kernel(x, y, u, prm, which: Which):
    g, alpha, xi, w, e, d, m = prm
    return _field(float(x), float(y), float(u), g, alpha, xi, w, e, d, m, which is Which.QUALITY)


def _control_vector_jacobian(x, y, prm, which: Which):
    """Partial derivatives of the control direction (f1u, f2u) in (x, y)."""
    g, alpha, xi, w, e, d, m = prm
    q2 = w * x * x + 1.0
    loss = m * y + e * y * y
    if which is Which.QUALITY:
        b1x = xi * ((1.0 - 2.0 * x / g) * q2 + 2.0 * w * x * x * (1.0 - x / g))
        b1y = 0.0 * x
        b2x = -xi * 2.0 * w * x * loss
        b2y = -xi * q2 * (m + 2.0 * e * y)
    else:
        b1x = alpha * ((1.0 - 2.0 * x / g) * q2 + 2.0 * w * x * x * (1.0 - x / g))
        b1y = 0.0 * x
        b2x = 2.0 * w * x * (d * y - alpha * loss)
        b2y = q2 * (d - alpha * (m + 2.0 * e * y))
    return b1x, b1y, b2x, b2y


def transformed_field(p: Parameters, s, u: float, which) -> tuple[float, float]:
    """(dx/ds, dy/ds) with the controlled parameter replaced by ``u``."""
    which = _which(which)
    x, y = float(s[0]), float(s[1])
    if not all(math.isfinite(v) for v in (x, y, u)):
        raise InvalidInputError("state and control must be finite")
    f1, f2, *_ = _kernel(x, y, float(u), p.values(), which)
    return float(f1), float(f2)


def hamiltonian(p: Parameters, s, c, u: float, which, cost_weight: float = 0.0) -> float:
    """cost_weight * D + p dx/ds + q dy/ds.

    ``cost_weight = 0`` is the Hamiltonian of the transformed-time problem;
    ``cost_weight = 1`` adds the running cost D of physical time.
    """
    which = _which(which)
    k = _kernel(float(s[0]), float(s[1]), float(u), p.values(), which)
    return float(cost_weight * k[2] + c[0] * k[0] + c[1] * k[1])


def adjoint_rhs(p: Parameters, s, c, u: float, which, cost_weight: float = 0.0) -> tuple[float, float]:
    """Costate derivatives -dH/dx, -dH/dy."""
    which = _which(which)
    k = _kernel(float(s[0]), float(s[1]), float(u), p.values(), which)
    f1x, f1y, f2x, f2y, Dx = k[3], k[4], k[6], k[7], k[9]
    dp = -(cost_weight * Dx + c[0] * f1x + c[1] * f2x)
    dq = -(c[0] * f1y + c[1] * f2y)
    return float(dp), float(dq)


def switching_function(p: Parameters, s, c, which, cost_weight: float = 0.0) -> float:
    """dH/du; the Hamiltonian is affine in the control, so this does not depend on u.

    Quality:  [p x (1 - x/gamma) - q y (m + epsilon y)] (1 + omega x^2) xi
    Quantity: [alpha p x (1 - x/gamma) + q delta y - alpha q y (m + epsilon y)] (omega x^2 + 1)
    plus cost_weight * dD/du.
    """
    which = _which(which)
    k = _kernel(float(s[0]), float(s[1]), 0.0, p.values(), which)
    return float(cost_weight * k[10] + c[0] * k[5] + c[1] * k[8])


@dataclass(frozen=True)
class SingularRatios:
    ratio_from_S: float
    ratio_from_Sdot: float
    S_degenerate: bool
    Sdot_degenerate: bool


def singular_ratios(p: Parameters, s, u: float, which) -> SingularRatios:
    """Costate ratios p/q making the switching function and its s-derivative vanish.

    The derivative along an extremal is the bracket of the drift and the control
    direction b: dS/ds = (p, q) . (Db f - Df b), which is independent of u
    because the field is affine in the control.  A state is on a candidate
    singular arc when both ratios agree.
    """
    which = _which(which)
    x, y = float(s[0]), float(s[1])
    prm = p.values()
    f1, f2, _, f1x, f1y, f1u, f2x, f2y, f2u, _, _ = _kernel(x, y, float(u), prm, which)
    # S = p f1u + q f2u = 0
    tiny = 1e-12
    s_deg = abs(f1u) < tiny
    r_S = math.inf if s_deg else -f2u / f1u
    b1x, b1y, b2x, b2y = _control_vector_jacobian(x, y, prm, which)
    L1 = b1x * f1 + b1y * f2 - (f1x * f1u + f1y * f2u)
    L2 = b2x * f1 + b2y * f2 - (f2x * f1u + f2y * f2u)
    sd_deg = abs(L1) < tiny
    r_Sd = math.inf if sd_deg else -L2 / L1
    return SingularRatios(float(r_S), float(r_Sd), bool(s_deg), bool(sd_deg))


# ---------------------------------------------------------------------------
# problem and solution containers


MAX_RK4_STEPS = 1280


@dataclass(frozen=True)
class ControlProblem:
    which: Which
    params: Parameters
    u_min: float
    u_max: float
    start: State
    target: State
    n_intervals: int = 40
    rk4_steps_per_interval: int = 80
    # multi-start search runs on this coarser substep grid, then refines
    coarse_steps_per_interval: int = 10
    # "time" minimises physical time T = int D ds; "transformed" minimises S
    objective: str = "time"
    n_starts: int = 5
    defect_tol: float = 1e-8
    endpoint_tol: float = 1e-6
    switch_tol: float = 1e-4
    max_outer: int = 40
    s_max: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "which", _which(self.which))
        object.__setattr__(self, "start", State(float(self.start[0]), float(self.start[1])))
        object.__setattr__(self, "target", State(float(self.target[0]), float(self.target[1])))
        if not self.u_min < self.u_max:
            raise InvalidInputError("control bounds need u_min < u_max")
        if min(self.start) <= 0 or min(self.target) <= 0:
            raise InvalidInputError("start and target must be strictly positive")
        if self.n_intervals < 2 or self.rk4_steps_per_interval < 1 or self.coarse_steps_per_interval < 1:
            raise InvalidInputError("need n_intervals >= 2 and at least one RK4 substep per interval")
        if self.objective not in ("time", "transformed"):
            raise InvalidInputError("objective must be 'time' or 'transformed'")

    @property
    def cost_weight(self) -> float:
        return 1.0 if self.objective == "time" else 0.0


@dataclass(frozen=True)
class ControlSolution:
    s_grid: np.ndarray
    t_grid: np.ndarray
    states: np.ndarray  # (N+1, 2) node states
    controls: np.ndarray  # (N,) piecewise-constant
    total_S: float
    total_T: float
    switching_points: list
    solver_report: dict = field(default_factory=dict)
    costates: np.ndarray | None = None  # (N+1, 2) recovered from the NLP multipliers


# ---------------------------------------------------------------------------
# RK4 shooting with forward-mode derivatives

_STAGE = np.array([0.0, 0.5, 0.5, 1.0])
_WEIGHT = np.array([1.0, 2.0, 2.0, 1.0]) / 6.0


@njit(cache=True)
def _shoot(X0, U, h, M, prm, quality, cw, derivs):
    """Integrate every interval from its own start state.

    X0 (N, 2) start states, U (N,) controls, h the RK4 step.  The state is
    augmented with the running cost cw * D + (1 - cw).  Returns the end states
    (N, 3) and the tangent (N, 3, 4) with respect to (x0, y0, u, h), which is
    left at zero unless ``derivs``.
    """
    g, alpha, xi, w, e, d, m = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5], prm[6]
    N = X0.shape[0]
    Z = np.empty((N, 3))
    T = np.zeros((N, 3, 4))
    k = np.empty((4, 3))
    dk = np.zeros((4, 3, 4))
    zs = np.empty(3)
    dzs = np.zeros((3, 4))
    for n in range(N):
        u = U[n]
        z = np.array([X0[n, 0], X0[n, 1], 0.0])
        dz = np.zeros((3, 4))
        dz[0, 0] = 1.0
        dz[1, 1] = 1.0
        for _ in range(M):
            for st in range(4):
                c = _STAGE[st]
                for r in range(3):
                    if st == 0:
                        zs[r] = z[r]
                    else:
                        zs[r] = z[r] + c * h * k[st - 1, r]
                    if derivs:
                        for col in range(4):
                            if st == 0:
                                dzs[r, col] = dz[r, col]
                            else:
                                dzs[r, col] = dz[r, col] + c * h * dk[st - 1, r, col]
                        if st > 0:
                            dzs[r, 3] += c * k[st - 1, r]
                f1, f2, D, f1x, f1y, f1u, f2x, f2y, f2u, Dx, Du = _field(
                    zs[0], zs[1], u, g, alpha, xi, w, e, d, m, quality
                )
                k[st, 0] = f1
                k[st, 1] = f2
                k[st, 2] = cw * D + (1.0 - cw)
                if derivs:
                    for col in range(4):
                        a0 = dzs[0, col]
                        a1 = dzs[1, col]
                        du = 1.0 if col == 2 else 0.0
                        dk[st, 0, col] = f1x * a0 + f1y * a1 + f1u * du
                        dk[st, 1, col] = f2x * a0 + f2y * a1 + f2u * du
                        dk[st, 2, col] = cw * (Dx * a0 + Du * du)
            for r in range(3):
                inc = 0.0
                for st in range(4):
                    inc += _WEIGHT[st] * k[st, r]
                z[r] += h * inc
                if derivs:
                    for col in range(4):
                        dinc = 0.0
                        for st in range(4):
                            dinc += _WEIGHT[st] * dk[st, r, col]
                        dz[r, col] += h * dinc
                    dz[r, 3] += inc
        Z[n] = z
        T[n] = dz
    return Z, T


@njit(cache=True)
def _rollout(x0, U, h, M, prm, quality, cw):
    """Chain the intervals from x0; node states (N+1, 2) and cumulative cost."""
    N = U.shape[0]
    X = np.empty((N + 1, 2))
    cost = np.zeros(N + 1)
    X[0, 0] = x0[0]
    X[0, 1] = x0[1]
    start = np.empty((1, 2))
    u = np.empty(1)
    for n in range(N):
        start[0, 0] = X[n, 0]
        start[0, 1] = X[n, 1]
        u[0] = U[n]
        Z, _ = _shoot(start, u, h, M, prm, quality, cw, False)
        X[n + 1, 0] = Z[0, 0]
        X[n + 1, 1] = Z[0, 1]
        cost[n + 1] = cost[n] + Z[0, 2]
    return X, cost


def _prm(prob):
    return np.array(prob.params.values(), dtype=float)


def _simulate_nodes(prob: ControlProblem, U, S):
    """Forward shooting from the start; node states (N+1, 2) and physical time."""
    N, M = prob.n_intervals, prob.rk4_steps_per_interval
    U = np.ascontiguousarray(U, dtype=float)
    return _rollout(np.array(prob.start, dtype=float), U, S / (N * M), M, _prm(prob),
                    prob.which is Which.QUALITY, 1.0)


def _fine_states(prob: ControlProblem, U, S, substeps: int):
    """States on a uniform grid with ``substeps`` RK4 steps per interval."""
    N = prob.n_intervals
    Uf = np.repeat(np.asarray(U, dtype=float), substeps)
    X, _ = _rollout(np.array(prob.start, dtype=float), Uf, S / (N * substeps), 1, _prm(prob),
                    prob.which is Which.QUALITY, 1.0)
    return X


class _NLP:
    """Multiple-shooting transcription, z = [X_1 .. X_N, U_1 .. U_N, S]."""

    def __init__(self, prob: ControlProblem):
        self.prob = prob
        self.N = prob.n_intervals
        self.M = prob.rk4_steps_per_interval
        self.prm = _prm(prob)
        self.quality = prob.which is Which.QUALITY
        self.cw = prob.cost_weight
        self.start = np.array(prob.start, dtype=float)
        self.target = np.array(prob.target, dtype=float)
        self.n = 3 * self.N + 1
        self.lower = np.concatenate([np.zeros(2 * self.N), np.full(self.N, prob.u_min), [1e-8]])
        self.upper = np.concatenate([np.full(2 * self.N, np.inf), np.full(self.N, prob.u_max), [prob.s_max]])
        self._cache = (None, None)

    def unpack(self, z):
        N = self.N
        return z[: 2 * N].reshape(N, 2), z[2 * N: 3 * N], z[-1]

    def pack(self, X, U, S):
        return np.concatenate([np.asarray(X, dtype=float).ravel(), U, [S]])

    def _run(self, z, derivs=True):
        key, val = self._cache
        if key is not None and derivs <= val[2] and np.array_equal(key, z):
            return val
        N, M = self.N, self.M
        X, U, S = self.unpack(z)
        X0 = np.vstack([self.start, X[:-1]])
        Z, T = _shoot(X0, np.ascontiguousarray(U), S / (N * M), M, self.prm, self.quality, self.cw, derivs)
        val = (Z, T, derivs)
        self._cache = (z.copy(), val)
        return val

    def evaluate(self, z, derivs=True):
        """Objective, defects (2N,), endpoint error (2,) and the interval tangents."""
        X, _, _ = self.unpack(z)
        Z, T, _ = self._run(z, derivs)
        defects = (Z[:, :2] - X).ravel()
        endpoint = X[-1] - self.target
        return float(np.sum(Z[:, 2])), defects, endpoint, T

    def _pullback(self, T, rc, re, wcost):
        """Gradient of wcost * cost + rc . defects + re . endpoint."""
        N, M = self.N, self.M
        w = np.column_stack([rc.reshape(N, 2), np.full(N, wcost)])
        gx = np.einsum("ni,nij->nj", w, T)
        gX = -rc.reshape(N, 2).copy()
        gX[:-1] += gx[1:, :2]
        gX[-1] += re
        return np.concatenate([gX.ravel(), gx[:, 2], [np.sum(gx[:, 3]) / (N * M)]])

    def al_value_grad(self, z, lam, nu, mu):
        cost, c, e, T = self.evaluate(z)
        rc = -lam + mu * c
        re = -nu + mu * e
        val = cost - lam @ c - nu @ e + 0.5 * mu * (c @ c + e @ e)
        return val, self._pullback(T, rc, re, 1.0)

    def residual(self, z):
        _, c, e, _ = self.evaluate(z, derivs=False)
        return np.concatenate([c, e])

    def jacobian(self, z):
        """Dense Jacobian of [defects, endpoint] with respect to z."""
        N, M = self.N, self.M
        _, _, _, T = self.evaluate(z)
        J = np.zeros((2 * N + 2, self.n))
        rows = np.arange(2 * N).reshape(N, 2)
        for k in range(N):
            r = rows[k]
            if k > 0:
                J[r[0]: r[1] + 1, 2 * (k - 1): 2 * k] = T[k, :2, :2]
            J[r, 2 * k + np.arange(2)] = -1.0
            J[r, 2 * N + k] = T[k, :2, 2]
            J[r, -1] = T[k, :2, 3] / (N * M)
        J[2 * N, 2 * N - 2] = 1.0
        J[2 * N + 1, 2 * N - 1] = 1.0
        return J

    def cost_gradient(self, z):
        _, _, _, T = self.evaluate(z)
        return self._pullback(T, np.zeros(2 * self.N), np.zeros(2), 1.0)

    def violation(self, z):
        return float(np.max(np.abs(self.residual(z))))

    def bounds(self):
        return list(zip(self.lower, np.where(np.isfinite(self.upper), self.upper, None)))


# ---------------------------------------------------------------------------
# solver phases


@njit(cache=True)
def _closest_approach(x0, switches, levels, h, n_steps, target, prm, quality):
    """Follow a bang-bang plan with RK4 and return (distance, s) of its closest approach."""
    g, alpha, xi, w, e, d, m = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5], prm[6]
    x, y = x0[0], x0[1]
    best = math.hypot(x - target[0], y - target[1])
    s_best = 0.0
    phase = 0
    for i in range(n_steps):
        s = i * h
        while phase < switches.shape[0] and s >= switches[phase]:
            phase += 1
        u = levels[phase]
        k1 = _field(x, y, u, g, alpha, xi, w, e, d, m, quality)
        k2 = _field(x + 0.5 * h * k1[0], y + 0.5 * h * k1[1], u, g, alpha, xi, w, e, d, m, quality)
        k3 = _field(x + 0.5 * h * k2[0], y + 0.5 * h * k2[1], u, g, alpha, xi, w, e, d, m, quality)
        k4 = _field(x + h * k3[0], y + h * k3[1], u, g, alpha, xi, w, e, d, m, quality)
        x += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        y += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        if not (x > 0.0 and y > 0.0 and x < 1e6 and y < 1e6):
            break
        dist = math.hypot(x - target[0], y - target[1])
        if dist < best:
            best = dist
            s_best = s + h
    return best, s_best


def bang_bang_closest_approach(prob: ControlProblem, switch_times, levels, s_end: float, step: float = 0.01):
    """Closest approach to the target under a bang-bang plan in transformed time.

    Parameters
    ----------
    prob : ControlProblem
        Supplies the model, start and target.
    switch_times : array_like
        Increasing switch times in s; ``len(levels) == len(switch_times) + 1``.
    levels : array_like
        Control value on each arc.
    s_end : float
        Length of the plan in s.
    step : float
        RK4 step in s.

    Returns
    -------
    (float, float)
        Smallest Euclidean distance to the target and the s at which it occurs.
    """
    switches = np.asarray(switch_times, dtype=float)
    levels = np.asarray(levels, dtype=float)
    if levels.shape != (switches.size + 1,):
        raise InvalidInputError("need exactly one more level than switch times")
    if not (step > 0 and s_end > 0):
        raise InvalidInputError("step and s_end must be positive")
    n_steps = int(math.ceil(s_end / step))
    d, s_hit = _closest_approach(np.array(prob.start, dtype=float), switches, levels, float(step), n_steps,
                                 np.array(prob.target, dtype=float), _prm(prob), prob.which is Which.QUALITY)
    return float(d), float(s_hit)


def _interval_average(switches, levels, S, N):
    """Mean of a piecewise-constant plan over each of N equal intervals of [0, S]."""
    edges = np.concatenate([[0.0], np.clip(switches, 0.0, S), [S]])
    grid = np.linspace(0.0, S, N + 1)
    U = np.zeros(N)
    for j in range(len(levels)):
        lo = np.clip(edges[j], grid[:-1], grid[1:])
        hi = np.clip(edges[j + 1], grid[:-1], grid[1:])
        U += levels[j] * (hi - lo)
    return U / (S / N)


def _seed_bank(prob: ControlProblem, nlp: _NLP, n_keep: int, n_plans: int = 2000):
    """Deterministic starting points.

    The first interpolates states linearly with mid-bound controls and a
    horizon from the uncontrolled drift speed.  The rest come from random
    bang-bang plans (0 to 4 switches) followed up to ``s_max``; each plan is
    cut at its closest approach to the target, averaged onto the shooting
    intervals, and the plans ending nearest the target are kept.
    """
    N = prob.n_intervals
    lo, hi = prob.u_min, prob.u_max
    mid = 0.5 * (lo + hi)
    start, target = nlp.start, nlp.target
    f = np.array(transformed_field(prob.params, start, mid, prob.which))
    dist = float(np.linalg.norm(target - start))
    S0 = min(prob.s_max, max(1e-3, dist / max(np.linalg.norm(f), 1e-9)))
    seeds = [nlp.pack(np.linspace(start, target, N + 1)[1:], np.full(N, mid), S0)]

    rng = np.random.default_rng(20240601)
    h = min(0.01, S0 / 50.0)
    n_steps = int(math.ceil(prob.s_max / h))
    scored = []
    for j in range(n_plans):
        n_sw = j % 5
        reach = prob.s_max * rng.uniform(0.02, 1.0)
        switches = np.sort(rng.uniform(0.0, reach, size=n_sw))
        first = (j // 5) % 2
        levels = np.array([hi if (first + i) % 2 else lo for i in range(n_sw + 1)])
        d, s_hit = _closest_approach(start, switches, levels, h, n_steps, target, nlp.prm, nlp.quality)
        if s_hit > 0.0:
            scored.append((d, s_hit, switches, levels))
    scored.sort(key=lambda t: t[0])
    for d, s_hit, switches, levels in scored[:n_keep]:
        U = _interval_average(switches, levels, s_hit, N)
        with np.errstate(all="ignore"):
            X, _ = _simulate_nodes(prob, U, s_hit)
        if np.all(np.isfinite(X)):
            seeds.append(nlp.pack(np.maximum(X[1:], 0.0), U, s_hit))
    return seeds


def _restore(nlp: _NLP, z, max_iter: int = 60, tol: float = 1e-12):
    """Projected minimum-norm Gauss-Newton on the defect and endpoint residuals.

    Variables sitting on a bound whose step points outward are frozen and the
    step is recomputed; a backtracking search on the residual norm keeps the
    iteration monotone.
    """
    lo, hi = nlp.lower, nlp.upper
    z = np.clip(z, lo, hi)
    with np.errstate(all="ignore"):
        F = nlp.residual(z)
        if not np.all(np.isfinite(F)):
            return z, math.inf
        norm = float(np.linalg.norm(F))
        for _ in range(max_iter):
            if np.max(np.abs(F)) < tol:
                break
            J = nlp.jacobian(z)
            free = np.ones(nlp.n, dtype=bool)
            for _ in range(3):
                step = np.zeros(nlp.n)
                step[free] = np.linalg.lstsq(J[:, free], -F, rcond=None)[0]
                out = free & (((z <= lo) & (step < 0)) | ((z >= hi) & (step > 0)))
                if not out.any():
                    break
                free &= ~out
            a = 1.0
            while a > 1e-6:
                zn = np.clip(z + a * step, lo, hi)
                Fn = nlp.residual(zn)
                nn = float(np.linalg.norm(Fn))
                if np.isfinite(nn) and nn < (1.0 - 1e-4 * a) * norm:
                    break
                a *= 0.5
            else:
                break
            z, F, norm = zn, Fn, nn
    return z, float(np.max(np.abs(F)))


def _kkt_multipliers(nlp: _NLP, z):
    """Least-squares multipliers of grad cost = J^T [lam; nu] on the free variables."""
    J = nlp.jacobian(z)
    g = nlp.cost_gradient(z)
    span = nlp.prob.u_max - nlp.prob.u_min
    free = np.ones(nlp.n, dtype=bool)
    U = z[2 * nlp.N: 3 * nlp.N]
    free[2 * nlp.N: 3 * nlp.N] = (U > nlp.prob.u_min + 1e-7 * span) & (U < nlp.prob.u_max - 1e-7 * span)
    mult = np.linalg.lstsq(J[:, free].T, g[free], rcond=None)[0]
    return mult[:-2], mult[-2:]


def _augmented_lagrangian(nlp: _NLP, z0, max_outer: int, tol: float):
    """Minimise the objective subject to defects = endpoint = 0.

    Multipliers are only updated once the violation has fallen below a
    shrinking threshold; otherwise the penalty grows.  The run stops early
    when the inner solver stalls at the penalty cap.
    """
    lam = np.zeros(2 * nlp.N)
    nu = np.zeros(2)
    mu, eta = 10.0, 1e-3
    z = z0.copy()
    bounds = nlp.bounds()
    iters = 0
    prev_cost = math.inf
    for outer in range(max_outer):
        res = minimize(
            nlp.al_value_grad, z, args=(lam, nu, mu), jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": 1000, "ftol": 1e-15, "gtol": 1e-11, "maxcor": 30},
        )
        if not np.all(np.isfinite(res.x)):
            break
        z = res.x
        iters += int(res.nit)
        cost, c, e, _ = nlp.evaluate(z, derivs=False)
        viol = max(np.max(np.abs(c)), np.max(np.abs(e)))
        if viol <= eta:
            lam = lam - mu * c
            nu = nu - mu * e
            if viol < tol and abs(cost - prev_cost) <= 1e-9 * max(1.0, abs(cost)):
                return z, iters, outer + 1
            eta = max(0.1 * eta, 0.1 * tol)
            prev_cost = cost
        elif mu >= 1e9:
            break
        else:
            mu *= 10.0
    return z, iters, max_outer


def _lagrangian_hessian(nlp: _NLP, z, mult):
    """Central differences of the analytic Lagrangian gradient."""
    lam, nu = -mult[:-2], -mult[-2:]

    def grad(v):
        _, _, _, T = nlp.evaluate(v)
        return nlp._pullback(T, lam, nu, 1.0)

    H = np.empty((nlp.n, nlp.n))
    for j in range(nlp.n):
        step = 1e-6 * max(1.0, abs(z[j]))
        e = np.zeros(nlp.n)
        e[j] = step
        H[:, j] = (grad(z + e) - grad(z - e)) / (2.0 * step)
    return 0.5 * (H + H.T)


def _sqp_refine(nlp: _NLP, z, max_iter: int = 200, tol: float = 1e-9):
    """Active-set SQP with an exact Hessian, started from a feasible point.

    Controls on a bound form the working set.  Each step solves the
    equality-constrained QP on the free variables by the null-space method
    (reduced Hessian made positive definite by flipping and flooring its
    eigenvalues), is cut at the first control bound it crosses, and is
    accepted by an l1-merit line search with a restoration-based second
    order correction.  A working-set control whose multiplier has the wrong
    sign is released once the free-variable stationarity is below its size.

    Returns the refined point and the number of iterations.
    """
    N, lo, hi = nlp.N, nlp.lower, nlp.upper
    span = nlp.prob.u_max - nlp.prob.u_min
    is_u = np.zeros(nlp.n, dtype=bool)
    is_u[2 * N: 3 * N] = True
    btol = 1e-12 * span
    z = z.copy()
    active = is_u & ((z <= lo + btol) | (z >= hi - btol))
    z[active] = np.where(z[active] <= lo[active] + btol, lo[active], hi[active])
    rho = 1.0
    it = 0
    for it in range(max_iter):
        F = nlp.residual(z)
        cost = nlp.evaluate(z, derivs=False)[0]
        g = nlp.cost_gradient(z)
        J = nlp.jacobian(z)
        free = ~active
        mult = np.linalg.lstsq(J[:, free].T, g[free], rcond=None)[0]
        gl = g - J.T @ mult
        kkt = float(np.max(np.abs(gl[free])))
        wrong = active & (((z <= lo + btol) & (gl < 0)) | ((z >= hi - btol) & (gl > 0)))
        wrong_size = np.where(wrong, np.abs(gl), 0.0)
        if kkt < tol and np.max(np.abs(F)) < 1e-12 and wrong_size.max() < tol:
            break
        if wrong_size.max() > max(tol, kkt):
            active[int(np.argmax(wrong_size))] = False
            free = ~active
            mult = np.linalg.lstsq(J[:, free].T, g[free], rcond=None)[0]

        H = _lagrangian_hessian(nlp, z, mult)
        Jf, Hf, gf = J[:, free], H[np.ix_(free, free)], g[free]
        Us, s, Vt = np.linalg.svd(Jf)
        r = int(np.sum(s > 1e-12 * s[0]))
        Z = Vt[r:].T
        d_range = -Vt[:r].T @ ((Us[:, :r].T @ F) / s[:r])
        if Z.shape[1]:
            w, V = np.linalg.eigh(Z.T @ Hf @ Z)
            w = np.maximum(np.abs(w), 1e-8 * max(1.0, float(np.max(np.abs(w)))))
            d_null = -Z @ (V @ ((V.T @ (Z.T @ (gf + Hf @ d_range))) / w))
        else:
            d_null = 0.0
        d = np.zeros(nlp.n)
        d[free] = d_range + d_null

        rho = max(rho, 2.0 * float(np.max(np.abs(mult))))
        l1 = float(np.sum(np.abs(F)))
        phi0 = cost + rho * l1
        slope = min(float(g @ d) - rho * l1, 0.0)

        def merit(v):
            return nlp.evaluate(v, derivs=False)[0] + rho * float(np.sum(np.abs(nlp.residual(v))))

        # stop at the first control bound crossed along d
        a_max, hit = 1.0, -1
        for j in np.flatnonzero(free & is_u):
            if d[j] < 0 and z[j] + d[j] < lo[j]:
                frac = (lo[j] - z[j]) / d[j]
            elif d[j] > 0 and z[j] + d[j] > hi[j]:
                frac = (hi[j] - z[j]) / d[j]
            else:
                continue
            if frac < a_max:
                a_max, hit = frac, j
        if hit >= 0 and a_max < 1e-8:
            z[hit] = lo[hit] if d[hit] < 0 else hi[hit]
            active[hit] = True
            continue

        a = a_max
        accepted = None
        with np.errstate(all="ignore"):
            while a > 1e-10:
                trial = np.clip(z + a * d, lo, hi)
                if hit >= 0 and a == a_max:
                    trial[hit] = lo[hit] if d[hit] < 0 else hi[hit]
                if merit(trial) <= phi0 + 1e-4 * a * slope:
                    accepted = trial
                    break
                if a == a_max:
                    corrected, _ = _restore(nlp, trial, max_iter=3)
                    if merit(corrected) <= phi0 + 1e-4 * a * slope:
                        accepted = corrected
                        break
                a *= 0.5
        if accepted is None:
            break
        if hit >= 0 and a == a_max:
            active[hit] = True
        z = accepted
    return z, it


def _switching_points(s_grid, U, prob):
    span = prob.u_max - prob.u_min
    pts = []
    for k in range(1, len(U)):
        if abs(U[k] - U[k - 1]) > 1e-3 * span:
            pts.append(float(s_grid[k]))
    return pts


def _trivial_solution(prob: ControlProblem) -> ControlSolution:
    N = prob.n_intervals
    states = np.tile(np.array(prob.start), (N + 1, 1))
    return ControlSolution(
        np.zeros(N + 1), np.zeros(N + 1), states, np.full(N, prob.u_min), 0.0, 0.0, [],
        {"iterations": 0, "constraint_violation": 0.0, "endpoint_error": 0.0, "objective": 0.0,
         "converged": True, "seed": None},
        np.zeros((N + 1, 2)),
    )


def _distinct(cands, n, rtol=1e-3):
    out = []
    for obj, z in cands:
        if all(np.max(np.abs(z - w)) > rtol * max(1.0, np.max(np.abs(w))) for _, w in out):
            out.append((obj, z))
        if len(out) == n:
            break
    return out


def solve_time_optimal(prob: ControlProblem, initial: ControlSolution | None = None) -> ControlSolution:
    """Minimum-time steering from ``prob.start`` to ``prob.target``.

    A feasibility phase drives every seed onto the constraint manifold; the
    ``n_starts`` best distinct feasible points then seed the augmented
    Lagrangian, and the lowest-objective result is restored to exact
    consistency.  Costates at the nodes come from the multipliers of the
    final point.

    Raises
    ------
    NoConvergenceError
        No seed satisfied the defect and endpoint constraints; ``best`` holds
        the smallest constraint violation found.

    Notes
    -----
    The search runs with ``coarse_steps_per_interval`` RK4 substeps and the
    winner is refined to ``rk4_steps_per_interval`` with ``refine_solution``.
    The substep count then keeps doubling (up to ``MAX_RK4_STEPS``) while
    doubling it would move the endpoint by more than ``0.3 * endpoint_tol``.
    The count actually used is in ``solver_report["rk4_steps_per_interval"]``.
    """
    if np.allclose(prob.start, prob.target, rtol=0.0, atol=1e-14):
        return _trivial_solution(prob)
    if prob.coarse_steps_per_interval >= prob.rk4_steps_per_interval:
        return _search(prob, initial)
    coarse = replace(prob, rk4_steps_per_interval=prob.coarse_steps_per_interval)
    sol = _search(coarse, initial)
    fine_prob, fine = refine_solution(coarse, sol, prob.rk4_steps_per_interval)
    iters = sol.solver_report["iterations"] + fine.solver_report["iterations"]
    # keep doubling while the endpoint still moves under a halved substep
    while fine_prob.rk4_steps_per_interval < MAX_RK4_STEPS and _substep_gap(fine_prob, fine) > 0.3 * prob.endpoint_tol:
        fine_prob, fine = refine_solution(fine_prob, fine, 2 * fine_prob.rk4_steps_per_interval)
        iters += fine.solver_report["iterations"]
    report = dict(sol.solver_report)
    report.update(fine.solver_report, iterations=iters, rk4_steps_per_interval=fine_prob.rk4_steps_per_interval)
    fine.solver_report.clear()
    fine.solver_report.update(report)
    return fine


def _substep_gap(prob: ControlProblem, sol: ControlSolution) -> float:
    """Endpoint change when the solution's controls are re-shot with twice the substeps."""
    X, _ = _simulate_nodes(replace(prob, rk4_steps_per_interval=2 * prob.rk4_steps_per_interval), sol.controls, sol.total_S)
    return float(np.max(np.abs(X[-1] - sol.states[-1])))


def _search(prob: ControlProblem, initial: ControlSolution | None) -> ControlSolution:
    """Multi-start solve on the problem's own substep grid."""
    nlp = _NLP(prob)
    seeds = _seed_bank(prob, nlp, n_keep=3 * prob.n_starts)
    if initial is not None and len(initial.controls) == prob.n_intervals and initial.total_S > 0:
        U0 = np.clip(initial.controls, prob.u_min, prob.u_max)
        X0, _ = _simulate_nodes(prob, U0, initial.total_S)
        seeds.insert(0, nlp.pack(np.maximum(X0[1:], 0.0), U0, min(initial.total_S, prob.s_max)))

    feasible, best_viol = [], math.inf
    for z0 in seeds:
        z, viol = _restore(nlp, z0)
        best_viol = min(best_viol, viol)
        if viol < 0.1 * prob.defect_tol:
            feasible.append((nlp.evaluate(z, derivs=False)[0], z))
    if not feasible:
        raise NoConvergenceError(
            f"target not reached: smallest constraint violation {best_viol:.3e}", best=best_viol
        )
    feasible.sort(key=lambda t: t[0])
    starts = _distinct(feasible, prob.n_starts)

    best = None
    total_iters = 0
    tol = 0.1 * prob.defect_tol
    for i, (cost0, z0) in enumerate(starts):
        with np.errstate(all="ignore"):
            z, iters, _ = _augmented_lagrangian(nlp, z0, prob.max_outer, tol)
        total_iters += iters
        z, viol = _restore(nlp, z)
        if viol >= tol or nlp.evaluate(z, derivs=False)[0] > cost0:
            z = z0
        z, iters = _sqp_refine(nlp, z)
        total_iters += iters
        z, viol = _restore(nlp, z, max_iter=5)
        obj = nlp.evaluate(z, derivs=False)[0]
        if viol < tol and (best is None or obj < best[0]):
            best = (obj, i, z, viol)
    if best is None:
        raise NoConvergenceError("optimisation lost feasibility from every start", best=best_viol)

    objective, seed, z, viol = best
    return _package(prob, nlp, z, viol, objective, total_iters, seed=seed, feasible_seeds=len(feasible))


def _package(prob, nlp, z, viol, objective, total_iters, **extra) -> ControlSolution:
    """Endpoint check, costates from KKT multipliers and the solution container."""
    _, U, S = nlp.unpack(z)
    X, time = _simulate_nodes(prob, U, S)
    err = float(np.max(np.abs(X[-1] - nlp.target)))
    if err >= prob.endpoint_tol:
        raise NoConvergenceError(f"target not reached: endpoint error {err:.3e}", best=err)
    lam, nu = _kkt_multipliers(nlp, z)
    N = prob.n_intervals
    s_grid = np.linspace(0.0, S, N + 1)
    costates = np.zeros((N + 1, 2))
    costates[1:] = -lam.reshape(N, 2)
    # the first node is not a decision variable: integrate the adjoint back over interval one
    costates[0] = _costate_step_back(prob, X[0], U[0], S / N, costates[1])
    report = {
        "iterations": total_iters,
        "constraint_violation": viol,
        "endpoint_error": err,
        "objective": objective,
        "converged": True,
        "terminal_multiplier": (-nu).tolist(),
        **extra,
    }
    return ControlSolution(
        s_grid, time, X, U.copy(), float(S), float(time[-1]), _switching_points(s_grid, U, prob), report, costates
    )


def refine_solution(prob: ControlProblem, sol: ControlSolution, rk4_steps_per_interval: int) -> tuple[ControlProblem, ControlSolution]:
    """Re-solve on a finer RK4 substep grid, warm-started from ``sol``.

    The shooting intervals stay the same; only the integration inside each
    interval is refined, which shrinks the O(h^4) gap between the discrete
    endpoint and the exact flow.  Only restoration and SQP refinement run, so
    this costs a small fraction of a cold solve.

    Returns
    -------
    (ControlProblem, ControlSolution)
        The refined problem and its solution.

    Raises
    ------
    NoConvergenceError
        Restoration could not make the warm start feasible on the finer grid.
    """
    fine = replace(prob, rk4_steps_per_interval=int(rk4_steps_per_interval))
    if sol.total_S <= 0:
        return fine, _trivial_solution(fine)
    nlp = _NLP(fine)
    U0 = np.clip(sol.controls, fine.u_min, fine.u_max)
    X0, _ = _simulate_nodes(fine, U0, sol.total_S)
    z, viol = _restore(nlp, nlp.pack(np.maximum(X0[1:], 0.0), U0, sol.total_S))
    tol = 0.1 * fine.defect_tol
    if viol >= tol:
        raise NoConvergenceError(f"refinement lost feasibility: violation {viol:.3e}", best=viol)
    with np.errstate(all="ignore"):
        z, iters = _sqp_refine(nlp, z)
    z, viol = _restore(nlp, z, max_iter=5)
    if viol >= tol:
        raise NoConvergenceError(f"refinement lost feasibility: violation {viol:.3e}", best=viol)
    objective = nlp.evaluate(z, derivs=False)[0]
    return fine, _package(fine, nlp, z, viol, objective, iters, refined_from=prob.rk4_steps_per_interval)


# ---------------------------------------------------------------------------
# PMP verification


def _costate_step_back(prob, x_start, u, ds, c_end, substeps=None):
    M = substeps or prob.rk4_steps_per_interval
    h = ds / (2 * M)
    fine, _ = _rollout(np.asarray(x_start, dtype=float), np.full(2 * M, float(u)), h, 1, _prm(prob),
                       prob.which is Which.QUALITY, 1.0)
    c = np.array(c_end, dtype=float)
    H = 2.0 * h
    for j in range(M, 0, -1):
        c = _adjoint_rk4_back(prob, fine[2 * j], fine[2 * j - 1], fine[2 * j - 2], c, u, H)
    return c


def _adjoint_rk4_back(prob, s_hi, s_mid, s_lo, c, u, H):
    cw = prob.cost_weight

    def f(s, cc):
        return -np.array(adjoint_rhs(prob.params, s, cc, u, prob.which, cw))

    # integrate dc/d(-s) = -adjoint_rhs from s_hi down to s_lo
    k1 = f(s_hi, c)
    k2 = f(s_mid, c + 0.5 * H * k1)
    k3 = f(s_mid, c + 0.5 * H * k2)
    k4 = f(s_lo, c + H * k3)
    return c + H / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass(frozen=True)
class PMPReport:
    fraction_consistent: float
    violations: list  # interval indices
    node_switching: np.ndarray  # normalised switching function at the nodes
    costates: np.ndarray  # integrated costate at the nodes
    hamiltonian: np.ndarray  # Hamiltonian at the nodes (constant along extremals)


def terminal_costate_from_hamiltonian(prob: ControlProblem, state, u) -> np.ndarray:
    """Minimum-norm terminal costate with vanishing Hamiltonian.

    Free final time makes H = 0 along an extremal; the remaining degree of
    freedom is fixed by taking the smallest costate satisfying it.
    """
    k = _kernel(float(state[0]), float(state[1]), float(u), prob.params.values(), prob.which)
    f = np.array([k[0], k[1]])
    run = prob.cost_weight * k[2] + (1.0 - prob.cost_weight)
    return -run * f / float(f @ f)


def verify_pmp(prob: ControlProblem, sol: ControlSolution, terminal_costate=None, substeps: int | None = None) -> PMPReport:
    """Check the bang-bang law along a solution.

    The state is re-simulated with the solution's controls, the adjoint
    equations are integrated backward from the terminal costate (default: the
    multiplier-based costate stored on the solution, else the minimum-norm
    costate with H = 0), and each interval is tested: u = u_max where the
    normalised switching function is below -tol, u = u_min where it is above
    tol; intervals where it is within tol or changes sign are accepted.

    Raises
    ------
    VerificationFailedError
        Adjoint integration produced non-finite values.
    """
    N = prob.n_intervals
    M = substeps or prob.rk4_steps_per_interval
    U = np.asarray(sol.controls, dtype=float)
    S = float(sol.total_S)
    if S <= 0:
        return PMPReport(1.0, [], np.zeros(N + 1), np.zeros((N + 1, 2)), np.zeros(N + 1))
    fine = _fine_states(prob, U, S, 2 * M)
    if terminal_costate is None:
        if sol.costates is not None:
            terminal_costate = sol.costates[-1]
        else:
            terminal_costate = terminal_costate_from_hamiltonian(prob, fine[-1], U[-1])
    c = np.array(terminal_costate, dtype=float)
    H = S / (N * M)
    cw = prob.cost_weight
    # costate on the fine grid (every M-th fine point is an RK4 node)
    costs = np.zeros((N * M + 1, 2))
    costs[-1] = c
    for j in range(N * M, 0, -1):
        k = (j - 1) // M
        c = _adjoint_rk4_back(prob, fine[2 * j], fine[2 * j - 1], fine[2 * j - 2], c, U[k], H)
        if not np.all(np.isfinite(c)):
            raise VerificationFailedError(f"adjoint integration blew up at s = {j * H:.6g}")
        costs[j - 1] = c
    states = fine[::2]
    sw = np.array([
        switching_function(prob.params, states[j], costs[j], prob.which, cw) for j in range(N * M + 1)
    ])
    scale = max(float(np.max(np.abs(sw))), 1e-300)
    swn = sw / scale
    span = prob.u_max - prob.u_min
    tol = prob.switch_tol
    violations = []
    for k in range(N):
        seg = swn[k * M: (k + 1) * M + 1]
        if np.min(seg) < -tol and np.max(seg) > tol:
            continue
        mid = seg[len(seg) // 2]
        if abs(mid) <= tol or np.min(np.abs(seg)) <= tol:
            continue
        if mid < 0 and abs(U[k] - prob.u_max) <= 1e-6 * span:
            continue
        if mid > 0 and abs(U[k] - prob.u_min) <= 1e-6 * span:
            continue
        violations.append(k)
    nodes = costs[::M]
    ham = np.array([
        hamiltonian(prob.params, states[j * M], nodes[j], U[min(j, N - 1)], prob.which, cw) for j in range(N + 1)
    ])
    return PMPReport(1.0 - len(violations) / N, violations, swn[::M], nodes, ham)


def solution_from_controls(prob: ControlProblem, controls, total_S: float) -> ControlSolution:
    """Wrap an arbitrary control schedule as a (generally non-optimal) solution."""
    U = np.asarray(controls, dtype=float)
    X, time = _simulate_nodes(prob, U, total_S)
    s_grid = np.linspace(0.0, total_S, prob.n_intervals + 1)
    err = float(np.max(np.abs(X[-1] - np.array(prob.target))))
    return ControlSolution(
        s_grid, time, X, U, float(total_S), float(time[-1]), _switching_points(s_grid, U, prob),
        {"endpoint_error": err, "converged": False}, None,
    )


def resimulate(prob: ControlProblem, sol: ControlSolution, steps_per_interval: int = 200) -> np.ndarray:
    """Endpoint of the original (physical-time) model driven by the solution's controls.

    Each control interval lasts t_grid[k+1] - t_grid[k] in physical time and is
    integrated with fixed-step RK4 at the controlled parameter value.
    """
    name = "alpha" if prob.which is Which.QUALITY else "xi"
    state = np.array(prob.start, dtype=float)
    for k, u in enumerate(sol.controls):
        span = float(sol.t_grid[k + 1] - sol.t_grid[k])
        if span <= 0:
            continue
        tr = integrate(prob.params.replace(**{name: float(u)}), state, span, span / steps_per_interval,
                       record_every=steps_per_interval)
        state = np.array(tr.final, dtype=float)
    return state


def solution_rows(prob: ControlProblem, sol: ControlSolution):
    """Rows (s, t, x, y, u, p, q, switching_function) at the shooting nodes."""
    cw = prob.cost_weight
    N = len(sol.controls)
    cost = sol.costates if sol.costates is not None else np.zeros((N + 1, 2))
    for j in range(N + 1):
        u = sol.controls[min(j, N - 1)]
        sw = switching_function(prob.params, sol.states[j], cost[j], prob.which, cw)
        yield (float(sol.s_grid[j]), float(sol.t_grid[j]), float(sol.states[j, 0]), float(sol.states[j, 1]),
               float(u), float(cost[j, 0]), float(cost[j, 1]), float(sw))
