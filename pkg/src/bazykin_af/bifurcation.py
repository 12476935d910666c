"""Critical parameter values, Sotomayor checks, Hopf search, region atlas and cusp scans."""

from __future__ import annotations

import enum
import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.optimize import brentq

from .equilibria import Equilibrium, Kind, Stability, equilibria
from .errors import DegenerateParameterError, InvalidInputError, NoHopfFoundError
from .model import FIELD_ORDER, ZERO_TOL, Parameters, State, rhs, rhs_jacobian
from .simulate import Trajectory, detect_limit_cycle, integrate, integrate_batch

BOUNDARY_TOL = 1e-9


class BifurcationKind(enum.Enum):
    TRANSCRITICAL = "Transcritical"
    SADDLE_NODE = "SaddleNode"
    HOPF = "Hopf"


@dataclass(frozen=True)
class BifurcationPoint:
    kind: BifurcationKind
    parameter_name: str
    critical_value: float
    at_equilibrium: Kind


# ---------------------------------------------------------------------------
# closed-form critical values


def _food_efficiency_gap(p: Parameters) -> float:
    gap = p.delta - p.m * p.alpha
    if abs(gap) <= ZERO_TOL * max(1.0, p.delta):
        raise DegenerateParameterError("delta = m alpha: the critical food quantity is undefined")
    return gap


def transcritical_xi(p: Parameters) -> float:
    """Food quantity at which E1 = (gamma, 0) exchanges stability with an interior branch."""
    g, w = p.gamma, p.omega
    gap = _food_efficiency_gap(p)
    if abs((1.0 - p.alpha) * g + w * g * g + 1.0) <= ZERO_TOL:
        raise DegenerateParameterError("(1 - alpha) gamma + omega gamma^2 + 1 = 0: transversality fails")
    return (p.m * (w * g * g + g + 1.0) - p.delta * g) / (gap * (w * g * g + 1.0))


def saddlenode_xi(p: Parameters) -> float:
    """Food quantity at which the prey-free equilibrium E2 reaches the origin."""
    return p.m / _food_efficiency_gap(p)


def bifurcation_point(p: Parameters, kind: BifurcationKind | str) -> BifurcationPoint:
    kind = BifurcationKind(kind) if isinstance(kind, str) else kind
    if kind is BifurcationKind.TRANSCRITICAL:
        return BifurcationPoint(kind, "xi", transcritical_xi(p), Kind.PREDATOR_FREE)
    if kind is BifurcationKind.SADDLE_NODE:
        return BifurcationPoint(kind, "xi", saddlenode_xi(p), Kind.PREY_FREE)
    hp = hopf_epsilon(p)
    if hp is None:
        raise NoHopfFoundError("Tr vanishes only where Det <= 0 on the bracket")
    return BifurcationPoint(kind, "epsilon", hp.epsilon, Kind.INTERIOR)


# ---------------------------------------------------------------------------
# Sotomayor quantities


@dataclass(frozen=True)
class SotomayorReport:
    wT_Hxi: float
    wT_DHxiV: float
    wT_D2HVV: float
    nondegenerate: bool
    # bifurcation type certified by the zero/nonzero pattern, if any
    pattern: BifurcationKind | None
    xi: float
    location: State
    V: tuple[float, float]
    W: tuple[float, float]


def _null_vector(M: np.ndarray, first: bool) -> np.ndarray:
    """Eigenvector for the eigenvalue of ``M`` closest to zero.

    Scaled so that the first (``first=True``) or last component is 1.
    """
    vals, vecs = np.linalg.eig(M)
    k = int(np.argmin(np.abs(vals)))
    v = np.real(vecs[:, k])
    i = 0 if first else 1
    if abs(v[i]) < 1e-12:
        i = 1 - i
        if abs(v[i]) < 1e-12:
            raise DegenerateParameterError("null eigenvector cannot be normalised")
    return v / v[i]


def sotomayor_quantities(
    p: Parameters, which: BifurcationKind | str, xi: float | None = None, h: float = 1e-5
) -> SotomayorReport:
    """Projections W.F_xi, W.(DF_xi V) and W.D^2F(V, V) at the bifurcating equilibrium.

    ``V`` and ``W`` are right and left eigenvectors of the Jacobian for the
    eigenvalue nearest zero.  For the transcritical case at E1 they reduce to
    V = (1, -D/gamma) and W = (0, 1).  Derivatives in xi and along V are
    central differences of the analytic field and Jacobian.  ``xi`` defaults
    to the closed-form critical value.
    """
    which = BifurcationKind(which) if isinstance(which, str) else which
    if which is BifurcationKind.TRANSCRITICAL:
        xs = transcritical_xi(p) if xi is None else float(xi)
        q = p.replace(xi=xs)
        loc = State(float(q.gamma), 0.0)
    elif which is BifurcationKind.SADDLE_NODE:
        xs = saddlenode_xi(p) if xi is None else float(xi)
        q = p.replace(xi=xs)
        if q.epsilon <= ZERO_TOL:
            raise DegenerateParameterError("prey-free equilibrium needs epsilon > 0")
        loc = State(0.0, float(max(q.food_margin, 0.0) / (q.epsilon * q.handling)))
    else:
        raise InvalidInputError("Sotomayor quantities are defined for transcritical and saddle-node only")

    def fld(s, xi_):
        v = list(q.values())
        v[FIELD_ORDER.index("xi")] = xi_
        return np.array(rhs(s[0], s[1], *v), dtype=float)

    def jac(s, xi_):
        v = list(q.values())
        v[FIELD_ORDER.index("xi")] = xi_
        return np.array(rhs_jacobian(s[0], s[1], *v), dtype=float).reshape(2, 2)

    E = np.array(loc, dtype=float)
    J = jac(E, xs)
    V = _null_vector(J, first=True)
    W = _null_vector(J.T, first=False)

    hx = h * max(1.0, abs(xs))
    F_xi = (fld(E, xs + hx) - fld(E, xs - hx)) / (2.0 * hx)
    DF_xi = (jac(E, xs + hx) - jac(E, xs - hx)) / (2.0 * hx)
    hv = 1e-4
    D2 = (fld(E + hv * V, xs) - 2.0 * fld(E, xs) + fld(E - hv * V, xs)) / (hv * hv)

    a = float(W @ F_xi)
    b = float(W @ DF_xi @ V)
    c = float(W @ D2)
    tol = 1e-6
    if abs(a) <= tol and abs(b) > tol and abs(c) > tol:
        pattern = BifurcationKind.TRANSCRITICAL
    elif abs(a) > tol and abs(c) > tol:
        pattern = BifurcationKind.SADDLE_NODE
    else:
        pattern = None
    return SotomayorReport(
        a, b, c, pattern is which, pattern, xs, loc, (float(V[0]), float(V[1])), (float(W[0]), float(W[1]))
    )


# ---------------------------------------------------------------------------
# Hopf


@dataclass(frozen=True)
class HopfPoint:
    epsilon: float
    location: State
    det: float
    trace_derivative: float  # d Tr / d epsilon along the equilibrium branch
    transversal: bool
    at_inverse_sqrt_omega: bool
    criticality: str | None = None


def equilibrium_curve(p: Parameters, x):
    """Interior equilibria as a graph over the prey coordinate.

    The interior condition is linear in epsilon, so each x in (0, gamma) is an
    equilibrium for exactly one epsilon.  Returns (epsilon, y, trace, det)
    evaluated with that epsilon; the remaining parameters come from ``p``.
    """
    x = np.asarray(x, dtype=float)
    g, a, xi, w, _, d, m = p.values()
    A = 1.0 + a * xi
    D = A * (w * x * x + 1.0) + x
    y = (1.0 - x / g) * D
    with np.errstate(divide="ignore", invalid="ignore"):
        eps = ((d - m) * x + p.food_margin * (w * x * x + 1.0)) / ((1.0 - x / g) * D * D)
    j11, j12, j21, j22 = rhs_jacobian(x, y, g, a, xi, w, eps, d, m)
    return eps, y, j11 + j22, j11 * j22 - j12 * j21


def _curve_grid(p: Parameters, n: int):
    lo = p.gamma * 1e-7
    return np.linspace(lo, p.gamma - lo, n)


def hopf_epsilon(
    p: Parameters,
    interior: Equilibrium | None = None,
    bracket: tuple[float, float] = (0.02, 0.04),
    n_grid: int = 20001,
) -> HopfPoint | None:
    """Intra-specific competition at which an interior equilibrium has Tr = 0 and Det > 0.

    Solves epsilon = epsilon*(x*(epsilon), y*(epsilon)) where epsilon* is the
    value making the trace vanish.  Because interior equilibria fold over in
    epsilon, the fixed point is sought along the equilibrium curve
    parameterised by x (see :func:`equilibrium_curve`) and refined by
    bracketed root finding, keeping points whose epsilon lies in ``bracket``.

    Returns None when the trace vanishes only at saddles (Det <= 0) or at
    x = 1/sqrt(omega).  When several Hopf points exist the one closest to
    ``interior`` (or to ``p.epsilon``) is returned.

    Raises
    ------
    NoHopfFoundError
        The trace keeps one sign over the bracket.
    """
    lo, hi = bracket
    if not lo < hi:
        raise InvalidInputError("bracket must satisfy lo < hi")
    x = _curve_grid(p, n_grid)
    eps, y, tr, det = equilibrium_curve(p, x)
    ok = np.isfinite(eps) & (eps >= max(lo, 0.0)) & (eps <= hi) & (y > 0)
    idx = np.where(ok[:-1] & ok[1:] & (np.sign(tr[:-1]) != np.sign(tr[1:])))[0]
    if len(idx) == 0:
        raise NoHopfFoundError(f"trace keeps one sign for epsilon in [{lo}, {hi}]")

    def trace_at(xv):
        return float(equilibrium_curve(p, xv)[2])

    inv = 1.0 / math.sqrt(p.omega) if p.omega > 0 else math.inf
    cands = []
    for k in idx:
        xr = brentq(trace_at, x[k], x[k + 1], xtol=1e-14)
        er, yr, _, dr = (float(v) for v in equilibrium_curve(p, xr))
        if dr <= ZERO_TOL:
            continue
        hx = 1e-6 * max(1.0, xr)
        e1, _, t1, _ = equilibrium_curve(p, xr + hx)
        e0, _, t0, _ = equilibrium_curve(p, xr - hx)
        dtr = float((t1 - t0) / (e1 - e0)) if e1 != e0 else math.inf
        at_inv = abs(xr - inv) <= 1e-9
        if at_inv:
            continue
        cands.append(HopfPoint(er, State(float(xr), float(yr)), dr, dtr, math.isfinite(dtr) and abs(dtr) > 1e-9, at_inv))
    if not cands:
        return None
    if interior is not None:
        return min(cands, key=lambda h: abs(h.location.x - interior.location.x))
    return min(cands, key=lambda h: abs(h.epsilon - p.epsilon))


def interior_folds(p: Parameters, bracket: tuple[float, float], n_grid: int = 20001) -> list[tuple[float, State]]:
    """Saddle-node points of interior equilibria (Det = 0) with epsilon in ``bracket``."""
    x = _curve_grid(p, n_grid)
    eps, y, _, det = equilibrium_curve(p, x)
    ok = np.isfinite(eps) & (eps >= bracket[0]) & (eps <= bracket[1]) & (y > 0)
    idx = np.where(ok[:-1] & ok[1:] & (np.sign(det[:-1]) != np.sign(det[1:])))[0]
    out = []
    for k in idx:
        xr = brentq(lambda v: float(equilibrium_curve(p, v)[3]), x[k], x[k + 1], xtol=1e-14)
        er, yr, _, _ = equilibrium_curve(p, xr)
        out.append((float(er), State(float(xr), float(yr))))
    return out


def hopf_criticality(
    p: Parameters, hp: HopfPoint, offset: float = 0.002, t_end: float = 3000.0, dt: float = 0.05
) -> str:
    """Super- or subcritical, decided by simulating on both sides of the Hopf value.

    A small cycle on the unstable side means supercritical; a cycle
    surviving on the stable side from a larger perturbation means subcritical.
    """
    unstable_side = hp.epsilon + (offset if hp.trace_derivative > 0 else -offset)
    stable_side = hp.epsilon - (offset if hp.trace_derivative > 0 else -offset)
    x0, y0 = hp.location
    try:
        tr = integrate(p.replace(epsilon=unstable_side), (1.01 * x0, 1.01 * y0), t_end, dt, record_every=5)
        if detect_limit_cycle(tr) is not None:
            return "supercritical"
        tr = integrate(p.replace(epsilon=stable_side), (1.2 * x0, 1.2 * y0), t_end, dt, record_every=5)
        if detect_limit_cycle(tr) is not None:
            return "subcritical"
    except Exception:
        pass
    return "undetermined"


# ---------------------------------------------------------------------------
# phi curves and region atlas


class PhiCurves(NamedTuple):
    phi1: float
    phi2: float
    phi3: float
    phi4: float
    # False when omega = 0: the no-interior threshold then lies at -infinity
    phi4_defined: bool


def phi_curves(p_base: Parameters, alpha, xi) -> PhiCurves:
    """Sign functions whose zero sets separate the (alpha, xi) subregions.

    phi1: E0 changes type.  phi2: E1 changes type.  phi3: E2 changes type.
    phi4: interior equilibria appear.  Accepts arrays for ``alpha`` and ``xi``.
    """
    alpha = np.asarray(alpha, dtype=float)
    xi = np.asarray(xi, dtype=float)
    g, w, e, d, m = p_base.gamma, p_base.omega, p_base.epsilon, p_base.delta, p_base.m
    A = 1.0 + alpha * xi
    phi1 = d * xi - m * A
    phi2 = phi1 + (d - m) * g / (w * g * g + 1.0)
    phi3 = phi1 - e * A * A
    defined = w > 0
    phi4 = phi1 + (d - m) / (2.0 * math.sqrt(w)) if defined else np.full_like(phi1, math.inf)
    if phi1.ndim == 0:
        return PhiCurves(float(phi1), float(phi2), float(phi3), float(phi4), defined)
    return PhiCurves(phi1, phi2, phi3, phi4, defined)


_ALIAS_R1 = {1: "A11", 2: "A12", 3: "A12", 4: "A13", 5: "A14"}


def phi_class(phi: PhiCurves) -> int:
    """Index j in 1..5 of the subregion fixed by the phi signs."""
    if phi.phi3 > 0:
        return 1
    if phi.phi1 > 0:
        return 2
    if phi.phi2 > 0:
        return 3
    if phi.phi4 > 0:
        return 4
    return 5


def subregion_name(base: str, j: int) -> str:
    if base == "R1":
        return _ALIAS_R1[j]
    return f"A{base[1]}{j}"


@functools.lru_cache(maxsize=256)
def base_region(p_base: Parameters) -> str:
    """R1/R2/R3 from the interior equilibria of the system without additional food."""
    inner = [e for e in equilibria(p_base.replace(xi=0.0)) if e.kind is Kind.INTERIOR]
    if not inner:
        return "R1"
    return "R3" if any(e.stability.is_stable for e in inner) else "R2"


@dataclass(frozen=True)
class RegionLabel:
    alpha: float
    xi: float
    phi: PhiCurves
    base_region: str
    subregion: str
    phi_class: int
    stable_attractors: frozenset = field(default_factory=frozenset)
    outcome: str | None = None
    boundary: bool = False


def outcome_from_attractors(attractors: frozenset) -> str | None:
    inner = "Interior" in attractors or "Cycle" in attractors
    if "E2" in attractors:
        return "BistableEradication" if inner else "Eradication"
    if "E1" in attractors:
        return "BistableDominance" if inner else "Dominance"
    return "Coexistence" if inner else None


def _static_attractors(eqs: list[Equilibrium]) -> tuple[set, list[Equilibrium]]:
    att = set()
    unstable_inner = []
    for e in eqs:
        if not e.stability.is_stable:
            if e.kind is Kind.INTERIOR and e.stability in (
                Stability.UNSTABLE_FOCUS, Stability.UNSTABLE_NODE, Stability.CENTER
            ):
                unstable_inner.append(e)
            continue
        att.add({Kind.PREDATOR_FREE: "E1", Kind.PREY_FREE: "E2", Kind.INTERIOR: "Interior"}.get(e.kind, "E0"))
    return att, unstable_inner


CYCLE_T_END = 2000.0
CYCLE_DT = 0.05
CYCLE_RECORD = 4


def _label(p_base, alpha, xi, eqs, cycle):
    phi = phi_curves(p_base, alpha, xi)
    base = base_region(p_base)
    j = phi_class(phi)
    sub = base if xi == 0 else subregion_name(base, j)
    vals = [phi.phi1, phi.phi2, phi.phi3] + ([phi.phi4] if phi.phi4_defined else [])
    if xi != 0 and any(abs(v) < BOUNDARY_TOL for v in vals):
        return RegionLabel(alpha, xi, phi, base, sub, j, frozenset(), None, True)
    att, unstable = _static_attractors(eqs)
    if unstable and (cycle or not att):
        att.add("Cycle")
    att = frozenset(att)
    return RegionLabel(alpha, xi, phi, base, sub, j, att, outcome_from_attractors(att), False)


def classify_region(p_base: Parameters, alpha: float, xi: float, detect_cycles: bool = True) -> RegionLabel:
    """Subregion, attracting sets and management outcome at one (alpha, xi).

    A cycle is counted when an interior equilibrium is unstable and either a
    trajectory started at 1.01 times that equilibrium settles on a limit
    cycle, or no equilibrium is stable (every orbit is bounded, so it must
    then approach a periodic orbit).
    """
    p = p_base.replace(alpha=float(alpha), xi=float(xi))
    eqs = equilibria(p)
    cycle = False
    _, unstable = _static_attractors(eqs)
    if detect_cycles and unstable:
        for e in unstable:
            try:
                tr = integrate(p, (1.01 * e.location.x, 1.01 * e.location.y), CYCLE_T_END, CYCLE_DT,
                               record_every=CYCLE_RECORD)
            except Exception:
                continue
            if detect_limit_cycle(tr) is not None:
                cycle = True
                break
    return _label(p_base, float(alpha), float(xi), eqs, cycle)


def _batch_cycles(p_base: Parameters, cells: list[tuple[float, float, State]], chunk: int = 500) -> list[bool]:
    """Cycle detection for many (alpha, xi, seed) triples with one vectorised integration."""
    out = []
    for start in range(0, len(cells), chunk):
        part = cells[start:start + chunk]
        prm = {k: np.full(len(part), getattr(p_base, k)) for k in FIELD_ORDER}
        prm["alpha"] = np.array([c[0] for c in part])
        prm["xi"] = np.array([c[1] for c in part])
        x0 = np.array([1.01 * c[2].x for c in part])
        y0 = np.array([1.01 * c[2].y for c in part])
        t, X, Y = integrate_batch(prm, x0, y0, CYCLE_T_END, CYCLE_DT, record_every=CYCLE_RECORD)
        for k in range(len(part)):
            if not np.all(np.isfinite(X[:, k])):
                out.append(False)
                continue
            out.append(detect_limit_cycle(Trajectory(t, X[:, k], Y[:, k])) is not None)
    return out


def _atlas_rows(args):
    p_base, alpha, xis, detect_cycles = args
    rows = []
    pending = []
    for xi in xis:
        eqs = equilibria(p_base.replace(alpha=float(alpha), xi=float(xi)))
        _, unstable = _static_attractors(eqs)
        rows.append((float(xi), eqs))
        if detect_cycles and unstable:
            pending.append((len(rows) - 1, unstable[0]))
    cyc = [False] * len(rows)
    if pending:
        flags = _batch_cycles(p_base, [(float(alpha), rows[i][0], e.location) for i, e in pending])
        for (i, _), f in zip(pending, flags):
            cyc[i] = f
    return [_label(p_base, float(alpha), xi, eqs, c) for (xi, eqs), c in zip(rows, cyc)]


def region_atlas(
    p_base: Parameters, alphas, xis, detect_cycles: bool = True, workers: int = 1
) -> list[RegionLabel]:
    """:func:`classify_region` over a grid, alpha-major order."""
    alphas = [float(a) for a in alphas]
    xis = [float(x) for x in xis]
    base_region(p_base)
    jobs = [(p_base, a, xis, detect_cycles) for a in alphas]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_atlas_rows, jobs))
    else:
        parts = [_atlas_rows(j) for j in jobs]
    return [r for part in parts for r in part]


# ---------------------------------------------------------------------------
# cusp scans


PLANES = {"alpha-epsilon": "alpha", "xi-epsilon": "xi"}


@dataclass(frozen=True)
class CuspMap:
    plane: str
    u: np.ndarray
    epsilon: np.ndarray
    counts: np.ndarray  # shape (len(epsilon), len(u))
    boundary: list  # (u, epsilon) points where the count changes along u

    @property
    def bistable(self) -> np.ndarray:
        return self.counts >= 2

    @property
    def bistable_fraction(self) -> float:
        return float(self.bistable.mean())

    def largest_bistable_component(self) -> np.ndarray:
        labels, n = ndimage.label(self.bistable)
        if n == 0:
            return np.zeros_like(self.bistable)
        sizes = ndimage.sum(self.bistable, labels, range(1, n + 1))
        return labels == (1 + int(np.argmax(sizes)))

    def adjacent_to_monostable(self) -> bool:
        comp = self.largest_bistable_component()
        if not comp.any():
            return False
        grown = ndimage.binary_dilation(comp)
        return bool(np.any(grown & (self.counts == 1)))

    def rows(self):
        for i, e in enumerate(self.epsilon):
            for j, u in enumerate(self.u):
                yield float(u), float(e), int(self.counts[i, j])


def _count_row(args):
    p_base, name, us, eps = args
    return [
        sum(e.stability.is_stable for e in equilibria(p_base.replace(epsilon=float(eps), **{name: float(u)})))
        for u in us
    ]


def cusp_scan(
    p_base: Parameters,
    plane: str = "alpha-epsilon",
    u_range: tuple[float, float] = (0.0, 1.0),
    eps_range: tuple[float, float] = (0.01, 1.0),
    resolution: tuple[int, int] = (50, 50),
    workers: int = 1,
) -> CuspMap:
    """Number of coexisting stable equilibria over a food-parameter by epsilon grid."""
    if plane not in PLANES:
        raise InvalidInputError(f"plane must be one of {sorted(PLANES)}")
    nu, ne = resolution
    if nu < 2 or ne < 2:
        raise InvalidInputError("cusp grid needs at least 2x2 cells")
    us = np.linspace(*u_range, nu)
    es = np.linspace(*eps_range, ne)
    jobs = [(p_base, PLANES[plane], us, e) for e in es]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            counts = np.array(list(ex.map(_count_row, jobs)), dtype=int)
    else:
        counts = np.array([_count_row(j) for j in jobs], dtype=int)
    boundary = []
    for i, e in enumerate(es):
        for j in np.where(np.diff(counts[i]) != 0)[0]:
            boundary.append((float(0.5 * (us[j] + us[j + 1])), float(e)))
    return CuspMap(plane, us, es, counts, boundary)
