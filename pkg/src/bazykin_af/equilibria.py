"""Equilibria, their linear stability, and nullcline geometry."""

from __future__ import annotations

import cmath
import enum
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidInputError
from .model import ZERO_TOL, Parameters, State, denominator, rhs, rhs_jacobian

CLASSIFY_TOL = 1e-9
RESIDUAL_TOL = 1e-8


class Kind(enum.Enum):
    TRIVIAL = "Trivial"
    PREDATOR_FREE = "PredatorFree"
    PREY_FREE = "PreyFree"
    INTERIOR = "Interior"


class Stability(enum.Enum):
    STABLE_NODE = "StableNode"
    STABLE_FOCUS = "StableFocus"
    UNSTABLE_NODE = "UnstableNode"
    UNSTABLE_FOCUS = "UnstableFocus"
    SADDLE = "Saddle"
    CENTER = "Center"
    DEGENERATE = "Degenerate"

    @property
    def is_stable(self) -> bool:
        return self in (Stability.STABLE_NODE, Stability.STABLE_FOCUS)


@dataclass(frozen=True)
class Equilibrium:
    kind: Kind
    location: State
    eigenvalues: tuple[complex, complex]
    stability: Stability
    multiplicity: int = 1

    def as_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "x": self.location.x,
            "y": self.location.y,
            "eig_re": [ev.real for ev in self.eigenvalues],
            "eig_im": [ev.imag for ev in self.eigenvalues],
            "stability": self.stability.value,
        }


class PreyCase(enum.Enum):
    CASE1 = "Case1"
    CASE2 = "Case2"
    CASE3 = "Case3"


class PredatorCase(enum.Enum):
    CASE_P = "CaseP"
    CASE_Q = "CaseQ"
    NEITHER = "Neither"


class NullclineCase(NamedTuple):
    prey_case: PreyCase
    predator_case: PredatorCase
    degenerate: bool
    omega_zero: bool


class QuinticCoefficients(NamedTuple):
    """Coefficients of the interior-equilibrium polynomial, highest degree first."""

    c5: float
    c4: float
    c3: float
    c2: float
    c1: float
    c0: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)

    def __call__(self, x):
        return np.polyval(self.as_array(), x)


class Root(NamedTuple):
    x: float
    multiplicity: int


class NullclineCurves(NamedTuple):
    x: np.ndarray
    prey_y: np.ndarray
    predator_y: np.ndarray | None
    # with epsilon = 0 the predator nullcline is a set of vertical lines
    predator_vertical_x: tuple


# ---------------------------------------------------------------------------
# classification


def eigenvalues_from_trace_det(tr: float, det: float) -> tuple[complex, complex]:
    disc = tr * tr - 4.0 * det
    root = cmath.sqrt(disc)
    return (0.5 * (tr + root), 0.5 * (tr - root))


def classify_trace_det(tr: float, det: float, tol: float = CLASSIFY_TOL) -> Stability:
    if abs(det) < tol:
        return Stability.DEGENERATE
    if det < 0:
        return Stability.SADDLE
    if abs(tr) < tol:
        return Stability.CENTER
    focus = tr * tr - 4.0 * det < 0
    if tr < 0:
        return Stability.STABLE_FOCUS if focus else Stability.STABLE_NODE
    return Stability.UNSTABLE_FOCUS if focus else Stability.UNSTABLE_NODE


def _classify_real(l1: float, l2: float) -> Stability:
    return classify_trace_det(l1 + l2, l1 * l2)


# ---------------------------------------------------------------------------
# boundary equilibria


def boundary_equilibria(p: Parameters) -> list[Equilibrium]:
    """E0 and E1 always; the prey-free E2 when it lies on the positive y-axis."""
    A = p.handling
    margin = p.food_margin
    g, w = p.gamma, p.omega

    e0 = (1.0, margin / A)
    e1 = (-1.0, ((p.delta - p.m) * g + margin * (w * g * g + 1.0)) / (A * (w * g * g + 1.0) + g))
    out = [
        Equilibrium(Kind.TRIVIAL, State(0.0, 0.0), (complex(e0[0]), complex(e0[1])), _classify_real(*e0)),
        Equilibrium(Kind.PREDATOR_FREE, State(float(g), 0.0), (complex(e1[0]), complex(e1[1])), _classify_real(*e1)),
    ]
    if margin > ZERO_TOL and p.epsilon > ZERO_TOL:
        y2 = margin / (p.epsilon * A)
        e2 = (1.0 - margin / (p.epsilon * A * A), -margin / A)
        out.append(
            Equilibrium(Kind.PREY_FREE, State(0.0, float(y2)), (complex(e2[0]), complex(e2[1])), _classify_real(*e2))
        )
    return out


# ---------------------------------------------------------------------------
# interior equilibria


def quintic_coefficients(p: Parameters) -> QuinticCoefficients:
    """Polynomial whose positive roots are the prey coordinates of interior equilibria.

    It is (delta - m) x + margin (omega x^2 + 1) - epsilon (1 - x/gamma) D(x)^2,
    i.e. the prey nullcline substituted into the predator nullcline.
    """
    g, w, e = p.gamma, p.omega, p.epsilon
    A = p.handling
    margin = p.food_margin
    return QuinticCoefficients(
        e * w * w * A * A / g,
        e * w * A * (2.0 - g * w * A) / g,
        e / g * (1.0 + 2.0 * w * A * A - 2.0 * g * w * A),
        w * margin + 2.0 * e * A / g - e - 2.0 * e * w * A * A,
        p.delta - p.m - 2.0 * e * A + e * A * A / g,
        margin - e * A * A,
    )


def _horner_bound(c: np.ndarray, x: float) -> float:
    """Running-error bound of Horner evaluation."""
    return 8.0 * np.finfo(float).eps * float(np.polyval(np.abs(c), abs(x)))


def _newton(c, dc, x, iters=8):
    best, fbest = x, abs(np.polyval(c, x))
    for _ in range(iters):
        d = np.polyval(dc, x)
        if d == 0:
            break
        x = x - np.polyval(c, x) / d
        fx = abs(np.polyval(c, x))
        if fx < fbest:
            best, fbest = x, fx
        if fx == 0:
            break
    return float(best)


def _bisection_roots(c: np.ndarray, lo: float, hi: float, n: int = 20001) -> list[float]:
    grid = np.linspace(lo, hi, n)
    vals = np.polyval(c, grid)
    roots = []
    for i in range(n - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            if grid[i] > lo:
                roots.append(float(grid[i]))
        elif a * b < 0:
            roots.append(brentq(lambda t: np.polyval(c, t), grid[i], grid[i + 1], xtol=1e-15))
    if vals[-1] == 0.0:
        roots.append(float(hi))
    return roots


def real_positive_roots(q, x_max: float) -> list[Root]:
    """Real roots in (0, x_max] of the polynomial with coefficients ``q``
    (highest degree first), sorted ascending.

    Roots come from the eigenvalues of the companion matrix of the deflated
    polynomial, are clustered (near-coincident roots are reported once with
    their multiplicity) and Newton-polished.  If a candidate fails the residual
    gate the interval is re-scanned by sign changes and bisection instead.
    """
    c = np.asarray(q, dtype=float)
    if c.ndim != 1 or not np.all(np.isfinite(c)):
        raise InvalidInputError("coefficients must be a finite 1-D sequence")
    if not np.any(c != 0.0):
        raise InvalidInputError("all-zero polynomial has no isolated roots")
    c = np.trim_zeros(c, "b")  # roots at x = 0 are outside (0, x_max]
    # leading terms negligible over (0, x_max] only move roots far past x_max
    reach = max(1.0, x_max) if math.isfinite(x_max) else 1.0
    powers = reach ** np.arange(len(c) - 1, -1, -1, dtype=float)
    size = np.abs(c) * powers
    while len(c) > 1 and size[0] <= 1e-15 * size.max():
        c, size = c[1:], size[1:]
    if len(c) <= 1:
        return []
    scale = max(1.0, float(np.max(np.abs(c))))
    gate = 1e-10 * scale
    dc = np.polyder(c)
    ddc = np.polyder(dc) if len(dc) > 1 else np.zeros(1)

    monic = c / c[0]
    deg = len(c) - 1
    comp = np.zeros((deg, deg))
    comp[0, :] = -monic[1:]
    comp[1:, :-1] = np.eye(deg - 1)
    eig = np.linalg.eigvals(comp)

    cand = sorted(z.real for z in eig if abs(z.imag) <= 1e-5 * max(1.0, abs(z)))
    clusters: list[list[float]] = []
    for r in cand:
        if clusters and abs(r - clusters[-1][-1]) <= 1e-6 * max(1.0, abs(r)):
            clusters[-1].append(r)
        else:
            clusters.append([r])

    hi = x_max * (1.0 + 1e-12)
    roots, failed = [], False
    for cl in clusters:
        x0 = float(np.mean(cl))
        mult = len(cl)
        if mult == 1:
            x = _newton(c, dc, x0)
        else:
            x = _newton(dc, ddc, x0) if mult == 2 else x0
            if abs(np.polyval(c, x)) > abs(np.polyval(c, x0)):
                x = x0
        if not (0.0 < x <= hi):
            continue
        res = abs(np.polyval(c, x))
        if res >= gate and res > _horner_bound(c, x):
            failed = True
            continue
        roots.append(Root(min(x, x_max), mult))

    if failed:
        doubles = [r for r in roots if r.multiplicity > 1]
        simple = [Root(x, 1) for x in _bisection_roots(c, 0.0, x_max)]
        merged = doubles + [
            r for r in simple if all(abs(r.x - d.x) > 1e-6 * max(1.0, d.x) for d in doubles)
        ]
        roots = merged
    return sorted(roots, key=lambda r: r.x)


def nullcline_residuals(p: Parameters, x: float, y: float) -> tuple[float, float]:
    """(prey, predator) nontrivial-nullcline residuals at (x, y)."""
    D = denominator(x, p.alpha, p.xi, p.omega)
    prey = 1.0 - x / p.gamma - y / D
    pred = p.delta * (x + p.xi * (p.omega * x * x + 1.0)) / D - p.m - p.epsilon * y
    return prey, pred


def _polish_interior(p: Parameters, x: float, y: float, iters: int = 6) -> tuple[float, float]:
    g, a, xi, w, e, d, m = p.values()
    A = 1.0 + a * xi
    best = (x, y)
    rbest = max(abs(v) for v in nullcline_residuals(p, x, y))
    for _ in range(iters):
        D = denominator(x, a, xi, w)
        dD = 2.0 * A * w * x + 1.0
        f1, f2 = nullcline_residuals(p, x, y)
        num = x + xi * (w * x * x + 1.0)
        j11 = -1.0 / g + y * dD / (D * D)
        j12 = -1.0 / D
        j21 = d * ((2.0 * xi * w * x + 1.0) * D - num * dD) / (D * D)
        j22 = -e
        det = j11 * j22 - j12 * j21
        if det == 0:
            break
        dx = (f1 * j22 - f2 * j12) / det
        dy = (j11 * f2 - j21 * f1) / det
        x, y = x - dx, y - dy
        r = max(abs(v) for v in nullcline_residuals(p, x, y))
        if r < rbest:
            best, rbest = (x, y), r
        if r == 0.0:
            break
    return best


def interior_trace_det(p: Parameters, x: float, y: float) -> tuple[float, float]:
    """Trace and determinant of the Jacobian at an interior equilibrium,
    using the equilibrium relations to simplify the entries."""
    g, a, xi, w, e, d, m = p.values()
    A = 1.0 + a * xi
    D = A * (w * x * x + 1.0) + x
    tr = -e * y - x / g + (1.0 - x / g) * (x + 2.0 * w * x * x * A) / D
    det = (
        x * y * (d - m + 2.0 * w * x * p.food_margin - 2.0 * e * y * (2.0 * w * x * A + 1.0)) / (D * D)
        + e * x * y / g
    )
    return tr, det


def interior_equilibria(p: Parameters) -> list[Equilibrium]:
    """Interior equilibria from the positive roots of the quintic.

    The predator coordinate is read from the predator nullcline (or the prey
    nullcline when epsilon = 0), the pair is Newton-polished on both nullcline
    residuals, and only points with y > 0 passing the residual check are kept.
    """
    q = quintic_coefficients(p)
    try:
        roots = real_positive_roots(q, p.gamma)
    except InvalidInputError:
        return []
    out = []
    for r in roots:
        x = r.x
        D = denominator(x, p.alpha, p.xi, p.omega)
        if p.epsilon > ZERO_TOL:
            y = ((p.delta - p.m) * x + p.food_margin * (p.omega * x * x + 1.0)) / (p.epsilon * D)
        else:
            y = (1.0 - x / p.gamma) * D
        if not (y > ZERO_TOL):
            continue
        x, y = _polish_interior(p, x, y)
        if not (x > 0 and y > ZERO_TOL):
            continue
        res = max(abs(v) for v in nullcline_residuals(p, x, y))
        fx, fy = rhs(x, y, *p.values())
        if res >= RESIDUAL_TOL or max(abs(fx), abs(fy)) >= RESIDUAL_TOL:
            warnings.warn(f"discarding interior root x={x!r}: residual {res:.2e}", RuntimeWarning, stacklevel=2)
            continue
        tr, det = interior_trace_det(p, x, y)
        out.append(
            Equilibrium(Kind.INTERIOR, State(float(x), float(y)), eigenvalues_from_trace_det(tr, det),
                        classify_trace_det(tr, det), r.multiplicity)
        )
    return out


def equilibria(p: Parameters) -> list[Equilibrium]:
    return boundary_equilibria(p) + interior_equilibria(p)


def jacobian_stability(p: Parameters, s) -> tuple[Stability, np.ndarray]:
    """Classification straight from numerically computed Jacobian eigenvalues."""
    J = np.array(rhs_jacobian(float(s[0]), float(s[1]), *p.values()), dtype=float).reshape(2, 2)
    return classify_trace_det(float(np.trace(J)), float(np.linalg.det(J))), np.linalg.eigvals(J)


# ---------------------------------------------------------------------------
# nullclines


def nullcline_case(p: Parameters) -> NullclineCase:
    """Qualitative shape of the prey and predator nullclines.

    Ties at a case boundary go to the case on the lower side of the
    inequality and set ``degenerate``.
    """
    A = p.handling
    g, w = p.gamma, p.omega
    degenerate = False
    if abs(g - A) <= ZERO_TOL:
        degenerate = True
    if g - A > ZERO_TOL:
        prey = PreyCase.CASE1
    else:
        if abs(w * g * g - 3.0) <= ZERO_TOL:
            degenerate = True
        prey = PreyCase.CASE2 if w * g * g - 3.0 > ZERO_TOL else PreyCase.CASE3

    margin = p.food_margin
    omega_zero = w <= ZERO_TOL
    lower = -math.inf if omega_zero else -(p.delta - p.m) / (2.0 * math.sqrt(w))
    if abs(margin) <= ZERO_TOL or (not omega_zero and abs(margin - lower) <= ZERO_TOL):
        degenerate = True
    if margin > ZERO_TOL:
        pred = PredatorCase.CASE_P
    elif margin - lower > ZERO_TOL:
        pred = PredatorCase.CASE_Q
    else:
        pred = PredatorCase.NEITHER
    return NullclineCase(prey, pred, degenerate, omega_zero)


def nullcline_curves(p: Parameters, x_grid) -> NullclineCurves:
    x = np.asarray(x_grid, dtype=float)
    D = denominator(x, p.alpha, p.xi, p.omega)
    prey = (1.0 - x / p.gamma) * D
    numer = (p.delta - p.m) * x + p.food_margin * (p.omega * x * x + 1.0)
    if p.epsilon > ZERO_TOL:
        return NullclineCurves(x, prey, numer / (p.epsilon * D), ())
    quad = [p.omega * p.food_margin, p.delta - p.m, p.food_margin]
    vertical = ()
    if any(v != 0.0 for v in quad):
        vertical = tuple(r.x for r in real_positive_roots(quad, math.inf))
    return NullclineCurves(x, prey, None, vertical)
