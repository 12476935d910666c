"""Model parameters, vector field, Jacobian and the ultimate-boundedness constant.

The nondimensional system is

    dx/dt = x (1 - x/gamma) - x y / D
    dy/dt = delta (x + xi (omega x^2 + 1)) y / D - m y - epsilon y^2

with D = (1 + alpha xi)(omega x^2 + 1) + x.  All kernels below accept floats
or broadcastable numpy arrays so that sweeps can evaluate many parameter sets
at once.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError

ZERO_TOL = 1e-12

FIELD_ORDER = ("gamma", "alpha", "xi", "omega", "epsilon", "delta", "m")


class DimensionalConsistencyWarning(UserWarning):
    """The published nondimensional mapping disagrees with direct substitution."""


class FeasibilityWarning(UserWarning):
    """Parameters are evaluable but outside the biologically feasible range."""


@dataclass(frozen=True)
class Parameters:
    """The seven nondimensional model constants."""

    gamma: float
    alpha: float
    xi: float
    omega: float
    epsilon: float
    delta: float
    m: float

    def replace(self, **changes) -> "Parameters":
        return dataclasses.replace(self, **changes)

    def values(self) -> tuple:
        return tuple(getattr(self, k) for k in FIELD_ORDER)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in FIELD_ORDER}

    @classmethod
    def from_dict(cls, data: dict) -> "Parameters":
        missing = [k for k in FIELD_ORDER if k not in data]
        if missing:
            raise InvalidInputError(f"missing parameter keys: {', '.join(missing)}")
        try:
            return cls(**{k: float(data[k]) for k in FIELD_ORDER})
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"non-numeric parameter value: {exc}") from None

    @property
    def handling(self) -> float:
        """1 + alpha xi, the handling factor contributed by additional food."""
        return 1.0 + self.alpha * self.xi

    @property
    def food_margin(self) -> float:
        """delta xi - m (1 + alpha xi): predator growth on additional food alone."""
        return self.delta * self.xi - self.m * self.handling


@dataclass(frozen=True)
class DimensionalParameters:
    """Parameters of the dimensional model (biomass/time units)."""

    r: float
    K: float
    c: float
    a: float
    b: float
    A: float
    eta: float
    delta1: float
    m1: float
    d: float


class State(NamedTuple):
    x: float
    y: float


class Jacobian2(NamedTuple):
    j11: float
    j12: float
    j21: float
    j22: float

    def matrix(self) -> np.ndarray:
        return np.array([[self.j11, self.j12], [self.j21, self.j22]])

    @property
    def trace(self) -> float:
        return self.j11 + self.j22

    @property
    def det(self) -> float:
        return self.j11 * self.j22 - self.j12 * self.j21


class Severity(enum.Enum):
    ERROR = "error"
    WARNING = "warning"


class Diagnostic(NamedTuple):
    severity: Severity
    message: str


class BoundConstant(NamedTuple):
    M: float
    ultimate_bound: float
    degenerate: bool


# ---------------------------------------------------------------------------
# array kernels


def denominator(x, alpha, xi, omega):
    return (1.0 + alpha * xi) * (omega * x * x + 1.0) + x


def rhs(x, y, gamma, alpha, xi, omega, epsilon, delta, m):
    D = denominator(x, alpha, xi, omega)
    dx = x * (1.0 - x / gamma) - x * y / D
    dy = delta * (x + xi * (omega * x * x + 1.0)) * y / D - m * y - epsilon * y * y
    return dx, dy


def rhs_jacobian(x, y, gamma, alpha, xi, omega, epsilon, delta, m):
    A = 1.0 + alpha * xi
    D = A * (omega * x * x + 1.0) + x
    D2 = D * D
    j11 = 1.0 - 2.0 * x / gamma - y * A * (1.0 - omega * x * x) / D2
    j12 = -x / D
    j21 = delta * y * (1.0 - omega * x * x) * (A - xi) / D2
    j22 = delta * (x + xi * (omega * x * x + 1.0)) / D - 2.0 * epsilon * y - m
    return j11, j12, j21, j22


# ---------------------------------------------------------------------------
# public operations


def _check_state(s) -> State:
    x, y = float(s[0]), float(s[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise InvalidInputError(f"non-finite state ({x}, {y})")
    return State(x, y)


def _check_params(p: Parameters) -> None:
    if not all(math.isfinite(v) for v in p.values()):
        raise InvalidInputError(f"non-finite parameter in {p}")


def vector_field(p: Parameters, s) -> tuple[float, float]:
    """Time derivative (dx/dt, dy/dt) of the nondimensional system at ``s``."""
    _check_params(p)
    x, y = _check_state(s)
    if x < 0 or y < 0:
        raise InvalidInputError(f"state ({x}, {y}) outside the nonnegative quadrant")
    dx, dy = rhs(x, y, *p.values())
    return float(dx), float(dy)


def jacobian(p: Parameters, s) -> Jacobian2:
    _check_params(p)
    x, y = _check_state(s)
    return Jacobian2(*(float(v) for v in rhs_jacobian(x, y, *p.values())))


def validate(p: Parameters) -> list[Diagnostic]:
    """Hard errors for out-of-domain constants, a warning when delta <= m."""
    out = []
    for name in FIELD_ORDER:
        if not math.isfinite(getattr(p, name)):
            out.append(Diagnostic(Severity.ERROR, f"{name} is not finite"))
    if out:
        return out
    for name in ("gamma", "delta", "m"):
        if getattr(p, name) <= 0:
            out.append(Diagnostic(Severity.ERROR, f"{name} must be > 0"))
    for name in ("alpha", "xi", "omega", "epsilon"):
        if getattr(p, name) < 0:
            out.append(Diagnostic(Severity.ERROR, f"{name} must be >= 0"))
    if p.delta <= p.m:
        out.append(Diagnostic(Severity.WARNING, "delta ≤ m: predators cannot persist on prey alone"))
    return out


def check(p: Parameters) -> Parameters:
    """Raise on validation errors, forward warnings through :mod:`warnings`."""
    for diag in validate(p):
        if diag.severity is Severity.ERROR:
            raise InvalidInputError(diag.message)
        warnings.warn(diag.message, FeasibilityWarning, stacklevel=2)
    return p


def nondimensionalize(
    dp: DimensionalParameters, mapping: str = "published", alpha: float = 0.0
) -> Parameters:
    """Map dimensional constants to the nondimensional set.

    ``mapping="published"`` uses epsilon = c/(a d) and delta = delta1 a r / c as
    printed alongside the model; ``mapping="substitution"`` uses the values
    obtained by substituting N = a x, P = a r y / c, t = r T into the model,
    epsilon = a d / c and delta = delta1 / r.  The published mapping always
    emits a :class:`DimensionalConsistencyWarning`.  The food quality ``alpha``
    is dimensionless and passes through unchanged.
    """
    for name in ("a", "r", "c", "d"):
        if not getattr(dp, name) > 0:
            raise InvalidInputError(f"dimensional parameter {name} must be > 0")
    for name in ("K", "delta1", "m1", "eta"):
        if getattr(dp, name) < 0 or not math.isfinite(getattr(dp, name)):
            raise InvalidInputError(f"dimensional parameter {name} must be finite and >= 0")
    if dp.A < 0 or dp.b < 0:
        raise InvalidInputError("A and b must be >= 0")

    common = dict(
        gamma=dp.K / dp.a,
        xi=dp.eta * dp.A / dp.a,
        omega=dp.b * dp.a**2,
        m=dp.m1 / dp.r,
    )
    if mapping == "published":
        warnings.warn(
            "published mapping epsilon=c/(a d), delta=delta1 a r/c does not follow from "
            "substituting the scaling into the model (substitution gives a d/c and delta1/r)",
            DimensionalConsistencyWarning,
            stacklevel=2,
        )
        eps = dp.c / (dp.a * dp.d)
        delta = dp.delta1 * dp.a * dp.r / dp.c
    elif mapping == "substitution":
        eps = dp.a * dp.d / dp.c
        delta = dp.delta1 / dp.r
    else:
        raise InvalidInputError(f"unknown mapping {mapping!r}")
    return Parameters(alpha=float(alpha), epsilon=eps, delta=delta, **common)


def bound_constant(p: Parameters, k: float = 1.0) -> BoundConstant:
    """Constant M with dW/dt + k W <= M for W = x + y/delta.

    Every solution satisfies W(t) <= M/k (1 - e^{-kt}) + W(0) e^{-kt}.  With
    epsilon = 0 the quadratic predator term vanishes and the y-part of the bound
    is dropped; ``degenerate`` is then True and the bound is not rigorous.
    """
    if not (k > 0 and math.isfinite(k)):
        raise InvalidInputError("k must be a finite positive number")
    M = p.gamma * (1.0 + k) ** 2 / 4.0
    degenerate = p.epsilon <= ZERO_TOL
    if not degenerate:
        lin = p.xi / p.handling + k / p.delta - p.m / p.delta
        M += p.delta / (4.0 * p.epsilon) * lin**2
    return BoundConstant(M, M / k, degenerate)


# ---------------------------------------------------------------------------
# config files


def load_parameters(path) -> tuple[Parameters, dict]:
    """Read a JSON config; parameters may be flat or under ``"parameters"``.

    Returns the parameters and the full decoded document.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"malformed JSON in {path}: {exc}") from None
    return parameters_from_doc(doc), doc


def parameters_from_doc(doc: dict) -> Parameters:
    if not isinstance(doc, dict):
        raise InvalidInputError("config must be a JSON object")
    block = doc.get("parameters", doc)
    if "dimensional" in doc and not all(k in block for k in FIELD_ORDER):
        dim = doc["dimensional"]
        dp = DimensionalParameters(**{f.name: float(dim[f.name]) for f in dataclasses.fields(DimensionalParameters)})
        return nondimensionalize(
            dp, mapping=dim.get("mapping", "published"), alpha=float(dim.get("alpha", 0.0))
        )
    return Parameters.from_dict(block)


def parameters_to_json(p: Parameters, dimensional: DimensionalParameters | None = None) -> str:
    doc = p.as_dict()
    if dimensional is not None:
        doc["dimensional"] = dataclasses.asdict(dimensional)
    return json.dumps(doc, indent=2) + "\n"
