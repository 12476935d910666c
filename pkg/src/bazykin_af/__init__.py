"""Predator-prey dynamics with additional food: equilibria, bifurcations,
region atlases and time-optimal food control."""

from .errors import (
    BazykinError,
    DegenerateParameterError,
    DivergenceError,
    InsufficientDataError,
    InvalidInputError,
    NoConvergenceError,
    NoHopfFoundError,
    PositivityViolationError,
    SimulationError,
    VerificationFailedError,
)
from .model import DimensionalParameters, Parameters, State, bound_constant, jacobian, nondimensionalize, vector_field

__all__ = [
    "BazykinError",
    "DegenerateParameterError",
    "DimensionalParameters",
    "DivergenceError",
    "InsufficientDataError",
    "InvalidInputError",
    "NoConvergenceError",
    "NoHopfFoundError",
    "Parameters",
    "PositivityViolationError",
    "SimulationError",
    "State",
    "VerificationFailedError",
    "bound_constant",
    "jacobian",
    "nondimensionalize",
    "vector_field",
]
