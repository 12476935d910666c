"""Exception hierarchy shared by all modules."""


class BazykinError(Exception):
    """Base class for domain errors raised by the toolkit."""

    code = "domain-error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class InvalidInputError(BazykinError, ValueError):
    code = "invalid-input"


class DegenerateParameterError(BazykinError):
    code = "degenerate-parameter"


class SimulationError(BazykinError):
    code = "simulation-error"


class PositivityViolationError(SimulationError):
    code = "positivity-violation"


class DivergenceError(SimulationError):
    code = "divergence"

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InsufficientDataError(BazykinError):
    code = "insufficient-data"


class NoHopfFoundError(BazykinError):
    code = "no-hopf-found"


class NoConvergenceError(BazykinError):
    code = "no-convergence"

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class VerificationFailedError(BazykinError):
    code = "verification-failed"
