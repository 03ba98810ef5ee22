"""Exception types shared across the package."""


class OseenLGError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(OseenLGError):
    """Invalid user-supplied parameters, flags, or config file contents."""


class DomainError(OseenLGError):
    """A point lies outside the computational domain beyond tolerance."""


class HypothesisViolationError(OseenLGError):
    """A runtime assumption of the method is violated.

    Raised when the convecting field does not vanish on the boundary, or when
    dt * |w_h|_{1,inf} >= 1 so the backward characteristic map is no longer
    guaranteed to be a bijection of the domain.
    """


class GeometryConsistencyError(OseenLGError):
    """Clipped intersection pieces fail to tile the mapped element."""


class SolverConvergenceError(OseenLGError):
    """Iterative solver failed to reach the requested tolerance.

    Attributes:
        residual_history: relative residual after each iteration, for post-mortem.
    """

    def __init__(self, message: str, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history) if residual_history is not None else []
