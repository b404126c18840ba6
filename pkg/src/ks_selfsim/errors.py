"""Exception types raised by the package."""


class KSError(Exception):
    """Base class for all package errors."""


class ParameterError(KSError, ValueError):
    """Invalid numerical parameter or mismatched inputs."""


class ModeError(KSError, ValueError):
    """Operation called on a field with an unsupported angular index."""


class DomainError(KSError, ValueError):
    """Input outside the mathematical domain (negative density, M >= 8 pi, ...)."""


class ResolutionError(KSError, ValueError):
    """Requested field cannot be represented on the grid."""


class ConvergenceError(KSError, RuntimeError):
    """Iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DiscretizationError(KSError, RuntimeError):
    """Discrete quadratic form violates a property it must have (e.g. indefinite Q1)."""


class IntegrationError(KSError, RuntimeError):
    """Time integrator failed (step size underflow)."""


class FitError(KSError, ValueError):
    """Too few usable samples for a rate fit."""
