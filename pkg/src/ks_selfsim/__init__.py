"""Numerical laboratory for the subcritical rescaled Keller-Segel system."""

from .errors import (ConvergenceError, DiscretizationError, DomainError, FitError,
                     IntegrationError, KSError, ModeError, ParameterError,
                     ResolutionError)
from .radial_core import (ModeField, RadialGrid, gradient_energy, green_matrix, inner,
                          integrate, laplacian_mode, make_grid, poisson_mode)
from .stationary import (CRITICAL_MASS, StationaryState, solve_stationary,
                         special_modes)

__version__ = "0.1.0"

__all__ = [
    "CRITICAL_MASS", "ConvergenceError", "DiscretizationError", "DomainError", "FitError",
    "IntegrationError", "KSError", "ModeError", "ModeField", "ParameterError",
    "RadialGrid", "ResolutionError", "StationaryState", "gradient_energy", "green_matrix",
    "inner", "integrate", "laplacian_mode", "make_grid", "poisson_mode",
    "solve_stationary", "special_modes",
]
