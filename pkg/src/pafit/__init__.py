"""Preferential attachment with fitness: phase theory, simulation and verification."""
from . import fitness, theory
from .errors import (DomainError, ExtinctionError, InvalidVariantError, PafitError,
                     SolverError, TenabilityError)
from .fitness import from_descriptor
from .theory import Phase, PhaseReport, classify_phase, limit_law, solve_lambda0

__version__ = "0.1.0"

__all__ = [
    "fitness", "theory", "from_descriptor", "Phase", "PhaseReport",
    "classify_phase", "limit_law", "solve_lambda0", "PafitError", "DomainError",
    "InvalidVariantError", "SolverError", "TenabilityError", "ExtinctionError",
]
