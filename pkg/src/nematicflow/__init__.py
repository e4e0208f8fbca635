"""Poiseuille flow of nematic liquid crystals in one space dimension.

Coupled quasilinear wave / parabolic solvers (finite-difference,
characteristic-coordinate, and kernel-based), a fixed-point coupling loop, and
an energy/singularity diagnostics suite.
"""

from .coefficients import (
    CoefficientFunctions,
    LeslieCoefficients,
    ValidationReport,
    preset,
    validate,
)
from .grid_state import Grid1D, InitialData, PhysicalState, make_state

__all__ = [
    "CoefficientFunctions",
    "LeslieCoefficients",
    "ValidationReport",
    "preset",
    "validate",
    "Grid1D",
    "InitialData",
    "PhysicalState",
    "make_state",
]

__version__ = "0.1.0"
