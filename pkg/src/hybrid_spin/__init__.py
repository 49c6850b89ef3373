"""Mixed quantum-classical spin dynamics on the Bloch sphere."""

from . import diagnostics, hamiltonians, integrator, models, sphere_grid, spin_algebra
from .errors import (
    ConfigurationError,
    ContractViolation,
    DegenerateDensity,
    HybridSpinError,
    NotFactorable,
    NumericalFailure,
    PositivityViolation,
)
from .sphere_grid import SphereGrid, build_grid

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ContractViolation",
    "DegenerateDensity",
    "HybridSpinError",
    "NotFactorable",
    "NumericalFailure",
    "PositivityViolation",
    "SphereGrid",
    "build_grid",
    "diagnostics",
    "hamiltonians",
    "integrator",
    "models",
    "sphere_grid",
    "spin_algebra",
]
