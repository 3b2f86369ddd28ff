"""Maximum Nash welfare cake cutting: solver, mechanisms, audits and attacks."""

from .core import (
    Allocation,
    CakeError,
    Interval,
    PiecewiseDensity,
    Profile,
    ShareMatrix,
    common_refinement,
    items_profile,
    make_profile,
    value_of,
)
from .mechanisms import MechanismSpec, run_mechanism
from .solver import SolverError, solve_mnw

__all__ = [
    "Allocation",
    "CakeError",
    "Interval",
    "MechanismSpec",
    "PiecewiseDensity",
    "Profile",
    "ShareMatrix",
    "SolverError",
    "common_refinement",
    "items_profile",
    "make_profile",
    "run_mechanism",
    "solve_mnw",
    "value_of",
]
__version__ = "0.1.0"
