"""Meshfree solver for the volume-constrained, pressure-stabilized nonlocal Stokes system."""

__version__ = "0.1.0"

from .analysis import builtin_case, convergence_study, solve_errors
from .geometry import make_domain, partition, sample_grid
from .kernels import make_kernel, make_profile
from .operators import assemble_operators
from .system import NonlocalStokesProblem, SolverOptions, assemble_system, solve, solve_problem

__all__ = [
    "NonlocalStokesProblem",
    "SolverOptions",
    "assemble_operators",
    "assemble_system",
    "builtin_case",
    "convergence_study",
    "make_domain",
    "make_kernel",
    "make_profile",
    "partition",
    "sample_grid",
    "solve",
    "solve_errors",
    "solve_problem",
]
