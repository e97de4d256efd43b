"""Optimal control of Fokker-Planck equations on star graphs.

Shifted Legendre wavelet collocation for the coupled state, adjoint and
optimality system, plus a finite-volume reference solver.
"""
from .problem import EdgeSpec, StarProblem, builtin_example, load_problem, normalize
from .state import Discretization
from .kkt import SolverConfig, newton_solve, sweep_solve

__version__ = "0.1.0"

__all__ = [
    "EdgeSpec",
    "StarProblem",
    "builtin_example",
    "load_problem",
    "normalize",
    "Discretization",
    "SolverConfig",
    "newton_solve",
    "sweep_solve",
]
