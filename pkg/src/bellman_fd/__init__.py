"""Monotone finite-difference solvers for degenerate Bellman equations."""

from .errors import BellmanFDError, ConfigurationError, ConvergenceError, EvaluationError, ValidationError
from .lattice import ExteriorPolicy, GridFunction, Mesh, MeshSpec, build_mesh, read_grid_csv, tau_T
from .problems import CATALOG_NAMES, ControlProblem, ExactSolution, catalog, default_mesh_spec, validate
from .implicit_solver import SolverConfig, choose_contraction_params, solve_global, solve_parabolic, solve_slice
from .aux_solvers import EllipticConfig, SemidiscreteConfig, solve_elliptic, solve_semidiscrete
from .perturbation import ShakeSpec, shake, shake_gap
from .diagnostics import (
    check_comparison,
    check_elliptic_limit,
    check_obstacle_complementarity,
    convergence_study,
    measure_regularity,
)

__version__ = "0.1.0"

__all__ = [
    "BellmanFDError",
    "CATALOG_NAMES",
    "ConfigurationError",
    "ControlProblem",
    "ConvergenceError",
    "EllipticConfig",
    "EvaluationError",
    "ExactSolution",
    "ExteriorPolicy",
    "GridFunction",
    "Mesh",
    "MeshSpec",
    "SemidiscreteConfig",
    "ShakeSpec",
    "SolverConfig",
    "ValidationError",
    "build_mesh",
    "catalog",
    "check_comparison",
    "check_elliptic_limit",
    "check_obstacle_complementarity",
    "choose_contraction_params",
    "convergence_study",
    "default_mesh_spec",
    "measure_regularity",
    "read_grid_csv",
    "shake",
    "shake_gap",
    "solve_elliptic",
    "solve_global",
    "solve_parabolic",
    "solve_semidiscrete",
    "solve_slice",
    "tau_T",
    "validate",
]
