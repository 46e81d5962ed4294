"""Convex transcriptions of state-constrained optimal control via Lax formulae.

Worst-cost (MinMax) and best-time (MinMin) problems with running state
constraints are rewritten through Hopf-Lax representations of augmented HJ
equations, solved as convex programs and mapped back to admissible
controls.  A grid level-set solver checks the representations in low
dimension.
"""

__version__ = "0.1.0"

from .config import ConfigError, RunConfig, load_instance  # noqa: E402
from .hamiltonian import eval_H, eval_H_star, eval_Hbar, eval_Hbar_W  # noqa: E402
from .hj import GridValueFunction, HJGrids, check_z_regularity, extract_theta, solve_hj  # noqa: E402
from .pipeline import choose_program, run_reconstruct, run_solve  # noqa: E402
from .problem import (PiecewiseControl, ProblemInstance, ProblemKind, TimeGrid,  # noqa: E402
                      integrate_dynamics)
from .scenarios import BUILTINS, gen_example_A, gen_example_B  # noqa: E402
from .solver import Solution, SolverOptions, certify, solve, solve_phi2_sweep  # noqa: E402
from .transcription import (audit_convexity, build_direct_program, build_phi1_program,  # noqa: E402
                            build_phi2_subprogram, build_phi2TI_program)

__all__ = [
    "BUILTINS", "ConfigError", "GridValueFunction", "HJGrids", "PiecewiseControl",
    "ProblemInstance", "ProblemKind", "RunConfig", "Solution", "SolverOptions", "TimeGrid",
    "audit_convexity", "build_direct_program", "build_phi1_program", "build_phi2TI_program",
    "build_phi2_subprogram", "certify", "check_z_regularity", "choose_program", "eval_H",
    "eval_H_star", "eval_Hbar", "eval_Hbar_W", "extract_theta", "gen_example_A", "gen_example_B",
    "integrate_dynamics", "load_instance", "run_reconstruct", "run_solve", "solve", "solve_hj",
    "solve_phi2_sweep",
]
