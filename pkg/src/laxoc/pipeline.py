"""End-to-end runs: pick the program for an instance, solve, reconstruct."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problem import (PiecewiseControl, ProblemInstance, ProblemKind, TimeGrid,
                      check_feasibility, evaluate_problem_value, evaluate_running_objective,
                      integrate_dynamics)
from .reconstruction import ReconstructionResult, reconstruct_freezing, reconstruct_worst_cost
from .solver import Solution, SolverOptions, solve, solve_phi2_sweep
from .transcription import (audit_convexity, build_direct_program, build_phi1_program,
                            build_phi2TI_program)


def choose_program(instance: ProblemInstance) -> str:
    """``phi1`` for MinMax; ``phi2_TI`` or ``phi2`` for MinMin; ``direct`` otherwise."""
    cols = audit_convexity(instance).columns
    if instance.kind is ProblemKind.MINMAX:
        return "phi1" if cols["phi1"].convex else "direct"
    if instance.time_invariant and cols["phi2_TI"].convex:
        return "phi2_TI"
    if cols["phi2"].convex:
        return "phi2"
    return "direct"


@dataclass
class SolveOutcome:
    program: str
    solution: Solution


def run_solve(instance: ProblemInstance, grid: TimeGrid,
              options: SolverOptions = SolverOptions(), program: Optional[str] = None) -> SolveOutcome:
    program = program or choose_program(instance)
    if program == "phi1":
        sol = solve(build_phi1_program(instance, grid), options)
    elif program == "phi2_TI":
        sol = solve(build_phi2TI_program(instance, grid), options)
    elif program == "phi2":
        _, sol = solve_phi2_sweep(instance, grid, options)
    elif program == "direct":
        sol = solve(build_direct_program(instance, grid), options)
    else:
        raise ValueError(f"unknown program {program!r}")
    return SolveOutcome(program, sol)


def _direct_result(instance, grid, sol) -> ReconstructionResult:
    """The direct program already returns admissible controls; integrate them."""
    from .reconstruction import Decomposition

    n = sol.controls.shape[0]
    nodes = grid.nodes
    values = list(sol.controls)
    bps = list(nodes[: n + 1])
    if n < grid.K:
        values.append(np.asarray(instance.filler(), float))
        bps.append(nodes[-1])
    alpha = PiecewiseControl(bps, np.array(values))
    traj = integrate_dynamics(instance, alpha, instance.x0, grid)
    J = evaluate_running_objective(instance, traj, alpha, grid)
    feas = check_feasibility(instance, traj, grid=grid)
    value, k = evaluate_problem_value(instance, J, feas.feasible_upto)
    tau = None if k is None else float(nodes[k])
    err = float(np.max(np.abs(traj.at_nodes()[: n + 1] - sol.states)))
    return ReconstructionResult(Decomposition([], "direct"), alpha, traj, J, feas, value, k, tau,
                                err, abs(value - sol.value) if np.isfinite(value) else float("inf"))


def run_reconstruct(instance: ProblemInstance, grid: TimeGrid, outcome: SolveOutcome,
                    substeps: int = 4) -> ReconstructionResult:
    sol = outcome.solution
    if sol.controls is None:
        raise RuntimeError(f"nothing to reconstruct: solver status {sol.status}")
    if outcome.program == "direct":
        return _direct_result(instance, grid, sol)
    if outcome.program == "phi2_TI":
        return reconstruct_freezing(instance, grid, sol.states, sol.controls, sol.value, substeps)
    return reconstruct_worst_cost(instance, grid, sol.states, sol.controls, sol.value, substeps)
