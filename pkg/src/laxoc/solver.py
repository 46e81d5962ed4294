"""Solving transcribed programs and certifying the result.

Conic programs go to the Clarabel interior-point solver through cvxpy.  The
states are re-propagated from the returned controls, so the reported
objective and residuals are recomputed independently of the solver.  The
non-convex direct program uses SLSQP single shooting and is labeled
``local/stationary``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import cvxpy as cp
import numpy as np
from scipy.optimize import minimize

from .problem import ProblemInstance, TimeGrid
from .transcription import ConvexProgram, build_phi2_subprogram

log = logging.getLogger(__name__)

_SOLVED = {"Solved", "AlmostSolved"}
_INFEASIBLE = {"PrimalInfeasible", "AlmostPrimalInfeasible"}


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 20000
    feas_tol: float = 1e-8
    stat_tol: float = 1e-6
    seed: int = 0
    verbose: bool = False


@dataclass
class Solution:
    kind: str
    value: float
    controls: Optional[np.ndarray]
    states: Optional[np.ndarray]
    cost_curve: Optional[np.ndarray]
    residuals: dict
    stationarity: float
    iterations: int
    status: str
    converged: bool
    infeasible: bool
    label: str
    k_prime: Optional[int] = None
    thetas: Optional[np.ndarray] = None
    eta: Optional[float] = None
    sweep_values: Optional[list] = None
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        """Deterministic summary; wall time is left to the run manifest."""
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "kind": self.kind,
            "value": _num(self.value),
            "status": self.status,
            "converged": self.converged,
            "infeasible": self.infeasible,
            "label": self.label,
            "k_prime": self.k_prime,
            "iterations": self.iterations,
            "stationarity": _num(self.stationarity),
            "residuals": {k: _num(v) for k, v in sorted(self.residuals.items())},
            "eta": None if self.eta is None else _num(self.eta),
            "cost_curve": arr(self.cost_curve),
            "states": arr(self.states),
            "controls": arr(self.controls),
            "thetas": arr(self.thetas),
            "sweep_values": None if self.sweep_values is None else [_num(v) for v in self.sweep_values],
        }


def _num(v):
    v = float(v)
    if np.isfinite(v):
        return v
    return "inf" if v > 0 else ("-inf" if v < 0 else "nan")


def _clarabel_opts(options: SolverOptions) -> dict:
    tol = min(options.feas_tol, 1e-8)
    gap = min(options.stat_tol, 1e-8)
    return {"max_iter": int(min(options.max_iter, 10000)), "tol_feas": tol,
            "tol_gap_abs": gap, "tol_gap_rel": gap, "tol_ktratio": 1e-8}


def _solve_conic(program: ConvexProgram, options: SolverOptions):
    prob: cp.Problem = program.problem
    data, chain, inv = prob.get_problem_data(cp.CLARABEL)
    raw = chain.solver.solve_via_data(data, False, options.verbose, _clarabel_opts(options))
    prob.unpack_results(raw, chain, inv)
    status = str(raw.status)
    gap = abs(raw.obj_val - raw.obj_val_dual) / max(1.0, abs(raw.obj_val))
    stationarity = float(max(raw.r_dual, gap)) if status in _SOLVED else float("inf")
    return status, int(raw.iterations), stationarity


def solve(program: ConvexProgram, options: SolverOptions = SolverOptions()) -> Solution:
    t0 = time.perf_counter()
    if program.backend == "nlp":
        sol = _solve_nlp(program, options)
        sol.wall_time = time.perf_counter() - t0
        return sol
    status, iters, stationarity = _solve_conic(program, options)
    if options.verbose:
        log.info("solve %s k'=%s status=%s iters=%d stat=%.3e",
                 program.kind, program.k_prime, status, iters, stationarity)
    if status in _INFEASIBLE or program.variables[_ctrl_name(program)].value is None:
        return Solution(program.kind, float("inf"), None, None, None, {}, float("inf"), iters,
                        status, False, status in _INFEASIBLE, _label(program), program.k_prime,
                        wall_time=time.perf_counter() - t0)
    controls = np.asarray(program.variables[_ctrl_name(program)].value, float)[: program.n_steps]
    width = program.instance.n if program.uses_beta else program.instance.m
    controls = controls.reshape(program.n_steps, width)
    x = program.propagate(controls)
    curve = program.cost_curve(controls, x)
    value = program.evaluate(controls)
    res = program.residuals(controls, x)
    thetas = None
    if "theta" in program.variables:
        thetas = np.clip(np.asarray(program.variables["theta"].value, float), 0.0, 1.0)
    eta = float(program.variables["eta"].value) if "eta" in program.variables else None
    converged = (status in _SOLVED and res["dynamics"] <= options.feas_tol
                 and stationarity <= options.stat_tol
                 and max(res["state_constraint"], res["control_set"]) <= 1e-6)
    return Solution(program.kind, value, controls, x, curve, res, stationarity, iters, status,
                    converged, False, _label(program), program.k_prime, thetas, eta,
                    wall_time=time.perf_counter() - t0)


def _ctrl_name(program):
    return "beta" if program.uses_beta else "alpha"


def _label(program):
    return "global" if program.convex else "local/stationary"


def _solve_nlp(program: ConvexProgram, options: SolverOptions) -> Solution:
    nlp = program.nlp
    nv = nlp["n_vars"]
    v0 = np.asarray(nlp["x0_guess"], float)
    cons = [{"type": "ineq", "fun": lambda w: nlp["constraint"](w[:nv])}]
    if nlp["control"] is not None:
        cons.append({"type": "ineq", "fun": lambda w: nlp["control"](w[:nv])})
    bounds = nlp["bounds"]
    if nlp["epigraph"]:
        w0 = np.concatenate([v0, [np.max(nlp["curve"](v0))]])
        cons.append({"type": "ineq", "fun": lambda w: w[nv] - nlp["curve"](w[:nv])})
        bounds = None if bounds is None else bounds + [(None, None)]
        fun = lambda w: w[nv]  # noqa: E731
    else:
        w0 = v0
        fun = lambda w: nlp["curve"](w)[-1]  # noqa: E731
    res = minimize(fun, w0, method="SLSQP", bounds=bounds, constraints=cons,
                   options={"maxiter": options.max_iter, "ftol": options.stat_tol ** 2})
    controls = res.x[:nv].reshape(program.n_steps, -1)
    x = program.propagate(controls)
    curve = program.cost_curve(controls, x)
    value = program.evaluate(controls)
    resid = program.residuals(controls, x)
    ok = res.status == 0 and max(resid["state_constraint"], resid["control_set"]) <= 1e-6
    return Solution(program.kind, value, controls, x, curve, resid,
                    0.0 if res.status == 0 else float("inf"), int(res.nit),
                    "Solved" if res.status == 0 else str(res.message), ok, False,
                    "local/stationary", program.k_prime)


def solve_phi2_sweep(instance: ProblemInstance, grid: TimeGrid,
                     options: SolverOptions = SolverOptions(), tie_tol: float = 1e-7):
    """Solve the prefix program for every terminal index and keep the best.

    Values within ``tie_tol`` of the minimum count as ties; the smallest
    index wins.
    """
    sols = [solve(build_phi2_subprogram(instance, grid, kp), options) for kp in range(grid.K + 1)]
    values = [s.value for s in sols]
    if not np.any(np.isfinite(values)):
        best = Solution("phi2_sub", float("inf"), None, None, None, {}, float("inf"), 0,
                        "PrimalInfeasible", False, True, "global", None, sweep_values=values)
        return None, best
    vmin = min(values)
    k_star = next(k for k, v in enumerate(values) if v <= vmin + tie_tol)
    best = sols[k_star]
    best.sweep_values = values
    return k_star, best


def certify(program: ConvexProgram, solution: Solution) -> dict:
    """Recompute every residual family and flag the worst row."""
    controls, x = solution.controls, solution.states
    inst, nodes, dts = program.instance, program.grid.nodes, program.grid.steps
    rows = []
    for k in range(program.n_steps):
        if program.uses_beta:
            r = x[k + 1] - x[k] + dts[k] * controls[k]
        else:
            r = x[k + 1] - x[k] - dts[k] * inst.f(nodes[k], x[k], controls[k])
        rows.append(float(np.max(np.abs(r))))
    rows = np.array(rows) if rows else np.zeros(1)
    fam = program.residuals(controls, x)
    return {
        "dynamics": float(rows.max()),
        "worst_dynamics_row": int(rows.argmax()),
        "initial_state": fam["initial_state"],
        "state_constraint": fam["state_constraint"],
        "control_set": fam["control_set"],
        "objective_mismatch": abs(program.evaluate(controls) - solution.value),
    }
