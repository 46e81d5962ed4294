"""From a relaxed optimum ``(x*, beta*)`` to an admissible piecewise control.

At every grid step the lifted point ``(H*, -beta*)`` is written as a convex
combination of ``(L, f)`` at finitely many admissible controls (weights
summing to one for the worst-cost problem, at most one when freezing is
allowed).  The atoms are then played on consecutive sub-intervals.  With
freezing, the unused part of each step is a zero tail of the relaxed
control ``beta1`` and the admissible control is compressed in pseudo-time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from .hamiltonian import eval_H_star, find_witness
from .problem import (FeasibilityReport, PiecewiseControl, ProblemInstance, ProblemKind, TimeGrid,
                      Trajectory, check_feasibility, evaluate_problem_value, evaluate_running_objective,
                      integrate_dynamics)
from .sets import Box

EXACT_SUM_ONE = "exact_sum_one"
SUB_ONE = "sub_one"
WEIGHT_TOL = 1e-9
IDENTITY_TOL = 1e-6


class DecompositionError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class DecompositionStep:
    """Atoms per control channel; channels cover disjoint control coordinates."""

    channels: list
    mode: str
    residual: float = 0.0

    def weight_sums(self) -> list:
        return [float(sum(g for _, g in atoms)) for _, atoms in self.channels]

    def n_atoms(self) -> int:
        return max((len(atoms) for _, atoms in self.channels), default=0)


@dataclass
class Decomposition:
    steps: list
    mode: str

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "steps": [
                {"residual": st.residual,
                 "channels": [{"controls": list(idx),
                               "atoms": [{"a": np.asarray(a).tolist(), "gamma": float(g)} for a, g in atoms]}
                              for idx, atoms in st.channels]}
                for st in self.steps
            ],
        }


def _merge_channels(channels, m: int, filler: np.ndarray):
    """Joint segments ``(fraction, control)`` covering the union of channel breakpoints."""
    cuts = {0.0}
    for _, atoms in channels:
        acc = 0.0
        for _, g in atoms:
            acc += g
            cuts.add(min(acc, 1.0))
    cuts = sorted(cuts)
    segs = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= 0:
            continue
        mid = 0.5 * (lo + hi)
        a = filler.copy()
        for idx, atoms in channels:
            acc = 0.0
            for atom, g in atoms:
                if acc <= mid < acc + g:
                    a[list(idx)] = atom
                    break
                acc += g
        segs.append((hi - lo, a))
    return segs


def _identity_residual(instance, s, x, beta, hstar, channels, mode) -> float:
    segs = _merge_channels(channels, instance.m, instance.filler())
    lifted = np.zeros(instance.n + 1)
    for frac, a in segs:
        lifted[0] += frac * instance.L(s, x, a)
        lifted[1:] += frac * instance.f(s, x, a)
    target = np.concatenate([[hstar], -np.asarray(beta, float)])
    if mode == SUB_ONE and not segs:
        return float(np.max(np.abs(target)))
    return float(np.max(np.abs(lifted - target)))


def caratheodory_reduce(points: np.ndarray, weights: np.ndarray, max_atoms: int, tol: float = 1e-12):
    """Drop atoms while keeping ``sum w_i p_i`` and ``sum w_i``.

    ``points`` holds the lifted vectors row-wise.
    """
    w = np.asarray(weights, float).copy()
    P = np.asarray(points, float)
    keep = np.nonzero(w > tol)[0]
    while keep.size > max_atoms:
        A = np.vstack([P[keep].T, np.ones(keep.size)])
        ns = null_space(A)
        if ns.size == 0:
            break
        v = ns[:, 0]
        if not np.any(v > 0):
            v = -v
        pos = v > tol
        ratio = w[keep][pos] / v[pos]
        t = np.min(ratio)
        w[keep] = w[keep] - t * v
        w[np.abs(w) < tol] = 0.0
        w = np.maximum(w, 0.0)
        keep = np.nonzero(w > tol)[0]
    return keep, w[keep]


def _candidates(instance, resolution=None):
    A = instance.control_set
    if resolution is None:
        resolution = 201 if instance.m == 1 else 21
    return A.sample(resolution)


def decompose_generic(instance: ProblemInstance, s, x, beta, hstar, mode, candidates=None):
    """Witness first, then an LP over a finite candidate set."""
    beta = np.asarray(beta, float)
    all_idx = tuple(range(instance.m))
    if mode == SUB_ONE and np.max(np.abs(beta)) <= 1e-14:
        return [(all_idx, [])]
    a = find_witness(instance, s, x, beta)
    if a is not None and abs(instance.L(s, x, a) - hstar) <= 1e-9:
        return [(all_idx, [(a, 1.0)])]
    cands = _candidates(instance) if candidates is None else np.asarray(candidates, float)
    costs = np.array([instance.L(s, x, c) for c in cands])
    imgs = np.array([-instance.f(s, x, c) for c in cands])
    n_c = cands.shape[0]
    a_eq = imgs.T
    b_eq = beta
    if mode == EXACT_SUM_ONE:
        a_eq = np.vstack([a_eq, np.ones((1, n_c))])
        b_eq = np.concatenate([b_eq, [1.0]])
        res = linprog(costs, A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * n_c, method="highs")
    else:
        res = linprog(costs, A_eq=a_eq, b_eq=b_eq, A_ub=np.ones((1, n_c)), b_ub=[1.0],
                      bounds=[(0, None)] * n_c, method="highs")
    if res.status != 0:
        raise DecompositionError("no convex combination of candidate controls matches beta")
    lifted = np.hstack([costs[:, None], imgs])
    keep, w = caratheodory_reduce(lifted, res.x, instance.n + 2)
    return [(all_idx, [(cands[i].copy(), float(g)) for i, g in zip(keep, w)])]


def decompose_step(instance: ProblemInstance, s, x, beta, hstar_value: Optional[float] = None,
                   mode: str = EXACT_SUM_ONE, candidates=None) -> DecompositionStep:
    """Atoms and weights reproducing ``(H*, -beta)`` at one grid step."""
    x = np.asarray(x, float)
    beta = np.asarray(beta, float)
    if hstar_value is None:
        hstar_value = 0.0 if instance.stage_cost.is_zero else eval_H_star(
            instance, s, x, beta, include_zero=(mode == SUB_ONE))
    if instance.decomposer is not None and candidates is None:
        channels = instance.decomposer(instance, s, x, beta, mode)
    else:
        channels = decompose_generic(instance, s, x, beta, hstar_value, mode, candidates)
    A = instance.control_set
    clean = []
    for idx, atoms in channels:
        kept = []
        for a, g in atoms:
            if g <= 0:
                continue
            a = np.asarray(a, float)
            if isinstance(A, Box):
                a = np.clip(a, A.lo[list(idx)], A.hi[list(idx)])
            kept.append((a, float(g)))
        clean.append((tuple(idx), kept))
    sums = [sum(g for _, g in atoms) for _, atoms in clean]
    if mode == EXACT_SUM_ONE and any(abs(t - 1.0) > WEIGHT_TOL for t in sums):
        raise DecompositionError("weights must sum to one", max(abs(t - 1.0) for t in sums))
    if mode == SUB_ONE:
        if any(t > 1.0 + WEIGHT_TOL for t in sums):
            raise DecompositionError("weights exceed one", max(sums) - 1.0)
        if len(clean) > 1 and max(sums) - min(sums) > WEIGHT_TOL:
            raise DecompositionError("freezing needs one shared weight profile", max(sums) - min(sums))
    residual = _identity_residual(instance, s, x, beta, hstar_value, clean, mode)
    if residual > IDENTITY_TOL:
        raise DecompositionError("decomposition identity violated", residual)
    return DecompositionStep(clean, mode, residual)


def decompose_solution(instance: ProblemInstance, grid: TimeGrid, states, controls, mode) -> Decomposition:
    steps = [decompose_step(instance, grid.nodes[k], states[k], controls[k], mode=mode)
             for k in range(len(controls))]
    return Decomposition(steps, mode)


def build_alpha_schedule_p1(decomp: Decomposition, grid: TimeGrid, instance: ProblemInstance,
                            ) -> PiecewiseControl:
    """Sub-intervals of length ``gamma_i dt_k`` carrying ``a_i``, in atom order.

    Steps beyond the decomposition (a shorter prefix) carry the filler control.
    """
    if decomp.mode != EXACT_SUM_ONE:
        raise ValueError("worst-cost schedules need weights summing to one")
    filler = instance.filler()
    bps, vals = [0.0], []
    for k in range(grid.K):
        t0, t1 = grid.nodes[k], grid.nodes[k + 1]
        if k < len(decomp.steps):
            segs = _merge_channels(decomp.steps[k].channels, instance.m, filler)
        else:
            segs = [(1.0, filler)]
        acc = 0.0
        for i, (frac, a) in enumerate(segs):
            acc += frac
            end = t1 if i == len(segs) - 1 else t0 + acc * (t1 - t0)
            if end <= bps[-1]:
                continue
            bps.append(end)
            vals.append(a)
        bps[-1] = t1
    return PiecewiseControl(bps, np.array(vals))


@dataclass
class FreezingSchedule:
    beta1: PiecewiseControl
    alpha: PiecewiseControl
    moving: np.ndarray  # per beta1 segment: True where beta1 is nonzero
    sigma_T: float
    step_weights: np.ndarray


def build_alpha_schedule_p2TI(decomp: Decomposition, grid: TimeGrid, instance: ProblemInstance,
                              states) -> FreezingSchedule:
    """Motion segments then a frozen tail per step; the admissible control is
    the concatenation of motion segments followed by the filler control."""
    if decomp.mode != SUB_ONE:
        raise ValueError("freezing schedules need the sub-one decomposition")
    filler = instance.filler()
    b_bps, b_vals, moving = [0.0], [], []
    a_segs = []
    weights = []
    for k in range(grid.K):
        t0, t1 = grid.nodes[k], grid.nodes[k + 1]
        dt = t1 - t0
        step = decomp.steps[k]
        segs = _merge_channels(step.channels, instance.m, filler)
        total = sum(fr for fr, _ in segs)
        weights.append(total)
        acc = 0.0
        for frac, a in segs:
            acc += frac
            end = t0 + acc * dt
            if end <= b_bps[-1]:
                continue
            b_bps.append(end)
            b_vals.append(-instance.f(t0, states[k], a))
            moving.append(True)
            a_segs.append((frac * dt, a))
        if t1 > b_bps[-1]:
            b_bps.append(t1)
            b_vals.append(np.zeros(instance.n))
            moving.append(False)
        else:
            b_bps[-1] = t1
    beta1 = PiecewiseControl(b_bps, np.array(b_vals))
    moving = np.array(moving, bool)
    sigma_T = pseudo_time(beta1, grid.T)
    a_bps, a_vals, s = [0.0], [], 0.0
    for length, a in a_segs:
        s = s + length
        if s <= a_bps[-1]:
            continue
        a_bps.append(s)
        a_vals.append(a)
    if a_vals:
        a_bps[-1] = sigma_T
    if grid.T - a_bps[-1] > 1e-12 or not a_vals:
        a_bps.append(grid.T)
        a_vals.append(filler)
    else:
        a_bps[-1] = grid.T
    alpha = PiecewiseControl(a_bps, np.array(a_vals))
    return FreezingSchedule(beta1, alpha, moving, sigma_T, np.array(weights))


def _moving_mask(beta1: PiecewiseControl) -> np.ndarray:
    return np.any(beta1.values != 0.0, axis=1)


def pseudo_time(beta1: PiecewiseControl, s: float) -> float:
    """``int_0^s 1{beta1 != 0}``, exact for piecewise-constant ``beta1``."""
    mask = _moving_mask(beta1)
    lo = beta1.breakpoints[:-1]
    hi = np.minimum(beta1.breakpoints[1:], s)
    return float(np.sum(np.where(mask, np.maximum(hi - lo, 0.0), 0.0)))


def pseudo_time_inverse(beta1: PiecewiseControl, sigma: float) -> float:
    """Earliest ``tau`` with ``pseudo_time(tau) = sigma``."""
    total = pseudo_time(beta1, beta1.breakpoints[-1])
    if sigma > total + 1e-12 or sigma < 0:
        raise ValueError(f"pseudo-time {sigma} outside [0, {total}]")
    if sigma <= 0:
        return float(beta1.breakpoints[0])
    mask = _moving_mask(beta1)
    acc = 0.0
    for lo, hi, mv in zip(beta1.breakpoints[:-1], beta1.breakpoints[1:], mask):
        if not mv:
            continue
        if sigma <= acc + (hi - lo):
            return float(lo + (sigma - acc))
        acc += hi - lo
    return float(beta1.breakpoints[-1])


def select_terminal_time(J, instance: ProblemInstance, feasible_upto: int, grid: TimeGrid):
    """``(tau*, k', value)``: argmax for MinMax, feasible-prefix argmin for MinMin."""
    value, k = evaluate_problem_value(instance, J, feasible_upto)
    tau = None if k is None else float(grid.nodes[k])
    return tau, k, value


@dataclass
class ReconstructionResult:
    decomposition: Decomposition
    alpha: PiecewiseControl
    trajectory: Trajectory
    J: np.ndarray
    feasibility: FeasibilityReport
    value: float
    k_star: Optional[int]
    tau_star: Optional[float]
    state_error: float
    cost_error: float
    freezing: Optional[FreezingSchedule] = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "value": self.value if np.isfinite(self.value) else "inf",
            "k_star": self.k_star,
            "tau_star": self.tau_star,
            "state_error": self.state_error,
            "cost_error": self.cost_error,
            "max_violation": self.feasibility.max_violation,
            "feasible_upto": self.feasibility.feasible_upto,
            "alpha": self.alpha.to_dict(),
            "decomposition": self.decomposition.to_dict(),
        }
        if self.freezing is not None:
            out["beta1"] = self.freezing.beta1.to_dict()
            out["sigma_T"] = self.freezing.sigma_T
            out["step_weights"] = self.freezing.step_weights.tolist()
        out.update(self.extras)
        return out


def _interp_state(traj: Trajectory, s: float) -> np.ndarray:
    return np.array([np.interp(s, traj.times, traj.states[:, i]) for i in range(traj.states.shape[1])])


def reconstruct_worst_cost(instance: ProblemInstance, grid: TimeGrid, states, controls,
                           relaxed_value: float, substeps: int = 4) -> ReconstructionResult:
    """Sum-to-one reconstruction; also used for prefix solutions of length ``k' < K``."""
    decomp = decompose_solution(instance, grid, states, controls, EXACT_SUM_ONE)
    alpha = build_alpha_schedule_p1(decomp, grid, instance)
    traj = integrate_dynamics(instance, alpha, instance.x0, grid, substeps)
    J = evaluate_running_objective(instance, traj, alpha, grid)
    feas = check_feasibility(instance, traj, grid=grid)
    tau, k, value = select_terminal_time(J, instance, feas.feasible_upto, grid)
    n_rel = len(states)
    xe = traj.at_nodes()[:n_rel]
    state_error = float(np.max(np.abs(np.asarray(states) - xe)))
    if instance.kind is ProblemKind.MINMAX:
        cost_error = abs(float(np.max(J)) - relaxed_value)
    else:
        cost_error = abs(float(J[n_rel - 1]) - relaxed_value)
    return ReconstructionResult(decomp, alpha, traj, J, feas, value, k, tau, state_error, cost_error)


def reconstruct_freezing(instance: ProblemInstance, grid: TimeGrid, states, controls,
                         relaxed_value: float, substeps: int = 4) -> ReconstructionResult:
    """Sub-one reconstruction with pseudo-time compression."""
    decomp = decompose_solution(instance, grid, states, controls, SUB_ONE)
    sched = build_alpha_schedule_p2TI(decomp, grid, instance, states)
    traj = integrate_dynamics(instance, sched.alpha, instance.x0, grid, substeps)
    J = evaluate_running_objective(instance, traj, sched.alpha, grid)
    feas = check_feasibility(instance, traj, grid=grid)
    tau, k, value = select_terminal_time(J, instance, feas.feasible_upto, grid)
    sig = [pseudo_time(sched.beta1, t) for t in grid.nodes]
    xe = np.array([_interp_state(traj, s) for s in sig])
    state_error = float(np.max(np.abs(np.asarray(states) - xe)))
    x_sig_T = xe[-1]
    running = 0.0
    if not instance.stage_cost.is_zero:
        mask = traj.times[:-1] < sched.sigma_T
        dts = np.diff(traj.times)
        running = float(sum(instance.L(s, x, sched.alpha(s)) * h for s, x, h, mk in
                            zip(traj.times[:-1], traj.states[:-1], dts, mask) if mk))
    cost_sigma_T = running + instance.g(sched.sigma_T, x_sig_T)
    cost_error = abs(cost_sigma_T - relaxed_value)
    frozen_steps = [int(k_) for k_, w in enumerate(sched.step_weights) if w < 1.0 - WEIGHT_TOL]
    extras = {"cost_at_sigma_T": cost_sigma_T, "frozen_steps": frozen_steps,
              "has_frozen_tail": bool(np.any(~sched.moving))}
    return ReconstructionResult(decomp, sched.alpha, traj, J, feas, value, k, tau,
                                state_error, cost_error, sched, extras)
