"""Forward-Euler transcriptions of the Lax formulae and of the direct problem,
plus the structural convexity audit.

Lax programs use the relaxed control ``beta`` with ``x[k+1] = x[k] - dt_k beta[k]``.
The states are affine in ``beta`` and are eliminated; only ``beta`` (and the
epigraph scalar or perspective weights) are decision variables.  The
running cost at terminal index ``k'`` sums the steps ``k < k'``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import cvxpy as cp
import numpy as np

from .hamiltonian import _lp_envelope
from .problem import ProblemInstance, ProblemKind, TimeGrid
from .sets import Box
from .terms import constraint_pieces


class TranscriptionError(ValueError):
    """The requested program cannot be built for this instance."""


# convexity audit ------------------------------------------------------------

COLUMNS = ("theta1", "phi1", "theta2", "phi2", "phi2_TI")
ROWS = ("stage cost", "terminal cost", "dynamics", "state constraint")


@dataclass(frozen=True)
class ColumnVerdict:
    convex: bool
    first_failure: Optional[str]
    conditions: tuple  # (row, requirement, holds)

    @property
    def first_failing_requirement(self) -> Optional[str]:
        return next((q for r, q, h in self.conditions if not h), None)

    def to_dict(self) -> dict:
        return {
            "verdict": "convex" if self.convex else "non-convex",
            "first_failing_row": self.first_failure,
            "first_failing_requirement": self.first_failing_requirement,
            "conditions": [{"row": r, "requirement": q, "holds": h} for r, q, h in self.conditions],
        }


@dataclass(frozen=True)
class ConvexityReport:
    instance: str
    columns: dict

    def verdict(self, column: str) -> bool:
        return self.columns[column].convex

    def to_dict(self) -> dict:
        return {"instance": self.instance,
                "columns": {c: self.columns[c].to_dict() for c in COLUMNS}}


def _flags(instance: ProblemInstance) -> dict:
    L, g, c, f = instance.stage_cost, instance.terminal_cost, instance.constraint, instance.dynamics
    return {
        "L convex": L.convex,
        "L = L^x + L^a, L^x convex": L.separable and L.state_part.convex,
        "L = 0": L.is_zero,
        "L^x = 0 (L = L^a)": L.state_part_zero and L.time_invariant,
        "g convex": g.convex,
        "g = 0": g.is_zero,
        "g = g(x) convex": g.convex and g.time_invariant,
        "f = Mx + Na + C": f.control_affine,
        "f = M(s)x + f^a(s,a)": f.state_affine,
        "f = f^a(a)": f.state_free and f.time_invariant,
        "c convex": c.convex,
        "c = c(s)": c.state_independent,
        "c = c(x) convex": c.convex and c.time_invariant,
    }


_TABLE = {
    "theta1": ("L convex", "g convex", "f = Mx + Na + C", "c convex"),
    "phi1": ("L = L^x + L^a, L^x convex", "g convex", "f = M(s)x + f^a(s,a)", "c convex"),
    "theta2": ("L = 0", "g = 0", "f = Mx + Na + C", "c = c(s)"),
    "phi2": ("L = 0", "g = 0", "f = M(s)x + f^a(s,a)", "c = c(s)"),
    "phi2_TI": ("L^x = 0 (L = L^a)", "g = g(x) convex", "f = f^a(a)", "c = c(x) convex"),
}


def audit_convexity(instance: ProblemInstance) -> ConvexityReport:
    """Per-column convexity verdicts from declared structure."""
    flags = _flags(instance)
    cols = {}
    for col in COLUMNS:
        conds = tuple((row, req, bool(flags[req])) for row, req in zip(ROWS, _TABLE[col]))
        failing = [row for row, _, ok in conds if not ok]
        cols[col] = ColumnVerdict(not failing, failing[0] if failing else None, conds)
    return ConvexityReport(instance.name, cols)


# programs -------------------------------------------------------------------

@dataclass
class ConvexProgram:
    """A transcribed program and the numpy oracles needed to certify it.

    ``evaluate(assignment)`` recomputes the objective; ``residuals`` returns
    per-family violations.  ``backend`` is ``conic`` (cvxpy) or ``nlp``
    (single shooting for the non-convex direct problem).
    """

    kind: str
    instance: ProblemInstance
    grid: TimeGrid
    k_prime: Optional[int]
    convex: bool
    backend: str
    problem: Optional[cp.Problem] = None
    variables: dict = field(default_factory=dict)
    n_steps: int = 0
    stage_value: Optional[Callable] = None
    nlp: Optional[dict] = None
    audit: Optional[ConvexityReport] = None

    @property
    def uses_beta(self) -> bool:
        return self.kind != "direct"

    def propagate(self, controls: np.ndarray) -> np.ndarray:
        """States at nodes ``0..n_steps`` from the control sequence."""
        inst, dts = self.instance, self.grid.steps
        x = np.empty((self.n_steps + 1, inst.n))
        x[0] = inst.x0
        for k in range(self.n_steps):
            t = self.grid.nodes[k]
            if self.uses_beta:
                x[k + 1] = x[k] - dts[k] * controls[k]
            else:
                x[k + 1] = x[k] + dts[k] * inst.f(t, x[k], controls[k])
        return x

    def cost_curve(self, controls: np.ndarray, x: Optional[np.ndarray] = None) -> np.ndarray:
        """Running plus terminal cost at every node up to ``n_steps``."""
        inst, nodes, dts = self.instance, self.grid.nodes, self.grid.steps
        x = self.propagate(controls) if x is None else x
        stage = np.array([self.stage_value(k, x[k], controls[k]) for k in range(self.n_steps)])
        run = np.concatenate([[0.0], np.cumsum(stage * dts[: self.n_steps])])
        return np.array([run[k] + inst.g(nodes[k], x[k]) for k in range(self.n_steps + 1)])

    def evaluate(self, controls: np.ndarray) -> float:
        J = self.cost_curve(controls)
        if self.kind in ("phi1",) or (self.kind == "direct" and self.k_prime is None):
            return float(np.max(J))
        return float(J[-1])

    def constrained_nodes(self) -> range:
        return range(self.n_steps + 1)

    def residuals(self, controls: np.ndarray, x: Optional[np.ndarray] = None,
                  thetas: Optional[np.ndarray] = None) -> dict:
        """Recompute violations from scratch on the given assignment."""
        from .hamiltonian import control_image

        inst, nodes, dts = self.instance, self.grid.nodes, self.grid.steps
        x_prop = self.propagate(controls)
        x = x_prop if x is None else x
        dyn_res = 0.0
        for k in range(self.n_steps):
            if self.uses_beta:
                row = x[k + 1] - x[k] + dts[k] * controls[k]
            else:
                row = x[k + 1] - x[k] - dts[k] * inst.f(nodes[k], x[k], controls[k])
            dyn_res = max(dyn_res, float(np.max(np.abs(row))))
        init_res = float(np.max(np.abs(x[0] - inst.x0)))
        state_viol = max(max(0.0, inst.c(nodes[k], x[k])) for k in self.constrained_nodes())
        ctrl_viol = 0.0
        include_zero = self.kind == "phi2_TI"
        for k in range(self.n_steps):
            if self.uses_beta:
                img = control_image(inst, nodes[k], x[k], include_zero)
                ctrl_viol = max(ctrl_viol, img.margin(controls[k]))
            else:
                ctrl_viol = max(ctrl_viol, inst.control_set.margin(controls[k]))
        return {
            "dynamics": dyn_res,
            "initial_state": init_res,
            "state_constraint": state_viol,
            "control_set": max(0.0, ctrl_viol),
        }


def _state_exprs(x0: np.ndarray, beta: cp.Variable, dts: np.ndarray):
    """``x[k] = x0 - sum_{j<k} dt_j beta[j]`` as an affine expression."""
    K = dts.shape[0]
    lower = np.zeros((K + 1, K))
    for k in range(1, K + 1):
        lower[k, :k] = -dts[:k]
    X = np.tile(x0, (K + 1, 1)) + lower @ beta
    return [X[k, :] for k in range(K + 1)]


def _candidate_resolution(m: int) -> int:
    return 201 if m == 1 else 21


def _stage_cost_terms(instance: ProblemInstance, grid: TimeGrid, beta, X, n_steps, include_zero):
    """cvxpy stage terms ``H*(t_k, x[k], beta[k])`` plus the numpy re-evaluator."""
    L = instance.stage_cost
    dyn = instance.dynamics
    nodes = grid.nodes
    if L.is_zero:
        return [0.0] * n_steps, [], (lambda k, x, b: 0.0)
    if not L.separable:
        raise TranscriptionError("a non-separable stage cost has no conic conjugate here; "
                                 "declare L = L^x + L^a")
    if include_zero and not L.state_part_zero:
        raise TranscriptionError("the freezing transcription needs L^x = 0")
    if L.control_hstar_cvx is not None and L.control_hstar is not None and not include_zero:
        terms = [L.state_part.cvx(nodes[k], X[k]) + L.control_hstar_cvx(nodes[k], beta[k] + dyn.M_at(nodes[k]) @ X[k])
                 for k in range(n_steps)]

        def value(k, x, b):
            s = nodes[k]
            return float(L.state_part.value(s, x) + L.control_hstar(s, b + dyn.M_at(s) @ x))

        return terms, [], value
    # lower convex envelope over a fixed candidate set of controls
    cands = instance.control_set.sample(_candidate_resolution(instance.m))
    terms, cons, tables = [], [], []
    for k in range(n_steps):
        s = nodes[k]
        pts = np.array([-np.asarray(dyn.fa(s, a), float) for a in cands])
        costs = np.array([L.control_value(s, a) for a in cands])
        lam = cp.Variable(len(cands), nonneg=True)
        lhs = beta[k] + (0 if include_zero else dyn.M_at(s) @ X[k])
        cons += [pts.T @ lam == lhs, (cp.sum(lam) <= 1) if include_zero else (cp.sum(lam) == 1)]
        terms.append(costs @ lam + (0 if include_zero else L.state_part.cvx(s, X[k])))
        tables.append((pts, costs))

    def value(k, x, b):
        s = nodes[k]
        pts, costs = tables[k]
        w = b if include_zero else b + dyn.M_at(s) @ x
        res = _lp_envelope(costs, pts, w, include_zero)
        base = float(res.fun) if res.status == 0 else float("inf")
        return base + (0.0 if include_zero else L.state_part.value(s, x))

    return terms, cons, value


def _state_constraints(instance, grid, X, nodes_idx):
    cons = []
    for k in nodes_idx:
        for piece in constraint_pieces(instance.constraint):
            if not piece.convex:
                raise TranscriptionError("state constraint piece is not convex")
            cons.append(piece.cvx(grid.nodes[k], X[k]) <= 0)
    return cons


def _require_affine_image(instance):
    if not instance.dynamics.state_affine:
        raise TranscriptionError("Lax transcription needs f = M(s)x + f^a(s,a) with a declared control image")


def _terminal(instance, grid, X, k):
    if not instance.terminal_cost.convex:
        raise TranscriptionError("terminal cost is not convex")
    return instance.terminal_cost.cvx(grid.nodes[k], X[k])


def build_phi1_program(instance: ProblemInstance, grid: TimeGrid) -> ConvexProgram:
    """Epigraph program for the minimum over controls of the worst cost."""
    if instance.kind is not ProblemKind.MINMAX:
        raise TranscriptionError("phi1 is defined for the MinMax class")
    _require_affine_image(instance)
    K, dts = grid.K, grid.steps
    beta = cp.Variable((K, instance.n), name="beta")
    eta = cp.Variable(name="eta")
    X = _state_exprs(instance.x0, beta, dts)
    stage, cons, value = _stage_cost_terms(instance, grid, beta, X, K, include_zero=False)
    for k in range(K):
        s = grid.nodes[k]
        cons += instance.dynamics.image(s).cvx_constraints(beta[k] + instance.dynamics.M_at(s) @ X[k])
    cons += _state_constraints(instance, grid, X, range(K + 1))
    running = 0
    for kp in range(K + 1):
        cons.append(eta >= running + _terminal(instance, grid, X, kp))
        if kp < K:
            running = running + dts[kp] * stage[kp]
    prob = cp.Problem(cp.Minimize(eta), cons)
    return ConvexProgram("phi1", instance, grid, None, True, "conic", prob,
                         {"beta": beta, "eta": eta}, K, value, audit=audit_convexity(instance))


def build_phi2_subprogram(instance: ProblemInstance, grid: TimeGrid, k_prime: int) -> ConvexProgram:
    """Cost at terminal index ``k_prime`` with constraints on the prefix only."""
    if instance.kind is not ProblemKind.MINMIN:
        raise TranscriptionError("phi2 is defined for the MinMin class")
    if not 0 <= k_prime <= grid.K:
        raise TranscriptionError(f"terminal index {k_prime} outside 0..{grid.K}")
    _require_affine_image(instance)
    dts = grid.steps
    n_steps = k_prime
    beta = cp.Variable((max(n_steps, 1), instance.n), name="beta")
    X = _state_exprs(instance.x0, beta, dts[:n_steps]) if n_steps else [cp.Constant(instance.x0)]
    stage, cons, value = _stage_cost_terms(instance, grid, beta, X, n_steps, include_zero=False)
    for k in range(n_steps):
        s = grid.nodes[k]
        cons += instance.dynamics.image(s).cvx_constraints(beta[k] + instance.dynamics.M_at(s) @ X[k])
    if n_steps == 0:
        cons.append(beta == 0)
    cons += _state_constraints(instance, grid, X, range(n_steps + 1))
    running = sum((dts[k] * stage[k] for k in range(n_steps)), cp.Constant(0.0))
    objective = running + _terminal(instance, grid, X, n_steps)
    prob = cp.Problem(cp.Minimize(objective), cons)
    return ConvexProgram("phi2_sub", instance, grid, k_prime, True, "conic", prob,
                         {"beta": beta}, n_steps, value, audit=audit_convexity(instance))


def build_phi2TI_program(instance: ProblemInstance, grid: TimeGrid) -> ConvexProgram:
    """Fixed-horizon program with freezing allowed at every step."""
    if instance.kind is not ProblemKind.MINMIN or not instance.time_invariant:
        raise TranscriptionError("phi2_TI needs a time-invariant MinMin instance")
    _require_affine_image(instance)
    if not instance.dynamics.state_free:
        raise TranscriptionError("phi2_TI needs f = f^a(a) (no state term in the dynamics)")
    K, dts = grid.K, grid.steps
    beta = cp.Variable((K, instance.n), name="beta")
    theta = cp.Variable(K, name="theta")
    X = _state_exprs(instance.x0, beta, dts)
    stage, cons, value = _stage_cost_terms(instance, grid, beta, X, K, include_zero=True)
    base = instance.dynamics.image(0.0)
    cons += [theta >= 0, theta <= 1]
    for k in range(K):
        cons += base.cvx_constraints(beta[k], scale=theta[k])
    cons += _state_constraints(instance, grid, X, range(K + 1))
    running = sum((dts[k] * stage[k] for k in range(K)), cp.Constant(0.0))
    prob = cp.Problem(cp.Minimize(running + _terminal(instance, grid, X, K)), cons)
    return ConvexProgram("phi2_TI", instance, grid, None, True, "conic", prob,
                         {"beta": beta, "theta": theta}, K, value, audit=audit_convexity(instance))


def build_direct_program(instance: ProblemInstance, grid: TimeGrid,
                         k_prime: Optional[int] = None) -> ConvexProgram:
    """Transcription in the original control ``alpha``.

    MinMax programs use the epigraph over all terminal indices; MinMin
    programs fix the terminal index ``k_prime``.  Conic when the field is
    affine in ``(x, a)`` and every cost is convex with a conic form;
    otherwise a single-shooting nonlinear program flagged non-convex.
    """
    if instance.kind is ProblemKind.MINMIN and k_prime is None:
        raise TranscriptionError("direct MinMin programs need a terminal index")
    K = grid.K
    n_steps = K if k_prime is None else k_prime
    report = audit_convexity(instance)
    L = instance.stage_cost
    dyn = instance.dynamics
    nodes, dts = grid.nodes, grid.steps

    def stage_value(k, x, a):
        return instance.L(nodes[k], x, a)

    conic_ok = (dyn.control_affine and instance.terminal_cost.convex and instance.constraint.convex
                and (L.is_zero or (L.separable and L.state_part.convex
                                   and (L.control_part is None or L.control_cvx is not None))))
    kp_range = range(K + 1) if k_prime is None else [k_prime]
    if conic_ok:
        X = cp.Variable((n_steps + 1, instance.n), name="x")
        alpha = cp.Variable((max(n_steps, 1), instance.m), name="alpha")
        cons = [X[0, :] == instance.x0]
        Xr = [X[k, :] for k in range(n_steps + 1)]
        stage = []
        for k in range(n_steps):
            s = nodes[k]
            f_k = dyn.M_at(s) @ Xr[k] + dyn.N @ alpha[k] + dyn.C_at(s)
            cons.append(Xr[k + 1] == Xr[k] + dts[k] * f_k)
            cons += instance.control_set.cvx_constraints(alpha[k])
            if L.is_zero:
                stage.append(cp.Constant(0.0))
            else:
                term = L.state_part.cvx(s, Xr[k])
                if L.control_part is not None:
                    term = term + L.control_cvx(s, alpha[k])
                stage.append(term)
        cons += _state_constraints(instance, grid, Xr, range(n_steps + 1))
        cum = [cp.Constant(0.0)]
        for k in range(n_steps):
            cum.append(cum[-1] + dts[k] * stage[k])
        if k_prime is None:
            eta = cp.Variable(name="eta")
            cons += [eta >= cum[kp] + _terminal(instance, grid, Xr, kp) for kp in kp_range]
            prob = cp.Problem(cp.Minimize(eta), cons)
            variables = {"x": X, "alpha": alpha, "eta": eta}
        else:
            prob = cp.Problem(cp.Minimize(cum[n_steps] + _terminal(instance, grid, Xr, n_steps)), cons)
            variables = {"x": X, "alpha": alpha}
        return ConvexProgram("direct", instance, grid, k_prime, True, "conic", prob,
                             variables, n_steps, stage_value, audit=report)
    # single shooting: decision alpha, states by forward Euler
    A = instance.control_set
    m = instance.m

    def unpack(v):
        return v.reshape(n_steps, m)

    def states(v):
        al = unpack(v)
        x = np.empty((n_steps + 1, instance.n))
        x[0] = instance.x0
        for k in range(n_steps):
            x[k + 1] = x[k] + dts[k] * instance.f(nodes[k], x[k], al[k])
        return x

    def curve(v):
        al, x = unpack(v), states(v)
        run = np.concatenate([[0.0], np.cumsum([stage_value(k, x[k], al[k]) * dts[k] for k in range(n_steps)])])
        return np.array([run[k] + instance.g(nodes[k], x[k]) for k in range(n_steps + 1)])

    nlp = {
        "n_vars": n_steps * m,
        "bounds": list(zip(np.tile(A.lo, n_steps), np.tile(A.hi, n_steps))) if isinstance(A, Box) else None,
        "states": states,
        "curve": curve,
        "constraint": lambda v: -np.array([instance.c(nodes[k], xk) for k, xk in enumerate(states(v))]),
        "control": (lambda v: -np.array([A.margin(a) for a in unpack(v)])) if not isinstance(A, Box) else None,
        "epigraph": k_prime is None,
        "x0_guess": np.tile(instance.filler() if not isinstance(A, Box) else 0.5 * (A.lo + A.hi), n_steps),
    }
    return ConvexProgram("direct", instance, grid, k_prime, False, "nlp", None, {}, n_steps,
                         stage_value, nlp=nlp, audit=report)
