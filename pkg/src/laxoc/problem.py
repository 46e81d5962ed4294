"""Problem instances, time grids, trajectories and their evaluation.

Two problem classes are supported.  ``MinMax`` minimizes over controls the
worst value over stopping times of running plus terminal cost, with the
state constraint ``c <= 0`` imposed on the whole horizon.  ``MinMin``
minimizes the best such value, with the constraint imposed only up to the
chosen stopping time.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .sets import ConvexSet
from .terms import StateFunction, Zero


class ProblemKind(str, enum.Enum):
    MINMAX = "MinMax"
    MINMIN = "MinMin"


class IntegrationError(RuntimeError):
    """Raised when the vector field returns a non-finite value."""

    def __init__(self, time: float, state: np.ndarray):
        super().__init__(f"non-finite dynamics at s={time!r}, x={np.asarray(state).tolist()}")
        self.time = time
        self.state = np.asarray(state)


@dataclass(frozen=True, eq=False)
class Dynamics:
    """Vector field ``f(s, x, a)`` plus optional affine structure.

    When ``fa`` is given the field is ``f = M(s) x + fa(s, a)`` and
    ``image(s)`` describes ``co{-fa(s, a) : a in A}``.  Fields that are in
    addition affine in the control declare ``N`` and ``C`` so that
    ``fa(s, a) = N a + C(s)``.
    """

    f: Callable
    n: int
    m: int
    M: Optional[object] = None
    fa: Optional[Callable] = None
    image: Optional[Callable] = None
    N: Optional[np.ndarray] = None
    C: Optional[object] = None
    time_invariant: bool = True
    bound: float = 1.0

    def __call__(self, s, x, a) -> np.ndarray:
        return np.asarray(self.f(s, x, a), dtype=float)

    def M_at(self, s: float) -> np.ndarray:
        if self.M is None:
            return np.zeros((self.n, self.n))
        return np.asarray(self.M(s) if callable(self.M) else self.M, dtype=float)

    def C_at(self, s: float) -> np.ndarray:
        if self.C is None:
            return np.zeros(self.n)
        return np.asarray(self.C(s) if callable(self.C) else self.C, dtype=float)

    @property
    def state_affine(self) -> bool:
        """``f = M(s) x + fa(s, a)`` is declared."""
        return self.fa is not None and self.image is not None

    @property
    def control_affine(self) -> bool:
        """``f = M x + N a + C`` is declared."""
        return self.state_affine and self.N is not None

    @property
    def state_free(self) -> bool:
        """``f = fa(a)``: no state term (``M = 0``)."""
        if not self.state_affine:
            return False
        if self.M is None:
            return True
        if callable(self.M):
            return bool(np.all(self.M_at(0.0) == 0) and np.all(self.M_at(1.0) == 0))
        return bool(np.all(np.asarray(self.M) == 0))


@dataclass(frozen=True, eq=False)
class StageCost:
    """Running cost ``L(s, x, a)``.

    Separable costs ``L = L^x(s, x) + L^a(s, a)`` set ``control_part``
    (``None`` means ``L^a = 0``).  A non-separable cost sets ``full``.
    ``control_hstar`` optionally gives the conjugate of the control part
    over the control image in closed form, as a function of
    ``w = b + M x``; ``control_hstar_cvx`` is its cvxpy counterpart.
    """

    state_part: StateFunction = field(default_factory=Zero)
    control_part: Optional[Callable] = None
    full: Optional[Callable] = None
    control_convex: bool = True
    control_cvx: Optional[Callable] = None
    control_hstar: Optional[Callable] = None
    control_hstar_cvx: Optional[Callable] = None
    bound: float = 0.0
    time_invariant: bool = True

    @property
    def separable(self) -> bool:
        return self.full is None

    @property
    def is_zero(self) -> bool:
        return self.separable and self.control_part is None and self.state_part.is_zero

    @property
    def state_part_zero(self) -> bool:
        return self.separable and self.state_part.is_zero

    @property
    def convex(self) -> bool:
        """Convex jointly in ``(x, a)``."""
        if self.is_zero:
            return True
        return self.separable and self.state_part.convex and self.control_convex

    def control_value(self, s, a) -> float:
        return 0.0 if self.control_part is None else float(self.control_part(s, np.asarray(a, float)))

    def __call__(self, s, x, a) -> float:
        if self.full is not None:
            return float(self.full(s, np.asarray(x, float), np.asarray(a, float)))
        if self.is_zero:
            return 0.0
        return self.state_part.value(s, x) + self.control_value(s, a)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    name: str
    kind: ProblemKind
    time_invariant: bool
    T: float
    dynamics: Dynamics
    stage_cost: StageCost
    terminal_cost: StateFunction
    constraint: StateFunction
    control_set: ConvexSet
    x0: np.ndarray
    hamiltonian: Optional[Callable] = None
    decomposer: Optional[Callable] = None
    filler_control: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ProblemKind(self.kind))
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ValueError("horizon must be positive and finite")
        if self.x0.shape[0] != self.n:
            raise ValueError(f"initial state has length {self.x0.shape[0]}, expected {self.n}")
        if self.control_set.dim != self.m:
            raise ValueError("control set dimension does not match the control dimension")
        if self.filler_control is not None:
            object.__setattr__(self, "filler_control", np.asarray(self.filler_control, float))
        self._spot_check()

    @property
    def n(self) -> int:
        return self.dynamics.n

    @property
    def m(self) -> int:
        return self.dynamics.m

    def _spot_check(self) -> None:
        lo, hi = self.control_set.bounds()
        a = 0.5 * (lo + hi)
        vals = [self.f(0.0, self.x0, a), self.L(0.0, self.x0, a),
                self.g(0.0, self.x0), self.c(0.0, self.x0)]
        if not all(np.all(np.isfinite(v)) for v in vals):
            raise ValueError("evaluators must be finite at the initial state")
        if self.time_invariant:
            s2 = 0.5 * self.T + 0.1234
            same = (np.allclose(self.f(0.0, self.x0, a), self.f(s2, self.x0, a))
                    and np.isclose(self.L(0.0, self.x0, a), self.L(s2, self.x0, a))
                    and np.isclose(self.g(0.0, self.x0), self.g(s2, self.x0))
                    and np.isclose(self.c(0.0, self.x0), self.c(s2, self.x0)))
            if not same:
                raise ValueError("instance declared time invariant but evaluators depend on time")

    def f(self, s, x, a) -> np.ndarray:
        return self.dynamics(s, np.asarray(x, float), np.asarray(a, float))

    def L(self, s, x, a) -> float:
        return self.stage_cost(s, x, a)

    def g(self, s, x) -> float:
        return self.terminal_cost.value(s, np.asarray(x, float))

    def c(self, s, x) -> float:
        return self.constraint.value(s, np.asarray(x, float))

    def filler(self) -> np.ndarray:
        if self.filler_control is not None:
            return self.filler_control.copy()
        lo, hi = self.control_set.bounds()
        return 0.5 * (lo + hi)

    def with_x0(self, x0) -> "ProblemInstance":
        return replace(self, x0=np.asarray(x0, float))


class TimeGrid:
    """Nodes ``0 = t_0 < ... < t_K = T``."""

    def __init__(self, nodes):
        nodes = np.asarray(nodes, dtype=float).reshape(-1)
        if nodes.shape[0] < 2 or nodes[0] != 0.0 or np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must start at 0 and increase strictly")
        self.nodes = nodes
        self.nodes.setflags(write=False)

    @classmethod
    def uniform(cls, T: float, dt: float) -> "TimeGrid":
        K = int(round(T / dt))
        if K < 1 or abs(K * dt - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"step {dt} does not divide the horizon {T}")
        nodes = np.linspace(0.0, T, K + 1)
        nodes[-1] = T
        return cls(nodes)

    @property
    def K(self) -> int:
        return self.nodes.shape[0] - 1

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def __len__(self):
        return self.nodes.shape[0]


class PiecewiseControl:
    """Control constant on ``[breakpoints[i], breakpoints[i+1])``."""

    def __init__(self, breakpoints, values):
        bp = np.asarray(breakpoints, dtype=float).reshape(-1)
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if bp.shape[0] != vals.shape[0] + 1:
            raise ValueError("need one more breakpoint than values")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must increase strictly")
        self.breakpoints = bp
        self.values = vals

    @classmethod
    def from_segments(cls, segments, start: float = 0.0, min_len: float = 0.0) -> "PiecewiseControl":
        """Build from ``(length, value)`` pairs, dropping segments no longer than ``min_len``."""
        bps, vals, s = [start], [], start
        for length, value in segments:
            if length <= min_len:
                continue
            s = s + length
            bps.append(s)
            vals.append(np.asarray(value, float))
        return cls(bps, np.array(vals))

    @property
    def span(self) -> tuple[float, float]:
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def segment_index(self, s: float) -> int:
        i = int(np.searchsorted(self.breakpoints, s, side="right")) - 1
        return min(max(i, 0), self.values.shape[0] - 1)

    def __call__(self, s: float) -> np.ndarray:
        return self.values[self.segment_index(s)]

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseControl":
        return cls(d["breakpoints"], d["values"])


@dataclass
class Trajectory:
    """States sampled at ``times``; ``node_index[k]`` locates grid node ``k``."""

    times: np.ndarray
    states: np.ndarray
    node_index: np.ndarray
    controls: Optional[np.ndarray] = None

    def at_nodes(self) -> np.ndarray:
        return self.states[self.node_index]


def _rk4(fun, s, x, a, h):
    k1 = fun(s, x, a)
    k2 = fun(s + h / 2, x + h / 2 * k1, a)
    k3 = fun(s + h / 2, x + h / 2 * k2, a)
    k4 = fun(s + h, x + h * k3, a)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_dynamics(instance: ProblemInstance, control: PiecewiseControl, x0,
                       grid: Optional[TimeGrid] = None, substeps: int = 4) -> Trajectory:
    """Classical RK4 on each interval between breakpoints and grid nodes."""
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    lo, hi = control.span
    T = instance.T
    if lo > 0 or hi < T - 1e-12:
        raise ValueError("control must be defined on [0, T]")
    knots = control.breakpoints[(control.breakpoints > 0) & (control.breakpoints < T)]
    nodes = grid.nodes if grid is not None else np.array([0.0, T])
    marks = np.unique(np.concatenate([[0.0, T], nodes, knots]))

    def fun(s, x, a):
        v = instance.f(s, x, a)
        if not np.all(np.isfinite(v)):
            raise IntegrationError(s, x)
        return v

    x = np.asarray(x0, dtype=float).copy()
    times, states, ctrls = [0.0], [x.copy()], []
    for s0, s1 in zip(marks[:-1], marks[1:]):
        a = control(0.5 * (s0 + s1))
        h = (s1 - s0) / substeps
        for j in range(substeps):
            sj = s0 + j * h
            x = _rk4(fun, sj, x, a, h)
            times.append(s1 if j == substeps - 1 else sj + h)
            states.append(x.copy())
            ctrls.append(a)
    times = np.array(times)
    ctrls.append(control(T))
    node_index = np.searchsorted(times, nodes)
    node_index = np.array([_nearest(times, t, i) for t, i in zip(nodes, node_index)])
    return Trajectory(times, np.array(states), node_index, np.array(ctrls))


def _nearest(times, t, i):
    i = min(i, len(times) - 1)
    if i > 0 and abs(times[i - 1] - t) < abs(times[i] - t):
        return i - 1
    return i


def evaluate_running_objective(instance: ProblemInstance, traj: Trajectory,
                               control: Optional[PiecewiseControl], grid: TimeGrid) -> np.ndarray:
    """``J[k'] = int_0^{t_k'} L ds + g(t_k', x(t_k'))`` with left-endpoint sums."""
    K = grid.K
    running = np.zeros(len(traj.times))
    if not instance.stage_cost.is_zero:
        if control is None:
            raise ValueError("a control is needed to integrate a nonzero stage cost")
        dt = np.diff(traj.times)
        inc = np.array([instance.L(s, x, control(s)) * h
                        for s, x, h in zip(traj.times[:-1], traj.states[:-1], dt)])
        running[1:] = np.cumsum(inc)
    J = np.empty(K + 1)
    for k, idx in enumerate(traj.node_index):
        J[k] = running[idx] + instance.g(grid.nodes[k], traj.states[idx])
    return J


class FeasibilityReport(NamedTuple):
    max_violation: float
    argmax_time: float
    first_violation_time: Optional[float]
    feasible_upto: int


def check_feasibility(instance: ProblemInstance, traj: Trajectory, tol: float = 1e-6,
                      grid: Optional[TimeGrid] = None) -> FeasibilityReport:
    cvals = instance.constraint.value_batch(0.0, traj.states) if instance.constraint.time_invariant \
        else np.array([instance.c(s, x) for s, x in zip(traj.times, traj.states)])
    imax = int(np.argmax(cvals))
    nodes = grid.nodes if grid is not None else traj.times[traj.node_index]
    bad = np.nonzero(cvals > tol)[0]
    if bad.size == 0:
        return FeasibilityReport(float(cvals[imax]), float(traj.times[imax]), None, len(nodes) - 1)
    j = int(bad[0])
    if j == 0:
        first = float(traj.times[0])
    else:
        ca, cb = cvals[j - 1], cvals[j]
        sa, sb = traj.times[j - 1], traj.times[j]
        first = float(sa + (0.0 - ca) / (cb - ca) * (sb - sa)) if ca <= 0 < cb else float(sb)
    t_bad = traj.times[j]
    feasible_upto = int(np.sum(nodes < t_bad)) - 1
    return FeasibilityReport(float(cvals[imax]), float(traj.times[imax]), first, feasible_upto)


def evaluate_problem_value(instance: ProblemInstance, J, feasible_upto: int) -> tuple[float, Optional[int]]:
    """Problem value and the index attaining it (smallest index on ties)."""
    J = np.asarray(J, dtype=float)
    K = J.shape[0] - 1
    if instance.kind is ProblemKind.MINMAX:
        if feasible_upto < K:
            return float("inf"), None
        k = int(np.argmax(J))
        return float(J[k]), k
    if feasible_upto < 0:
        return float("inf"), None
    window = J[: feasible_upto + 1]
    k = int(np.argmin(window))
    return float(window[k]), k
