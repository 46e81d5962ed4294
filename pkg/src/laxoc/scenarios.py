"""Builtin instances: the two multi-robot examples and small 1-D toys.

The examples carry their closed-form Hamiltonians and decomposition rules.
Every closed form here is written out by hand; the generic code paths in
``hamiltonian`` and ``reconstruction`` are used to cross-check them.
"""

from __future__ import annotations

import math

import cvxpy as cp
import numpy as np

from .problem import Dynamics, ProblemInstance, ProblemKind, StageCost
from .sets import Box, DiskSlab, Product, point
from .terms import Affine, Constant, Max, Norm, Sum

SQRT3 = math.sqrt(3.0)
ANGLE = math.pi / 6
#: half width of the uniform box around the formation used for Example B starts
EXAMPLE_B_PERTURBATION = 0.1
#: range of the uniform initial velocities of Example A
EXAMPLE_A_VELOCITY = 0.5


def _vectorized(fn):
    fn.vectorized = True
    return fn


def disturbance(s):
    """Horizontal disturbance of Example A."""
    return 0.5 * (1.0 + np.cos(np.pi * s))


def formation_offsets(R: int) -> np.ndarray:
    """Offsets ``o^r = (0.4 r R / (R - 1), 0)`` for ``r = 2..R``; row 0 is robot 1."""
    out = np.zeros((R, 2))
    for r in range(2, R + 1):
        out[r - 1, 0] = 0.4 * r * R / (R - 1)
    return out


def _formation_cost(R: int, pos_index, goal) -> Sum:
    """``||p^1 - goal|| + sum_r ||p^r - p^1 - o^r||`` over position coordinates."""
    dim = pos_index.state_dim(R)
    offsets = formation_offsets(R)

    def sel(r):
        S = np.zeros((2, dim))
        i, j = pos_index(r)
        S[0, i], S[1, j] = 1.0, 1.0
        return S

    terms = [Norm(sel(0), np.asarray(goal, float))]
    for r in range(1, R):
        terms.append(Norm(sel(r) - sel(0), offsets[r]))
    return Sum(tuple(terms))


# Example A -------------------------------------------------------------------

class _PosA:
    def __call__(self, r):
        return 4 * r, 4 * r + 2

    @staticmethod
    def state_dim(R):
        return 4 * R


def _sigma_a(p2, p4):
    """Support of the disk-slab image in the costate pair ``(p2, p4)``."""
    nrm = np.hypot(p2, p4)
    on_arc = np.abs(p4) <= np.tan(ANGLE) * np.abs(p2)
    return np.where(on_arc, nrm, np.abs(p2) * SQRT3 / 2 + np.abs(p4) / 2)


def gen_example_A(R: int = 1, seed: int = 0, floor_on_position: bool = True) -> ProblemInstance:
    """Disturbed double-integrator formation keeping (worst-case cost).

    ``floor_on_position`` selects the floor constraint ``x3 >= 0`` (vertical
    position) instead of ``x2 >= 0`` (horizontal velocity).
    """
    if R < 1:
        raise ValueError("need at least one robot")
    n, m = 4 * R, 2 * R
    rng = np.random.default_rng(seed)
    M = np.zeros((n, n))
    for r in range(R):
        M[4 * r, 4 * r + 1] = 1.0
        M[4 * r + 2, 4 * r + 3] = 1.0

    def fa(s, a):
        a = np.asarray(a, float).reshape(R, 2)
        out = np.zeros((R, 4))
        out[:, 1] = a[:, 0] * np.cos(a[:, 1]) + disturbance(s)
        out[:, 3] = a[:, 0] * np.sin(a[:, 1])
        return out.reshape(n)

    def f(s, x, a):
        x = np.asarray(x, float)
        return x @ M.T + fa(s, a)

    def image(s):
        blocks = []
        for r in range(R):
            blocks += [((4 * r,), point(0.0)),
                       ((4 * r + 1, 4 * r + 3), DiskSlab(np.array([-disturbance(s), 0.0]), 1.0, 0.5)),
                       ((4 * r + 2,), point(0.0))]
        return Product(tuple(blocks))

    @_vectorized
    def hamiltonian(s, x, p, q):
        x = np.asarray(x, float)
        p = np.asarray(p, float)
        total = 0.0
        for r in range(R):
            p1, p2, p3, p4 = (p[..., 4 * r + i] for i in range(4))
            x2, x4 = x[..., 4 * r + 1], x[..., 4 * r + 3]
            total = total - p1 * x2 - p2 * disturbance(s) - p3 * x4 + _sigma_a(p2, p4)
        return total

    x0 = np.zeros(n)
    offsets = formation_offsets(R)
    for r in range(R):
        x0[4 * r] = 1.0 + offsets[r, 0]
        x0[4 * r + 2] = 1.0 + offsets[r, 1]
        x0[4 * r + 1] = rng.uniform(-EXAMPLE_A_VELOCITY, EXAMPLE_A_VELOCITY)
        x0[4 * r + 3] = rng.uniform(-EXAMPLE_A_VELOCITY, EXAMPLE_A_VELOCITY)

    pieces = []
    for r in range(R):
        e = np.zeros(n)
        e[4 * r] = 1.0
        pieces.append(Affine(e, -5.2))
        e = np.zeros(n)
        e[4 * r + 2 if floor_on_position else 4 * r + 1] = -1.0
        pieces.append(Affine(e, 0.0))

    dyn = Dynamics(f=f, n=n, m=m, M=M, fa=fa, image=image, time_invariant=False, bound=2.0)
    return ProblemInstance(
        name=f"example_a_R{R}",
        kind=ProblemKind.MINMAX,
        time_invariant=False,
        T=2.0,
        dynamics=dyn,
        stage_cost=StageCost(),
        terminal_cost=_formation_cost(R, _PosA(), (1.0, 1.0)),
        constraint=Max(tuple(pieces)),
        control_set=Box(np.tile([-1.0, -ANGLE], R), np.tile([1.0, ANGLE], R)),
        x0=x0,
        hamiltonian=hamiltonian,
        decomposer=decompose_example_A,
        filler_control=np.zeros(m),
        metadata={"robots": R, "seed": seed, "velocity_range": EXAMPLE_A_VELOCITY,
                  "floor_constraint": "x3 >= 0" if floor_on_position else "x2 >= 0"},
    )


def decompose_example_A(instance, s, x, beta, mode):
    """Per-robot closed-form atoms; each robot is its own channel."""
    R = instance.n // 4
    d = disturbance(s)
    beta = np.asarray(beta, float)
    channels = []
    for r in range(R):
        u = -(beta[4 * r + 1] + d)
        v = -beta[4 * r + 3]
        idx = (2 * r, 2 * r + 1)
        if abs(u) <= 1e-14 and abs(v) <= 1e-14:
            channels.append((idx, [(np.array([0.0, 0.0]), 1.0)]))
        elif abs(v) <= abs(u) * math.tan(ANGLE) + 1e-15:
            a1 = math.copysign(min(math.hypot(u, v), 1.0), u)
            a2 = float(np.clip(math.atan(v / u), -ANGLE, ANGLE))
            channels.append((idx, [(np.array([a1, a2]), 1.0)]))
        else:
            mag = float(np.clip(2.0 * v, -1.0, 1.0))
            g1 = float(np.clip(0.5 * (1.0 + u / (SQRT3 * v)), 0.0, 1.0))
            channels.append((idx, [(np.array([mag, ANGLE]), g1),
                                   (np.array([-mag, -ANGLE]), 1.0 - g1)]))
    return channels


# Example B -------------------------------------------------------------------

class _PosB:
    def __call__(self, r):
        return 2 * r, 2 * r + 1

    @staticmethod
    def state_dim(R):
        return 2 * R


def gen_example_B(R: int = 1, seed: int = 0) -> ProblemInstance:
    """Drifting planar robots choosing the best formation time (freezing allowed)."""
    if R < 1:
        raise ValueError("need at least one robot")
    n = m = 2 * R
    rng = np.random.default_rng(seed)
    drift = np.tile([2.0, 0.0], R)

    def fa(s, a):
        return np.asarray(a, float) + drift

    def f(s, x, a):
        x = np.asarray(x, float)
        return np.zeros_like(x) + fa(s, a)

    def image(s):
        return Box(np.tile([-3.0, -1.0], R), np.tile([-1.0, 1.0], R))

    @_vectorized
    def hamiltonian(s, x, p, q):
        p = np.asarray(p, float)
        return -2.0 * np.sum(p[..., 0::2], axis=-1) + np.sum(np.abs(p), axis=-1)

    offsets = formation_offsets(R)
    x0 = np.zeros(n)
    for r in range(R):
        x0[2 * r: 2 * r + 2] = np.array([1.0, 1.0]) + offsets[r] + rng.uniform(
            -EXAMPLE_B_PERTURBATION, EXAMPLE_B_PERTURBATION, size=2)

    pieces = []
    for r in range(R):
        e = np.zeros(n)
        e[2 * r] = 1.0
        pieces.append(Affine(e, -5.0))
        e = np.zeros(n)
        e[2 * r + 1] = -1.0
        pieces.append(Affine(e, 0.0))

    dyn = Dynamics(f=f, n=n, m=m, M=None, fa=fa, image=image, N=np.eye(n), C=drift,
                   time_invariant=True, bound=3.0)
    return ProblemInstance(
        name=f"example_b_R{R}",
        kind=ProblemKind.MINMIN,
        time_invariant=True,
        T=2.0,
        dynamics=dyn,
        stage_cost=StageCost(),
        terminal_cost=_formation_cost(R, _PosB(), (1.0, 1.0)),
        constraint=Max(tuple(pieces)),
        control_set=Box(-np.ones(m), np.ones(m)),
        x0=x0,
        hamiltonian=hamiltonian,
        decomposer=decompose_example_B,
        filler_control=np.tile([-1.0, 0.0], R),
        metadata={"robots": R, "seed": seed, "perturbation_half_width": EXAMPLE_B_PERTURBATION},
    )


def example_b_hull_inequalities(b) -> np.ndarray:
    """Slacks (non-negative inside) of the pairwise description of ``co({0} u B)``."""
    b = np.asarray(b, float).reshape(-1, 2)
    out = []
    for r1 in range(b.shape[0]):
        out += [b[r1, 0] + 3.0, 1.0 - abs(b[r1, 1])]
        for r2 in range(b.shape[0]):
            out += [b[r1, 0] - 3.0 * b[r2, 0], -(b[r1, 0] - b[r2, 0] / 3.0),
                    b[r1, 1] - b[r2, 0], -(b[r1, 1] + b[r2, 0])]
    return np.array(out)


def decompose_example_B(instance, s, x, beta, mode):
    """One shared weight across robots; a single channel."""
    R = instance.n // 2
    beta = np.asarray(beta, float).reshape(R, 2)
    gamma = float(np.clip(-np.max(beta[:, 0]), 0.0, 1.0))
    idx = tuple(range(2 * R))
    if gamma <= 1e-14:
        return [(idx, [])]
    a = np.empty((R, 2))
    a[:, 0] = -beta[:, 0] / gamma - 2.0
    a[:, 1] = -beta[:, 1] / gamma
    return [(idx, [(np.clip(a, -1.0, 1.0).reshape(-1), gamma)])]


# toys ------------------------------------------------------------------------

def _interval_dynamics(drift: float = 0.0, drift_fn=None, time_invariant=True):
    def fa(s, a):
        d = drift if drift_fn is None else drift_fn(s)
        return np.asarray(a, float).reshape(1) + d

    def f(s, x, a):
        x = np.asarray(x, float)
        return np.zeros_like(x) + fa(s, a)

    def image(s):
        d = drift if drift_fn is None else drift_fn(s)
        return Box([-1.0 - d], [1.0 - d])

    C = (lambda s: np.array([drift_fn(s)])) if drift_fn is not None else np.array([drift])
    return Dynamics(f=f, n=1, m=1, M=None, fa=fa, image=image, N=np.eye(1), C=C,
                    time_invariant=time_invariant, bound=1.0 + abs(drift))


@_vectorized
def _abs_hamiltonian(s, x, p, q):
    return np.sum(np.abs(np.asarray(p, float)), axis=-1)


def toy_1d(x0: float = 0.5, c_offset: float = 2.0, T: float = 1.0) -> ProblemInstance:
    """``f = a``, ``A = [-1, 1]``, ``L = 0``, ``g = |x|``, ``c = x - c_offset``."""
    return ProblemInstance(
        name="toy_1d", kind=ProblemKind.MINMAX, time_invariant=True, T=T,
        dynamics=_interval_dynamics(), stage_cost=StageCost(),
        terminal_cost=Norm(np.eye(1), [0.0]), constraint=Affine([1.0], -c_offset),
        control_set=Box([-1.0], [1.0]), x0=[x0], hamiltonian=_abs_hamiltonian,
        filler_control=[0.0])


def toy_1d_constant_constraint(x0: float = 0.5, c_value: float = -1.0, T: float = 1.0,
                               kind: ProblemKind = ProblemKind.MINMAX) -> ProblemInstance:
    """Same as ``toy_1d`` with a constant constraint ``c = c_value``."""
    return ProblemInstance(
        name="toy_1d_const", kind=kind, time_invariant=True, T=T,
        dynamics=_interval_dynamics(), stage_cost=StageCost(),
        terminal_cost=Norm(np.eye(1), [0.0]), constraint=Constant(c_value),
        control_set=Box([-1.0], [1.0]), x0=[x0], hamiltonian=_abs_hamiltonian,
        filler_control=[0.0])


def toy_drift(x0: float = 0.0, cap: float = 6.0, T: float = 1.0) -> ProblemInstance:
    """Time-invariant MinMin: ``f = a + 2``, ``g = |x - 1|``, ``c = x - cap``.

    With the default cap the constraint never trades off against the
    terminal cost on ``x in [-2, 4]``; smaller caps move the optimal stopping
    point continuously with ``z``, which a nodal grid resolves only to
    ``O(dx)``.
    """

    @_vectorized
    def hamiltonian(s, x, p, q):
        p = np.asarray(p, float)[..., 0]
        return -2.0 * p + np.abs(p)

    return ProblemInstance(
        name="toy_drift", kind=ProblemKind.MINMIN, time_invariant=True, T=T,
        dynamics=_interval_dynamics(drift=2.0), stage_cost=StageCost(),
        terminal_cost=Norm(np.eye(1), [1.0]), constraint=Affine([1.0], -cap),
        control_set=Box([-1.0], [1.0]), x0=[x0], hamiltonian=hamiltonian,
        filler_control=[-1.0])


def toy_lq(x0: float = 0.5, T: float = 1.0) -> ProblemInstance:
    """``f = a``, ``L = a^2``, ``g = x^2``, ``c = -1``; ``H*(b) = b^2`` on ``[-1, 1]``."""
    from .terms import Quadratic

    cost = StageCost(
        control_part=lambda s, a: float(np.sum(np.asarray(a) ** 2)),
        control_convex=True,
        control_cvx=lambda s, a: cp.sum_squares(a),
        control_hstar=lambda s, w: float(np.sum(np.asarray(w) ** 2)),
        control_hstar_cvx=lambda s, w: cp.sum_squares(w),
        bound=1.0,
    )
    return ProblemInstance(
        name="toy_lq", kind=ProblemKind.MINMAX, time_invariant=True, T=T,
        dynamics=_interval_dynamics(), stage_cost=cost,
        terminal_cost=Quadratic(np.eye(1)), constraint=Constant(-1.0),
        control_set=Box([-1.0], [1.0]), x0=[x0], filler_control=[0.0])


def toy_nonconvex_cost(x0: float = 0.0) -> ProblemInstance:
    """``L(a) = 1 - a^2 + a/2`` with ``f = a``: a conjugate that is not constant.

    The lower convex envelope of ``L`` over the image ``b = -a`` is ``-b/2``.
    """
    cost = StageCost(
        control_part=lambda s, a: float(1.0 - a[0] ** 2 + 0.5 * a[0]),
        control_convex=False, bound=1.6)
    return ProblemInstance(
        name="toy_nonconvex_cost", kind=ProblemKind.MINMAX, time_invariant=True, T=1.0,
        dynamics=_interval_dynamics(), stage_cost=cost,
        terminal_cost=Norm(np.eye(1), [0.0]), constraint=Constant(-1.0),
        control_set=Box([-1.0], [1.0]), x0=[x0], filler_control=[0.0])


def toy_minmin_running_cost(x0: float = 0.5) -> ProblemInstance:
    """Time-varying MinMin with ``L = a^2`` and a cosine drift."""

    def drift(s):
        return 0.5 * np.cos(np.pi * s)

    cost = StageCost(
        control_part=lambda s, a: float(np.sum(np.asarray(a) ** 2)),
        control_convex=True,
        control_cvx=lambda s, a: cp.sum_squares(a),
        control_hstar=lambda s, w: float(np.sum((np.asarray(w) + drift(s)) ** 2)),
        control_hstar_cvx=lambda s, w: cp.sum_squares(w + drift(s)),
        bound=1.0, time_invariant=True)
    return ProblemInstance(
        name="toy_minmin_running_cost", kind=ProblemKind.MINMIN, time_invariant=False, T=1.0,
        dynamics=_interval_dynamics(drift_fn=drift, time_invariant=False), stage_cost=cost,
        terminal_cost=Norm(np.eye(1), [0.0]), constraint=Affine([1.0], -2.0),
        control_set=Box([-1.0], [1.0]), x0=[x0], filler_control=[0.0])


BUILTINS = {
    "example_a": gen_example_A,
    "example_b": gen_example_B,
    "toy_1d": toy_1d,
    "toy_drift": toy_drift,
    "toy_lq": toy_lq,
    "toy_nonconvex_cost": toy_nonconvex_cost,
    "toy_minmin_running_cost": toy_minmin_running_cost,
}
