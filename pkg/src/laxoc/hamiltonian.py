"""Hamiltonians, their conjugates and the relaxed control-image domains.

Notation: ``Hbar(s, x, z, p, q) = max_a -p . f(s, x, a) + q L(s, x, a)``,
``H = Hbar(q=-1)``, ``H*`` is the Legendre-Fenchel conjugate of ``H`` in
``p`` and is finite exactly on ``co(B)`` with ``B = {-f(s, x, a)}``.  The
time-invariant minimum problem uses ``max{0, H}`` whose conjugate lives on
``co({0} u B)``.  ``Hbar_W`` is the dual expression ``max_b p . b + q H*(b)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import linprog, minimize, minimize_scalar

from .problem import ProblemInstance
from .sets import Box, ConvexSet, Polytope

#: control samples per axis for sampled maximization over A
SAMPLE_RESOLUTION = 201
#: domain samples per axis for the sampled dual maximization
DOMAIN_RESOLUTION = 201
DOMAIN_TOL = 1e-9


class HamiltonianValue(NamedTuple):
    value: float
    argmax: Optional[np.ndarray]


@dataclass(frozen=True, eq=False)
class ControlImageSet:
    """``co(B(s, x)) = shift + base`` and optionally its hull with the origin.

    ``shift = -M(s) x`` and ``base = co{-fa(s, a) : a in A}``.
    """

    shift: np.ndarray
    base: ConvexSet
    include_zero: bool = False

    @property
    def dim(self) -> int:
        return self.base.dim

    def margin(self, b) -> float:
        b = np.asarray(b, dtype=float)
        if not self.include_zero:
            return self.base.margin(b - self.shift)
        if self.dim == 1:
            lo, hi = self.bounds()
            return float(max(lo[0] - b[0], b[0] - hi[0]))

        def m(theta):
            return self.base.margin(b - theta * self.shift, theta)

        best = min(m(0.0), m(1.0))
        res = minimize_scalar(m, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-12})
        return float(min(best, res.fun))

    def contains(self, b, tol: float = 0.0) -> bool:
        return self.margin(b) <= tol

    def support(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        val = p @ self.shift + self.base.support(p)
        return np.maximum(val, 0.0) if self.include_zero else val

    def sample(self, resolution: int = 21) -> np.ndarray:
        pts = self.shift + self.base.sample(resolution)
        if not self.include_zero:
            return pts
        if self.dim == 1:
            lo, hi = self.bounds()
            return np.linspace(lo[0], hi[0], resolution)[:, None]
        thetas = np.linspace(0.0, 1.0, max(resolution // 4, 3))
        return np.unique(np.vstack([th * pts for th in thetas]), axis=0)

    def bounds(self):
        lo, hi = self.base.bounds()
        lo, hi = lo + self.shift, hi + self.shift
        if self.include_zero:
            lo, hi = np.minimum(lo, 0.0), np.maximum(hi, 0.0)
        return lo, hi


def control_image(instance: ProblemInstance, s: float, x, include_zero: bool = False) -> ControlImageSet:
    """Relaxed domain at ``(s, x)``; sampled hull when no structure is declared."""
    x = np.asarray(x, dtype=float)
    dyn = instance.dynamics
    if dyn.state_affine:
        return ControlImageSet(-dyn.M_at(s) @ x, dyn.image(s), include_zero)
    pts = np.array([-instance.f(s, x, a) for a in instance.control_set.sample(SAMPLE_RESOLUTION)])
    return ControlImageSet(np.zeros(instance.n), Polytope(pts), include_zero)


def domain_contains(imgset: ControlImageSet, b) -> tuple[bool, float]:
    """Closed-set membership with a signed margin (negative inside)."""
    margin = imgset.margin(b)
    return bool(margin <= 1e-12), float(margin)


def _refine_in_box(fun, a0, box: Box):
    res = minimize(lambda a: -fun(a), a0, method="L-BFGS-B",
                   bounds=list(zip(box.lo, box.hi)), options={"ftol": 1e-15, "gtol": 1e-12})
    return res.x, -res.fun


def eval_Hbar_sampled(instance: ProblemInstance, s, x, p, q) -> HamiltonianValue:
    """Maximize over a dense sample of ``A`` and polish locally on boxes."""
    x = np.asarray(x, float)
    p = np.asarray(p, float)

    def obj(a):
        return float(-p @ instance.f(s, x, a) + q * instance.L(s, x, a))

    samples = instance.control_set.sample(SAMPLE_RESOLUTION)
    vals = np.array([obj(a) for a in samples])
    i = int(np.argmax(vals))
    a_best, v_best = samples[i], float(vals[i])
    if isinstance(instance.control_set, Box):
        a_ref, v_ref = _refine_in_box(obj, a_best, instance.control_set)
        if v_ref > v_best:
            a_best, v_best = a_ref, v_ref
    return HamiltonianValue(v_best, np.asarray(a_best, float))


def eval_Hbar(instance: ProblemInstance, s, x, z, p, q) -> HamiltonianValue:
    """``max_a -p . f + q L``; ``z`` is carried for signature parity only."""
    del z
    p = np.asarray(p, dtype=float)
    if instance.hamiltonian is not None:
        return HamiltonianValue(float(instance.hamiltonian(s, np.asarray(x, float), p, q)), None)
    if instance.stage_cost.is_zero and instance.dynamics.state_affine:
        img = control_image(instance, s, x)
        b = img.shift + img.base.support_point(p)
        return HamiltonianValue(float(img.support(p)), find_witness(instance, s, x, b))
    return eval_Hbar_sampled(instance, s, x, p, q)


def eval_H(instance: ProblemInstance, s, x, p) -> float:
    return eval_Hbar(instance, s, x, 0.0, p, -1.0).value


def eval_H2TI(instance: ProblemInstance, x, p) -> float:
    _require_ti(instance)
    return max(0.0, eval_H(instance, 0.0, x, p))


def eval_Hbar2TI(instance: ProblemInstance, x, z, p, q) -> float:
    """``max{0, Hbar}`` used by the time-invariant minimum problem."""
    _require_ti(instance)
    return max(0.0, eval_Hbar(instance, 0.0, x, z, p, q).value)


def _require_ti(instance: ProblemInstance):
    if not instance.time_invariant:
        raise ValueError("time-invariant Hamiltonian requested for a time-varying instance")


def find_witness(instance: ProblemInstance, s, x, b, tol: float = 1e-9) -> Optional[np.ndarray]:
    """Some ``a in A`` with ``-f(s, x, a) = b`` or ``None``."""
    b = np.asarray(b, dtype=float)
    A = instance.control_set
    dyn = instance.dynamics
    x = np.asarray(x, float)
    if dyn.control_affine:
        # solve N a = -b - M x - C in the least-squares sense, then check
        rhs = -b - dyn.M_at(s) @ x - dyn.C_at(s)
        a, *_ = np.linalg.lstsq(dyn.N, rhs, rcond=None)
        if isinstance(A, Box):
            a = np.clip(a, A.lo, A.hi)
        if A.margin(a) <= tol and np.max(np.abs(-instance.f(s, x, a) - b)) <= tol:
            return a
        return None
    if isinstance(A, Box):
        samples = A.sample(21)
        errs = [np.sum((-instance.f(s, x, a) - b) ** 2) for a in samples]
        a0 = samples[int(np.argmin(errs))]
        res = minimize(lambda a: np.sum((-instance.f(s, x, a) - b) ** 2), a0, method="L-BFGS-B",
                       bounds=list(zip(A.lo, A.hi)), options={"ftol": 1e-30, "gtol": 1e-16})
        if np.max(np.abs(-instance.f(s, x, res.x) - b)) <= tol:
            return res.x
    return None


def _lp_envelope(costs, points, b, include_zero: bool):
    """``min sum lam_i costs_i`` with ``sum lam_i points_i = b`` on the simplex."""
    n_pts = points.shape[0]
    if include_zero:
        costs = np.concatenate([costs, [0.0]])
        points = np.vstack([points, np.zeros(points.shape[1])])
        n_pts += 1
    a_eq = np.vstack([points.T, np.ones((1, n_pts))])
    b_eq = np.concatenate([b, [1.0]])
    res = linprog(costs, A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * n_pts, method="highs")
    return res


def _envelope_1d(pts, costs, b: float, include_zero: bool) -> float:
    """Lower convex envelope of ``(pts, costs)`` at ``b`` via a monotone-chain hull."""
    if include_zero:
        pts, costs = np.append(pts, 0.0), np.append(costs, 0.0)
    order = np.lexsort((costs, pts))
    pts, costs = pts[order], costs[order]
    keep = np.concatenate([[True], np.diff(pts) > 0])
    pts, costs = pts[keep], costs[keep]
    if b < pts[0] - DOMAIN_TOL or b > pts[-1] + DOMAIN_TOL:
        return float("inf")
    hull = []
    for xy in zip(pts, costs):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (xy[1] - y1) - (y2 - y1) * (xy[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(xy)
    hx, hy = np.array(hull).T
    return float(np.interp(np.clip(b, hx[0], hx[-1]), hx, hy))


def hstar_candidates(instance: ProblemInstance, s, x, b=None) -> np.ndarray:
    cands = instance.control_set.sample(SAMPLE_RESOLUTION)
    if b is not None:
        a = find_witness(instance, s, x, b)
        if a is not None:
            cands = np.vstack([cands, a])
    return cands


def _lift(instance: ProblemInstance, s, x, cands) -> tuple[np.ndarray, np.ndarray]:
    """Stage costs and velocities ``(L, -f)`` of the candidate controls."""
    costs = np.array([instance.L(s, x, a) for a in cands])
    points = np.array([-instance.f(s, x, a) for a in cands])
    return costs, points


def eval_H_star(instance: ProblemInstance, s, x, b, include_zero: bool = False,
                lifted: Optional[tuple] = None) -> float:
    """Conjugate of ``H`` (or of ``max{0, H}`` when ``include_zero``); ``+inf`` off the domain.

    ``lifted`` optionally caches ``_lift`` of the sampled control set at ``(s, x)``.
    """
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    img = control_image(instance, s, x, include_zero)
    if img.margin(b) > DOMAIN_TOL:
        return float("inf")
    cost = instance.stage_cost
    if cost.is_zero:
        return 0.0
    if cost.separable and cost.control_hstar is not None:
        if include_zero:
            return _perspective_envelope(instance, s, x, b)
        return float(cost.state_part.value(s, x) + cost.control_hstar(s, b - img.shift))
    if lifted is None:
        costs, points = _lift(instance, s, x, hstar_candidates(instance, s, x, b))
    else:
        costs, points = lifted
        a = find_witness(instance, s, x, b)
        if a is not None:
            c1, p1 = _lift(instance, s, x, [a])
            costs, points = np.concatenate([costs, c1]), np.vstack([points, p1])
    if instance.n == 1:
        return _envelope_1d(points[:, 0], costs, float(b[0]), include_zero)
    res = _lp_envelope(costs, points, b, include_zero)
    if res.status == 0:
        return float(res.fun)
    return _hstar_dual_ascent(instance, s, x, b, include_zero)


def _ray_interval(img: ControlImageSet, b: np.ndarray) -> Optional[tuple]:
    """``[mu_lo, mu_hi]`` with ``mu b`` in ``img`` and ``mu >= 1``; the margin is convex along the ray."""
    lo, hi = img.bounds()
    if isinstance(img.base, Box):
        with np.errstate(divide="ignore", invalid="ignore"):
            ends = np.sort(np.stack([lo / b, hi / b]), axis=0)
        free = b == 0
        if np.any(free & ((lo > DOMAIN_TOL) | (hi < -DOMAIN_TOL))):
            return None
        mu_lo = max(1.0, float(np.max(ends[0][~free])))
        mu_hi = float(np.min(ends[1][~free]))
        return (mu_lo, mu_hi) if mu_lo <= mu_hi * (1 + 1e-12) else None
    scale = float(np.max(np.abs(b)))
    mu_max = max(1.0, float(np.max(np.maximum(np.abs(lo), np.abs(hi)))) / scale * (1 + 1e-9))

    def m(mu):
        return img.margin(mu * b)

    res = minimize_scalar(m, bounds=(1.0, mu_max), method="bounded", options={"xatol": 1e-12})
    mu_in, m_in = min(((1.0, m(1.0)), (mu_max, m(mu_max)), (float(res.x), float(res.fun))),
                      key=lambda t: t[1])
    if m_in > DOMAIN_TOL:
        return None

    def edge(a, c):
        # a is inside, c may be outside
        if m(c) <= DOMAIN_TOL:
            return c
        for _ in range(50):
            mid = 0.5 * (a + c)
            a, c = (mid, c) if m(mid) <= DOMAIN_TOL else (a, mid)
        return a

    return edge(mu_in, 1.0), edge(mu_in, mu_max)


def _perspective_envelope(instance, s, x, b) -> float:
    """``inf_{0 < lam <= 1} lam H*(b / lam)``: the conjugate of ``max{0, H}`` for convex ``H*``."""
    if not np.any(b):
        return 0.0
    img = control_image(instance, s, x)
    span = _ray_interval(img, b)
    if span is None:
        return float("inf")
    cost = instance.stage_cost
    base = cost.state_part.value(s, x)

    def h(lam):
        v = np.asarray(b / lam, float)
        return float(lam * (base + cost.control_hstar(s, v - img.shift)))

    lam_lo, lam_hi = 1.0 / span[1], 1.0 / span[0]
    best = min(h(lam_lo), h(lam_hi))
    if lam_hi > lam_lo:
        res = minimize_scalar(h, bounds=(lam_lo, lam_hi), method="bounded", options={"xatol": 1e-13})
        best = min(best, float(res.fun))
    return best


def _hstar_dual_ascent(instance, s, x, b, include_zero):
    """``max_p p . b - H(p)`` by quasi-Newton ascent; reduced accuracy fallback."""
    def neg(p):
        h = eval_Hbar_sampled(instance, s, x, p, -1.0).value
        if include_zero:
            h = max(0.0, h)
        return -(p @ b - h)

    res = minimize(neg, np.zeros(instance.n), method="Nelder-Mead",
                   options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 4000})
    return float(-res.fun)


def eval_H2TI_star(instance: ProblemInstance, x, b) -> float:
    _require_ti(instance)
    return eval_H_star(instance, 0.0, x, b, include_zero=True)


def eval_Hbar_W(instance: ProblemInstance, s, x, z, p, q, include_zero: bool = False) -> float:
    """``max_{b in domain} p . b + q H*(b)``."""
    del z
    p = np.asarray(p, dtype=float)
    img = control_image(instance, s, x, include_zero)
    if instance.stage_cost.is_zero:
        # H* vanishes on its domain: a support function
        return float(img.support(p))
    x = np.asarray(x, float)

    cost = instance.stage_cost
    lifted = None
    if not (cost.separable and cost.control_hstar is not None):
        lifted = _lift(instance, s, x, instance.control_set.sample(SAMPLE_RESOLUTION))

    def obj(b):
        return float(p @ b + q * eval_H_star(instance, s, x, b, include_zero, lifted))

    if img.dim == 1 and q <= 0:
        # concave objective on an interval: Brent suffices
        lo, hi = img.bounds()
        res = minimize_scalar(lambda v: -obj(np.array([v])), bounds=(lo[0], hi[0]),
                              method="bounded", options={"xatol": 1e-12})
        return max(float(-res.fun), obj(lo), obj(hi))
    bs = img.sample(DOMAIN_RESOLUTION if img.dim == 1 else 15)
    vals = np.array([obj(b) for b in bs])
    i = int(np.argmax(vals))
    best = float(vals[i])
    if img.dim == 1:
        grid = np.sort(bs[:, 0])
        j = int(np.searchsorted(grid, bs[i, 0]))
        lo = grid[max(j - 1, 0)]
        hi = grid[min(j + 1, len(grid) - 1)]
        if hi > lo:
            res = minimize_scalar(lambda v: -obj(np.array([v])), bounds=(lo, hi),
                                  method="bounded", options={"xatol": 1e-12})
            best = max(best, float(-res.fun))
    return best


def eval_Hbar_W_TI(instance: ProblemInstance, x, z, p, q) -> float:
    _require_ti(instance)
    return eval_Hbar_W(instance, 0.0, x, z, p, q, include_zero=True)


# grid evaluation for the level-set oracle ---------------------------------

def _batch_f(instance, s, X, a):
    try:
        out = np.asarray(instance.dynamics.f(s, X, a), dtype=float)
        if out.shape == X.shape:
            return out
    except Exception:  # evaluator is not vectorized
        pass
    flat = X.reshape(-1, X.shape[-1])
    return np.array([instance.f(s, xx, a) for xx in flat]).reshape(X.shape)


def _batch_L(instance, s, X, a):
    cost = instance.stage_cost
    if cost.is_zero:
        return np.zeros(X.shape[:-1])
    if cost.separable:
        return cost.state_part.value_batch(s, X) + cost.control_value(s, a)
    flat = X.reshape(-1, X.shape[-1])
    return np.array([instance.L(s, xx, a) for xx in flat]).reshape(X.shape[:-1])


def hbar_on_grid(instance: ProblemInstance, s, X, P, Q, variant: str = "plain") -> np.ndarray:
    """Vectorized Hamiltonians on state grids.

    ``variant`` is one of ``plain`` (``Hbar``), ``min0`` (``min{0, Hbar}``),
    ``max0`` (``max{0, Hbar}``), ``W`` (``Hbar_W``) and ``W_TI``.
    """
    if variant in ("W", "W_TI"):
        return _hbar_w_on_grid(instance, s, X, P, Q, include_zero=(variant == "W_TI"))
    if instance.hamiltonian is not None and getattr(instance.hamiltonian, "vectorized", False):
        H = instance.hamiltonian(s, X, P, Q)
    elif instance.stage_cost.is_zero and instance.dynamics.state_affine:
        M = instance.dynamics.M_at(s)
        H = -np.einsum("...i,...i->...", P, X @ M.T) + instance.dynamics.image(s).support(P)
    else:
        H = np.full(Q.shape, -np.inf)
        for a in instance.control_set.sample(SAMPLE_RESOLUTION):
            F = _batch_f(instance, s, X, a)
            Lv = _batch_L(instance, s, X, a)
            H = np.maximum(H, -np.einsum("...i,...i->...", P, F) + Q * Lv)
    if variant == "plain":
        return H
    if variant == "min0":
        return np.minimum(H, 0.0)
    if variant == "max0":
        return np.maximum(H, 0.0)
    raise ValueError(f"unknown Hamiltonian variant {variant!r}")


def _hbar_w_on_grid(instance, s, X, P, Q, include_zero):
    dyn = instance.dynamics
    if not dyn.state_affine:
        raise NotImplementedError("dual Hamiltonian on grids needs declared affine structure")
    shift = -(X @ dyn.M_at(s).T)
    base = dyn.image(s)
    if instance.stage_cost.is_zero:
        val = np.einsum("...i,...i->...", P, shift) + base.support(P)
        return np.maximum(val, 0.0) if include_zero else val
    if not (instance.stage_cost.state_part_zero and dyn.state_free):
        raise NotImplementedError("dual Hamiltonian on grids supports state-free costs and fields")
    img = ControlImageSet(np.zeros(instance.n), base, include_zero)
    bs = img.sample(DOMAIN_RESOLUTION)
    x_ref = np.zeros(instance.n)
    hs = np.array([eval_H_star(instance, s, x_ref, b, include_zero) for b in bs])
    out = np.full(Q.shape, -np.inf)
    for b, h in zip(bs, hs):
        out = np.maximum(out, P @ b + Q * h)
    return out


def dissipation_bounds(instance: ProblemInstance, X: np.ndarray, times) -> tuple[np.ndarray, float]:
    """Bounds on ``|dHbar/dp_i|`` and ``|dHbar/dq|`` over the grid."""
    flat = X.reshape(-1, X.shape[-1])
    idx = np.linspace(0, flat.shape[0] - 1, min(flat.shape[0], 400)).astype(int)
    sub = flat[idx]
    ax = np.zeros(instance.n)
    az = 0.0
    for s in times:
        for a in instance.control_set.sample(21):
            F = np.array([instance.f(s, xx, a) for xx in sub])
            ax = np.maximum(ax, np.max(np.abs(F), axis=0))
            if not instance.stage_cost.is_zero:
                az = max(az, max(abs(instance.L(s, xx, a)) for xx in sub))
    return ax, az
