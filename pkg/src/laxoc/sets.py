"""Compact convex set descriptors.

The same classes describe control sets ``A`` and the convex hulls of the
control images ``co{-f(t, x, a) : a in A}``.  Every set answers four
questions: a signed membership margin (negative inside), its support
function, a finite sample of its points, and a cvxpy encoding of
``expr in scale * S`` (the ``scale`` form is the perspective used for the
freezing hull ``co({0} u B)``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import cvxpy as cp
import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

_MAX_GRID_POINTS = 20000


class ConvexSet:
    """Base class; subclasses implement the geometry."""

    dim: int

    def margin(self, v, scale: float = 1.0) -> float:
        raise NotImplementedError

    def contains(self, v, tol: float = 0.0) -> bool:
        return self.margin(np.asarray(v, dtype=float)) <= tol

    def support(self, p) -> np.ndarray:
        """``max_{w in S} p . w`` evaluated along the last axis of ``p``."""
        raise NotImplementedError

    def support_point(self, p) -> np.ndarray:
        raise NotImplementedError

    def sample(self, resolution: int = 21) -> np.ndarray:
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def cvx_constraints(self, expr, scale=None) -> list:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


def _as_vec(v, dim: int) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != dim:
        raise ValueError(f"expected a vector of length {dim}, got {v.shape[0]}")
    return v


def _scaled(value, scale):
    return value if scale is None else scale * value


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("box bounds have different shapes")
        if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box must be non-empty and bounded")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def margin(self, v, scale: float = 1.0) -> float:
        v = _as_vec(v, self.dim)
        return float(np.max(np.maximum(scale * self.lo - v, v - scale * self.hi)))

    def support(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.sum(np.maximum(p * self.lo, p * self.hi), axis=-1)

    def support_point(self, p) -> np.ndarray:
        p = _as_vec(p, self.dim)
        return np.where(p > 0, self.hi, np.where(p < 0, self.lo, 0.5 * (self.lo + self.hi)))

    def vertices(self) -> np.ndarray:
        corners = itertools.product(*[sorted({a, b}) for a, b in zip(self.lo, self.hi)])
        return np.array(list(corners), dtype=float)

    def sample(self, resolution: int = 21) -> np.ndarray:
        axes = []
        for a, b in zip(self.lo, self.hi):
            axes.append(np.array([a]) if a == b else np.linspace(a, b, resolution))
        if np.prod([len(ax) for ax in axes]) > _MAX_GRID_POINTS:
            verts = self.vertices()
            return np.vstack([verts, 0.5 * (self.lo + self.hi)])
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def bounds(self):
        return self.lo.copy(), self.hi.copy()

    def project(self, v) -> np.ndarray:
        return np.clip(_as_vec(v, self.dim), self.lo, self.hi)

    def cvx_constraints(self, expr, scale=None) -> list:
        lo, hi = _scaled(self.lo, scale), _scaled(self.hi, scale)
        fixed = self.lo == self.hi
        cons = []
        if np.all(fixed):
            return [expr == lo]
        if scale is None:
            cons += [expr >= lo, expr <= hi]
        else:
            cons += [expr >= scale * self.lo, expr <= scale * self.hi]
        return cons

    def to_dict(self) -> dict:
        return {"type": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


def point(value) -> Box:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return Box(value, value.copy())


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    """Euclidean ball."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if not self.radius >= 0 or not np.isfinite(self.radius):
            raise ValueError("ball radius must be finite and non-negative")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def margin(self, v, scale: float = 1.0) -> float:
        v = _as_vec(v, self.dim)
        return float(np.linalg.norm(v - scale * self.center) - scale * self.radius)

    def support(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return p @ self.center + self.radius * np.linalg.norm(p, axis=-1)

    def support_point(self, p) -> np.ndarray:
        p = _as_vec(p, self.dim)
        nrm = np.linalg.norm(p)
        if nrm == 0:
            return self.center.copy()
        return self.center + self.radius * p / nrm

    def sample(self, resolution: int = 21) -> np.ndarray:
        if self.dim == 1:
            return (self.center + np.linspace(-self.radius, self.radius, resolution))[:, None]
        if self.dim == 2:
            angles = np.linspace(0, 2 * np.pi, 4 * resolution, endpoint=False)
            radii = np.linspace(0, self.radius, resolution)[1:]
            pts = [self.center[None, :]]
            for r in radii:
                pts.append(self.center + r * np.stack([np.cos(angles), np.sin(angles)], axis=1))
            return np.vstack(pts)
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(resolution**2, self.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        eye = np.vstack([np.eye(self.dim), -np.eye(self.dim)])
        return np.vstack([self.center, self.center + self.radius * np.vstack([eye, dirs])])

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def cvx_constraints(self, expr, scale=None) -> list:
        if scale is None:
            return [cp.norm(expr - self.center, 2) <= self.radius]
        return [cp.norm(expr - scale * self.center, 2) <= scale * self.radius]

    def to_dict(self) -> dict:
        return {"type": "ball", "center": self.center.tolist(), "radius": float(self.radius)}


@dataclass(frozen=True, eq=False)
class DiskSlab(ConvexSet):
    """Planar disk intersected with a horizontal slab ``|y - cy| <= half_width``.

    This is the convex hull of a symmetric double sector of the disk whose
    half-angle is ``asin(half_width / radius)``.
    """

    center: np.ndarray
    radius: float
    half_width: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(2)
        object.__setattr__(self, "center", c)
        if not (0 <= self.half_width <= self.radius):
            raise ValueError("slab half width must lie in [0, radius]")

    @property
    def dim(self) -> int:
        return 2

    def margin(self, v, scale: float = 1.0) -> float:
        v = _as_vec(v, 2)
        d = v - scale * self.center
        return float(max(np.linalg.norm(d) - scale * self.radius, abs(d[1]) - scale * self.half_width))

    def _corner_x(self) -> float:
        return float(np.sqrt(self.radius**2 - self.half_width**2))

    def support(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        px, py = p[..., 0], p[..., 1]
        nrm = np.linalg.norm(p, axis=-1)
        on_arc = self.radius * np.abs(py) <= self.half_width * nrm
        corner = self._corner_x() * np.abs(px) + self.half_width * np.abs(py)
        base = p @ self.center
        return base + np.where(on_arc, self.radius * nrm, corner)

    def support_point(self, p) -> np.ndarray:
        p = _as_vec(p, 2)
        nrm = np.linalg.norm(p)
        if nrm == 0:
            return self.center.copy()
        if self.radius * abs(p[1]) <= self.half_width * nrm:
            return self.center + self.radius * p / nrm
        sx = np.sign(p[0]) if p[0] != 0 else 1.0
        return self.center + np.array([sx * self._corner_x(), np.sign(p[1]) * self.half_width])

    def sample(self, resolution: int = 21) -> np.ndarray:
        ball = Ball(self.center, self.radius).sample(resolution)
        keep = np.abs(ball[:, 1] - self.center[1]) <= self.half_width + 1e-15
        cx, h = self._corner_x(), self.half_width
        corners = self.center + np.array([[cx, h], [cx, -h], [-cx, h], [-cx, -h]])
        xs = np.linspace(-cx, cx, resolution)
        chords = np.vstack([
            np.stack([xs, np.full_like(xs, h)], axis=1),
            np.stack([xs, np.full_like(xs, -h)], axis=1),
        ]) + self.center
        return np.vstack([ball[keep], corners, chords])

    def bounds(self):
        r = np.array([self.radius, self.half_width])
        return self.center - r, self.center + r

    def cvx_constraints(self, expr, scale=None) -> list:
        if scale is None:
            d = expr - self.center
            return [cp.norm(d, 2) <= self.radius, cp.abs(d[1]) <= self.half_width]
        d = expr - scale * self.center
        return [cp.norm(d, 2) <= scale * self.radius, cp.abs(d[1]) <= scale * self.half_width]

    def to_dict(self) -> dict:
        return {
            "type": "disk_slab",
            "center": self.center.tolist(),
            "radius": float(self.radius),
            "half_width": float(self.half_width),
        }


@dataclass(frozen=True, eq=False)
class Polytope(ConvexSet):
    """Convex hull of a finite vertex list."""

    points: np.ndarray
    _normals: np.ndarray | None = field(default=None, init=False, repr=False)
    _offsets: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] == 0:
            raise ValueError("polytope needs at least one vertex")
        object.__setattr__(self, "points", pts)
        normals = offsets = None
        if pts.shape[1] == 1:
            normals = np.array([[1.0], [-1.0]])
            offsets = np.array([pts.max(), -pts.min()])
        elif pts.shape[0] > pts.shape[1]:
            try:
                hull = ConvexHull(pts)
                eq = hull.equations
                nrm = np.linalg.norm(eq[:, :-1], axis=1)
                normals = eq[:, :-1] / nrm[:, None]
                offsets = -eq[:, -1] / nrm
            except QhullError:
                pass
        object.__setattr__(self, "_normals", normals)
        object.__setattr__(self, "_offsets", offsets)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def margin(self, v, scale: float = 1.0) -> float:
        v = _as_vec(v, self.dim)
        if self._normals is not None:
            return float(np.max(self._normals @ v - scale * self._offsets))
        # lower-dimensional hull: infinity-norm distance by LP (zero inside)
        n_pts = self.points.shape[0]
        c = np.zeros(n_pts + 1)
        c[-1] = 1.0
        eye = np.eye(self.dim)
        a_ub = np.vstack([
            np.hstack([self.points.T, -np.ones((self.dim, 1))]),
            np.hstack([-self.points.T, -np.ones((self.dim, 1))]),
        ])
        b_ub = np.concatenate([v, -v])
        a_eq = np.hstack([np.ones((1, n_pts)), np.zeros((1, 1))])
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[scale],
                      bounds=[(0, None)] * (n_pts + 1), method="highs")
        del eye
        return float(res.fun) if res.status == 0 else float("inf")

    def support(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.max(p @ self.points.T, axis=-1)

    def support_point(self, p) -> np.ndarray:
        p = _as_vec(p, self.dim)
        return self.points[int(np.argmax(self.points @ p))].copy()

    def sample(self, resolution: int = 21) -> np.ndarray:
        return self.points.copy()

    def bounds(self):
        return self.points.min(axis=0), self.points.max(axis=0)

    def cvx_constraints(self, expr, scale=None) -> list:
        lam = cp.Variable(self.points.shape[0], nonneg=True)
        total = 1.0 if scale is None else scale
        return [expr == self.points.T @ lam, cp.sum(lam) == total]

    def to_dict(self) -> dict:
        return {"type": "polytope", "points": self.points.tolist()}


@dataclass(frozen=True, eq=False)
class Product(ConvexSet):
    """Cartesian product; ``blocks`` pairs coordinate index lists with sets."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple((tuple(int(i) for i in idx), s) for idx, s in self.blocks)
        seen = sorted(i for idx, _ in blocks for i in idx)
        if seen != list(range(len(seen))):
            raise ValueError("product blocks must partition the coordinates")
        for idx, s in blocks:
            if len(idx) != s.dim:
                raise ValueError("block index list does not match its set dimension")
        object.__setattr__(self, "blocks", blocks)

    @property
    def dim(self) -> int:
        return sum(len(idx) for idx, _ in self.blocks)

    def margin(self, v, scale: float = 1.0) -> float:
        v = _as_vec(v, self.dim)
        return max(s.margin(v[list(idx)], scale) for idx, s in self.blocks)

    def support(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return sum(s.support(p[..., list(idx)]) for idx, s in self.blocks)

    def support_point(self, p) -> np.ndarray:
        p = _as_vec(p, self.dim)
        out = np.empty(self.dim)
        for idx, s in self.blocks:
            out[list(idx)] = s.support_point(p[list(idx)])
        return out

    def sample(self, resolution: int = 21) -> np.ndarray:
        parts = [s.sample(resolution) for _, s in self.blocks]
        total = np.prod([len(pt) for pt in parts])
        if total > _MAX_GRID_POINTS:
            # per-block samples combined diagonally, plus every block's extreme points
            n = max(len(pt) for pt in parts)
            rows = []
            for j in range(n):
                row = np.empty(self.dim)
                for (idx, _), pt in zip(self.blocks, parts):
                    row[list(idx)] = pt[j % len(pt)]
                rows.append(row)
            return np.array(rows)
        out = []
        for combo in itertools.product(*parts):
            row = np.empty(self.dim)
            for (idx, _), piece in zip(self.blocks, combo):
                row[list(idx)] = piece
            out.append(row)
        return np.array(out)

    def bounds(self):
        lo, hi = np.empty(self.dim), np.empty(self.dim)
        for idx, s in self.blocks:
            blo, bhi = s.bounds()
            lo[list(idx)], hi[list(idx)] = blo, bhi
        return lo, hi

    def cvx_constraints(self, expr, scale=None) -> list:
        cons = []
        for idx, s in self.blocks:
            cons += s.cvx_constraints(_gather(expr, idx), scale)
        return cons

    def to_dict(self) -> dict:
        return {
            "type": "product",
            "blocks": [{"indices": list(idx), "set": s.to_dict()} for idx, s in self.blocks],
        }


def _gather(expr, idx: Sequence[int]):
    idx = list(idx)
    if len(idx) == 1:
        return expr[idx[0]:idx[0] + 1]
    if idx == list(range(idx[0], idx[-1] + 1)):
        return expr[idx[0]:idx[-1] + 1]
    return cp.hstack([expr[i] for i in idx])


def product_of(sets: Sequence[ConvexSet]) -> Product:
    """Stack sets on consecutive coordinates."""
    blocks, start = [], 0
    for s in sets:
        blocks.append((tuple(range(start, start + s.dim)), s))
        start += s.dim
    return Product(tuple(blocks))


def set_from_dict(d: dict) -> ConvexSet:
    kind = d.get("type")
    if kind == "box":
        return Box(np.asarray(d["lo"], float), np.asarray(d["hi"], float))
    if kind == "ball":
        return Ball(np.asarray(d["center"], float), float(d["radius"]))
    if kind == "disk_slab":
        return DiskSlab(np.asarray(d["center"], float), float(d["radius"]), float(d["half_width"]))
    if kind == "polytope":
        return Polytope(np.asarray(d["points"], float))
    if kind == "product":
        return Product(tuple((tuple(b["indices"]), set_from_dict(b["set"])) for b in d["blocks"]))
    raise ValueError(f"unsupported set type {kind!r}")
