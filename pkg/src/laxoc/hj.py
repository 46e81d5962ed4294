"""Grid-based level-set oracle for the augmented HJ equations (``n <= 2``).

The value function lives on ``(x, z)`` grids and is marched backward from
``V(T) = max{c, g - z}`` with a first-order monotone scheme.  Two numerical
Hamiltonians are available:

* ``lax_friedrichs``: ``Hbar`` at central differences minus global
  dissipation, valid for any instance;
* ``upwind``: for ``L = 0`` and a state-free control image the Hamiltonian is
  ``max_b p.b`` and each candidate velocity is differenced upwind.  The
  maximum over vertices, axis crossings and the origin is exact.  This avoids
  the one-cell smearing Lax-Friedrichs produces at valleys of ``V`` in ``x``.

``scheme="auto"`` picks ``upwind`` when it applies.  After each explicit step
the obstacle operations of the chosen equation are applied nodewise:

========  ====================================================
``V1``    ``max(c, g - z, V - dt Hhat)``
``W1``    same, with the dual Hamiltonian ``Hbar_W``
``V2``    ``max(c, min(g - z, V - dt Hhat))``
``V1_TI`` ``max(c, V - dt Hhat)`` with ``min{0, Hbar}``
``V2_TI`` ``max(c, V - dt Hhat)`` with ``max{0, Hbar}``
``W2_TI`` ``max(c, V - dt Hhat)`` with the dual of ``max{0, H}``
========  ====================================================
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull

from .hamiltonian import ControlImageSet, dissipation_bounds, eval_H_star, hbar_on_grid
from .problem import ProblemInstance

SCHEMES = ("auto", "lax_friedrichs", "upwind")

EQUATIONS = {
    "V1": ("plain", "max_cg"),
    "W1": ("W", "max_cg"),
    "V2": ("plain", "max_c_min_g"),
    "V1_TI": ("min0", "max_c"),
    "V2_TI": ("max0", "max_c"),
    "W2_TI": ("W_TI", "max_c"),
}


@dataclass
class HJGrids:
    x_axes: list
    z: np.ndarray
    cfl: float = 0.5

    @classmethod
    def uniform(cls, x_bounds: Sequence[tuple], dx: float, z_bounds: tuple, dz: float, cfl: float = 0.5):
        axes = [np.linspace(lo, hi, int(round((hi - lo) / dx)) + 1) for lo, hi in x_bounds]
        nz = int(round((z_bounds[1] - z_bounds[0]) / dz)) + 1
        return cls(axes, np.linspace(z_bounds[0], z_bounds[1], nz), cfl)

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.x_axes) + (len(self.z),)

    def state_mesh(self) -> np.ndarray:
        mesh = np.meshgrid(*self.x_axes, indexing="ij")
        return np.stack(mesh, axis=-1)


def default_z_bounds(instance: ProblemInstance, x_bounds, samples: int = 201) -> tuple:
    """``[min g - 1, max g + T max|L| + 1]`` over the study box."""
    axes = [np.linspace(lo, hi, samples) for lo, hi in x_bounds]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    G = instance.terminal_cost.value_batch(instance.T, X)
    return float(G.min() - 1.0), float(G.max() + instance.T * instance.stage_cost.bound + 1.0)


@dataclass
class GridValueFunction:
    which: str
    x_axes: list
    z: np.ndarray
    times: np.ndarray
    values: np.ndarray  # (len(times), *Nx, Nz)
    metadata: dict = field(default_factory=dict)

    def slice_at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise ValueError(f"time {t} was not saved (saved: {self.times.tolist()})")
        return self.values[i]

    def export(self, out_dir, stem: str = "oracle") -> dict:
        """Flat little-endian float64 array plus a JSON header; CSV slice at ``t = 0``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        bin_path = out / f"{stem}.bin"
        self.values.astype("<f8").tofile(bin_path)
        header = {
            "equation": self.which,
            "dtype": "float64-le",
            "shape": list(self.values.shape),
            "order": "C",
            "axes": {"t": self.times.tolist(), "x": [a.tolist() for a in self.x_axes],
                     "z": self.z.tolist()},
            "scheme": self.metadata,
        }
        (out / f"{stem}_manifest.json").write_text(json.dumps(header, indent=2, sort_keys=True))
        V0 = self.slice_at(float(self.times[0]))
        if len(self.x_axes) == 1:
            lines = ["x,z,V"]
            for i, x in enumerate(self.x_axes[0]):
                for l, z in enumerate(self.z):
                    lines.append(f"{x!r},{z!r},{V0[i, l]!r}")
            (out / f"{stem}_slice_t0.csv").write_text("\n".join(lines) + "\n")
        return header


def _diffs(V: np.ndarray, axis: int, h: float):
    """Backward and forward differences; edges reuse the one-sided value."""
    d = np.diff(V, axis=axis) / h
    first = np.take(d, [0], axis=axis)
    last = np.take(d, [-1], axis=axis)
    return np.concatenate([first, d], axis=axis), np.concatenate([d, last], axis=axis)


def upwind_applicable(instance: ProblemInstance) -> bool:
    dyn = instance.dynamics
    return bool(instance.stage_cost.is_zero and dyn.state_affine and dyn.state_free)


def _velocity_candidates(pts: np.ndarray, contains) -> np.ndarray:
    """Hull vertices, hull-edge crossings of the coordinate axes and the origin."""
    n = pts.shape[1]
    if n == 1:
        verts = np.array([[pts.min()], [pts.max()]])
        edges = [(verts[0], verts[1])]
    else:
        hull = ConvexHull(pts)
        verts = pts[hull.vertices]
        edges = [(verts[k], verts[(k + 1) % len(verts)]) for k in range(len(verts))]
    cand = [v for v in verts]
    for a, b in edges:
        for i in range(n):
            if (a[i] < 0 < b[i]) or (b[i] < 0 < a[i]):
                w = a[i] / (a[i] - b[i])
                q = a + w * (b - a)
                q[i] = 0.0
                cand.append(q)
    if contains(np.zeros(n)):
        cand.append(np.zeros(n))
    return np.unique(np.round(np.array(cand), 15), axis=0)


def _upwind_velocities(instance: ProblemInstance, s: float, variant: str):
    """Velocities ``b`` and z-rates for ``Hbar = max_b p.b + q h(b)``."""
    n = instance.n
    if variant in ("W", "W_TI"):
        img = ControlImageSet(np.zeros(n), instance.dynamics.image(s), variant == "W_TI")
        pts = img.sample(41)
        bs = _velocity_candidates(pts, lambda b: img.contains(b, 1e-12))
        hz = np.array([eval_H_star(instance, s, np.zeros(n), b, variant == "W_TI") for b in bs])
        return bs, hz
    x_ref = np.zeros(n)
    pts = np.array([-instance.f(s, x_ref, a) for a in instance.control_set.sample(41)])
    img = ControlImageSet(np.zeros(n), instance.dynamics.image(s))
    bs = _velocity_candidates(pts, lambda b: img.contains(b, 1e-12))
    return bs, np.zeros(len(bs))


def _upwind_hamiltonian(bs, hz, Dm, Dp, Qm, Qp) -> np.ndarray:
    out = None
    for b, h in zip(bs, hz):
        val = max(h, 0.0) * Qm + min(h, 0.0) * Qp
        for i, bi in enumerate(b):
            if bi > 0:
                val = val + bi * Dm[i]
            elif bi < 0:
                val = val + bi * Dp[i]
        out = val if out is None else np.maximum(out, val)
    return out


def solve_hj(instance: ProblemInstance, which: str, grids: HJGrids,
             save_times: Optional[Sequence[float]] = None,
             scheme: str = "auto") -> GridValueFunction:
    """Backward marching with nodewise obstacle operations."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if scheme == "auto":
        scheme = "upwind" if upwind_applicable(instance) else "lax_friedrichs"
    if scheme == "upwind" and not upwind_applicable(instance):
        raise ValueError("the upwind scheme needs L = 0 and a state-free control image")
    if which not in EQUATIONS:
        raise ValueError(f"unknown equation {which!r}; choose from {sorted(EQUATIONS)}")
    if instance.n > 2 or len(grids.x_axes) != instance.n:
        raise ValueError("the grid oracle supports n <= 2 with one axis per state")
    if which.endswith("_TI") and not instance.time_invariant:
        raise ValueError(f"{which} needs a time-invariant instance")
    variant, obstacle = EQUATIONS[which]
    T = instance.T
    X = grids.state_mesh()
    nx = instance.n
    hs = [float(a[1] - a[0]) for a in grids.x_axes]
    hz = float(grids.z[1] - grids.z[0])
    alpha_x, alpha_z = dissipation_bounds(instance, X, np.linspace(0.0, T, 5))
    rate = sum(alpha_x[i] / hs[i] for i in range(nx)) + alpha_z / hz
    dt_max = grids.cfl / rate if rate > 0 else T
    n_steps = max(1, math.ceil(T / dt_max - 1e-12))
    dt = T / n_steps

    Z = grids.z.reshape((1,) * nx + (-1,))
    Xb = X[..., None, :]  # broadcast over z

    def obstacles(t):
        C = instance.constraint.value_batch(t, X)[..., None]
        G = instance.terminal_cost.value_batch(t, X)[..., None]
        return C, G

    C, G = obstacles(T)
    V = np.maximum(C, G - Z)
    V = np.broadcast_to(V, grids.shape).copy()
    save = sorted({0.0, T} if save_times is None else set(float(s) for s in save_times))
    saved = {}
    if any(abs(s - T) < 1e-12 for s in save):
        saved[T] = V.copy()
    ti_obstacles = instance.time_invariant and instance.constraint.time_invariant \
        and instance.terminal_cost.time_invariant
    velocities = None
    for j in range(n_steps, 0, -1):
        t = j * dt
        t_prev = (j - 1) * dt
        diffs = [_diffs(V, i, hs[i]) for i in range(nx)]
        qm, qp = _diffs(V, nx, hz)
        if scheme == "upwind":
            if velocities is None or not instance.time_invariant:
                velocities = _upwind_velocities(instance, t, variant)
            Hhat = _upwind_hamiltonian(*velocities, [d[0] for d in diffs], [d[1] for d in diffs], qm, qp)
            if variant == "min0":
                Hhat = np.minimum(Hhat, 0.0)
            elif variant == "max0":
                Hhat = np.maximum(Hhat, 0.0)
        else:
            P_bar = np.empty(grids.shape + (nx,))
            diss = np.zeros(grids.shape)
            for i, (dm, dp) in enumerate(diffs):
                P_bar[..., i] = 0.5 * (dm + dp)
                diss += alpha_x[i] * 0.5 * (dp - dm)
            Q_bar = 0.5 * (qm + qp)
            diss += alpha_z * 0.5 * (qp - qm)
            Hhat = hbar_on_grid(instance, t, np.broadcast_to(Xb, grids.shape + (nx,)), P_bar, Q_bar, variant) - diss
        cand = V - dt * Hhat
        if not ti_obstacles:
            C, G = obstacles(t_prev)
        if obstacle == "max_cg":
            V = np.maximum(np.maximum(C, G - Z), cand)
        elif obstacle == "max_c_min_g":
            V = np.maximum(C, np.minimum(G - Z, cand))
        else:
            V = np.maximum(C, cand)
        for s in save:
            if abs(s - t_prev) < 0.5 * dt and s not in saved:
                saved[s] = V.copy()
    times = np.array(sorted(saved))
    values = np.stack([saved[s] for s in times])
    meta = {"scheme": scheme, "dx": hs, "dz": hz, "dt": dt, "steps": n_steps, "cfl": grids.cfl,
            "alpha_x": alpha_x.tolist(), "alpha_z": float(alpha_z),
            "boundary": "one-sided differences at edges (extrapolation)",
            "hamiltonian": variant, "obstacle": obstacle}
    return GridValueFunction(which, [a.copy() for a in grids.x_axes], grids.z.copy(), times, values, meta)


def _column(vf: GridValueFunction, t: float, x) -> np.ndarray:
    V = vf.slice_at(t)
    x = np.atleast_1d(np.asarray(x, float))
    for a, xi in zip(vf.x_axes, x):
        if xi < a[0] or xi > a[-1]:
            raise ValueError(f"state {x.tolist()} outside the grid")
    if len(vf.x_axes) == 1:
        ax = vf.x_axes[0]
        i = min(max(int(np.searchsorted(ax, x[0])) - 1, 0), len(ax) - 2)
        w = (x[0] - ax[i]) / (ax[i + 1] - ax[i])
        return (1 - w) * V[i] + w * V[i + 1]
    ax, ay = vf.x_axes
    i = min(max(int(np.searchsorted(ax, x[0])) - 1, 0), len(ax) - 2)
    j = min(max(int(np.searchsorted(ay, x[1])) - 1, 0), len(ay) - 2)
    wx = (x[0] - ax[i]) / (ax[i + 1] - ax[i])
    wy = (x[1] - ay[j]) / (ay[j + 1] - ay[j])
    return ((1 - wx) * (1 - wy) * V[i, j] + wx * (1 - wy) * V[i + 1, j]
            + (1 - wx) * wy * V[i, j + 1] + wx * wy * V[i + 1, j + 1])


def theta_from_column(z: np.ndarray, col: np.ndarray) -> tuple[float, str]:
    """Smallest ``z`` with ``col <= 0`` refined by a linear crossing."""
    idx = np.nonzero(col <= 0.0)[0]
    if idx.size == 0:
        return float("inf"), "z-range exhausted"
    l = int(idx[0])
    if l == 0:
        return float(z[0]), "attained at the lower z edge"
    v0, v1 = col[l - 1], col[l]
    return float(z[l - 1] + v0 / (v0 - v1) * (z[l] - z[l - 1])), "ok"


def extract_theta(vf: GridValueFunction, t: float, x) -> float:
    """``min z`` with ``V(t, x, z) <= 0``; ``inf`` when the z-range is exhausted."""
    return theta_from_column(vf.z, _column(vf, t, x))[0]


def extract_theta_with_note(vf: GridValueFunction, t: float, x) -> tuple[float, str]:
    return theta_from_column(vf.z, _column(vf, t, x))


def z_regularity_defects(values: np.ndarray, z: np.ndarray) -> dict:
    """Midpoint convexity and window ``V(z) - zbar <= V(z + zbar) <= V(z)`` defects along the last axis."""
    V = np.asarray(values, float)
    second = V[..., 2:] - 2 * V[..., 1:-1] + V[..., :-2]
    conv = np.maximum(-second, 0.0)
    # later maxima / minima via reversed running extrema: O(Nz) per column
    later_max = np.maximum.accumulate(V[..., ::-1], axis=-1)[..., ::-1]
    rise = later_max[..., 1:] - V[..., :-1]
    U = V + z
    later_min = np.minimum.accumulate(U[..., ::-1], axis=-1)[..., ::-1]
    drop = U[..., :-1] - later_min[..., 1:]
    out = {}
    for name, arr in (("convexity", conv), ("monotone", rise), ("slope", drop)):
        worst = float(np.max(arr)) if arr.size else 0.0
        loc = np.unravel_index(int(np.argmax(arr)), arr.shape) if arr.size else ()
        if name == "convexity" and arr.size:
            loc = loc[:-1] + (loc[-1] + 1,)
        out[name] = {"defect": max(worst, 0.0), "worst_index": [int(i) for i in loc]}
    return out


def check_z_regularity(vf: GridValueFunction, tol: float = 1e-3) -> dict:
    report = {"tol": tol, "slices": {}}
    ok = True
    for t, V in zip(vf.times, vf.values):
        d = z_regularity_defects(V, vf.z)
        report["slices"][repr(float(t))] = d
        ok = ok and all(v["defect"] <= tol for v in d.values())
    report["passed"] = ok
    return report
