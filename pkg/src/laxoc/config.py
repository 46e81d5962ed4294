"""Run configuration: builtin scenarios or declarative instances.

A configuration is a JSON document::

    {
      "schema_version": 1,
      "scenario": {"builtin": "example_a", "params": {"R": 3}},
      "grid": {"dt": 0.1},
      "solver": {"max_iter": 20000, "tol": 1e-8},
      "seed": 7
    }

Declarative instances replace ``builtin`` with ``"declarative": {...}``;
see :func:`instance_from_declarative` for the accepted fields.
"""

from __future__ import annotations

import copy
import hashlib
import inspect
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import cvxpy as cp
import numpy as np

from .problem import Dynamics, ProblemInstance, ProblemKind, StageCost, TimeGrid
from .scenarios import BUILTINS
from .sets import Ball, Box, Polytope
from .terms import term_from_dict

SCHEMA_VERSION = 1
RANDOMIZED = {"example_a", "example_b"}
DEFAULT_DT = 0.1


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunConfig:
    scenario: dict
    grid: dict = field(default_factory=lambda: {"dt": DEFAULT_DT})
    solver: dict = field(default_factory=dict)
    seed: Optional[int] = None
    out: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "scenario": self.scenario,
                "grid": self.grid, "solver": self.solver, "seed": self.seed, "out": self.out}

    def canonical_json(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = copy.deepcopy(d)
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
        if "scenario" not in d or not isinstance(d["scenario"], dict):
            raise ConfigError("scenario: missing or not an object")
        unknown = set(d) - {"schema_version", "scenario", "grid", "solver", "seed", "out"}
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown field")
        return cls(scenario=d["scenario"], grid=d.get("grid") or {"dt": DEFAULT_DT},
                   solver=d.get("solver") or {}, seed=d.get("seed"), out=d.get("out"),
                   schema_version=version)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from exc


def load_instance(config: RunConfig) -> tuple[ProblemInstance, TimeGrid]:
    """Build the instance and its time grid from a configuration."""
    sc = config.scenario
    if "builtin" in sc:
        name = sc["builtin"]
        if name not in BUILTINS:
            raise ConfigError(f"scenario.builtin: unknown scenario {name!r}")
        params = dict(sc.get("params") or {})
        factory = BUILTINS[name]
        accepted = inspect.signature(factory).parameters
        if name in RANDOMIZED:
            if config.seed is None:
                raise ConfigError("seed: required by randomized scenario " + repr(name))
            params["seed"] = int(config.seed)
        for key in params:
            if key not in accepted:
                raise ConfigError(f"scenario.params.{key}: not accepted by {name!r}")
        instance = factory(**params)
    elif "declarative" in sc:
        instance = instance_from_declarative(sc["declarative"])
    else:
        raise ConfigError("scenario: needs 'builtin' or 'declarative'")
    return instance, grid_from_config(config.grid, instance.T)


def grid_from_config(grid: dict, T: float) -> TimeGrid:
    if "K" in grid:
        K = int(grid["K"])
        if K < 1:
            raise ConfigError("grid.K: must be >= 1")
        return TimeGrid(np.linspace(0.0, T, K + 1))
    dt = float(grid.get("dt", DEFAULT_DT))
    if not dt > 0:
        raise ConfigError("grid.dt: must be positive")
    return TimeGrid.uniform(T, dt)


def _matrix(d: dict, key: str, shape: tuple, where: str) -> np.ndarray:
    try:
        arr = np.asarray(d[key], float).reshape(shape)
    except KeyError as exc:
        raise ConfigError(f"{where}.{key}: missing") from exc
    except ValueError as exc:
        raise ConfigError(f"{where}.{key}: expected shape {shape}") from exc
    return arr


def instance_from_declarative(d: dict) -> ProblemInstance:
    """Linear dynamics ``f = M x + N a + C`` with box or ball controls.

    Fields: ``name``, ``kind`` (``minmax``/``minmin``), ``T``, ``x0``,
    ``dynamics`` (``M``, ``N``, ``C``), ``control_set`` (``box`` with
    ``lo``/``hi`` or ``ball`` with ``center``/``radius``), ``terminal_cost``
    and ``constraint`` (term documents), and an optional ``stage_cost``
    with ``state`` (term document) and ``control_R`` (weight of ``a' R a``).
    """
    where = "scenario.declarative"
    try:
        x0 = np.asarray(d["x0"], float).reshape(-1)
        T = float(d["T"])
        kind = {"minmax": ProblemKind.MINMAX, "minmin": ProblemKind.MINMIN}[str(d.get("kind", "minmax")).lower()]
    except KeyError as exc:
        key = exc.args[0]
        raise ConfigError(f"{where}.{'kind' if key not in ('x0', 'T') else key}: "
                          f"{'missing' if key in ('x0', 'T') else 'expected minmax or minmin'}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    n = x0.size
    dyn_d = d.get("dynamics") or {}
    cs_d = d.get("control_set") or {}
    m = int(np.asarray(dyn_d.get("N", [[0.0]]), float).reshape(n, -1).shape[1]) if "N" in dyn_d else None
    if m is None:
        raise ConfigError(f"{where}.dynamics.N: missing")
    M = _matrix(dyn_d, "M", (n, n), f"{where}.dynamics") if "M" in dyn_d else np.zeros((n, n))
    N = _matrix(dyn_d, "N", (n, m), f"{where}.dynamics")
    C = _matrix(dyn_d, "C", (n,), f"{where}.dynamics") if "C" in dyn_d else np.zeros(n)

    ctype = cs_d.get("type")
    if ctype == "box":
        A = Box(_matrix(cs_d, "lo", (m,), f"{where}.control_set"),
                _matrix(cs_d, "hi", (m,), f"{where}.control_set"))
        pts = -(A.vertices() @ N.T) - C
        if m == n and np.allclose(N, np.diag(np.diag(N))) and np.all(np.diag(N) != 0):
            lo, hi = pts.min(axis=0), pts.max(axis=0)
            image_set = Box(lo, hi)
        else:
            image_set = Polytope(pts)
    elif ctype == "ball":
        center = _matrix(cs_d, "center", (m,), f"{where}.control_set")
        radius = float(cs_d.get("radius", 1.0))
        A = Ball(center, radius)
        scale = N[0, 0] if m == n else 0.0
        if m != n or not np.allclose(N, scale * np.eye(n)) or scale == 0.0:
            raise ConfigError(f"{where}.dynamics.N: ball controls need N = c I with c != 0")
        image_set = Ball(-(scale * center) - C, abs(scale) * radius)
    else:
        raise ConfigError(f"{where}.control_set.type: unsupported {ctype!r} (box or ball)")

    def f(s, x, a, M=M, N=N, C=C):
        return M @ np.asarray(x, float) + N @ np.asarray(a, float) + C

    def fa(s, a, N=N, C=C):
        return N @ np.asarray(a, float) + C

    lo, hi = A.bounds()
    bound = float(np.max(np.abs(np.vstack([lo, hi]) @ N.T)) + np.max(np.abs(C)) if n else 0.0)
    dynamics = Dynamics(f=f, n=n, m=m, M=M, fa=fa, image=lambda s, S=image_set: S, N=N, C=C,
                        time_invariant=True, bound=bound)

    stage = _declarative_stage_cost(d.get("stage_cost"), N, C, A, f"{where}.stage_cost")
    try:
        terminal = term_from_dict(d["terminal_cost"])
        constraint = term_from_dict(d["constraint"])
    except KeyError as exc:
        raise ConfigError(f"{where}.{exc.args[0]}: missing") from exc
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    filler = np.asarray(d.get("filler_control", A.bounds()[0]), float)
    return ProblemInstance(
        name=str(d.get("name", "declarative")), kind=kind,
        time_invariant=bool(d.get("time_invariant", True)), T=T, dynamics=dynamics,
        stage_cost=stage, terminal_cost=terminal, constraint=constraint, control_set=A,
        x0=x0, filler_control=filler)


def _declarative_stage_cost(d: Optional[dict], N, C, A, where: str) -> StageCost:
    if not d:
        return StageCost()
    try:
        state = term_from_dict(d["state"]) if "state" in d else term_from_dict({"type": "zero"})
    except ValueError as exc:
        raise ConfigError(f"{where}.state: {exc}") from exc
    if "control_R" not in d:
        return StageCost(state_part=state, bound=float(d.get("bound", 0.0)))
    m = N.shape[1]
    R = np.asarray(d["control_R"], float).reshape(m, m)
    if not np.all(np.linalg.eigvalsh(0.5 * (R + R.T)) >= -1e-12):
        raise ConfigError(f"{where}.control_R: must be positive semidefinite")
    if N.shape[0] != m or abs(np.linalg.det(N)) < 1e-12:
        raise ConfigError(f"{where}.control_R: quadratic control costs need a square invertible N")
    Ninv = np.linalg.inv(N)
    lo, hi = A.bounds()
    corners = np.array(np.meshgrid(*[[l, h] for l, h in zip(lo, hi)], indexing="ij")).reshape(m, -1).T
    bound = float(max(c @ R @ c for c in corners))

    def hstar(s, w):
        a = -Ninv @ (np.asarray(w, float) + C)
        return float(a @ R @ a)

    return StageCost(
        state_part=state,
        control_part=lambda s, a: float(np.asarray(a) @ R @ np.asarray(a)),
        control_convex=True,
        control_cvx=lambda s, a: cp.quad_form(a, cp.psd_wrap(R)),
        control_hstar=hstar,
        control_hstar_cvx=lambda s, w: cp.quad_form(-Ninv @ (w + C), cp.psd_wrap(R)),
        bound=bound + float(d.get("state_bound", 0.0)),
    )
