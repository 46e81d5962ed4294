"""Scalar functions of ``(s, x)`` used as terminal costs, state constraints
and state parts of stage costs.

Each term evaluates in numpy and, when it is convex, also emits a cvxpy
expression so the transcription can hand it to a conic solver.  Structural
flags feed the convexity audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import cvxpy as cp
import numpy as np


class StateFunction:
    convex: bool = True
    time_invariant: bool = True
    is_zero: bool = False
    #: True when the value does not depend on ``x``.
    state_independent: bool = False

    def value(self, s: float, x) -> float:
        raise NotImplementedError

    def value_batch(self, s: float, xs: np.ndarray) -> np.ndarray:
        """Evaluate along the last axis of ``xs``."""
        xs = np.asarray(xs, dtype=float)
        flat = xs.reshape(-1, xs.shape[-1])
        out = np.array([self.value(s, row) for row in flat])
        return out.reshape(xs.shape[:-1])

    def cvx(self, s: float, x_expr):
        raise NotImplementedError(f"{type(self).__name__} has no conic form")

    @property
    def has_cvx(self) -> bool:
        return self.convex

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Zero(StateFunction):
    is_zero: bool = True
    state_independent: bool = True

    def value(self, s, x):
        return 0.0

    def value_batch(self, s, xs):
        return np.zeros(np.asarray(xs).shape[:-1])

    def cvx(self, s, x_expr):
        return cp.Constant(0.0)

    def to_dict(self):
        return {"type": "zero"}


@dataclass(frozen=True, eq=False)
class Affine(StateFunction):
    """``w . x + b``."""

    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).reshape(-1))
        object.__setattr__(self, "state_independent", bool(np.all(self.w == 0)))

    def value(self, s, x):
        return float(self.w @ np.asarray(x, dtype=float) + self.b)

    def value_batch(self, s, xs):
        return np.asarray(xs, dtype=float) @ self.w + self.b

    def cvx(self, s, x_expr):
        return self.w @ x_expr + self.b

    def to_dict(self):
        return {"type": "affine", "w": self.w.tolist(), "b": float(self.b)}


@dataclass(frozen=True, eq=False)
class Norm(StateFunction):
    """``weight * ||A x - c||_ord``."""

    A: np.ndarray
    c: np.ndarray
    ord: float = 2
    weight: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(A.shape[0]))
        if self.weight < 0:
            raise ValueError("norm weight must be non-negative")

    def value(self, s, x):
        return float(self.weight * np.linalg.norm(self.A @ np.asarray(x, float) - self.c, self.ord))

    def value_batch(self, s, xs):
        r = np.asarray(xs, dtype=float) @ self.A.T - self.c
        return self.weight * np.linalg.norm(r, ord=self.ord, axis=-1)

    def cvx(self, s, x_expr):
        return self.weight * cp.norm(self.A @ x_expr - self.c, self.ord)

    def to_dict(self):
        return {"type": "norm", "A": self.A.tolist(), "c": self.c.tolist(),
                "ord": self.ord, "weight": float(self.weight)}


@dataclass(frozen=True, eq=False)
class Quadratic(StateFunction):
    """``x' Q x + q . x + r``; convex iff ``Q`` is positive semidefinite."""

    Q: np.ndarray
    q: np.ndarray | None = None
    r: float = 0.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        Q = 0.5 * (Q + Q.T)
        q = np.zeros(Q.shape[0]) if self.q is None else np.asarray(self.q, float).reshape(-1)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "convex", bool(np.linalg.eigvalsh(Q).min() >= -1e-12))

    def value(self, s, x):
        x = np.asarray(x, dtype=float)
        return float(x @ self.Q @ x + self.q @ x + self.r)

    def value_batch(self, s, xs):
        xs = np.asarray(xs, dtype=float)
        return np.einsum("...i,ij,...j->...", xs, self.Q, xs) + xs @ self.q + self.r

    def cvx(self, s, x_expr):
        if not self.convex:
            raise NotImplementedError("indefinite quadratic has no conic form")
        return cp.quad_form(x_expr, cp.psd_wrap(self.Q)) + self.q @ x_expr + self.r

    def to_dict(self):
        return {"type": "quadratic", "Q": self.Q.tolist(), "q": self.q.tolist(), "r": float(self.r)}


@dataclass(frozen=True, eq=False)
class Sum(StateFunction):
    terms: tuple

    def __post_init__(self):
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "convex", all(t.convex for t in terms))
        object.__setattr__(self, "time_invariant", all(t.time_invariant for t in terms))
        object.__setattr__(self, "is_zero", all(t.is_zero for t in terms))
        object.__setattr__(self, "state_independent", all(t.state_independent for t in terms))

    def value(self, s, x):
        return float(sum(t.value(s, x) for t in self.terms))

    def value_batch(self, s, xs):
        return sum(t.value_batch(s, xs) for t in self.terms)

    def cvx(self, s, x_expr):
        return cp.sum(cp.hstack([t.cvx(s, x_expr) for t in self.terms])) if self.terms else cp.Constant(0.0)

    def to_dict(self):
        return {"type": "sum", "terms": [t.to_dict() for t in self.terms]}


@dataclass(frozen=True, eq=False)
class Max(StateFunction):
    """Pointwise maximum; as a constraint ``max <= 0`` each piece is imposed."""

    terms: tuple

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("max of no terms")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "convex", all(t.convex for t in terms))
        object.__setattr__(self, "time_invariant", all(t.time_invariant for t in terms))
        object.__setattr__(self, "state_independent", all(t.state_independent for t in terms))

    def value(self, s, x):
        return float(max(t.value(s, x) for t in self.terms))

    def value_batch(self, s, xs):
        return np.max(np.stack([t.value_batch(s, xs) for t in self.terms]), axis=0)

    def cvx(self, s, x_expr):
        return cp.maximum(*[t.cvx(s, x_expr) for t in self.terms]) if len(self.terms) > 1 \
            else self.terms[0].cvx(s, x_expr)

    def pieces(self) -> tuple:
        return self.terms

    def to_dict(self):
        return {"type": "max", "terms": [t.to_dict() for t in self.terms]}


@dataclass(frozen=True, eq=False)
class Constant(StateFunction):
    c: float = 0.0
    state_independent: bool = True

    def __post_init__(self):
        object.__setattr__(self, "is_zero", self.c == 0.0)

    def value(self, s, x):
        return float(self.c)

    def value_batch(self, s, xs):
        return np.full(np.asarray(xs).shape[:-1], float(self.c))

    def cvx(self, s, x_expr):
        return cp.Constant(float(self.c))

    def to_dict(self):
        return {"type": "constant", "c": float(self.c)}


@dataclass(frozen=True, eq=False)
class Callable_(StateFunction):
    """Opaque evaluator; never convex for the audit unless declared."""

    fn: Callable = field(default=None)
    label: str = "callable"
    convex: bool = False
    time_invariant: bool = True

    def value(self, s, x):
        return float(self.fn(s, np.asarray(x, dtype=float)))

    def to_dict(self):
        return {"type": "callable", "label": self.label}


def constraint_pieces(c: StateFunction) -> Sequence[StateFunction]:
    """Pieces whose joint non-positivity is equivalent to ``c <= 0``."""
    return c.pieces() if isinstance(c, Max) else (c,)


def term_from_dict(d: dict) -> StateFunction:
    kind = d.get("type")
    if kind == "zero":
        return Zero()
    if kind == "constant":
        return Constant(float(d["c"]))
    if kind == "affine":
        return Affine(np.asarray(d["w"], float), float(d.get("b", 0.0)))
    if kind == "norm":
        return Norm(np.asarray(d["A"], float), np.asarray(d["c"], float),
                    d.get("ord", 2), float(d.get("weight", 1.0)))
    if kind == "quadratic":
        q = d.get("q")
        return Quadratic(np.asarray(d["Q"], float), None if q is None else np.asarray(q, float),
                         float(d.get("r", 0.0)))
    if kind == "sum":
        return Sum(tuple(term_from_dict(t) for t in d["terms"]))
    if kind == "max":
        return Max(tuple(term_from_dict(t) for t in d["terms"]))
    raise ValueError(f"unsupported term type {kind!r}")
