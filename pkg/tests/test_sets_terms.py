import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laxoc.sets import Ball, Box, DiskSlab, Polytope, Product, point, product_of, set_from_dict
from laxoc.terms import Affine, Constant, Max, Norm, Quadratic, Sum, Zero, term_from_dict

vec2 = st.tuples(st.floats(-5, 5), st.floats(-5, 5)).map(np.array)


def _sets():
    return [
        Box([-3.0, -1.0], [-1.0, 1.0]),
        Ball([0.5, -0.5], 1.5),
        DiskSlab([-1.0, 0.0], 1.0, 0.5),
        Polytope(np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0], [1.0, 1.5]])),
    ]


@pytest.mark.parametrize("S", _sets(), ids=lambda s: type(s).__name__)
def test_support_dominates_samples(S):
    pts = S.sample(31)
    rng = np.random.default_rng(0)
    for p in rng.normal(size=(20, 2)):
        assert np.all(pts @ p <= S.support(p) + 1e-9)
        w = S.support_point(p)
        assert S.contains(w, 1e-7)
        assert w @ p == pytest.approx(S.support(p), abs=1e-7)


@pytest.mark.parametrize("S", _sets(), ids=lambda s: type(s).__name__)
@settings(max_examples=40, deadline=None)
@given(v=vec2)
def test_margin_sign_matches_cvx(S, v):
    x = cp.Variable(2)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(x - v)), S.cvx_constraints(x))
    prob.solve(solver=cp.CLARABEL)
    dist = float(np.linalg.norm(x.value - v))
    if S.margin(v) > 1e-6:
        assert dist > 1e-7
    if S.margin(v) < -1e-6:
        assert dist < 1e-5


def test_box_examples():
    B = Box([-3.0, -1.0], [-1.0, 1.0])
    assert B.contains([-2.0, 0.0])
    assert B.margin([-2.0, 0.0]) < 0
    assert not B.contains([-4.0, 0.0])
    assert B.support(np.array([1.0, 1.0])) == pytest.approx(0.0)
    assert point([1.0, 2.0]).contains([1.0, 2.0])


def test_disk_slab_half_angle_and_support():
    S = DiskSlab([0.0, 0.0], 1.0, 0.5)
    assert S.support(np.array([1.0, 0.0])) == pytest.approx(1.0)
    # support in the slab-normal direction reaches the slab edge
    assert S.support(np.array([0.0, 1.0])) == pytest.approx(0.5)
    assert not S.contains([0.0, 0.6])
    with pytest.raises(ValueError):
        DiskSlab([0.0, 0.0], 1.0, 2.0)


def test_product_non_contiguous_blocks():
    P = Product((((0, 2), Box([0.0, 0.0], [1.0, 1.0])), ((1,), Box([-1.0], [-1.0]))))
    assert P.contains([0.5, -1.0, 0.5])
    assert not P.contains([0.5, 0.0, 0.5])
    x = cp.Variable(3)
    cp.Problem(cp.Maximize(x[0] + x[1] + x[2]), P.cvx_constraints(x)).solve(solver=cp.CLARABEL)
    assert x.value == pytest.approx([1.0, -1.0, 1.0], abs=1e-6)
    assert product_of([Box([0.0], [1.0]), Box([2.0], [3.0])]).dim == 2


@pytest.mark.parametrize("S", _sets() + [product_of([Box([0.0], [1.0]), Ball([0.0], 1.0)])],
                         ids=lambda s: type(s).__name__)
def test_set_round_trip(S):
    T = set_from_dict(S.to_dict())
    for v in S.sample(7):
        assert T.margin(v) == pytest.approx(S.margin(v), abs=1e-9)


def test_terms_values_and_cvx():
    g = Norm(np.eye(2), [1.0, 1.0])
    assert g.value(0.0, np.array([1.0, 2.0])) == pytest.approx(1.0)
    q = Quadratic(np.eye(1))
    assert q.convex and q.value(0.0, np.array([3.0])) == pytest.approx(9.0)
    assert not Quadratic(-np.eye(1)).convex
    c = Affine([1.0], -2.0)
    assert c.value(0.0, np.array([0.5])) == pytest.approx(-1.5)
    m = Max((Affine([1.0], -1.0), Affine([-1.0], -1.0)))
    assert m.value(0.0, np.array([0.0])) == pytest.approx(-1.0)
    s = Sum((g, Constant(2.0)))
    assert s.value(0.0, np.array([1.0, 1.0])) == pytest.approx(2.0)
    assert Zero().is_zero
    x = cp.Variable(2)
    prob = cp.Problem(cp.Minimize(g.cvx(0.0, x)), [x[0] >= 2])
    prob.solve(solver=cp.CLARABEL)
    assert prob.value == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("t", [Norm(np.eye(2), [1.0, 1.0]), Affine([1.0, -1.0], 0.5),
                               Quadratic(np.eye(2), np.array([1.0, 0.0]), 0.2),
                               Max((Affine([1.0, 0.0], 0.0), Constant(-1.0)))],
                         ids=lambda t: type(t).__name__)
def test_term_round_trip(t):
    u = term_from_dict(t.to_dict())
    for x in np.random.default_rng(1).normal(size=(5, 2)):
        assert u.value(0.0, x) == pytest.approx(t.value(0.0, x))


def test_value_batch_matches_value():
    g = Norm(np.eye(2), [1.0, 1.0])
    X = np.random.default_rng(2).normal(size=(3, 4, 2))
    B = g.value_batch(0.0, X)
    assert B.shape == (3, 4)
    assert B[1, 2] == pytest.approx(g.value(0.0, X[1, 2]))
