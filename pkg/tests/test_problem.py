import numpy as np
import pytest

from laxoc.problem import (PiecewiseControl, ProblemKind, TimeGrid, check_feasibility,
                           evaluate_problem_value, evaluate_running_objective, integrate_dynamics)
from laxoc.scenarios import gen_example_B, toy_1d, toy_lq


def test_time_grid_uniform():
    g = TimeGrid.uniform(1.0, 0.25)
    assert g.K == 4 and g.T == pytest.approx(1.0)
    assert np.allclose(g.steps, 0.25)
    with pytest.raises(ValueError):
        TimeGrid([0.0, 0.5, 0.4])


def test_piecewise_control_round_trip_and_lookup():
    c = PiecewiseControl([0.0, 0.3, 1.0], [[1.0], [-1.0]])
    assert c(0.1)[0] == 1.0 and c(0.5)[0] == -1.0
    d = PiecewiseControl.from_dict(c.to_dict())
    assert np.array_equal(d.breakpoints, c.breakpoints)
    assert np.array_equal(d.values, c.values)


def test_example_b_constant_control_reaches_goal():
    inst = gen_example_B(1, seed=0).with_x0([0.0, 0.0])
    grid = TimeGrid.uniform(inst.T, 0.5)
    alpha = PiecewiseControl([0.0, inst.T], [[-1.0, 0.0]])
    tr = integrate_dynamics(inst, alpha, inst.x0, grid)
    # f = a + (2, 0) = (1, 0): x(1) = (1, 0)
    k1 = int(np.argmin(np.abs(tr.times - 1.0)))
    assert tr.states[k1] == pytest.approx([1.0, 0.0], abs=1e-12)


def test_rk4_fourth_order_on_time_varying_drift():
    from laxoc.scenarios import toy_minmin_running_cost

    inst = toy_minmin_running_cost(x0=0.0)
    alpha = PiecewiseControl([0.0, inst.T], [[0.0]])
    grid = TimeGrid.uniform(inst.T, 0.5)
    exact = 0.5 * np.sin(np.pi * inst.T) / np.pi
    e1 = abs(integrate_dynamics(inst, alpha, inst.x0, grid, 1).at_nodes()[1][0] - 0.5 / np.pi)
    e2 = abs(integrate_dynamics(inst, alpha, inst.x0, grid, 2).at_nodes()[1][0] - 0.5 / np.pi)
    assert e1 > 1e-6
    assert e1 / e2 >= 8.0
    assert integrate_dynamics(inst, alpha, inst.x0, grid, 8).at_nodes()[-1][0] == pytest.approx(exact, abs=1e-8)


def test_running_objective_left_endpoint():
    inst = toy_lq(x0=0.0)
    grid = TimeGrid.uniform(1.0, 0.5)
    alpha = PiecewiseControl([0.0, 1.0], [[0.5]])
    tr = integrate_dynamics(inst, alpha, inst.x0, grid)
    J = evaluate_running_objective(inst, tr, alpha, grid)
    # J(t) = 0.25 t + (0.5 t)^2
    assert J == pytest.approx([0.0, 0.125 + 0.0625, 0.25 + 0.25], abs=1e-12)


def test_feasibility_first_violation_and_prefix():
    inst = toy_1d(x0=1.5)
    grid = TimeGrid.uniform(1.0, 0.25)
    alpha = PiecewiseControl([0.0, 1.0], [[1.0]])
    tr = integrate_dynamics(inst, alpha, inst.x0, grid)
    rep = check_feasibility(inst, tr, grid=grid)
    assert rep.first_violation_time == pytest.approx(0.5, abs=1e-9)
    assert rep.max_violation == pytest.approx(0.5)
    assert rep.feasible_upto == 2
    ok = check_feasibility(inst.with_x0([0.0]), integrate_dynamics(inst, alpha, [0.0], grid), grid=grid)
    assert ok.first_violation_time is None and ok.feasible_upto == grid.K


def test_problem_value_conventions():
    J = np.array([0.3, 0.5, 0.1, 0.5])
    mm = toy_1d()
    assert evaluate_problem_value(mm, J, 3) == (0.5, 1)
    assert evaluate_problem_value(mm, J, 2)[0] == float("inf")
    mn = gen_example_B(1, 0)
    assert mn.kind is ProblemKind.MINMIN
    assert evaluate_problem_value(mn, J, 3) == (0.1, 2)
    assert evaluate_problem_value(mn, J, 1) == (0.3, 0)
    assert evaluate_problem_value(mn, J, -1)[0] == float("inf")
