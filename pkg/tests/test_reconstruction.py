import numpy as np
import pytest

from laxoc.pipeline import run_reconstruct, run_solve
from laxoc.problem import PiecewiseControl, TimeGrid
from laxoc.reconstruction import (EXACT_SUM_ONE, SUB_ONE, Decomposition, DecompositionError,
                                  DecompositionStep, build_alpha_schedule_p1, decompose_step,
                                  pseudo_time, pseudo_time_inverse, select_terminal_time)
from laxoc.scenarios import gen_example_A, gen_example_B, toy_1d


@pytest.mark.parametrize("beta,a,gamma", [((-1.5, 0.0), (-0.5, 0.0), 1.0),
                                          ((-0.5, 0.0), (-1.0, 0.0), 0.5)])
def test_example_b_freezing_decomposition(beta, a, gamma):
    inst = gen_example_B(1, seed=0)
    st = decompose_step(inst, 0.0, inst.x0, np.array(beta), mode=SUB_ONE)
    (idx, atoms), = st.channels
    assert len(atoms) == 1
    assert atoms[0][0] == pytest.approx(a, abs=1e-12)
    assert atoms[0][1] == pytest.approx(gamma)
    assert st.residual <= 1e-9


def test_zero_velocity_freezes_whole_step():
    inst = gen_example_B(1, seed=0)
    st = decompose_step(inst, 0.0, inst.x0, np.zeros(2), mode=SUB_ONE)
    assert st.channels[0][1] == [] and st.weight_sums() == [0.0]
    with pytest.raises(DecompositionError):
        decompose_step(inst, 0.0, inst.x0, np.zeros(2), mode=EXACT_SUM_ONE)


def test_pseudo_time_and_inverse():
    b1 = PiecewiseControl([0.0, 0.1, 0.2, 0.3], [[1.0], [0.0], [2.0]])
    assert pseudo_time(b1, 0.25) == pytest.approx(0.15)
    assert pseudo_time(b1, 0.3) == pytest.approx(0.2)
    assert pseudo_time_inverse(b1, 0.15) == pytest.approx(0.25)
    # earliest preimage: the frozen stretch is skipped
    assert pseudo_time_inverse(b1, 0.1) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        pseudo_time_inverse(b1, 0.5)


def test_two_equal_atoms_split_each_step():
    g = TimeGrid.uniform(0.4, 0.2)
    st = DecompositionStep([((0,), [(np.array([1.0]), 0.5), (np.array([-1.0]), 0.5)])], EXACT_SUM_ONE)
    alpha = build_alpha_schedule_p1(Decomposition([st, st], EXACT_SUM_ONE), g, toy_1d())
    assert alpha.breakpoints == pytest.approx([0.0, 0.1, 0.2, 0.3, 0.4])
    assert alpha.values.ravel().tolist() == [1.0, -1.0, 1.0, -1.0]


def test_select_terminal_time():
    g = TimeGrid.uniform(0.3, 0.1)
    J = np.array([1.0, 0.2, 0.2, 0.5])
    assert select_terminal_time(J, gen_example_B(1, 0), 3, g)[:2] == (pytest.approx(0.1), 1)
    assert select_terminal_time(J, toy_1d(), 3, g)[:2] == (pytest.approx(0.0), 0)
    tau, k, v = select_terminal_time(J, toy_1d(), 2, g)
    assert tau is None and k is None and v == float("inf")


def test_example_b_reconstruction_is_exact():
    inst = gen_example_B(1, seed=0)
    g = TimeGrid.uniform(inst.T, 0.2)
    out = run_solve(inst, g)
    assert out.program == "phi2_TI"
    rec = run_reconstruct(inst, g, out)
    assert rec.feasibility.feasible_upto >= rec.k_star
    assert rec.state_error <= 1e-8
    assert rec.cost_error <= 1e-8
    # nodes sample the physical trajectory, so they can only miss the optimum
    assert rec.value >= out.solution.value - 1e-8
    assert rec.extras["has_frozen_tail"] == any(w < 1 - 1e-9 for w in rec.freezing.step_weights)


def test_example_a_error_shrinks_with_step():
    inst = gen_example_A(1, seed=0)
    errs = []
    for dt in (0.2, 0.1):
        g = TimeGrid.uniform(inst.T, dt)
        rec = run_reconstruct(inst, g, run_solve(inst, g))
        assert rec.feasibility.max_violation <= 1e-6
        errs.append(rec.state_error)
    assert errs[1] <= errs[0] + 1e-9
