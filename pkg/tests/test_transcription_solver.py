import json

import numpy as np
import pytest

from laxoc.problem import ProblemKind, TimeGrid
from laxoc.scenarios import (gen_example_A, gen_example_B, toy_1d, toy_1d_constant_constraint,
                             toy_drift, toy_lq, toy_minmin_running_cost)
from laxoc.solver import SolverOptions, certify, solve, solve_phi2_sweep
from laxoc.transcription import (TranscriptionError, audit_convexity, build_direct_program,
                                 build_phi1_program, build_phi2_subprogram, build_phi2TI_program)

G4 = TimeGrid.uniform(1.0, 0.25)


@pytest.mark.parametrize("x0,key", [(0.5, "phi1_toy_x0.5"), (0.0, "phi1_toy_x0"), (-1.2, "phi1_toy_xm1.2")])
def test_phi1_matches_brute_force(frozen, x0, key):
    sol = solve(build_phi1_program(toy_1d(x0), G4))
    assert sol.converged and sol.label == "global"
    assert sol.value == pytest.approx(frozen[key], abs=1e-6)


@pytest.mark.parametrize("cap,key", [(6.0, "phi2ti_drift_x0"), (0.5, "phi2ti_drift_x0_cap0.5")])
def test_phi2ti_matches_brute_force(frozen, cap, key):
    sol = solve(build_phi2TI_program(toy_drift(0.0, cap=cap), G4))
    assert sol.converged
    assert sol.value == pytest.approx(frozen[key], abs=1e-6)


def test_phi2_prefix_programs(frozen):
    inst = toy_1d_constant_constraint(0.5, kind=ProblemKind.MINMIN)
    for k, key in ((1, "phi2_prefix_x0.5_k1"), (2, "phi2_prefix_x0.5_k2")):
        sol = solve(build_phi2_subprogram(inst, G4, k))
        assert sol.value == pytest.approx(frozen[key], abs=1e-6)


def test_phi2_sweep_picks_earliest_minimiser():
    inst = toy_1d_constant_constraint(0.5, kind=ProblemKind.MINMIN)
    k, best = solve_phi2_sweep(inst, G4)
    assert k == 2 and G4.nodes[k] == pytest.approx(0.5)
    assert best.value == pytest.approx(0.0, abs=1e-6)
    assert len(best.sweep_values) == G4.K + 1


def test_infeasible_constraint_reported():
    inst = toy_1d_constant_constraint(0.5, c_value=1.0)
    sol = solve(build_phi1_program(inst, G4))
    assert sol.infeasible and not sol.converged
    assert sol.value == float("inf")


def test_wrong_class_raises():
    with pytest.raises(TranscriptionError):
        build_phi1_program(gen_example_B(1, 0), G4)
    with pytest.raises(TranscriptionError):
        build_phi2TI_program(toy_1d(), G4)


def test_lq_direct_agrees_with_phi1(frozen):
    g = TimeGrid.uniform(1.0, 1.0)
    a = solve(build_phi1_program(toy_lq(0.6), g))
    b = solve(build_direct_program(toy_lq(0.6), g))
    assert a.value == pytest.approx(frozen["lq_single_step_x0.6"], abs=1e-5)
    assert b.value == pytest.approx(a.value, abs=1e-5)


def test_solution_is_deterministic():
    inst = gen_example_B(1, seed=3)
    g = TimeGrid.uniform(inst.T, 0.25)
    d1 = json.dumps(solve(build_phi2TI_program(inst, g)).to_dict(), sort_keys=True)
    d2 = json.dumps(solve(build_phi2TI_program(inst, g)).to_dict(), sort_keys=True)
    assert d1 == d2


def test_certify_flags_perturbed_row():
    inst = gen_example_B(1, seed=0)
    g = TimeGrid.uniform(inst.T, 0.25)
    prog = build_phi2TI_program(inst, g)
    sol = solve(prog)
    cert = certify(prog, sol)
    assert cert["dynamics"] <= 1e-6
    sol.states = sol.states.copy()
    sol.states[3] += 1e-3
    cert = certify(prog, sol)
    assert cert["dynamics"] >= 1e-3 - 1e-9
    assert cert["worst_dynamics_row"] in (2, 3)


def test_audit_first_failures():
    a = audit_convexity(gen_example_A(1, 0)).columns
    assert a["phi1"].convex and not a["phi2_TI"].convex
    b = audit_convexity(gen_example_B(1, 0)).columns
    assert b["phi2_TI"].convex and not b["phi2"].convex
    assert b["phi2"].first_failing_requirement == "g = 0"
    t = audit_convexity(toy_minmin_running_cost()).columns
    assert t["phi2"].first_failing_requirement == "L = 0"
    assert t["phi2_TI"].first_failing_requirement == "f = f^a(a)"


def test_audit_serialization_stable():
    d1 = json.dumps(audit_convexity(gen_example_A(2, 1)).to_dict(), sort_keys=True)
    d2 = json.dumps(audit_convexity(gen_example_A(2, 1)).to_dict(), sort_keys=True)
    assert d1 == d2


@pytest.mark.filterwarnings("ignore:Solution may be inaccurate")
def test_options_iteration_cap():
    inst = gen_example_B(1, seed=0)
    g = TimeGrid.uniform(inst.T, 0.25)
    sol = solve(build_phi2TI_program(inst, g), SolverOptions(max_iter=1))
    assert not sol.converged
