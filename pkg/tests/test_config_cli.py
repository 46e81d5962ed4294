import json

import numpy as np
import pytest

from laxoc.cli import main
from laxoc.config import ConfigError, RunConfig, load_instance
from laxoc.problem import ProblemKind
from laxoc.solver import solve
from laxoc.transcription import audit_convexity, build_phi1_program

DECLARATIVE = {
    "name": "decl_toy",
    "kind": "minmax",
    "T": 1.0,
    "x0": [0.5],
    "dynamics": {"N": [[1.0]]},
    "control_set": {"type": "box", "lo": [-1.0], "hi": [1.0]},
    "terminal_cost": {"type": "norm", "A": [[1.0]], "c": [0.0]},
    "constraint": {"type": "affine", "w": [1.0], "b": -2.0},
}


def _cfg(**kw):
    d = {"schema_version": 1, "scenario": {"builtin": "toy_1d"}, "grid": {"dt": 0.25}}
    d.update(kw)
    return d


def test_builtin_and_grid():
    inst, grid = load_instance(RunConfig.from_dict(_cfg()))
    assert inst.name == "toy_1d" and grid.K == 4
    _, grid = load_instance(RunConfig.from_dict(_cfg(grid={"K": 8})))
    assert grid.K == 8


@pytest.mark.parametrize("doc,field", [
    (_cfg(schema_version=2), "schema_version"),
    (_cfg(scenario={"builtin": "nope"}), "scenario.builtin"),
    (_cfg(scenario={"builtin": "example_b", "params": {"R": 1}}), "seed"),
    (_cfg(scenario={"builtin": "toy_1d", "params": {"bogus": 1}}), "scenario.params.bogus"),
    (_cfg(grid={"dt": -1.0}), "grid.dt"),
    (_cfg(extra=1), "extra"),
])
def test_config_errors_name_the_field(doc, field):
    with pytest.raises(ConfigError, match=f"^{field}"):
        load_instance(RunConfig.from_dict(doc))


def test_seed_enters_randomized_scenarios():
    a, _ = load_instance(RunConfig.from_dict(_cfg(scenario={"builtin": "example_b", "params": {"R": 2}}, seed=4)))
    b, _ = load_instance(RunConfig.from_dict(_cfg(scenario={"builtin": "example_b", "params": {"R": 2}}, seed=4)))
    c, _ = load_instance(RunConfig.from_dict(_cfg(scenario={"builtin": "example_b", "params": {"R": 2}}, seed=5)))
    assert np.array_equal(a.x0, b.x0) and not np.array_equal(a.x0, c.x0)


def test_digest_ignores_output_directory():
    a = RunConfig.from_dict(_cfg(out="/tmp/a"))
    b = RunConfig.from_dict(_cfg(out="/tmp/b"))
    assert a.digest() == b.digest()
    assert a.digest() != RunConfig.from_dict(_cfg(grid={"dt": 0.5})).digest()


def test_declarative_instance_is_convex_and_solves(frozen):
    inst, grid = load_instance(RunConfig.from_dict(_cfg(scenario={"declarative": DECLARATIVE})))
    assert inst.kind is ProblemKind.MINMAX
    assert audit_convexity(inst).columns["phi1"].convex
    sol = solve(build_phi1_program(inst, grid))
    assert sol.value == pytest.approx(frozen["phi1_toy_x0.5"], abs=1e-6)


def test_declarative_quadratic_control_cost(frozen):
    d = dict(DECLARATIVE, x0=[0.6], terminal_cost={"type": "quadratic", "Q": [[1.0]]},
             constraint={"type": "constant", "c": -1.0}, stage_cost={"control_R": [[1.0]]})
    inst, grid = load_instance(RunConfig.from_dict(_cfg(scenario={"declarative": d}, grid={"K": 1})))
    sol = solve(build_phi1_program(inst, grid))
    assert sol.value == pytest.approx(frozen["lq_single_step_x0.6"], abs=1e-5)


def test_declarative_errors():
    bad = dict(DECLARATIVE, control_set={"type": "simplex"})
    with pytest.raises(ConfigError, match="control_set.type"):
        load_instance(RunConfig.from_dict(_cfg(scenario={"declarative": bad})))
    bad = {k: v for k, v in DECLARATIVE.items() if k != "x0"}
    with pytest.raises(ConfigError, match="x0"):
        load_instance(RunConfig.from_dict(_cfg(scenario={"declarative": bad})))


def test_cli_solve_writes_artifacts(tmp_path, capsys):
    rc = main(["solve", "--scenario", "toy_1d", "--dt", "0.25", "--out", str(tmp_path)])
    assert rc == 0
    line = json.loads(capsys.readouterr().out)
    assert line["program"] == "phi1" and line["value"] == pytest.approx(0.5, abs=1e-6)
    for name in ("solution.json", "manifest.json", "trajectory.csv"):
        assert (tmp_path / name).exists()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert len(man["config_sha256"]) == 64 and "numpy" in man["versions"]


def test_cli_reconstruct_example_b(tmp_path, capsys):
    rc = main(["reconstruct", "--scenario", "example_b", "--robots", "1", "--seed", "1",
               "--dt", "0.25", "--out", str(tmp_path)])
    assert rc == 0
    line = json.loads(capsys.readouterr().out)
    assert line["program"] == "phi2_TI"
    for name in ("cost_curve.csv", "control.json", "trajectory.svg", "cost_curve.svg"):
        assert (tmp_path / name).exists()


def test_cli_missing_seed_reports_json(tmp_path, capsys):
    rc = main(["solve", "--scenario", "example_a", "--out", str(tmp_path)])
    assert rc == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config" and err["message"].startswith("seed")
    assert json.loads((tmp_path / "error.json").read_text()) == err


def test_cli_config_file_and_env_out(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(_cfg(scenario={"declarative": DECLARATIVE})))
    out = tmp_path / "envout"
    monkeypatch.setenv("LAXOC_OUT", str(out))
    assert main(["audit", "--config", str(cfg)]) == 0
    report = json.loads((out / "audit.json").read_text())
    assert report["columns"]["phi1"]["verdict"] == "convex"


def test_cli_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text("{not json")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_cli_oracle_coarse(tmp_path, capsys):
    assert main(["oracle", "--toy", "1d", "--dx", "0.1", "--out", str(tmp_path)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["theta_at_x0"] == pytest.approx(0.5, abs=0.1) and res["note"] == "ok"
    assert (tmp_path / "oracle_V1.bin").exists()
