"""Command-line entry point: ``laxoc {solve,reconstruct,verify,audit,oracle}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import artifacts
from .config import ConfigError, RunConfig, load_instance
from .hj import (HJGrids, check_z_regularity, default_z_bounds, extract_theta,
                 extract_theta_with_note, solve_hj)
from .pipeline import run_reconstruct, run_solve
from .problem import ProblemKind, TimeGrid
from .scenarios import toy_1d, toy_drift
from .solver import SolverOptions
from .transcription import audit_convexity

log = logging.getLogger("laxoc")

TOYS = {
    "1d": {"factory": toy_1d, "box": (-2.5, 2.5), "equations": ("V1", "W1"), "program": "phi1"},
    "drift": {"factory": toy_drift, "box": (-2.0, 4.0), "equations": ("V2_TI", "W2_TI"),
              "program": "phi2_TI"},
}
PROBES = 20


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="laxoc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--scenario", help="builtin scenario name")
            sp.add_argument("--config", help="JSON run configuration")
            sp.add_argument("--robots", type=int, help="robot count R for the examples")
        sp.add_argument("--dt", type=float, help="uniform time step (default 0.1)")
        sp.add_argument("--seed", type=int, help="random seed")
        sp.add_argument("--out", help="output directory (fallback: $LAXOC_OUT, then ./laxoc_out)")
        sp.add_argument("--max-iter", type=int, default=20000)
        sp.add_argument("--tol", type=float, default=1e-8, help="feasibility tolerance")
        sp.add_argument("--verbose", action="store_true")

    common(sub.add_parser("solve", help="solve the convex transcription"))
    common(sub.add_parser("reconstruct", help="solve and rebuild an admissible control"))
    common(sub.add_parser("audit", help="convexity audit of the transcriptions"))
    for name, helptext in (("verify", "compare the grid oracle with the convex program"),
                           ("oracle", "solve an HJ equation on a grid and export it")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, scenario=False)
        sp.add_argument("--toy", choices=sorted(TOYS), default="1d")
        sp.add_argument("--dx", type=float, default=0.01, help="grid step in x and z")
        if name == "oracle":
            sp.add_argument("--which", help="equation (default: the toy's primal equation)")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("LAXOC_OUT") or "laxoc_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_from_args(args, seed_default: Optional[int] = None) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.dt is not None:
            cfg.grid = {"dt": args.dt}
        return cfg
    if not args.scenario:
        raise ConfigError("scenario: pass --scenario or --config")
    params = {}
    if args.robots is not None:
        params["R"] = args.robots
    seed = args.seed if args.seed is not None else seed_default
    return RunConfig(scenario={"builtin": args.scenario, "params": params},
                     grid={"dt": args.dt if args.dt is not None else 0.1},
                     solver={"max_iter": args.max_iter, "tol": args.tol}, seed=seed)


def _options(args, cfg: Optional[RunConfig] = None) -> SolverOptions:
    solver = (cfg.solver if cfg else {}) or {}
    return SolverOptions(max_iter=int(solver.get("max_iter", args.max_iter)),
                         feas_tol=float(solver.get("tol", args.tol)),
                         seed=int(cfg.seed or 0) if cfg else 0, verbose=args.verbose)


def _plane_pairs(instance) -> list:
    if instance.name.startswith("example_a"):
        return [(4 * r, 4 * r + 2) for r in range(instance.n // 4)]
    if instance.name.startswith("example_b"):
        return [(2 * r, 2 * r + 1) for r in range(instance.n // 2)]
    return [(0, 1)] if instance.n >= 2 else []


def _pad_controls(controls, rows: int) -> Optional[np.ndarray]:
    """One control row per state row; the last node repeats the last step."""
    c = np.asarray(controls, float)
    if c.shape[0] == 0:
        return None
    return np.vstack([c] + [c[-1:]] * (rows - c.shape[0]))


def _manifest(out, command, cfg, walls, files, instance=None):
    meta = dict(instance.metadata) if instance is not None else {}
    if instance is not None:
        meta.update({"instance": instance.name, "kind": instance.kind.value, "n": instance.n,
                     "m": instance.m, "T": instance.T})
    artifacts.write_manifest(out / "manifest.json", command=command, config_digest=cfg.digest(),
                             seed=cfg.seed, wall_times=walls, files=files, metadata=meta)


def cmd_solve(args, reconstruct: bool = False) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    instance, grid = load_instance(cfg)
    t0 = time.perf_counter()
    outcome = run_solve(instance, grid, _options(args, cfg))
    walls = {"solve": time.perf_counter() - t0}
    sol = outcome.solution
    summary = {"instance": instance.name, "kind": instance.kind.value, "program": outcome.program,
               "grid": grid.nodes.tolist(), "solution": sol.to_dict()}
    files = ["solution.json", "manifest.json"]
    if sol.states is not None:
        n_rows = sol.states.shape[0]
        artifacts.write_trajectory_csv(out / "trajectory.csv", grid.nodes[:n_rows], sol.states,
                                       _pad_controls(sol.controls, n_rows),
                                       "a" if outcome.program == "direct" else "beta")
        files.append("trajectory.csv")
    if reconstruct:
        t1 = time.perf_counter()
        rec = run_reconstruct(instance, grid, outcome)
        walls["reconstruct"] = time.perf_counter() - t1
        summary["reconstruction"] = rec.to_dict()
        tr = rec.trajectory
        ctrls = np.array([rec.alpha(t) for t in tr.times])
        artifacts.write_trajectory_csv(out / "trajectory.csv", tr.times, tr.states, ctrls, "a")
        artifacts.write_cost_curve_csv(out / "cost_curve.csv", grid.nodes, rec.J)
        artifacts.write_json(out / "control.json", rec.alpha.to_dict())
        artifacts.plot_trajectory_plane(out / "trajectory.csv", out / "trajectory.svg",
                                        _plane_pairs(instance), instance.name)
        artifacts.plot_cost_curve(out / "cost_curve.csv", out / "cost_curve.svg", rec.tau_star,
                                  instance.name)
        files += ["trajectory.csv", "cost_curve.csv", "control.json", "trajectory.svg",
                  "cost_curve.svg"]
    artifacts.write_json(out / "solution.json", summary)
    _manifest(out, "reconstruct" if reconstruct else "solve", cfg, walls, sorted(set(files)), instance)
    line = {"value": sol.value, "status": sol.status, "converged": sol.converged,
            "program": outcome.program, "out": str(out)}
    if reconstruct:
        line.update({"tau_star": summary["reconstruction"]["tau_star"],
                     "reconstructed_value": summary["reconstruction"]["value"]})
    print(artifacts.dumps(line), end="")
    return 0 if (sol.converged or reconstruct and sol.controls is not None) else 3


def cmd_audit(args) -> int:
    cfg = _config_from_args(args, seed_default=0)
    out = _out_dir(args)
    instance, _ = load_instance(cfg)
    report = audit_convexity(instance).to_dict()
    artifacts.write_json(out / "audit.json", report)
    _manifest(out, "audit", cfg, {}, ["audit.json", "manifest.json"], instance)
    print(artifacts.dumps(report), end="")
    return 0


def _toy_grids(toy: dict, instance, dx: float) -> HJGrids:
    box = [toy["box"]]
    return HJGrids.uniform(box, dx, default_z_bounds(instance, box), dx)


def verify_toy(toy_name: str, dx: float, dt: float = 0.1,
               options: SolverOptions = SolverOptions()) -> dict:
    """Grid ``theta`` against the convex program at probe states in ``[-1.5, 1.5]``."""
    toy = TOYS[toy_name]
    base = toy["factory"]()
    grids = _toy_grids(toy, base, dx)
    t0 = time.perf_counter()
    primal = solve_hj(base, toy["equations"][0], grids)
    dual = solve_hj(base, toy["equations"][1], grids)
    t_grid = time.perf_counter() - t0
    rows = []
    for i, x in enumerate(np.linspace(-1.5, 1.5, PROBES)):
        inst = base.with_x0([x])
        grid = TimeGrid.uniform(inst.T, dt)
        sol = run_solve(inst, grid, options, toy["program"]).solution
        theta = extract_theta(primal, 0.0, [x])
        rows.append({"probe": i, "x0": float(x), "theta_grid": theta, "phi": sol.value,
                     "abs_diff": abs(theta - sol.value), "converged": sol.converged})
    return {
        "toy": toy_name, "dx": dx, "dt": dt, "equations": list(toy["equations"]),
        "grid_seconds": t_grid, "total_seconds": time.perf_counter() - t0,
        "max_abs_diff": max(r["abs_diff"] for r in rows),
        "primal_dual_sup_diff": float(np.max(np.abs(primal.values - dual.values))),
        "z_regularity": check_z_regularity(primal)["passed"],
        "scheme": primal.metadata["scheme"], "probes": rows,
    }


def cmd_verify(args) -> int:
    out = _out_dir(args)
    opts = SolverOptions(max_iter=args.max_iter, feas_tol=args.tol, verbose=args.verbose)
    res = verify_toy(args.toy, args.dx, args.dt or 0.1, opts)
    artifacts.write_json(out / "verify.json", res)
    cfg = RunConfig(scenario={"toy": args.toy}, grid={"dx": args.dx, "dt": args.dt or 0.1},
                    seed=args.seed)
    _manifest(out, "verify", cfg, {"total": res["total_seconds"]}, ["verify.json", "manifest.json"])
    print(f"{'x0':>8} {'theta_grid':>11} {'phi':>11} {'|diff|':>9}")
    for r in res["probes"]:
        print(f"{r['x0']:8.4f} {r['theta_grid']:11.5f} {r['phi']:11.5f} {r['abs_diff']:9.2e}")
    print(f"max |diff| = {res['max_abs_diff']:.3e}; {res['equations'][0]} vs "
          f"{res['equations'][1]} sup = {res['primal_dual_sup_diff']:.3e}")
    return 0


def cmd_oracle(args) -> int:
    out = _out_dir(args)
    toy = TOYS[args.toy]
    inst = toy["factory"]()
    which = args.which or toy["equations"][0]
    t0 = time.perf_counter()
    vf = solve_hj(inst, which, _toy_grids(toy, inst, args.dx))
    wall = time.perf_counter() - t0
    vf.export(out, stem=f"oracle_{which}")
    report = check_z_regularity(vf)
    artifacts.write_json(out / f"oracle_{which}_regularity.json", report)
    cfg = RunConfig(scenario={"toy": args.toy, "equation": which}, grid={"dx": args.dx},
                    seed=args.seed)
    files = [f"oracle_{which}.bin", f"oracle_{which}_manifest.json",
             f"oracle_{which}_regularity.json", "manifest.json"]
    if inst.n == 1:
        files.append(f"oracle_{which}_slice_t0.csv")
    _manifest(out, "oracle", cfg, {"solve_hj": wall}, files, inst)
    theta, note = extract_theta_with_note(vf, 0.0, inst.x0)
    print(artifacts.dumps({"equation": which, "shape": list(vf.values.shape),
                           "theta_at_x0": theta, "note": note, "z_regularity": report["passed"],
                           "out": str(out)}), end="")
    return 0


COMMANDS = {"solve": cmd_solve, "reconstruct": lambda a: cmd_solve(a, reconstruct=True),
            "audit": cmd_audit, "verify": cmd_verify, "oracle": cmd_oracle}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        _report_error(args, exc, "config")
        return 2
    except Exception as exc:  # noqa: BLE001  report everything as JSON
        if args.verbose:
            log.exception("command failed")
        _report_error(args, exc, "runtime")
        return 1


def _report_error(args, exc, category: str) -> None:
    err = {"error": category, "type": type(exc).__name__, "message": str(exc),
           "command": args.command}
    text = json.dumps(err, sort_keys=True)
    print(text, file=sys.stderr)
    out = args.out or os.environ.get("LAXOC_OUT")
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(text + "\n")
        except OSError:
            pass


if __name__ == "__main__":
    sys.exit(main())
