"""Deterministic file outputs: JSON, CSV, manifests and SVG plots.

Numbers are written with ``repr`` so they round-trip exactly.  Plots are
rendered from the CSV files already on disk and never feed back into the
numeric artifacts.
"""

from __future__ import annotations

import csv
import json
import platform
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if np.isfinite(v):
            return v
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(path, times, states, controls: Optional[np.ndarray] = None,
                         control_prefix: str = "a") -> Path:
    """Columns ``t, x_0..x_{n-1}`` then ``<prefix>_0..``; one row per sample.

    ``controls`` needs one row per sample (the value held from that time on).
    """
    states = np.asarray(states, float)
    n = states.shape[1]
    header = ["t"] + [f"x_{i}" for i in range(n)]
    if controls is not None:
        controls = np.asarray(controls, float)
        header += [f"{control_prefix}_{j}" for j in range(controls.shape[1])]
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, t in enumerate(times):
            row = [_fmt(t)] + [_fmt(v) for v in states[i]]
            if controls is not None:
                row += [_fmt(v) for v in controls[i]]
            w.writerow(row)
    return path


def write_cost_curve_csv(path, times, J) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "t", "J"])
        for k, (t, j) in enumerate(zip(times, J)):
            w.writerow([k, _fmt(t), _fmt(j)])
    return path


def read_csv(path) -> tuple[list, np.ndarray]:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) if v != "" else np.nan for v in r] for r in body])
    return header, data


def versions() -> dict:
    import clarabel
    import cvxpy
    import matplotlib
    import scipy

    from . import __version__

    return {"laxoc": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "cvxpy": cvxpy.__version__,
            "clarabel": getattr(clarabel, "__version__", "unknown"),
            "matplotlib": matplotlib.__version__}


def write_manifest(path, *, command: str, config_digest: str, seed, wall_times: dict,
                   files: Sequence[str], metadata: Optional[dict] = None) -> Path:
    return write_json(path, {
        "command": command, "config_sha256": config_digest, "seed": seed,
        "versions": versions(), "wall_times_s": wall_times, "files": sorted(files),
        "metadata": metadata or {},
    })


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "laxoc"
    return plt


def plot_trajectory_plane(csv_path, svg_path, pairs: Sequence[tuple[int, int]], title: str = "") -> Path:
    """Planar paths of the state-coordinate pairs listed in ``pairs``.

    Without pairs every state is drawn against time.
    """
    plt = _pyplot()
    header, data = read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(5, 4))
    if not pairs:
        n = sum(h.startswith("x_") for h in header)
        for i in range(n):
            ax.plot(data[:, 0], data[:, 1 + i], label=header[1 + i])
        ax.set_xlabel("t")
        ax.set_title(title)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return Path(svg_path)
    for r, (i, j) in enumerate(pairs):
        ax.plot(data[:, 1 + i], data[:, 1 + j], label=f"robot {r + 1}")
        ax.plot(data[0, 1 + i], data[0, 1 + j], "o", color="k", ms=3)
    ax.set_xlabel(header[1 + pairs[0][0]])
    ax.set_ylabel(header[1 + pairs[0][1]])
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(svg_path)


def plot_cost_curve(csv_path, svg_path, tau_star: Optional[float] = None, title: str = "") -> Path:
    plt = _pyplot()
    _, data = read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(data[:, 1], data[:, 2], marker=".")
    if tau_star is not None:
        ax.axvline(tau_star, color="tab:red", ls="--", lw=1)
    ax.set_xlabel("tau")
    ax.set_ylabel("cost")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(svg_path)
