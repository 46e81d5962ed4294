"""Independent brute-force reference values.

Plain numpy enumeration only; nothing from ``laxoc`` is imported.  Run
``python3 tests/oracles/brute_force.py`` to regenerate ``frozen.json``.
"""

import itertools
import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).with_name("frozen.json")


def hstar_lq(b):
    """sup_p p b - H(p), H(p) = max_{|a|<=1} -p a - a^2, on dense grids."""
    ps = np.linspace(-6, 6, 4801)
    a = np.linspace(-1, 1, 2001)
    H = np.max(-np.outer(ps, a) - a**2, axis=1)
    return float(np.max(ps * b - H))


def example_a_h_single(p, d):
    a1 = np.linspace(-1, 1, 401)
    a2 = np.linspace(-np.pi / 6, np.pi / 6, 401)
    A1, A2 = np.meshgrid(a1, a2)
    # f = (x2, a1 cos a2 + d, x4, a1 sin a2) with x = 0
    f2 = A1 * np.cos(A2) + d
    f4 = A1 * np.sin(A2)
    return float(np.max(-(p[1] * f2 + p[3] * f4)))


def example_b_hbar(p):
    a = np.linspace(-1, 1, 201)
    A1, A2 = np.meshgrid(a, a)
    return float(np.max(-(p[0] * (A1 + 2) + p[1] * A2)))


def phi1_toy(x0, dt=0.25, K=4, levels=9):
    """min over per-step beta grid of max_k |x_k| (x_{k+1} = x_k - dt beta)."""
    best = np.inf
    for seq in itertools.product(np.linspace(-1, 1, levels), repeat=K):
        xs = x0 - dt * np.concatenate([[0.0], np.cumsum(seq)])
        best = min(best, float(np.max(np.abs(xs))))
    return best


def phi2ti_drift(x0, cap=None, dt=0.25, K=4, levels=13):
    """min g(x_K) over b in [-3, 0] per step, subject to c(x_k) <= 0."""
    best = np.inf
    for seq in itertools.product(np.linspace(-3, 0, levels), repeat=K):
        xs = x0 - dt * np.concatenate([[0.0], np.cumsum(seq)])
        if cap is not None and np.any(xs - cap > 1e-12):
            continue
        best = min(best, abs(xs[-1] - 1.0))
    return best


def phi2_prefix(x0, kp, dt=0.25, levels=9):
    best = np.inf
    for seq in itertools.product(np.linspace(-1, 1, levels), repeat=kp):
        best = min(best, abs(x0 - dt * float(np.sum(seq))))
    return best


def lq_single_step(x0, dt=1.0):
    a = np.linspace(-1, 1, 200001)
    return float(np.min(np.maximum(x0**2, a**2 * dt + (x0 + dt * a) ** 2)))


def nonconvex_gap():
    """Hbar(p=0, q=1) = max_a L(a) against Hbar_W(p=0, q=1) = max_b H*(b)."""
    a = np.linspace(-1, 1, 4001)
    L = 1 - a**2 + a / 2
    hbar = float(np.max(L))
    ps = np.linspace(-8, 8, 3201)
    H = np.max(-np.outer(ps, a) - L, axis=1)  # H(p) = max_a -p a - L, with b = -a
    bs = np.linspace(-1, 1, 401)
    hstar = np.array([np.max(ps * b - H) for b in bs])
    return hbar, float(np.max(hstar))


def main():
    hb, hw = nonconvex_gap()
    frozen = {
        "hstar_lq_b0.5": hstar_lq(0.5),
        "example_a_H_p0100_d1": example_a_h_single([0, 1, 0, 0], 1.0),
        "example_b_Hbar_p11": example_b_hbar([1, 1]),
        "example_b_Hbar_pm10": example_b_hbar([-1, 0]),
        "phi1_toy_x0.5": phi1_toy(0.5),
        "phi1_toy_x0": phi1_toy(0.0),
        "phi1_toy_xm1.2": phi1_toy(-1.2, levels=5),
        "phi2ti_drift_x0": phi2ti_drift(0.0),
        "phi2ti_drift_x0_cap0.5": phi2ti_drift(0.0, cap=0.5),
        "phi2_prefix_x0.5_k2": phi2_prefix(0.5, 2),
        "phi2_prefix_x0.5_k1": phi2_prefix(0.5, 1),
        "lq_single_step_x0.6": lq_single_step(0.6),
        "nonconvex_hbar_p0_q1": hb,
        "nonconvex_hbarW_p0_q1": hw,
    }
    OUT.write_text(json.dumps(frozen, indent=2, sort_keys=True) + "\n")
    print(json.dumps(frozen, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
