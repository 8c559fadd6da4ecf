"""Independent reference values for the test-suite, frozen into frozen.json.

Nothing here imports the package. Run from the repository root:

    python tests/oracles/build_oracles.py
"""
import json
from pathlib import Path

import mpmath as mp
import numpy as np
from scipy.linalg import eigvals

mp.mp.dps = 30

A, M, BBAR, MDIV = 1, 1, 3, mp.mpf("0.25")


def flow(x, t):
    return M * mp.power(x / M, mp.exp(-A * t))


def rate(m):
    return BBAR * (m - MDIV) / (M - MDIV) if m > MDIV else mp.mpf(0)


def t_div(x):
    return mp.log(mp.log(M / x) / mp.log(M / MDIV)) / A if x < MDIV else mp.mpf(0)


def hazard(x, t):
    s0 = t_div(x)
    if t <= s0:
        return mp.mpf(0)
    return mp.quad(lambda s: rate(flow(x, s)), [s0, t])


def death_first(x, D):
    """P(death before division) = int_0^inf D exp(-Dt - H(t)) dt, with H in closed form."""
    x = mp.mpf(x)
    D = mp.mpf(D)
    s0 = t_div(x)
    # H(t) = int_{s0}^t rate(A_s x) ds; integrate the ODE-free closed form on a fine split
    H = lambda t: mp.quad(lambda s: rate(flow(x, s)), [s0, t]) if t > s0 else mp.mpf(0)
    early = 1 - mp.exp(-D * s0)
    late = mp.quad(lambda t: D * mp.exp(-D * t - H(t)), [s0, s0 + 1, s0 + 4, s0 + 16, mp.inf])
    return early + late


def generator_eigenvalue(n):
    """Rightmost eigenvalue of the upwind finite-volume generator (no death)."""
    h = 1.0 / n
    x = (np.arange(n) + 0.5) * h
    faces = np.arange(n + 1) * h
    with np.errstate(divide="ignore"):
        gf = np.where((faces > 0) & (faces < 1), faces * np.log(1 / np.where(faces > 0, faces, 1)), 0.0)
    b = np.where(x > 0.25, 3 * (x - 0.25) / 0.75, 0.0)
    G = np.zeros((n, n))
    idx = np.arange(n)
    G[idx, idx] -= gf[1:] / h + b
    G[idx[1:], idx[:-1]] += gf[1:-1] / h
    al = x[:, None] / x[None, :]
    q = np.where(al <= 1, 6 * al * (1 - al), 0.0)
    G += 2 * h * (b / x)[None, :] * q
    return float(np.max(eigvals(G).real))


def main():
    out = {}
    out["hazard_x0.5_t1"] = float(hazard(mp.mpf("0.5"), mp.mpf(1)))
    out["death_first_x0.5_D0.2"] = float(death_first("0.5", "0.2"))
    ns = [200, 400, 800, 1600]
    lams = [generator_eigenvalue(n) for n in ns]
    # first-order scheme: two Richardson levels
    r1 = [2 * lams[k + 1] - lams[k] for k in range(3)]
    r2 = [(4 * r1[k + 1] - r1[k]) / 3 for k in range(2)]
    out["lambda0_fv_raw"] = dict(zip(map(str, ns), lams))
    out["lambda0_richardson"] = r2[-1]
    out["lambda0_richardson_spread"] = abs(r2[-1] - r2[-2])
    path = Path(__file__).with_name("frozen.json")
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
