"""Cross-route checks: eigenvalue sign against survival, martingale and growth-bound tests."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .eigen import EigenSolution, NoDivisionError, has_division, solve_eigen
from .extinction import dichotomy, solve_extinction
from .model import ModelSpec, audit_hypotheses, make_grid
from .pde import run as run_pde
from .simulate import Caps, GridFunction, One, estimate_survival, weighted_expectation

PASS, FAIL, NOT_RUN, INFO = "pass", "fail", "not-run", "info"
NEAR_CRITICAL = 0.1


@dataclass
class Settings:
    """Knobs for the cross-check battery; the defaults are the desk-scale values."""

    grid_n: int = 200
    pde_n: int = 400
    pde_T: float = 40.0
    x0: float = 0.5
    horizon: float = 30.0
    replicas: int = 2000
    max_pop: int = 500
    seed: int = 20240611
    picard_tol: float = 1e-8
    margin: float = 1e-3
    lambda_agreement: float = 5e-2
    extinct_tolerance: float = 1e-2
    martingale_times: tuple = (1.0, 2.0, 4.0)
    martingale_replicas: int = 4000
    martingale_lambda_offset: float = 0.0
    growth_times: tuple = (1.0, 2.0, 4.0, 6.0, 8.0)
    growth_replicas: int = 2000
    growth_lambda_offset: float = 0.0
    growth_ratio: float = 10.0
    growth_slope: float = 0.05
    z_gate: float = 3.0
    run_martingale: bool = True
    run_growth: bool = True
    workers: int = 1


@dataclass
class CrossCheckReport:
    lambda_eigen: float | None = None
    lambda0: float | None = None
    lambda_pde: float | None = None
    p_profile: dict | None = None
    mc_survival: dict | None = None
    martingale: dict | None = None
    growth_bound: dict | None = None
    audit: dict | None = None
    verdicts: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v["status"] in (PASS, INFO) for v in self.verdicts.values())

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _verdict(status, detail=""):
    return {"status": status, "detail": detail}


def check_martingale(spec: ModelSpec, lam: float, phi, x0: float, times, replicas: int, seed: int,
                     *, z_gate: float = 3.0, workers: int = 1) -> dict:
    """z-scores of the sample mean of e^{-lam t} sum_i phi(X_t^i) against phi(x0)."""
    f = phi if callable(phi) else GridFunction(*phi)
    times = np.asarray(times, dtype=float)
    est = weighted_expectation(spec, x0, f, times, replicas, seed, workers=workers)
    target = float(f(x0))
    scale = np.exp(-lam * times)
    mean = est.mean * scale
    sigma = est.sigma * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, (mean - target) / np.where(sigma > 0, sigma, 1.0),
                     np.where(np.abs(mean - target) <= 1e-12 * max(1.0, abs(target)), 0.0, np.inf))
    return {"times": times.tolist(), "mean": mean.tolist(), "sigma": sigma.tolist(),
            "target": target, "z": z.tolist(), "lambda": lam,
            "passed": bool(np.all(np.abs(z) <= z_gate))}


def check_growth_bound(spec: ModelSpec, lam: float, x0: float, times, replicas: int, seed: int,
                       *, max_ratio: float = 10.0, max_slope: float = 0.05, workers: int = 1) -> dict:
    """E[N_t] e^{-lam t} must stay in a band of ratio <= max_ratio with a flat log-trend."""
    times = np.asarray(sorted(set([0.0, *map(float, times)])))
    est = weighted_expectation(spec, x0, One(), times, replicas, seed, workers=workers)
    scaled = est.mean * np.exp(-lam * times)
    lower, upper = float(scaled.min()), float(scaled.max())
    ratio = upper / lower if lower > 0 else math.inf
    pos = times > 0
    slope = float(np.polyfit(times[pos], np.log(scaled[pos]), 1)[0]) if pos.sum() >= 2 and lower > 0 else math.nan
    ok = ratio <= max_ratio and abs(slope) <= max_slope
    return {"times": times.tolist(), "scaled_mean": scaled.tolist(), "band": [lower, upper],
            "ratio": ratio, "slope": slope, "lambda": lam, "passed": bool(ok)}


def check_criterion(spec: ModelSpec, settings: Settings | None = None) -> CrossCheckReport:
    """Run every route and compare their verdicts on invasion."""
    st = settings or Settings()
    rep = CrossCheckReport()
    grid = make_grid(spec.max_mass, st.grid_n)

    audit = audit_hypotheses(spec, grid)
    rep.audit = audit.to_dict()
    if not audit.passed:
        rep.notes.append("model fails the hypothesis audit: " + ", ".join(audit.violations))

    sol: EigenSolution | None = None
    if not has_division(spec):
        rep.verdicts["eigen"] = _verdict(INFO, "no division: eigenproblem refused")
    else:
        try:
            sol = solve_eigen(spec, grid)
            rep.lambda0 = sol.lambda0
            rep.lambda_eigen = sol.lambda_
            rep.verdicts["eigen"] = _verdict(PASS if sol.converged else FAIL,
                                             f"continuation converged={sol.converged}")
        except (NoDivisionError, ArithmeticError, RuntimeError, ValueError) as exc:
            rep.verdicts["eigen"] = _verdict(NOT_RUN, repr(exc))

    try:
        pde = run_pde(spec, make_grid(spec.max_mass, st.pde_n), st.pde_T)
        rep.lambda_pde = pde.lambda_hat
        if rep.lambda_eigen is not None:
            gap = abs(rep.lambda_eigen - pde.lambda_hat)
            rep.verdicts["pde_vs_eigen"] = _verdict(PASS if gap <= st.lambda_agreement else FAIL,
                                                    f"|gap|={gap:.3e}")
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        rep.verdicts["pde_vs_eigen"] = _verdict(NOT_RUN, repr(exc))

    profile = None
    try:
        profile = solve_extinction(spec, grid, st.picard_tol, keep_snapshots=False)
        verdict = dichotomy(profile, st.margin)
        rep.p_profile = {**profile.to_dict(), "p_x0": float(profile.at(st.x0, spec.death_rate)),
                         "dichotomy": verdict}
        rep.verdicts["picard"] = _verdict(PASS if profile.converged and verdict != "inconclusive" else FAIL,
                                          verdict)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        rep.verdicts["picard"] = _verdict(NOT_RUN, repr(exc))

    mc = None
    try:
        mc = estimate_survival(spec, st.x0, st.horizon, Caps(max_pop=st.max_pop), st.replicas, st.seed,
                               workers=st.workers)
        rep.mc_survival = mc.to_dict()
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        rep.verdicts["mc"] = _verdict(NOT_RUN, repr(exc))

    # sign verdicts
    lam = rep.lambda_eigen
    if mc is not None and profile is not None:
        p_x0 = rep.p_profile["p_x0"]
        agree = abs((1 - p_x0) - mc.estimate) <= 3 * mc.sigma + 1e-15
        if lam is None and has_division(spec):
            rep.verdicts["sign"] = _verdict(NOT_RUN, "eigenvalue unavailable")
        elif lam is None:
            ok = mc.survivors == 0 and float(np.max(np.abs(profile.values - 1))) <= st.extinct_tolerance
            rep.verdicts["sign"] = _verdict(PASS if ok else FAIL, "no division: extinction expected on all routes")
        elif lam >= NEAR_CRITICAL:
            ok = mc.ci[0] > 0 and rep.p_profile["dichotomy"] == "survival-possible"
            rep.verdicts["sign"] = _verdict(PASS if ok else FAIL, f"Lambda={lam:.4f} > 0: survival expected")
            rep.verdicts["mc_vs_picard"] = _verdict(
                PASS if agree else FAIL, f"1-p(x0)={1 - p_x0:.4f}, mc={mc.estimate:.4f}+-{mc.sigma:.4f}")
        elif lam <= -NEAR_CRITICAL:
            ok = mc.survivors == 0 and float(np.max(np.abs(profile.values - 1))) <= st.extinct_tolerance
            rep.verdicts["sign"] = _verdict(PASS if ok else FAIL, f"Lambda={lam:.4f} < 0: extinction expected")
        else:
            rep.verdicts["sign"] = _verdict(INFO, f"near-critical (|Lambda|={abs(lam):.3f} < {NEAR_CRITICAL}), informational only")
    elif "sign" not in rep.verdicts:
        rep.verdicts["sign"] = _verdict(NOT_RUN, "a survival route failed")

    if sol is not None and st.run_martingale:
        try:
            lam_m = sol.lambda_ + st.martingale_lambda_offset
            rep.martingale = check_martingale(spec, lam_m, (grid.nodes, sol.phi), st.x0, st.martingale_times,
                                              st.martingale_replicas, st.seed + 1, z_gate=st.z_gate,
                                              workers=st.workers)
            rep.verdicts["martingale"] = _verdict(PASS if rep.martingale["passed"] else FAIL,
                                                  f"max |z|={max(map(abs, rep.martingale['z'])):.2f}")
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            rep.verdicts["martingale"] = _verdict(NOT_RUN, repr(exc))
    if sol is not None and st.run_growth:
        try:
            lam_g = sol.lambda_ + st.growth_lambda_offset
            rep.growth_bound = check_growth_bound(spec, lam_g, st.x0, st.growth_times, st.growth_replicas,
                                                  st.seed + 2, max_ratio=st.growth_ratio,
                                                  max_slope=st.growth_slope, workers=st.workers)
            rep.verdicts["growth_bound"] = _verdict(
                PASS if rep.growth_bound["passed"] else FAIL,
                f"ratio={rep.growth_bound['ratio']:.3f}, slope={rep.growth_bound['slope']:.4f}")
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            rep.verdicts["growth_bound"] = _verdict(NOT_RUN, repr(exc))
    rep.notes.append("survival is a finite-horizon proxy (alive at the horizon or reached the population cap); "
                     "compare with the Picard value p_x0")
    rep.notes.append("only moment consequences of the martingale limit are tested, not almost-sure statements")
    return rep
