"""Command-line entry point: growfrag {audit,simulate,extinction,eigen,pde,crosscheck}.

Exit codes: 0 success, 1 a check failed or did not converge, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULTS, SEED_ENV, ConfigError, RunConfig, grid_from_config, load_config, spec_from_config
from .eigen import NoDivisionError, solve_eigen
from .extinction import dichotomy, solve_extinction
from .model import DomainError, NumericalError, audit_hypotheses, make_grid
from .output import dumps, read_csv_columns, write_csv, write_json
from .pde import run as run_pde
from .simulate import Caps, GridFunction, Mass, One, run_replicas, survival_from
from .validate import Settings, check_criterion

log = logging.getLogger("growfrag")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


def _d(section, key):
    default, text = DEFAULTS[section][key]
    return f"{text} (config {section}.{key}, default: {default or 'none'})"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="growfrag", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file; model sections growth, division, kernel, "
                        "death, mass, grid plus one section per subcommand")
    common.add_argument("--out", help="directory for CSV/JSON outputs (JSON summary always goes to stdout)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("audit", parents=[common], help="check the model hypotheses on a grid")
    a.add_argument("--n", type=int, help=_d("grid", "n"))

    s = sub.add_parser("simulate", parents=[common], help="exact branching simulation")
    s.add_argument("--x0", type=float, help=_d("simulate", "x0"))
    s.add_argument("--horizon", type=float, help=_d("simulate", "horizon"))
    s.add_argument("--replicas", type=int, help=_d("simulate", "replicas"))
    s.add_argument("--seed", type=int, help=_d("simulate", "seed") + f"; ${SEED_ENV} overrides the config")
    s.add_argument("--max-pop", type=int, help=_d("simulate", "max_pop"))
    s.add_argument("--max-events", type=int, help=_d("simulate", "max_events"))
    s.add_argument("--no-proxy", action="store_true", help="flag cap hits as truncation instead of survival")
    s.add_argument("--times", help=_d("simulate", "times"))
    s.add_argument("--weight", choices=["one", "mass", "phi"], help=_d("simulate", "weight"))
    s.add_argument("--phi-file", help=_d("simulate", "phi_file"))
    s.add_argument("--workers", type=int, help=_d("simulate", "workers"))

    e = sub.add_parser("extinction", parents=[common], help="Picard iteration for the extinction probability")
    e.add_argument("--n", type=int, help=_d("grid", "n"))
    e.add_argument("--tol", type=float, help=_d("extinction", "tol"))
    e.add_argument("--max-iter", type=int, help=_d("extinction", "max_iter"))
    e.add_argument("--margin", type=float, help=_d("extinction", "margin"))

    g = sub.add_parser("eigen", parents=[common], help="principal eigenvalue and eigenfunctions")
    g.add_argument("--n", type=int, help=_d("grid", "n"))
    g.add_argument("--schedule", help=_d("eigen", "schedule"))
    g.add_argument("--tol", type=float, help=_d("eigen", "tol"))

    d = sub.add_parser("pde", parents=[common], help="transient PDE oracle for the growth rate")
    d.add_argument("--n", type=int, help=_d("pde", "n"))
    d.add_argument("--T", type=float, help=_d("pde", "T"))
    d.add_argument("--dt", help=_d("pde", "dt"))
    d.add_argument("--cadence", type=float, help=_d("pde", "cadence"))

    c = sub.add_parser("crosscheck", parents=[common], help="run the full cross-route battery")
    c.add_argument("--seed", type=int, help=_d("crosscheck", "seed") + f"; ${SEED_ENV} overrides the config")
    c.add_argument("--replicas", type=int, help=_d("crosscheck", "replicas"))
    c.add_argument("--martingale-replicas", type=int, help=_d("crosscheck", "martingale_replicas"))
    c.add_argument("--growth-replicas", type=int, help=_d("crosscheck", "growth_replicas"))
    c.add_argument("--workers", type=int, help=_d("crosscheck", "workers"))
    return p


def _override(cfg: RunConfig, args, section: str, mapping: dict):
    for attr, key in mapping.items():
        v = getattr(args, attr, None)
        if v is not None:
            cfg.set(section, key, v)


def _emit(obj):
    sys.stdout.write(dumps(obj))


def _out(args, name) -> Path | None:
    return Path(args.out) / name if args.out else None


# ---------------------------------------------------------------------------
# subcommands


def cmd_audit(args, cfg):
    _override(cfg, args, "grid", {"n": "n"})
    spec = spec_from_config(cfg)
    rep = audit_hypotheses(spec, grid_from_config(cfg))
    d = rep.to_dict()
    if args.out:
        write_json(_out(args, "audit.json"), d)
    _emit(d)
    return EXIT_OK if rep.passed else EXIT_CHECK


def _seed(cfg, section, args):
    return args.seed if getattr(args, "seed", None) is not None else cfg.seed(section)


def cmd_simulate(args, cfg):
    _override(cfg, args, "simulate", {"x0": "x0", "horizon": "horizon", "replicas": "replicas",
                                      "max_pop": "max_pop", "max_events": "max_events", "times": "times",
                                      "weight": "weight", "phi_file": "phi_file", "workers": "workers"})
    if args.no_proxy:
        cfg.set("simulate", "proxy", "false")
    spec = spec_from_config(cfg)
    sec = "simulate"
    x0, horizon = cfg.float(sec, "x0"), cfg.float(sec, "horizon")
    seed = _seed(cfg, sec, args)
    times = cfg.floats(sec, "times")
    weight = cfg.get(sec, "weight")
    if weight == "one":
        f = One()
    elif weight == "mass":
        f = Mass()
    elif weight == "phi":
        path = cfg.get(sec, "phi_file")
        if not path:
            raise ConfigError("simulate.weight = phi needs simulate.phi_file")
        if not Path(path).is_file():
            raise ConfigError(f"phi file not found: {path}")
        cols = read_csv_columns(path)
        if "x" not in cols or "phi" not in cols:
            raise ConfigError(f"{path}: needs columns x and phi")
        f = GridFunction(cols["x"], cols["phi"])
    else:
        raise ConfigError(f"simulate.weight: unknown {weight!r}")
    caps = Caps(cfg.int(sec, "max_pop"), cfg.int(sec, "max_events"), cfg.bool(sec, "proxy"))
    res = run_replicas(spec, x0, horizon, cfg.int(sec, "replicas"), seed, caps, times=times,
                       weights={weight: f}, workers=cfg.int(sec, "workers"))
    surv = survival_from(res)
    samples = np.array([r.weighted[weight] for r in res]) if times else np.empty((len(res), 0))
    counts = np.array([r.population_counts for r in res]) if times else np.empty((len(res), 0))
    summary = {
        "seed": seed, "x0": x0, "horizon": horizon, "caps": vars(caps), "survival": surv.to_dict(),
        "times": list(times), "weight": weight,
        "weighted_mean": np.nanmean(samples, axis=0) if len(times) else [],
        "count_mean": np.nanmean(counts, axis=0) if len(times) else [],
    }
    try:
        grid = grid_from_config(cfg)
        prof = solve_extinction(spec, grid, keep_snapshots=False)
        summary["picard_p_x0"] = float(prof.at(x0, spec.death_rate))
        summary["picard_survival_x0"] = 1.0 - summary["picard_p_x0"]
    except (NumericalError, ValueError) as exc:
        summary["picard_p_x0"] = None
        summary["picard_error"] = repr(exc)
    summary["note"] = ("survival counts replicas alive at the horizon or reaching max_pop; "
                       "it is biased upward near criticality, compare with picard_survival_x0")
    if args.out:
        header = ["replica", "survived", "extinction_time", "reached_cap", "truncated", "n_events",
                  "final_population"]
        header += [f"N@{t:g}" for t in times] + [f"{weight}@{t:g}" for t in times]
        rows = []
        for r in res:
            ext = "" if r.extinction_time is None else r.extinction_time
            rows.append([r.replica, int(r.survived), ext, int(r.reached_cap), int(r.truncated), r.n_events,
                         r.final_population, *r.population_counts.tolist(), *r.weighted[weight].tolist()])
        write_csv(_out(args, "replicas.csv"), header, rows)
        write_json(_out(args, "simulate.json"), summary)
    _emit(summary)
    return EXIT_CHECK if surv.truncated else EXIT_OK


def cmd_extinction(args, cfg):
    _override(cfg, args, "grid", {"n": "n"})
    _override(cfg, args, "extinction", {"tol": "tol", "max_iter": "max_iter", "margin": "margin"})
    spec = spec_from_config(cfg)
    grid = grid_from_config(cfg)
    prof = solve_extinction(spec, grid, cfg.float("extinction", "tol"), cfg.int("extinction", "max_iter"),
                            keep_snapshots=False)
    d = {**prof.to_dict(), "dichotomy": dichotomy(prof, cfg.float("extinction", "margin")), "grid_n": grid.n}
    if args.out:
        write_csv(_out(args, "extinction.csv"), ["x", "p"], zip(grid.nodes, prof.values))
        write_json(_out(args, "extinction.json"), d)
    _emit(d)
    return EXIT_OK if prof.converged else EXIT_CHECK


def cmd_eigen(args, cfg):
    _override(cfg, args, "grid", {"n": "n"})
    _override(cfg, args, "eigen", {"schedule": "schedule", "tol": "tol"})
    spec = spec_from_config(cfg)
    grid = grid_from_config(cfg)
    sol = solve_eigen(spec, grid, cfg.floats("eigen", "schedule"), cfg.float("eigen", "tol"))
    d = sol.to_dict()
    if args.out:
        write_csv(_out(args, "eigen.csv"), ["x", "u", "phi", "psi"], zip(grid.nodes, sol.u, sol.phi, sol.psi))
        write_json(_out(args, "eigen.json"), d)
    _emit(d)
    return EXIT_OK if sol.converged else EXIT_CHECK


def cmd_pde(args, cfg):
    _override(cfg, args, "pde", {"n": "n", "T": "T", "dt": "dt", "cadence": "cadence"})
    spec = spec_from_config(cfg)
    grid = make_grid(spec.max_mass, cfg.int("pde", "n"))
    raw_dt = cfg.get("pde", "dt").strip()
    dt = None if raw_dt == "auto" else cfg.float("pde", "dt")
    T = cfg.float("pde", "T")
    res = run_pde(spec, grid, T, dt=dt, cadence=cfg.float("pde", "cadence"))
    d = {"lambda_hat": res.lambda_hat, "T": T, "dt": res.dt, "n": grid.n,
         "stabilization": res.stabilization, "death_rate": spec.death_rate}
    if args.out:
        rate = res.running_rate()
        write_csv(_out(args, "pde_series.csv"), ["t", "log_total", "lambda_running"],
                  zip(res.times, res.log_totals, rate))
        write_csv(_out(args, "pde_profile.csv"), ["x", "density"],
                  zip(grid.nodes, res.state.density / res.state.total))
        write_json(_out(args, "pde.json"), d)
    _emit(d)
    return EXIT_OK


def cmd_crosscheck(args, cfg):
    _override(cfg, args, "crosscheck", {"replicas": "replicas", "martingale_replicas": "martingale_replicas",
                                        "growth_replicas": "growth_replicas", "workers": "workers"})
    spec = spec_from_config(cfg)
    sec = "crosscheck"
    st = Settings(
        grid_n=cfg.int("grid", "n"), pde_n=cfg.int(sec, "pde_n"), pde_T=cfg.float(sec, "pde_T"),
        x0=cfg.float(sec, "x0"), horizon=cfg.float(sec, "horizon"), replicas=cfg.int(sec, "replicas"),
        max_pop=cfg.int(sec, "max_pop"), seed=_seed(cfg, sec, args),
        martingale_times=cfg.floats(sec, "martingale_times"),
        martingale_replicas=cfg.int(sec, "martingale_replicas"),
        martingale_lambda_offset=cfg.float(sec, "martingale_lambda_offset"),
        growth_times=cfg.floats(sec, "growth_times"), growth_replicas=cfg.int(sec, "growth_replicas"),
        growth_lambda_offset=cfg.float(sec, "growth_lambda_offset"), workers=cfg.int(sec, "workers"),
    )
    rep = check_criterion(spec, st)
    d = rep.to_dict()
    if args.out:
        write_json(_out(args, "crosscheck.json"), d)
    _emit(d)
    return EXIT_OK if rep.passed else EXIT_CHECK


COMMANDS = {"audit": cmd_audit, "simulate": cmd_simulate, "extinction": cmd_extinction,
            "eigen": cmd_eigen, "pde": cmd_pde, "crosscheck": cmd_crosscheck}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"growfrag: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"growfrag: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NoDivisionError as exc:
        print(f"growfrag: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (NumericalError, ArithmeticError) as exc:
        print(f"growfrag: numerical failure: {exc}", file=sys.stderr)
        return EXIT_CHECK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
