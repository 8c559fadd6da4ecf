"""Run configuration: INI-style sections, documented defaults, strict key checking."""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .model import (
    Gompertz,
    ModelSpec,
    PowerLogistic,
    RampAboveThreshold,
    SymmetricBeta,
    TabulatedGrowth,
    TabulatedKernel,
    TabulatedRate,
    make_grid,
)

SEED_ENV = "GROWFRAG_SEED"

# section -> key -> (default, help)
DEFAULTS: dict[str, dict[str, tuple[str, str]]] = {
    "growth": {
        "kind": ("gompertz", "gompertz | power-logistic | tabulated"),
        "a": ("1.0", "growth speed a"),
        "theta": ("1.0", "power-logistic exponent"),
        "samples": ("", "tabulated g as 'x:g, x:g, ...'"),
    },
    "division": {
        "kind": ("ramp", "ramp | tabulated"),
        "bbar": ("3.0", "maximal division rate"),
        "mdiv": ("0.25", "division threshold mass"),
        "samples": ("", "tabulated b as 'x:b, x:b, ...'"),
    },
    "kernel": {
        "kind": ("beta", "beta | tabulated"),
        "beta": ("2.0", "symmetric Beta parameter"),
        "samples": ("", "tabulated q as 'a:q, a:q, ...' on [0, 1]"),
    },
    "death": {"D": ("0.2", "death (washout) rate")},
    "mass": {"M": ("1.0", "maximal mass")},
    "grid": {
        "n": ("200", "number of grid nodes"),
        "scheme": ("uniform-trapezoid", "uniform-trapezoid | gauss-legendre-composite"),
    },
    "simulate": {
        "x0": ("0.5", "initial mass"),
        "horizon": ("30.0", "time horizon"),
        "replicas": ("2000", "number of replicas"),
        "seed": ("20240611", "base seed (GROWFRAG_SEED overrides)"),
        "max_pop": ("500", "population cap"),
        "max_events": ("1000000", "event cap per replica"),
        "proxy": ("true", "count reaching max_pop as survival"),
        "times": ("", "comma-separated sample times"),
        "weight": ("one", "one | mass | phi"),
        "phi_file": ("", "CSV with columns x, phi (from the eigen command)"),
        "workers": ("1", "worker processes (wall time only)"),
    },
    "extinction": {
        "tol": ("1e-8", "sup-norm tolerance"),
        "max_iter": ("10000", "maximum Picard iterations"),
        "margin": ("1e-3", "dichotomy margin"),
    },
    "eigen": {
        "schedule": ("1e-1,1e-2,1e-3,1e-4,1e-5,1e-6,1e-7", "decreasing eps schedule"),
        "tol": ("1e-5", "acceptance gap between successive Lambda_eps"),
    },
    "pde": {
        "n": ("400", "uniform grid nodes"),
        "T": ("40.0", "final time"),
        "dt": ("auto", "time step or 'auto' (CFL 0.9)"),
        "cadence": ("0.5", "output cadence in time units"),
    },
    "crosscheck": {
        "x0": ("0.5", "initial mass"),
        "horizon": ("30.0", "survival horizon"),
        "replicas": ("2000", "survival replicas"),
        "max_pop": ("500", "population cap"),
        "seed": ("20240611", "base seed (GROWFRAG_SEED overrides)"),
        "pde_n": ("400", "PDE grid nodes"),
        "pde_T": ("40.0", "PDE final time"),
        "martingale_times": ("1,2,4", "martingale sample times"),
        "martingale_replicas": ("4000", "martingale replicas"),
        "martingale_lambda_offset": ("0.0", "added to Lambda in the martingale test (negative control)"),
        "growth_times": ("1,2,4,6,8", "growth-bound sample times"),
        "growth_replicas": ("2000", "growth-bound replicas"),
        "growth_lambda_offset": ("0.0", "added to Lambda in the growth-bound test (negative control)"),
        "workers": ("1", "worker processes (wall time only)"),
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)  # section -> key -> raw string
    source: str | None = None

    def get(self, section: str, key: str) -> str:
        return self.values.get(section, {}).get(key, DEFAULTS[section][key][0])

    def set(self, section: str, key: str, value) -> None:
        if key not in DEFAULTS.get(section, {}):
            raise ConfigError(f"unknown key {section}.{key}")
        self.values.setdefault(section, {})[key] = str(value)

    def float(self, section, key) -> float:
        return _num(self.get(section, key), float, section, key)

    def int(self, section, key) -> int:
        return _num(self.get(section, key), int, section, key)

    def bool(self, section, key) -> bool:
        v = self.get(section, key).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{section}.{key}: expected a boolean, got {v!r}")

    def floats(self, section, key) -> tuple:
        raw = self.get(section, key).strip()
        if not raw:
            return ()
        return tuple(_num(x, float, section, key) for x in raw.split(","))

    def seed(self, section) -> int:
        env = os.environ.get(SEED_ENV)
        if env is not None and env.strip():
            return _num(env, int, "env", SEED_ENV)
        return self.int(section, "seed")


def _num(raw, kind, section, key):
    try:
        return kind(str(raw).strip())
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {kind.__name__}") from None


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys like D and M are case-sensitive
    try:
        parser.read(p, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{p}: {exc}") from None
    cfg = RunConfig(source=str(p))
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"{p}: unknown section [{section}]")
        for key, value in parser.items(section):
            cfg.set(section, key, value)
    return cfg


def _samples(cfg: RunConfig, section: str):
    raw = cfg.get(section, "samples").strip()
    if not raw:
        raise ConfigError(f"{section}.samples is required for a tabulated {section}")
    pairs = []
    for item in raw.split(","):
        try:
            x, y = item.split(":")
            pairs.append((float(x), float(y)))
        except ValueError:
            raise ConfigError(f"{section}.samples: bad pair {item.strip()!r}") from None
    return tuple(pairs)


def spec_from_config(cfg: RunConfig) -> ModelSpec:
    kind = cfg.get("growth", "kind")
    if kind == "gompertz":
        growth = Gompertz(cfg.float("growth", "a"))
    elif kind == "power-logistic":
        growth = PowerLogistic(cfg.float("growth", "a"), cfg.float("growth", "theta"))
    elif kind == "tabulated":
        growth = TabulatedGrowth(_samples(cfg, "growth"))
    else:
        raise ConfigError(f"growth.kind: unknown {kind!r}")
    kind = cfg.get("division", "kind")
    if kind == "ramp":
        division = RampAboveThreshold(cfg.float("division", "bbar"), cfg.float("division", "mdiv"))
    elif kind == "tabulated":
        division = TabulatedRate(_samples(cfg, "division"))
    else:
        raise ConfigError(f"division.kind: unknown {kind!r}")
    kind = cfg.get("kernel", "kind")
    if kind == "beta":
        kernel = SymmetricBeta(cfg.float("kernel", "beta"))
    elif kind == "tabulated":
        kernel = TabulatedKernel(_samples(cfg, "kernel"))
    else:
        raise ConfigError(f"kernel.kind: unknown {kind!r}")
    try:
        return ModelSpec(growth, division, kernel, cfg.float("death", "D"), cfg.float("mass", "M"))
    except ValueError as exc:
        raise ConfigError(f"invalid model: {exc}") from None


def grid_from_config(cfg: RunConfig, n: int | None = None):
    try:
        return make_grid(cfg.float("mass", "M"), n or cfg.int("grid", "n"), cfg.get("grid", "scheme"))
    except ValueError as exc:
        raise ConfigError(f"invalid grid: {exc}") from None
