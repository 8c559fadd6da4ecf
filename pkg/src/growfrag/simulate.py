"""Exact event-driven simulation of the branching growth-fragmentation-death process.

Each individual grows along the deterministic flow until its single event:
death at rate D or division with hazard b(A_t(x)), sampled by thinning a
rate-b̄ Poisson stream. Individuals do not interact, so their next events are
drawn independently when they are born and kept in a min-heap.

Randomness is keyed by (seed, replica, lineage path) with a counter-based
generator: the root has path 1 and the children of path p are 2p and 2p + 1.
A replica is a pure function of its key, which makes results independent of
how replicas are spread over workers.
"""
from __future__ import annotations

import hashlib
import heapq
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import DomainError, Gompertz, ModelSpec, RampAboveThreshold, flow

DEFAULT_MAX_POP = 500
DEFAULT_MAX_EVENTS = 1_000_000
WALD_Z = 1.959963984540054


class NoEventError(ValueError):
    pass


def stream_key(seed: int, replica: int, path: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}/{replica}/{path}".encode(), digest_size=16).digest()
    return np.frombuffer(digest, dtype="<u8").astype(np.uint64)


def stream(seed: int, replica: int, path: int) -> np.random.Generator:
    """Counter-based generator for one individual."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, replica, path)))


class _Reseater:
    """One Philox generator whose key is swapped per individual (cheaper than constructing one)."""

    def __init__(self):
        self.bits = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
        self.rng = np.random.Generator(self.bits)

    def __call__(self, seed, replica, path) -> np.random.Generator:
        self.bits.state = {
            "bit_generator": "Philox",
            "state": {"counter": np.zeros(4, dtype=np.uint64), "key": stream_key(seed, replica, path)},
            "buffer": np.zeros(4, dtype=np.uint64), "buffer_pos": 4, "has_uint32": 0, "uinteger": 0,
        }
        return self.rng


@dataclass
class EventRecord:
    time: float
    kind: str  # "division" or "death"
    parent: int
    children: tuple = ()
    alpha: float | None = None
    mass: float = math.nan  # parent mass at the event
    child_masses: tuple = ()


@dataclass
class Caps:
    max_pop: int = DEFAULT_MAX_POP
    max_events: int = DEFAULT_MAX_EVENTS
    proxy: bool = True  # reaching max_pop counts as survival

    def __post_init__(self):
        if self.max_pop < 1 or self.max_events < 1:
            raise ValueError("caps must be positive")


@dataclass
class SimulationSummary:
    survived: bool
    extinction_time: float | None
    times: np.ndarray
    population_counts: np.ndarray
    weighted: dict
    seed: int
    replica: int = 0
    events: list[EventRecord] = field(default_factory=list)
    n_events: int = 0
    reached_cap: bool = False
    truncated: bool = False
    final_population: int = 0


# ---------------------------------------------------------------------------
# fast scalar evaluation for the built-in families


class _Dynamics:
    def __init__(self, spec: ModelSpec):
        self.spec = spec
        M = spec.max_mass
        self.M = M
        self.bbar = spec.bbar
        self.D = spec.death_rate
        g = spec.growth
        if isinstance(g, Gompertz):
            a = g.a

            def fl(x, t):
                if x <= 0.0:
                    return 0.0
                return M * math.exp(math.log(x / M) * math.exp(-a * t))
        else:
            def fl(x, t):
                return float(flow(spec, x, t))
        self.flow = fl
        d = spec.division_rate
        if isinstance(d, RampAboveThreshold):
            md, bb = d.m_div, d.bbar

            def rate(m):
                return bb * (m - md) / (M - md) if m > md else 0.0
        else:
            def rate(m):
                return float(spec.b(m))
        self.rate = rate


def _first_event(dyn: _Dynamics, x: float, rng: np.random.Generator):
    """(delay, kind, alpha, mass at event) for an individual born with mass ``x``."""
    death = rng.exponential(1.0 / dyn.D) if dyn.D > 0 else math.inf
    bbar = dyn.bbar
    if bbar > 0 and x > 0:
        t = 0.0
        while True:
            t += rng.exponential(1.0 / bbar)
            if t >= death:
                break
            m = dyn.flow(x, t)
            if rng.random() * bbar <= dyn.rate(m):
                alpha = float(dyn.spec.kernel.sample(rng))
                return t, "division", alpha, m
            if math.isinf(death) and t > 1e9:
                return math.inf, "none", None, m
    if math.isinf(death):
        return math.inf, "none", None, x
    return death, "death", None, dyn.flow(x, death) if x > 0 else 0.0


def first_event(spec: ModelSpec, x: float, rng) -> EventRecord:
    """Sample the first event of an individual of mass ``x`` born at time 0."""
    if not 0 < x < spec.max_mass:
        raise DomainError("initial mass must lie in (0, M)")
    if spec.death_rate <= 0 and spec.bbar <= 0:
        raise NoEventError("no event possible: D = 0 and b vanishes")
    t, kind, alpha, m = _first_event(_Dynamics(spec), float(x), rng)
    if kind == "division":
        return EventRecord(t, kind, 1, (2, 3), alpha, m, split_mass(m, alpha))
    return EventRecord(t, kind, 1, (), alpha, m)


def split_mass(m: float, alpha: float) -> tuple[float, float]:
    """Child masses (alpha m, (1-alpha) m) whose floating-point sum is exactly ``m``."""
    big = max(alpha, 1.0 - alpha) * m
    small = m - big  # exact: big >= m/2 up to rounding
    return (small, big) if alpha < 0.5 else (big, small)


# ---------------------------------------------------------------------------
# one replica


def _run_replica(spec: ModelSpec, x0: float, horizon: float, caps: Caps, seed: int, replica: int,
                 times, weights: dict, record: bool) -> SimulationSummary:
    dyn = _Dynamics(spec)
    times = np.asarray(times, dtype=float)
    counts = np.full(len(times), np.nan)
    weighted = {name: np.full(len(times), np.nan) for name in weights}

    heap: list = []
    reseat = _Reseater()

    def born(path, t, m):
        rng = reseat(seed, replica, path)
        delay, kind, alpha, me = _first_event(dyn, m, rng)
        heapq.heappush(heap, (t + delay, path, t, m, kind, alpha, me))

    born(1, 0.0, float(x0))
    events: list[EventRecord] = []
    n_events = 0
    k_time = 0
    ext_time = None
    reached_cap = truncated = False

    def snapshot(k, ts):
        counts[k] = len(heap)
        if not weights:
            return
        if heap:
            bm = np.array([h[3] for h in heap])
            age = ts - np.array([h[2] for h in heap])
            masses = _flow_many(dyn, spec, bm, age)
        else:
            masses = np.empty(0)
        for name, f in weights.items():
            weighted[name][k] = float(np.sum(f(masses))) if len(masses) else 0.0

    while True:
        next_t = heap[0][0] if heap else math.inf
        while k_time < len(times) and times[k_time] <= min(next_t, horizon) and next_t > times[k_time]:
            snapshot(k_time, times[k_time])
            k_time += 1
        if not heap:
            break
        if next_t > horizon:
            break
        if n_events >= caps.max_events:
            truncated = True
            break
        t, path, _, _, kind, alpha, m = heapq.heappop(heap)
        n_events += 1
        if kind == "division":
            a, b = split_mass(m, alpha)
            left, right = 2 * path, 2 * path + 1
            born(left, t, a)
            born(right, t, b)
            if record:
                events.append(EventRecord(t, "division", path, (left, right), alpha, m, (a, b)))
        else:
            if record:
                events.append(EventRecord(t, "death", path, (), None, m))
            if not heap:
                ext_time = t
        if len(heap) >= caps.max_pop:
            reached_cap = True
            if not caps.proxy:
                truncated = True
            break

    survived = bool(heap) and not truncated
    if ext_time is not None:
        counts[k_time:] = 0
        for v in weighted.values():
            v[k_time:] = 0.0
    return SimulationSummary(survived, ext_time, times, counts, weighted, seed, replica, events,
                             n_events, reached_cap, truncated, len(heap))


def _flow_many(dyn, spec, x, t):
    if isinstance(spec.growth, Gompertz):
        M, a = spec.max_mass, spec.growth.a
        with np.errstate(divide="ignore"):
            out = M * np.exp(np.log(x / M) * np.exp(-a * t))
        return np.where(x > 0, out, 0.0)
    return np.array([dyn.flow(float(xi), float(ti)) for xi, ti in zip(x, t)])


def simulate(spec: ModelSpec, x0: float, horizon: float, caps: Caps | None = None, seed: int = 0,
             *, replica: int = 0, times=(), weights: dict | None = None,
             record: bool = True) -> SimulationSummary:
    """Simulate one replica from a single individual of mass ``x0`` up to ``horizon``.

    Stops at the horizon, at extinction, or at a cap. With ``caps.proxy`` a
    replica reaching ``max_pop`` is counted as surviving; otherwise the run is
    flagged ``truncated``. ``times`` are sampling times for the population
    count and the weighted sums ``sum_i f(X_t^i)`` of each entry of ``weights``.
    """
    if not 0 < x0 < spec.max_mass:
        raise DomainError("x0 must lie in (0, M)")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if spec.death_rate <= 0 and spec.bbar <= 0:
        raise NoEventError("no event possible: D = 0 and b vanishes")
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(times > horizon) or np.any(np.diff(times) < 0):
        raise ValueError("sample times must be sorted within [0, horizon]")
    return _run_replica(spec, float(x0), float(horizon), caps or Caps(), int(seed), int(replica),
                        times, weights or {}, record)


class _Task:
    def __init__(self, spec, x0, horizon, caps, seed, times, weights, record):
        self.args = (spec, x0, horizon, caps, seed, times, weights, record)

    def __call__(self, replica):
        spec, x0, horizon, caps, seed, times, weights, record = self.args
        return simulate(spec, x0, horizon, caps, seed, replica=replica, times=times,
                        weights=weights, record=record)


def run_replicas(spec: ModelSpec, x0: float, horizon: float, replicas: int, seed: int = 0,
                 caps: Caps | None = None, *, times=(), weights: dict | None = None,
                 record: bool = False, workers: int = 1) -> list[SimulationSummary]:
    """All replicas in replica order; ``workers`` only changes wall time."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    task = _Task(spec, x0, horizon, caps or Caps(), seed, times, weights or {}, record)
    if workers <= 1:
        return [task(r) for r in range(replicas)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, range(replicas), chunksize=max(replicas // (4 * workers), 1)))


@dataclass
class SurvivalEstimate:
    estimate: float
    sigma: float
    ci_halfwidth: float
    replicas: int
    survivors: int
    capped: int
    truncated: int

    @property
    def ci(self) -> tuple[float, float]:
        return self.estimate - self.ci_halfwidth, self.estimate + self.ci_halfwidth

    def to_dict(self):
        return {"estimate": self.estimate, "sigma": self.sigma, "ci_halfwidth": self.ci_halfwidth,
                "ci": list(self.ci), "replicas": self.replicas, "survivors": self.survivors,
                "capped": self.capped, "truncated": self.truncated}


def survival_from(results: list[SimulationSummary]) -> SurvivalEstimate:
    n = len(results)
    k = sum(r.survived for r in results)
    p = k / n
    sigma = math.sqrt(p * (1 - p) / n)
    return SurvivalEstimate(p, sigma, WALD_Z * sigma, n, k, sum(r.reached_cap for r in results),
                            sum(r.truncated for r in results))


def estimate_survival(spec: ModelSpec, x0: float, horizon: float, caps: Caps | None = None,
                      replicas: int = 2000, seed: int = 0, *, workers: int = 1) -> SurvivalEstimate:
    """Survival frequency under the proxy, with a 95% Wald interval."""
    return survival_from(run_replicas(spec, x0, horizon, replicas, seed, caps, workers=workers))


@dataclass
class WeightedEstimate:
    times: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray  # standard error of the mean
    ci_halfwidth: np.ndarray
    samples: np.ndarray  # replicas x times


def weighted_expectation(spec: ModelSpec, x0: float, f, times, replicas: int, seed: int = 0,
                         *, max_pop: int = 10**7, workers: int = 1) -> WeightedEstimate:
    """Monte Carlo estimate of E[sum_i f(X_t^i)] from one individual of mass ``x0``.

    No population cap is applied in practice (``max_pop`` is huge and the
    proxy is off), so the estimate is unbiased; a truncated replica raises.
    """
    times = np.asarray(times, dtype=float)
    caps = Caps(max_pop=max_pop, max_events=10**9, proxy=False)
    res = run_replicas(spec, x0, float(times.max()), replicas, seed, caps, times=times,
                       weights={"f": f}, workers=workers)
    if any(r.truncated for r in res):
        raise RuntimeError("population cap reached while estimating an expectation")
    samples = np.array([r.weighted["f"] for r in res])
    mean = samples.mean(axis=0)
    sigma = samples.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.zeros(len(times))
    sigma = np.where(np.ptp(samples, axis=0) == 0, 0.0, sigma)  # drop roundoff on constant columns
    return WeightedEstimate(times, mean, sigma, WALD_Z * sigma, samples)


# ---------------------------------------------------------------------------
# weight functions (module level so they pickle)


class One:
    def __call__(self, x):
        return np.ones_like(np.asarray(x, dtype=float))


class Mass:
    def __call__(self, x):
        return np.asarray(x, dtype=float)


@dataclass
class GridFunction:
    """Piecewise-linear function through (nodes, values), flat beyond the ends."""

    nodes: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.nodes, self.values)
