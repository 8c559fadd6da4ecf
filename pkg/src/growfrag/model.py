"""Model instances for the growth-fragmentation-death process.

A :class:`ModelSpec` bundles the growth law ``g``, the division rate ``b``,
the fragmentation kernel ``q``, the death rate ``D`` and the maximal mass
``M``. Everything downstream (simulation, extinction, eigenproblem, PDE)
reads the model through this module only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp
from scipy.interpolate import PchipInterpolator
from scipy.special import beta as beta_fn


class DomainError(ValueError):
    """An argument lies outside the domain of the model."""


class NumericalError(RuntimeError):
    """A numerical routine failed to meet its tolerance."""


ODE_TOL = 1e-10


# ---------------------------------------------------------------------------
# descriptors


class _Tabulated:
    """Monotone cubic interpolant through ``(x, value)`` samples."""

    def __init__(self, samples):
        pts = np.asarray(samples, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise DomainError("tabulated samples must be a sequence of (x, value) pairs")
        order = np.argsort(pts[:, 0])
        pts = pts[order]
        if np.any(np.diff(pts[:, 0]) <= 0):
            raise DomainError("tabulated abscissae must be strictly increasing")
        self.samples = tuple(map(tuple, pts.tolist()))
        self.lo, self.hi = float(pts[0, 0]), float(pts[-1, 0])
        self._interp = PchipInterpolator(pts[:, 0], pts[:, 1], extrapolate=False)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lo - 1e-14) or np.any(x > self.hi + 1e-14):
            raise DomainError(f"value outside tabulated range [{self.lo}, {self.hi}]")
        return self._interp(np.clip(x, self.lo, self.hi))


@dataclass(frozen=True)
class Gompertz:
    """g(x) = a x ln(M / x)."""

    a: float

    def __call__(self, x, M):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.a * x * np.log(M / x)
        return np.where(x > 0, out, 0.0)


@dataclass(frozen=True)
class PowerLogistic:
    """g(x) = a x (1 - (x / M)**theta)."""

    a: float
    theta: float

    def __call__(self, x, M):
        x = np.asarray(x, dtype=float)
        return self.a * x * (1.0 - (x / M) ** self.theta)


@dataclass(frozen=True)
class TabulatedGrowth:
    samples: tuple

    def __post_init__(self):
        object.__setattr__(self, "_f", _Tabulated(self.samples))

    def __call__(self, x, M):
        return self._f(x)


@dataclass(frozen=True)
class RampAboveThreshold:
    """b(x) = bbar (x - m_div)_+ / (M - m_div): zero up to m_div, bbar at M."""

    bbar: float
    m_div: float

    def __call__(self, x, M):
        x = np.asarray(x, dtype=float)
        return self.bbar * np.clip((x - self.m_div) / (M - self.m_div), 0.0, 1.0)

    def threshold(self, M):
        return self.m_div if self.bbar > 0 else M

    def upper(self, M):
        return self.bbar


@dataclass(frozen=True)
class TabulatedRate:
    samples: tuple

    def __post_init__(self):
        object.__setattr__(self, "_f", _Tabulated(self.samples))

    def __call__(self, x, M):
        return np.maximum(self._f(x), 0.0)

    def threshold(self, M):
        # last abscissa before the rate turns positive
        xs = np.array([s[0] for s in self.samples])
        ys = np.array([s[1] for s in self.samples])
        pos = np.nonzero(ys > 0)[0]
        if len(pos) == 0:
            return M
        return float(xs[pos[0] - 1]) if pos[0] > 0 else float(xs[0])

    def upper(self, M):
        xs = np.linspace(self._f.lo, self._f.hi, 4097)
        return float(np.max(self(xs, M)))


@dataclass(frozen=True)
class SymmetricBeta:
    """Beta(beta, beta) density on [0, 1]; beta=2 gives 6 a (1 - a)."""

    beta: float

    def __call__(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        k = self.beta - 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (alpha * (1.0 - alpha)) ** k / beta_fn(self.beta, self.beta)
        return np.where((alpha >= 0) & (alpha <= 1), np.nan_to_num(out, posinf=np.inf), 0.0)

    def sample(self, rng):
        return rng.beta(self.beta, self.beta)


@dataclass(frozen=True)
class TabulatedKernel:
    samples: tuple

    def __post_init__(self):
        f = _Tabulated(self.samples)
        if f.lo != 0.0 or f.hi != 1.0:
            raise DomainError("tabulated kernel must be sampled on [0, 1]")
        object.__setattr__(self, "_f", f)
        a = np.linspace(0.0, 1.0, 8193)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f(a[1:]) + f(a[:-1])) * np.diff(a))])
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "_cdf", cdf / cdf[-1])

    def __call__(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        inside = (alpha >= 0) & (alpha <= 1)
        return np.where(inside, np.maximum(self._f(np.clip(alpha, 0, 1)), 0.0), 0.0)

    def sample(self, rng):
        return float(np.interp(rng.random(), self._cdf, self._a))


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class ModelSpec:
    """Immutable model instance (g, b, q, D, M)."""

    growth: Gompertz | PowerLogistic | TabulatedGrowth
    division_rate: RampAboveThreshold | TabulatedRate
    kernel: SymmetricBeta | TabulatedKernel
    death_rate: float = 0.0
    max_mass: float = 1.0

    def __post_init__(self):
        if not self.max_mass > 0:
            raise DomainError("max_mass must be positive")
        if self.death_rate < 0:
            raise DomainError("death rate must be non-negative")

    def g(self, x):
        return self.growth(x, self.max_mass)

    def b(self, x):
        return self.division_rate(x, self.max_mass)

    def q(self, alpha):
        return self.kernel(alpha)

    @property
    def bbar(self) -> float:
        return float(self.division_rate.upper(self.max_mass))

    @property
    def m_div(self) -> float:
        return float(self.division_rate.threshold(self.max_mass))

    def with_death(self, D: float) -> "ModelSpec":
        return ModelSpec(self.growth, self.division_rate, self.kernel, float(D), self.max_mass)

    def with_division(self, division_rate) -> "ModelSpec":
        return ModelSpec(self.growth, division_rate, self.kernel, self.death_rate, self.max_mass)

    def with_kernel(self, kernel) -> "ModelSpec":
        return ModelSpec(self.growth, self.division_rate, kernel, self.death_rate, self.max_mass)


def default_spec(D: float = 0.2) -> ModelSpec:
    """Gompertz a=1, M=1, Beta(2,2) kernel, ramp bbar=3 above m_div=0.25."""
    return ModelSpec(
        growth=Gompertz(a=1.0),
        division_rate=RampAboveThreshold(bbar=3.0, m_div=0.25),
        kernel=SymmetricBeta(beta=2.0),
        death_rate=D,
        max_mass=1.0,
    )


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class MassGrid:
    """Quadrature nodes strictly inside (0, M) with positive weights."""

    nodes: np.ndarray
    weights: np.ndarray
    scheme: str
    max_mass: float

    @property
    def n(self) -> int:
        return len(self.nodes)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def make_grid(M: float, n: int, scheme: str = "uniform-trapezoid") -> MassGrid:
    """Build a mass grid.

    ``uniform-trapezoid`` places ``n`` cell centres at ``(i - 1/2) M / n``
    with weight ``M / n`` (the trapezoid rule on cell-averaged data), so the
    weights sum to ``M``. ``gauss-legendre-composite`` uses ``n // 4`` panels
    of 4-point Gauss-Legendre.
    """
    if n < 4:
        raise DomainError("grid needs at least 4 nodes")
    if scheme == "uniform-trapezoid":
        h = M / n
        nodes = (np.arange(n) + 0.5) * h
        weights = np.full(n, h)
    elif scheme == "gauss-legendre-composite":
        panels = max(n // 4, 1)
        gx, gw = np.polynomial.legendre.leggauss(4)
        edges = np.linspace(0.0, M, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
        weights = (half[:, None] * gw[None, :]).ravel()
    else:
        raise DomainError(f"unknown grid scheme {scheme!r}")
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return MassGrid(nodes, weights, scheme, float(M))


# ---------------------------------------------------------------------------
# pointwise evaluation


def _check_mass(spec: ModelSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > spec.max_mass):
        raise DomainError(f"mass outside [0, {spec.max_mass}]")
    return x


def eval_rates(spec: ModelSpec, x):
    """Return ``(g(x), b(x))``; ``x`` must lie in ``[0, M]``."""
    x = _check_mass(spec, x)
    g = np.where((x > 0) & (x < spec.max_mass), spec.g(x), 0.0)
    return g, spec.b(x)


def kernel_density(spec: ModelSpec, alpha):
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise DomainError("proportion outside [0, 1]")
    return spec.q(alpha)


def fragment_kernel(spec: ModelSpec, x, z) -> np.ndarray:
    """Matrix of b(z)/z q(x/z) for rows ``x`` and columns ``z``, with q = 0 beyond 1."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    alpha = x[:, None] / z[None, :]
    inside = alpha <= 1.0
    return (spec.b(z) / z)[None, :] * np.where(inside, spec.q(np.where(inside, alpha, 0.5)), 0.0)


def kernel_constants(spec: ModelSpec, grid: MassGrid) -> tuple[float, float]:
    """Grid estimates of C_bq = sup b(y)/y q(x/y) and C = sup b(x)/x."""
    x = grid.nodes
    return float(np.max(fragment_kernel(spec, x, x))), float(np.max(spec.b(x) / x))


# ---------------------------------------------------------------------------
# growth flow


def _rhs(spec: ModelSpec):
    M = spec.max_mass

    def f(t, y):
        z = np.clip(y, 0.0, M)
        inside = (z > 0) & (z < M)
        return np.where(inside, spec.g(np.where(inside, z, 0.5 * M)), 0.0)

    return f


def _ode_flow(spec: ModelSpec, x: np.ndarray, t_eval: np.ndarray) -> np.ndarray:
    """Integrate all initial masses ``x`` jointly; returns shape (len(x), len(t_eval))."""
    t_eval = np.asarray(t_eval, dtype=float)
    out = np.empty((len(x), len(t_eval)))
    t_end = float(t_eval[-1]) if len(t_eval) else 0.0
    if t_end == 0.0:
        out[:] = x[:, None]
        return out
    sol = solve_ivp(_rhs(spec), (0.0, t_end), x, method="RK45", t_eval=t_eval,
                    atol=ODE_TOL, rtol=ODE_TOL)
    if not sol.success:
        raise NumericalError(f"growth flow integration failed from x={x.tolist()}: {sol.message}")
    return np.clip(sol.y, 0.0, spec.max_mass)


def flow(spec: ModelSpec, x, t):
    """Growth flow A_t(x), solution of dA/dt = g(A), A_0 = x.

    Closed form ``M (x/M)**exp(-a t)`` for Gompertz growth, adaptive RK45
    (atol = rtol = 1e-10) otherwise. Broadcasts over ``x`` and ``t``.
    """
    x = _check_mass(spec, x)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("time must be non-negative")
    M = spec.max_mass
    if isinstance(spec.growth, Gompertz):
        xb, tb = np.broadcast_arrays(x, t)
        with np.errstate(divide="ignore"):
            out = M * np.exp(np.log(xb / M) * np.exp(-spec.growth.a * tb))
        return np.where(xb > 0, out, 0.0)
    xb, tb = np.broadcast_arrays(x, t)
    flat_x, flat_t = xb.ravel(), tb.ravel()
    res = np.empty(flat_x.shape)
    for xv in np.unique(flat_x):
        sel = flat_x == xv
        ts = flat_t[sel]
        order = np.argsort(ts)
        vals = _ode_flow(spec, np.array([xv]), ts[order])[0]
        tmp = np.empty_like(vals)
        tmp[order] = vals
        res[sel] = tmp
    return res.reshape(xb.shape)


def hitting_time(spec: ModelSpec, x: float, y: float) -> float:
    """First time the flow started at ``x`` reaches ``y``; ``math.inf`` when ``y >= M``."""
    M = spec.max_mass
    if not 0 < x <= M:
        raise DomainError("hitting_time needs 0 < x <= M")
    if y < x:
        raise DomainError(f"target mass {y} below start {x}")
    if y >= M:
        return math.inf
    if y == x:
        return 0.0
    if isinstance(spec.growth, Gompertz):
        return math.log(math.log(M / x) / math.log(M / y)) / spec.growth.a
    # bracket by doubling from t=1, then bisect on the dense ODE solution
    rhs = _rhs(spec)
    t_hi = 1.0
    while True:
        sol = solve_ivp(rhs, (0.0, t_hi), [x], method="RK45", dense_output=True,
                        atol=ODE_TOL, rtol=ODE_TOL)
        if not sol.success:
            raise NumericalError(f"growth flow integration failed from x={x}")
        if sol.y[0, -1] >= y:
            break
        t_hi *= 2.0
        if t_hi > 1e12:
            raise NumericalError(f"flow from {x} does not reach {y}")
    lo, hi = 0.0, t_hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if sol.sol(mid)[0] < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def cumulative_hazard(spec: ModelSpec, x: float, t: float) -> float:
    """Integral of b(A_s(x)) over s in [0, t]."""
    from scipy.integrate import quad

    _check_mass(spec, x)
    if t < 0:
        raise DomainError("time must be non-negative")
    if t == 0 or x == 0:
        return 0.0
    start = 0.0
    if x < spec.m_div:
        start = hitting_time(spec, x, spec.m_div)
        if start >= t:
            return 0.0
    if t - start < 1e-9:
        # quad misreports on vanishing intervals; the midpoint rule is exact to O(h^3) here
        return float((t - start) * spec.b(flow(spec, x, 0.5 * (start + t))))
    val, err = quad(lambda s: float(spec.b(flow(spec, x, s))), start, t,
                    epsabs=1e-13, epsrel=1e-12, limit=400)
    if not np.isfinite(val):
        raise NumericalError(f"hazard quadrature failed at x={x}, t={t}")
    return float(val)


# ---------------------------------------------------------------------------
# trajectory tables shared by the extinction, eigen and audit code


def _simpson_weights(m: int, h: float) -> np.ndarray:
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


@dataclass(frozen=True)
class FlowTable:
    """Flows A_t(x_i) and hazards H_i(t) on per-node composite Simpson meshes.

    For node ``i`` the mesh starts at ``t_div[i]``, the time the flow crosses
    the division threshold (b vanishes before it), and is stored in the flat
    slices ``[offsets[i], offsets[i+1])``. ``weight`` holds the Simpson weights.
    """

    x0: np.ndarray
    t_div: np.ndarray
    offsets: np.ndarray
    node: np.ndarray
    t: np.ndarray
    mass: np.ndarray
    hazard: np.ndarray
    weight: np.ndarray
    truncated: np.ndarray = field(repr=False)

    def slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])


def flow_table(spec: ModelSpec, x0, *, rate_floor: float = 0.0, step: float = 0.01,
               panel_length: float = 8.0, tail: float = 1e-10, t_cap: float = 1e4) -> FlowTable:
    """Tabulate trajectories for the nodes ``x0``.

    Panels double in length (and step) until ``rate_floor * t + H(t)`` exceeds
    ``ln(1 / tail)`` or ``t_cap`` is reached.
    """
    x0 = np.asarray(x0, dtype=float)
    M = spec.max_mass
    m_div = spec.m_div
    target = math.log(1.0 / tail)
    steps = max(int(round(panel_length / step)), 2)
    steps += steps % 2
    pieces = []
    t_div = np.empty(len(x0))
    truncated = np.zeros(len(x0), dtype=bool)
    no_division = spec.bbar <= 0 or m_div >= M
    for i, x in enumerate(x0):
        if no_division:
            td = math.inf
        elif x < m_div:
            td = hitting_time(spec, float(x), m_div)
        else:
            td = 0.0
        t_div[i] = td
        if not math.isfinite(td):
            pieces.append((np.empty(0),) * 4)
            continue
        start_mass = float(flow(spec, x, td)) if td > 0 else float(x)
        ts, ms, hs, ws = [], [], [], []
        t0, h_acc, length, m0 = td, 0.0, panel_length, start_mass
        first = True
        while True:
            local = np.linspace(0.0, length, steps + 1)
            mass = flow(spec, np.full(steps + 1, m0), local) if m0 > 0 else np.zeros(steps + 1)
            rate = spec.b(mass)
            haz = h_acc + cumulative_simpson(rate, x=local, initial=0.0)
            w = _simpson_weights(steps, length / steps)
            if first:
                ts.append(t0 + local); ms.append(mass); hs.append(haz); ws.append(w)
                first = False
            else:
                ws[-1][-1] += w[0]
                ts.append(t0 + local[1:]); ms.append(mass[1:]); hs.append(haz[1:]); ws.append(w[1:])
            t0 += length
            h_acc = float(haz[-1])
            m0 = float(mass[-1])
            if rate_floor * t0 + h_acc >= target:
                break
            if t0 >= t_cap:
                truncated[i] = True
                break
            length *= 2.0
        pieces.append((np.concatenate(ts), np.concatenate(ms), np.concatenate(hs), np.concatenate(ws)))
    sizes = np.array([len(p[0]) for p in pieces])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    node = np.repeat(np.arange(len(x0)), sizes)

    def cat(k):
        return np.concatenate([p[k] for p in pieces]) if len(pieces) else np.empty(0)

    return FlowTable(x0, t_div, offsets, node, cat(0), cat(1), cat(2), cat(3), truncated)


# ---------------------------------------------------------------------------
# hypothesis audit


@dataclass
class Check:
    passed: bool
    value: float
    worst_at: float | None = None
    note: str = ""

    def to_dict(self):
        return {"passed": bool(self.passed), "value": float(self.value),
                "worst_at": None if self.worst_at is None else float(self.worst_at),
                "note": self.note}


@dataclass
class HypothesisReport:
    checks: dict[str, Check]
    C_bq: float
    C: float
    integrability: float
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    @property
    def violations(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c.passed]

    def to_dict(self):
        return {
            "passed": self.passed,
            "violations": self.violations,
            "checks": {k: c.to_dict() for k, c in self.checks.items()},
            "C_bq": self.C_bq,
            "C": self.C,
            "integrability": self.integrability if math.isfinite(self.integrability) else "+inf",
            "notes": list(self.notes),
        }


def _alpha_quadrature(panels: int = 64, order: int = 8):
    gx, gw = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + half[:, None] * gx).ravel(), (half[:, None] * gw).ravel()


def audit_hypotheses(spec: ModelSpec, grid: MassGrid, *, tol: float = 1e-10) -> HypothesisReport:
    """Test the standing assumptions and the eigenproblem hypotheses on ``grid``."""
    M = spec.max_mass
    x = grid.nodes
    checks: dict[str, Check] = {}
    notes: list[str] = []

    a_sym = np.linspace(0.0, 1.0, 2001)
    resid = np.abs(spec.q(a_sym) - spec.q(1.0 - a_sym))
    k = int(np.argmax(resid))
    checks["kernel_symmetry"] = Check(bool(resid[k] <= tol), float(resid[k]), float(a_sym[k]))

    aq, wq = _alpha_quadrature()
    qv = spec.q(aq)
    mass0 = float(np.dot(wq, qv))
    mass1 = float(np.dot(wq, aq * qv))
    checks["kernel_normalized"] = Check(abs(mass0 - 1) <= tol, abs(mass0 - 1))
    checks["kernel_mean_half"] = Check(abs(mass1 - 0.5) <= tol, abs(mass1 - 0.5))

    ends = np.array([float(spec.q(0.0)), float(spec.q(1.0))])
    checks["kernel_endpoints_vanish"] = Check(bool(np.all(np.abs(ends) <= tol)), float(np.max(np.abs(ends))),
                                              0.0 if abs(ends[0]) >= abs(ends[1]) else 1.0)

    g_end = np.abs(np.array([float(spec.g(np.array(0.0))), float(spec.g(np.array(M)))]))
    gx = spec.g(x)
    worst = int(np.argmin(gx))
    ok = bool(np.all(g_end <= tol) and gx[worst] > 0)
    checks["growth_vanishes_at_ends_positive_inside"] = Check(
        ok, float(max(g_end.max(), -min(gx[worst], 0.0))), float(x[worst]),
        "" if ok else f"g(0)={g_end[0]:.3g}, g(M)={g_end[1]:.3g}, min interior g={gx[worst]:.3g}")

    bx = spec.b(x)
    m_div = spec.m_div
    bbar = spec.bbar
    below = x <= m_div
    above = ~below
    bad_below = np.abs(bx[below]).max() if below.any() else 0.0
    bad_above = (bx[above] <= 0) | (bx[above] > bbar * (1 + 1e-12))
    ok = bool(bad_below == 0 and not bad_above.any() and bbar > 0)
    where = None
    if bad_above.any():
        where = float(x[above][np.argmax(bad_above)])
    checks["division_threshold_and_bound"] = Check(ok, float(bad_below), where,
                                                   "" if bbar > 0 else "division rate identically zero")

    ratio = bx / x
    k = int(np.argmax(ratio))
    C = float(ratio[k])
    checks["b_over_x_bounded"] = Check(bool(np.isfinite(C)), C, float(x[k]))

    kern = fragment_kernel(spec, x, x)
    C_bq = float(np.max(kern))
    i, j = np.unravel_index(int(np.argmax(kern)), kern.shape)
    checks["C_bq_finite"] = Check(bool(np.isfinite(C_bq)), C_bq, float(x[j]))

    if bbar > 0 and m_div < M:
        table = flow_table(spec, x, rate_floor=0.0, step=0.02)
        per_node = np.where(np.isfinite(table.t_div), table.t_div, np.inf)
        tail = np.bincount(table.node, weights=table.weight * np.exp(-table.hazard), minlength=grid.n)
        per_node = per_node + tail
        integ = float(np.dot(grid.weights, per_node))
        finite = bool(np.isfinite(integ) and not table.truncated.any())
        if table.truncated.any():
            notes.append("hazard saturates: trajectories near M never accumulate enough division hazard")
    else:
        integ, finite = math.inf, False
    checks["hazard_integrability"] = Check(finite, integ if math.isfinite(integ) else float("inf"))
    b_far = spec.b(np.linspace(max(m_div, 0.0) + 0.5 * (M - max(m_div, 0.0)), M, 257))
    if not np.all(b_far > 0):
        notes.append("no m < M with inf b > 0 on [m, M]: sufficient integrability condition not met")
    return HypothesisReport(checks, C_bq, C, integ, notes)

