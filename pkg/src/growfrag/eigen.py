"""Principal eigenelements of the growth-fragmentation operator.

The route follows the regularised fixed-point construction: for ``eps > 0``
the positive operator

    G f(x) = 2 int_0^inf int_0^M [b(A_t y)/A_t y q(x/A_t y) + eps/M] f(y)
                 exp(-int_0^t (lam + b(A_s y) + eps) ds) dy dt

has a Perron eigenvalue ``mu(lam)`` decreasing from 2 (lam -> 0) to 0
(lam -> inf). Bisection finds ``Lambda_eps`` with ``mu = 1``; letting
``eps -> 0`` gives the eigenvalue of the problem without death, and the
death rate is subtracted at the end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    FlowTable,
    MassGrid,
    ModelSpec,
    NumericalError,
    flow_table,
    fragment_kernel,
    kernel_constants,
)

DEFAULT_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7)


class NoDivisionError(NumericalError):
    """The model has no division; the eigenproblem has no positive solution."""


def has_division(spec: ModelSpec) -> bool:
    return spec.bbar > 0 and spec.m_div < spec.max_mass


@dataclass
class OperatorMatrix:
    """Discretised G^eps_lambda; columns already carry the quadrature weights."""

    K: np.ndarray
    lam: float
    eps: float
    death: float = 0.0

    def apply(self, f):
        return self.K @ f


class Assembler:
    """Assemble G^eps_lambda on a grid for many (lambda, eps).

    Flows and hazards are tabulated once per grid on Simpson meshes. The
    fragmentation factor b(z)/z q(x_i/z) is tabulated on a uniform mesh in z
    and evaluated along each trajectory by linear interpolation, so a new
    (lambda, eps) only costs one scatter and one matrix product.
    """

    def __init__(self, spec: ModelSpec, grid: MassGrid, *, step: float = 0.02, z_points: int | None = None):
        self.spec = spec
        self.grid = grid
        M = spec.max_mass
        self.table: FlowTable = flow_table(spec, grid.nodes, rate_floor=0.0, step=step)
        nz = z_points or 4 * grid.n
        z0 = spec.m_div
        self.z = np.linspace(z0, M, nz + 1)
        zk = self.z.copy()
        zk[0] = max(zk[0], 1e-300)
        self.P = fragment_kernel(spec, grid.nodes, zk)
        dz = (M - z0) / nz
        pos = np.clip((self.table.mass - z0) / dz, 0.0, nz)
        lo = np.minimum(np.floor(pos).astype(np.int64), nz - 1)
        frac = pos - lo
        n = grid.n
        self._lo_index = lo * n + self.table.node
        self._hi_index = (lo + 1) * n + self.table.node
        self._lo_frac = 1.0 - frac
        self._hi_frac = frac
        self._nz = nz + 1
        self.C_bq, self.C = kernel_constants(spec, grid)

    def lambda_max(self, eps: float) -> float:
        return 2.0 * (self.C_bq * self.spec.max_mass + eps)

    def assemble(self, lam: float, eps: float, death: float = 0.0) -> OperatorMatrix:
        tab = self.table
        n = self.grid.n
        w = self.grid.weights
        M = self.spec.max_mass
        rate = lam + death + eps
        v = tab.weight * np.exp(-rate * tab.t - tab.hazard)
        W = np.bincount(self._lo_index, weights=v * self._lo_frac, minlength=self._nz * n)
        W += np.bincount(self._hi_index, weights=v * self._hi_frac, minlength=self._nz * n)
        K = self.P @ W.reshape(self._nz, n)
        if eps > 0:
            td = tab.t_div
            if rate > 0:
                early = np.where(np.isfinite(td), -np.expm1(-rate * td) / rate, 1.0 / rate)
            else:
                early = td.copy()
            uniform = early + np.bincount(tab.node, weights=v, minlength=n)
            K += (eps / M) * uniform[None, :]
        K *= 2.0 * w[None, :]
        return OperatorMatrix(K, lam, eps, death)


def assemble_operator(spec: ModelSpec, grid: MassGrid, lam: float, eps: float,
                      assembler: Assembler | None = None) -> OperatorMatrix:
    if lam < 0 or eps < 0:
        raise ValueError("lambda and eps must be non-negative")
    return (assembler or Assembler(spec, grid)).assemble(lam, eps)


@dataclass
class PowerResult:
    mu: float
    vector: np.ndarray
    iterations: int
    residual: float


def dominant_eigen(K, tol: float = 1e-13, start=None, max_iter: int = 100_000) -> PowerResult:
    """Perron eigenpair of a positive matrix by power iteration (max-normalised)."""
    A = K.K if isinstance(K, OperatorMatrix) else np.asarray(K)
    v = np.ones(A.shape[0]) if start is None else np.asarray(start, dtype=float) / np.max(start)
    mu = 0.0
    change = math.inf
    for it in range(1, max_iter + 1):
        y = A @ v
        new_mu = float(np.max(y))
        if not new_mu > 0:
            raise NumericalError(f"power iteration collapsed (mu={new_mu})")
        y /= new_mu
        change = float(np.max(np.abs(y - v)))
        dmu = abs(new_mu - mu)
        v, mu = y, new_mu
        if dmu < tol and change < tol:
            return PowerResult(mu, v, it, change)
    raise NumericalError(f"power iteration did not converge: mu={mu}, residual={change}")


@dataclass
class LambdaResult:
    lam: float
    psi: np.ndarray
    mu: float
    eps: float
    trace: list[tuple[float, float]]
    monotone: bool


def solve_lambda(spec: ModelSpec, grid: MassGrid, eps: float, tol: float = 1e-11, *,
                 assembler: Assembler | None = None, death: float = 0.0,
                 start=None, guess: float | None = None, max_bisect: int = 100) -> LambdaResult:
    """Find lambda with mu(lambda) = 1 by bisection at fixed ``eps > 0``.

    ``tol`` bounds ``|mu - 1|``. With ``death > 0`` the death rate is kept in
    the exponent and the bracket is shifted by ``-death``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    asm = assembler or Assembler(spec, grid)
    trace: list[tuple[float, float]] = []
    vec = start

    def mu_at(lam):
        nonlocal vec
        res = dominant_eigen(asm.assemble(lam, eps, death), start=vec)
        vec = res.vector
        trace.append((lam, res.mu))
        return res.mu

    lo, hi = 1e-6 - death, asm.lambda_max(eps) - death
    if guess is not None:
        delta = max(abs(guess) * 1e-2, 10 * eps, 1e-8)
        a, b = guess - delta, guess + delta
        if a > lo and b < hi and mu_at(a) > 1 and mu_at(b) < 1:
            lo, hi = a, b
    if (lo, hi) == (1e-6 - death, asm.lambda_max(eps) - death):
        if mu_at(lo) <= 1:
            raise NumericalError("no supercritical root: mu(lambda_min) <= 1")
        while mu_at(hi) >= 1:
            hi *= 2.0
    lam, mu = _bisect(mu_at, lo, hi, tol, max_bisect)

    monotone = _is_monotone(trace)
    if not monotone:
        # scan for the first crossing, then bisect locally
        grid_l = np.linspace(1e-6 - death, asm.lambda_max(eps) - death, 65)
        vals = [mu_at(x) for x in grid_l]
        k = next(i for i in range(1, len(vals)) if vals[i - 1] > 1 >= vals[i])
        lam, mu = _bisect(mu_at, grid_l[k - 1], grid_l[k], tol, max_bisect)
    res = dominant_eigen(asm.assemble(lam, eps, death), start=vec)
    return LambdaResult(lam, res.vector, res.mu, eps, trace, monotone)


def _bisect(mu_at, lo, hi, tol, max_iter):
    lam, mu = 0.5 * (lo + hi), math.nan
    for _ in range(max_iter):
        lam = 0.5 * (lo + hi)
        mu = mu_at(lam)
        if abs(mu - 1.0) <= tol or hi - lo < 1e-15:
            break
        if mu > 1.0:
            lo = lam
        else:
            hi = lam
    return lam, mu


def _is_monotone(trace) -> bool:
    pts = sorted(trace)
    mus = np.array([m for _, m in pts])
    return bool(np.all(np.diff(mus) <= 1e-10))


# ---------------------------------------------------------------------------
# eps -> 0 and eigenfunctions


@dataclass
class EigenSolution:
    grid: MassGrid
    lambda0: float
    death: float
    psi: np.ndarray
    u: np.ndarray
    phi: np.ndarray
    mu_trace: list[tuple[float, float]] = field(default_factory=list)
    epsilon_trace: list[tuple[float, float]] = field(default_factory=list)
    converged: bool = False
    phi_converged: bool = False
    phi_gap: float = math.nan
    diagnostics: dict = field(default_factory=dict)

    @property
    def lambda_(self) -> float:
        """Eigenvalue with the death rate included: Lambda = Lambda_0 - D."""
        return self.lambda0 - self.death

    def to_dict(self):
        return {
            "lambda": self.lambda_,
            "lambda0": self.lambda0,
            "death_rate": self.death,
            "converged": self.converged,
            "phi_converged": self.phi_converged,
            "phi_gap": self.phi_gap,
            "epsilon_trace": [[e, l] for e, l in self.epsilon_trace],
            "mu_trace": [[l, m] for l, m in self.mu_trace],
            "diagnostics": self.diagnostics,
        }


@dataclass
class ContinuationResult:
    lambda0: float
    psi: np.ndarray
    eps: float
    epsilon_trace: list[tuple[float, float]]
    mu_trace: list[tuple[float, float]]
    converged: bool
    steps: list[LambdaResult]


def continuation(spec: ModelSpec, grid: MassGrid, schedule=DEFAULT_SCHEDULE, tol: float = 1e-5,
                 *, assembler: Assembler | None = None) -> ContinuationResult:
    """Drive eps down the schedule until successive Lambda_eps differ by less than ``tol``."""
    if not has_division(spec):
        raise NoDivisionError("division rate vanishes identically; no eigenvalue to compute")
    schedule = list(schedule)
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    asm = assembler or Assembler(spec, grid)
    steps: list[LambdaResult] = []
    eps_trace, mu_trace = [], []
    converged = False
    for eps in schedule:
        prev = steps[-1] if steps else None
        res = solve_lambda(spec, grid, eps, assembler=asm,
                           start=None if prev is None else prev.psi,
                           guess=None if prev is None else prev.lam)
        steps.append(res)
        eps_trace.append((eps, res.lam))
        mu_trace.extend(res.trace)
        if prev is not None and abs(prev.lam - res.lam) < tol:
            converged = True
            break
    last = steps[-1]
    return ContinuationResult(last.lam, last.psi, last.eps, eps_trace, mu_trace, converged, steps)


def _e0(a):
    return np.where(a < 1e-4, 1 - a / 2 + a * a / 6, -np.expm1(-a) / np.where(a < 1e-4, 1.0, a))


def _e1(a):
    safe = np.where(a < 1e-3, 1.0, a)
    big = (-np.expm1(-safe) - safe * np.exp(-safe)) / safe**2
    return np.where(a < 1e-3, 0.5 - a / 3 + a * a / 8, big)


def build_u(spec: ModelSpec, grid: MassGrid, lambda0: float, psi) -> np.ndarray:
    """Stationary profile u from the fixed point Psi, normalised to integrate to 1.

    g u solves (g u)' = -(Lambda_0 + b)/g (g u) + Psi with g u = 0 at 0; it is
    marched across the nodes with an exponential integrator whose cell
    exponents are Gauss-Legendre integrals of (Lambda_0 + b)/g.
    """
    x = grid.nodes
    psi = np.asarray(psi, dtype=float)
    gl, gw = np.polynomial.legendre.leggauss(8)

    def rate_integral(a, b):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        z = mid[:, None] + half[:, None] * gl[None, :]
        kappa = (lambda0 + spec.b(z)) / spec.g(z)
        return half * (kappa @ gw)

    a = rate_integral(x[:-1], x[1:])
    h = np.diff(x)
    e0, e1 = _e0(a), _e1(a)
    cell = h * (psi[1:] * (e0 - e1) + psi[:-1] * e1)
    decay = np.exp(-a)
    a_first = float(rate_integral(np.array([0.5 * x[0]]), np.array([x[0]]))[0]) * 2.0
    v = np.empty_like(x)
    v[0] = x[0] * psi[0] * float(_e0(np.array(a_first)) - _e1(np.array(a_first)))
    for i in range(len(x) - 1):
        v[i + 1] = v[i] * decay[i] + cell[i]
    g = spec.g(x)
    u = np.where(g > 1e-300, v / np.where(g > 1e-300, g, 1.0), 0.0)
    u = np.maximum(u, 0.0)
    return u / grid.integrate(u)


def rayleigh_gap(spec: ModelSpec, grid: MassGrid, lambda0: float, u) -> float:
    x = grid.nodes
    return float(lambda0 - grid.integrate(spec.g(x) * u) / grid.integrate(x * u))


def stationary_residual(spec: ModelSpec, grid: MassGrid, lambda0: float, u) -> float:
    """sup |(g u)' + (Lambda_0 + b) u - 2 int b(z)/z q(x/z) u(z) dz| / sup |u| on the grid."""
    x = grid.nodes
    flux = np.gradient(spec.g(x) * u, x)
    gain = 2.0 * fragment_kernel(spec, x, x) @ (grid.weights * u)
    res = flux + (lambda0 + spec.b(x)) * u - gain
    return float(np.max(np.abs(res[1:-1])) / np.max(np.abs(u)))


def adjoint_matrix(op: OperatorMatrix, grid: MassGrid) -> np.ndarray:
    """Discrete adjoint of ``op`` for the grid inner product <f, h> = sum w f h."""
    w = grid.weights
    return op.K.T * (w[None, :] / w[:, None])


def build_phi(spec: ModelSpec, grid: MassGrid, cont: ContinuationResult, u, tol: float = 1e-3,
              *, assembler: Assembler | None = None):
    """Adjoint eigenfunction phi with sum w u phi = 1.

    Power iteration on the adjoint of the regularised operator at the last one
    or two (eps, Lambda_eps) pairs of the continuation; ``gap`` is the sup
    distance between the two normalised adjoint vectors.
    """
    asm = assembler or Assembler(spec, grid)
    u = np.asarray(u, dtype=float)
    vecs = []
    for step in cont.steps[-2:]:
        op = asm.assemble(step.lam, step.eps)
        res = dominant_eigen(adjoint_matrix(op, grid))
        phi = res.vector / grid.integrate(u * res.vector)
        vecs.append(phi)
    phi = vecs[-1]
    gap = float(np.max(np.abs(vecs[-1] - vecs[0]))) if len(vecs) == 2 else math.nan
    return phi, gap, bool(gap < tol)


def solve_eigen(spec: ModelSpec, grid: MassGrid, schedule=DEFAULT_SCHEDULE, tol: float = 1e-5,
                *, step: float = 0.02, assembler: Assembler | None = None) -> EigenSolution:
    """Full pipeline: continuation in eps, then u, then phi, with diagnostics."""
    asm = assembler or Assembler(spec, grid, step=step)
    cont = continuation(spec, grid, schedule, tol, assembler=asm)
    u = build_u(spec, grid, cont.lambda0, cont.psi)
    phi, gap, phi_ok = build_phi(spec, grid, cont, u, assembler=asm)
    diag = {
        "rayleigh_gap": rayleigh_gap(spec, grid, cont.lambda0, u),
        "stationary_residual": stationary_residual(spec, grid, cont.lambda0, u),
        "bisection_monotone": all(s.monotone for s in cont.steps),
        "final_eps": cont.eps,
        "grid_n": grid.n,
    }
    return EigenSolution(grid, cont.lambda0, spec.death_rate, cont.psi, u, phi,
                         cont.mu_trace, cont.epsilon_trace, cont.converged, phi_ok, gap, diag)


def eigenvalue_shift_check(spec: ModelSpec, grid: MassGrid, D_values, eps: float = 1e-3,
                           *, assembler: Assembler | None = None, seed: int = 0) -> dict:
    """Compare Lambda_eps(D) solved with D in the exponent against Lambda_eps(0) - D."""
    asm = assembler or Assembler(spec, grid)
    base = solve_lambda(spec, grid, eps, assembler=asm)
    rows = []
    for D in D_values:
        if D < 0:
            raise ValueError("death rates must be non-negative")
        res = solve_lambda(spec, grid, eps, assembler=asm, death=D, start=base.psi)
        rows.append({"D": float(D), "lambda": res.lam, "expected": base.lam - D,
                     "error": abs(res.lam - (base.lam - D))})
    op = asm.assemble(base.lam, eps)
    rng = np.random.default_rng(seed)
    mus = [dominant_eigen(op, start=rng.uniform(0.1, 1.0, grid.n)).mu for _ in range(2)]
    return {"eps": eps, "lambda0": base.lam, "shifts": rows,
            "restart_mus": mus, "restart_spread": float(abs(mus[0] - mus[1]))}
