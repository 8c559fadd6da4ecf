import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from growfrag import (
    DomainError,
    ModelSpec,
    PowerLogistic,
    RampAboveThreshold,
    SymmetricBeta,
    TabulatedGrowth,
    TabulatedKernel,
    TabulatedRate,
    default_spec,
    make_grid,
)
from growfrag.model import (
    audit_hypotheses,
    cumulative_hazard,
    eval_rates,
    flow,
    hitting_time,
    kernel_density,
    _ode_flow,
)

SPEC = default_spec(0.2)
E = math.e


def gompertz_closed(x, t, a=1.0, M=1.0):
    return M * (x / M) ** math.exp(-a * t)


# --- eval_rates / kernel_density -------------------------------------------


def test_growth_vanishes_at_zero():
    g, b = eval_rates(SPEC, 0.0)
    assert g == 0.0 and b == 0.0


def test_gompertz_rate_at_inverse_e():
    g, _ = eval_rates(SPEC, 1 / E)
    assert g == pytest.approx(1 / E, abs=1e-12)


def test_growth_vanishes_at_max_mass():
    g, b = eval_rates(SPEC, 1.0)
    assert g == 0.0 and b == pytest.approx(3.0)


def test_division_rate_zero_below_threshold():
    _, b = eval_rates(SPEC, 0.2)
    assert b == 0.0


def test_division_rate_bounded_by_bbar():
    x = np.linspace(0, 1, 1001)
    _, b = eval_rates(SPEC, x)
    assert np.all(b >= 0) and np.all(b <= 3.0)


@pytest.mark.parametrize("x", [-1e-9, 1.0 + 1e-9, 2.0])
def test_eval_rates_rejects_out_of_domain(x):
    with pytest.raises(DomainError):
        eval_rates(SPEC, x)


def test_beta2_density_at_half():
    assert kernel_density(SPEC, 0.5) == pytest.approx(1.5, abs=1e-14)


def test_beta2_density_vanishes_at_endpoints():
    assert kernel_density(SPEC, 0.0) == 0.0
    assert kernel_density(SPEC, 1.0) == 0.0


@pytest.mark.parametrize("kernel", [SymmetricBeta(2.0), SymmetricBeta(3.5),
                                    TabulatedKernel(((0, 0), (0.25, 1.2), (0.5, 1.6), (0.75, 1.2), (1, 0)))])
def test_kernel_symmetric(kernel):
    spec = SPEC.with_kernel(kernel)
    assert kernel_density(spec, 0.3) == pytest.approx(kernel_density(spec, 0.7), abs=1e-14)


@pytest.mark.parametrize("alpha", [-0.1, 1.1])
def test_kernel_density_rejects_out_of_domain(alpha):
    with pytest.raises(DomainError):
        kernel_density(SPEC, alpha)


# --- flow -------------------------------------------------------------------


def test_flow_from_zero_stays_zero():
    assert flow(SPEC, 0.0, 3.0) == 0.0


def test_flow_gompertz_example():
    assert flow(SPEC, math.exp(-1), math.log(2)) == pytest.approx(math.exp(-0.5), abs=1e-12)


def test_flow_approaches_max_mass_monotonically():
    t = np.linspace(0, 60, 601)
    a = flow(SPEC, 0.5, t)
    assert np.all(np.diff(a) >= 0)
    assert np.all(a <= 1.0)
    assert a[-1] == pytest.approx(1.0, abs=1e-12)


def test_flow_fixes_max_mass():
    assert flow(SPEC, 1.0, 5.0) == 1.0


def test_flow_rejects_negative_time():
    with pytest.raises(DomainError):
        flow(SPEC, 0.5, -1.0)


def test_gompertz_closed_form_across_grid():
    xs = np.linspace(0.01, 0.99, 50)
    ts = np.linspace(0, 5, 21)
    X, T = np.meshgrid(xs, ts)
    ref = X ** np.exp(-T)
    assert np.max(np.abs(flow(SPEC, X, T) - ref)) <= 1e-10


def test_ode_route_matches_gompertz_closed_form():
    t = np.linspace(0, 3, 13)
    x = np.array([0.05, 0.3, 0.7])
    num = _ode_flow(SPEC, x, t)
    ref = x[:, None] ** np.exp(-t)[None, :]
    assert np.max(np.abs(num - ref)) <= 1e-8


def test_power_logistic_theta1_matches_logistic():
    spec = SPEC.__class__(PowerLogistic(1.0, 1.0), SPEC.division_rate, SPEC.kernel, 0.2, 1.0)
    x0, t = 0.1, np.array([0.5, 1.0, 3.0])
    ref = x0 * np.exp(t) / (1 - x0 + x0 * np.exp(t))
    assert np.max(np.abs(flow(spec, x0, t) - ref)) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(x=st.floats(1e-4, 0.999), s=st.floats(0, 4), t=st.floats(0, 4))
def test_flow_semigroup(x, s, t):
    lhs = flow(SPEC, x, s + t)
    rhs = flow(SPEC, flow(SPEC, x, s), t)
    assert abs(lhs - rhs) <= 1e-8


@settings(max_examples=15, deadline=None)
@given(x=st.floats(0.01, 0.9), s=st.floats(0, 2), t=st.floats(0, 2))
def test_flow_semigroup_ode_route(x, s, t):
    spec = ModelSpec(PowerLogistic(1.0, 2.0), SPEC.division_rate, SPEC.kernel, 0.2, 1.0)
    lhs = flow(spec, x, s + t)
    rhs = flow(spec, flow(spec, x, s), t)
    assert abs(lhs - rhs) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0.01, 0.9), frac=st.floats(0.0, 1.0))
def test_flow_hitting_time_inverse(x, frac):
    y = x + frac * (0.99 - x)
    t = hitting_time(SPEC, x, y)
    assert abs(flow(SPEC, x, t) - y) <= 1e-8


@settings(max_examples=10, deadline=None)
@given(x=st.floats(0.05, 0.8), frac=st.floats(0.05, 1.0))
def test_flow_hitting_time_inverse_ode_route(x, frac):
    spec = ModelSpec(PowerLogistic(1.0, 2.0), SPEC.division_rate, SPEC.kernel, 0.2, 1.0)
    y = x + frac * (0.95 - x)
    t = hitting_time(spec, x, y)
    assert abs(flow(spec, x, t) - y) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0.01, 0.99), t=st.floats(0, 10), dx=st.floats(0, 0.01))
def test_flow_monotone_in_x(x, t, dx):
    assert flow(SPEC, min(x + dx, 1.0), t) >= flow(SPEC, x, t)


# --- hitting_time -----------------------------------------------------------


def test_hitting_time_same_mass_is_zero():
    assert hitting_time(SPEC, 0.4, 0.4) == 0.0


def test_hitting_time_gompertz_example():
    assert hitting_time(SPEC, math.exp(-1), math.exp(-0.5)) == pytest.approx(math.log(2), abs=1e-12)


def test_hitting_time_max_mass_is_infinite():
    assert hitting_time(SPEC, 0.3, 1.0) == math.inf


def test_hitting_time_rejects_backwards_target():
    with pytest.raises(DomainError):
        hitting_time(SPEC, 0.5, 0.4)


# --- cumulative_hazard ------------------------------------------------------


def test_hazard_zero_below_threshold():
    t_div = hitting_time(SPEC, 0.1, 0.25)
    assert cumulative_hazard(SPEC, 0.1, 0.5 * t_div) == 0.0


def test_hazard_zero_at_time_zero():
    assert cumulative_hazard(SPEC, 0.6, 0.0) == 0.0


def test_hazard_matches_oracle(oracles):
    assert cumulative_hazard(SPEC, 0.5, 1.0) == pytest.approx(oracles["hazard_x0.5_t1"], abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(x=st.floats(0.01, 0.99), t=st.floats(0, 5))
def test_hazard_bounded_by_bbar_t(x, t):
    assert cumulative_hazard(SPEC, x, t) <= 3.0 * t + 1e-12


@settings(max_examples=15, deadline=None)
@given(x=st.floats(0.01, 0.99), t=st.floats(0, 3), dt=st.floats(0, 1))
def test_hazard_non_decreasing(x, t, dt):
    assert cumulative_hazard(SPEC, x, t + dt) >= cumulative_hazard(SPEC, x, t) - 1e-14


# --- grid -------------------------------------------------------------------


@pytest.mark.parametrize("n", [7, 100, 401])
def test_uniform_weights_sum_to_max_mass(n):
    g = make_grid(2.5, n)
    assert abs(g.weights.sum() - 2.5) <= 1e-12 * 2.5
    assert np.all(g.nodes > 0) and np.all(g.nodes < 2.5) and np.all(np.diff(g.nodes) > 0)


def test_gauss_legendre_grid_integrates_polynomials():
    g = make_grid(1.0, 64, "gauss-legendre-composite")
    assert g.integrate(g.nodes**5) == pytest.approx(1 / 6, abs=1e-14)
    assert np.all(g.weights > 0)


def test_unknown_scheme_rejected():
    with pytest.raises(ValueError):
        make_grid(1.0, 10, "simpson")


# --- audit ------------------------------------------------------------------


def test_default_spec_passes_audit(grid200):
    rep = audit_hypotheses(SPEC, grid200)
    assert rep.passed, rep.violations
    assert rep.C_bq > 0 and rep.C > 0
    assert math.isfinite(rep.integrability)


def test_kernel_normalisation_and_mean(grid200):
    rep = audit_hypotheses(SPEC, grid200)
    assert rep.checks["kernel_normalized"].value <= 1e-10
    assert rep.checks["kernel_mean_half"].value <= 1e-10
    assert rep.checks["kernel_symmetry"].value <= 1e-10


def test_uniform_kernel_fails_endpoint_check(grid200):
    rep = audit_hypotheses(SPEC.with_kernel(SymmetricBeta(1.0)), grid200)
    assert not rep.checks["kernel_endpoints_vanish"].passed
    assert "kernel_endpoints_vanish" in rep.violations


def test_tabulated_growth_not_vanishing_at_max_mass_fails(grid200):
    growth = TabulatedGrowth(((0.0, 0.0), (0.5, 0.3), (1.0, 0.2)))
    spec = ModelSpec(growth, SPEC.division_rate, SPEC.kernel, 0.2, 1.0)
    rep = audit_hypotheses(spec, grid200)
    assert not rep.checks["growth_vanishes_at_ends_positive_inside"].passed


def test_tabulated_rate_outside_samples_is_domain_error():
    rate = TabulatedRate(((0.0, 0.0), (0.5, 1.0)))
    with pytest.raises(DomainError):
        rate(np.array([0.75]), 1.0)


def test_report_serialises_infinite_integrability(grid200):
    spec = SPEC.with_division(RampAboveThreshold(0.0, 0.25))
    d = audit_hypotheses(spec, grid200).to_dict()
    assert d["integrability"] == "+inf"
