import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest

from growfrag import RampAboveThreshold, default_spec
from growfrag.model import cumulative_hazard
from growfrag.simulate import (
    Caps,
    NoEventError,
    One,
    estimate_survival,
    first_event,
    run_replicas,
    simulate,
    split_mass,
    stream,
    weighted_expectation,
)

SPEC = default_spec(0.2)
NO_DIV = SPEC.with_division(RampAboveThreshold(0.0, 0.25))


def test_first_event_without_division_is_exponential_death():
    D = 0.7
    spec = NO_DIV.with_death(D)
    rng = np.random.default_rng(1)
    draws = [first_event(spec, 0.5, rng) for _ in range(10_000)]
    assert all(e.kind == "death" for e in draws)
    times = np.array([e.time for e in draws])
    assert abs(times.mean() - 1 / D) <= 3 * (1 / D) / math.sqrt(len(times))


def test_first_event_without_death_is_division():
    rng = np.random.default_rng(2)
    spec = SPEC.with_death(0.0)
    for _ in range(500):
        e = first_event(spec, 0.6, rng)
        assert e.kind == "division"
        assert 0 < e.alpha < 1
        assert e.child_masses[0] + e.child_masses[1] == e.mass


def test_death_before_division_frequency(oracles):
    rng = np.random.default_rng(3)
    n = 100_000
    deaths = sum(first_event(SPEC, 0.5, rng).kind == "death" for _ in range(n))
    p = oracles["death_first_x0.5_D0.2"]
    assert abs(deaths / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_thinning_division_time_distribution():
    spec = SPEC.with_death(0.0)
    rng = np.random.default_rng(4)
    x0 = 0.5
    times = np.array([first_event(spec, x0, rng).time for _ in range(100_000)])
    mesh = np.linspace(0, times.max() + 1e-9, 400)
    H = np.array([cumulative_hazard(spec, x0, t) for t in mesh])
    cdf = lambda t: 1 - np.exp(-np.interp(t, mesh, H))
    stat = kstest(times, cdf).statistic
    assert stat <= 1.95 / math.sqrt(len(times))


def test_no_event_possible():
    spec = NO_DIV.with_death(0.0)
    with pytest.raises(NoEventError):
        first_event(spec, 0.5, np.random.default_rng(0))
    with pytest.raises(NoEventError):
        simulate(spec, 0.5, 1.0)


@settings(max_examples=200)
@given(m=st.floats(1e-12, 1.0), alpha=st.floats(1e-9, 1 - 1e-9))
def test_split_mass_is_exact(m, alpha):
    a, b = split_mass(m, alpha)
    assert a + b == m
    assert a > 0 or alpha * m == 0
    assert (a <= b) == (alpha < 0.5) or a == b


def test_same_seed_bitwise_identical_log():
    a = simulate(SPEC, 0.5, 10.0, Caps(max_pop=200), seed=11)
    b = simulate(SPEC, 0.5, 10.0, Caps(max_pop=200), seed=11)
    assert a.events == b.events and len(a.events) > 10
    c = simulate(SPEC, 0.5, 10.0, Caps(max_pop=200), seed=12)
    assert c.events != a.events


def test_log_consistency():
    res = simulate(SPEC, 0.5, 8.0, Caps(max_pop=300), seed=5)
    when = {e.parent: e.time for e in res.events}
    seen = set()
    for e in res.events:
        assert e.parent not in seen
        seen.add(e.parent)
        if e.parent > 1:
            assert e.time > when[e.parent // 2]
        if e.kind == "division":
            assert e.child_masses[0] + e.child_masses[1] == e.mass
            assert 0 < min(e.child_masses) and max(e.child_masses) < 1.0


def test_workers_do_not_change_results():
    kw = dict(times=(1.0, 3.0), weights={"one": One()}, record=True)
    a = run_replicas(SPEC, 0.5, 3.0, 6, 9, Caps(max_pop=100), workers=1, **kw)
    b = run_replicas(SPEC, 0.5, 3.0, 6, 9, Caps(max_pop=100), workers=2, **kw)
    assert [r.events for r in a] == [r.events for r in b]
    assert all(np.array_equal(x.population_counts, y.population_counts) for x, y in zip(a, b))


def test_replica_is_independent_of_batch():
    a = run_replicas(SPEC, 0.5, 5.0, 4, 21, record=True)[3]
    b = simulate(SPEC, 0.5, 5.0, seed=21, replica=3)
    assert a.events == b.events


def test_stream_is_keyed_by_path():
    assert stream(1, 0, 2).random() == stream(1, 0, 2).random()
    assert stream(1, 0, 2).random() != stream(1, 0, 3).random()


def test_no_division_goes_extinct_with_exponential_times():
    D = 0.5
    res = run_replicas(NO_DIV.with_death(D), 0.5, 200.0, 2000, 3)
    assert not any(r.survived for r in res)
    t = np.array([r.extinction_time for r in res])
    assert abs(t.mean() - 1 / D) <= 3 * (1 / D) / math.sqrt(len(t))


def test_counts_zero_after_extinction():
    res = simulate(NO_DIV.with_death(1.0), 0.5, 50.0, times=np.linspace(0, 50, 11))
    k = np.searchsorted(res.times, res.extinction_time)
    assert np.all(res.population_counts[k:] == 0)
    assert np.all(res.population_counts[:k] == 1)


def test_cap_without_proxy_is_truncation():
    res = simulate(SPEC.with_death(0.0), 0.5, 50.0, Caps(max_pop=20, proxy=False), seed=1)
    assert res.truncated and not res.survived and res.reached_cap


def test_cap_with_proxy_counts_as_survival():
    res = simulate(SPEC.with_death(0.0), 0.5, 50.0, Caps(max_pop=20), seed=1)
    assert res.survived and res.reached_cap and not res.truncated


def test_event_cap_flags_truncation():
    res = simulate(SPEC.with_death(0.0), 0.5, 50.0, Caps(max_pop=10**6, max_events=30), seed=1)
    assert res.truncated and res.n_events == 30


def test_survival_zero_without_division():
    est = estimate_survival(NO_DIV, 0.5, 30.0, replicas=300, seed=2)
    assert est.estimate == 0.0 and est.ci_halfwidth == 0.0


def test_survival_positive_when_supercritical():
    est = estimate_survival(SPEC, 0.5, 30.0, Caps(max_pop=100), replicas=300, seed=2)
    assert est.ci[0] > 0


def test_survival_zero_when_subcritical():
    est = estimate_survival(SPEC.with_death(1.3), 0.5, 40.0, replicas=300, seed=2)
    assert est.survivors == 0


def test_weighted_expectation_at_time_zero():
    est = weighted_expectation(SPEC, 0.5, One(), [0.0, 1.0], 50, seed=1)
    assert est.mean[0] == 1.0 and est.sigma[0] == 0.0


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        simulate(SPEC, 1.0, 1.0)
    with pytest.raises(ValueError):
        simulate(SPEC, 0.5, 1.0, times=[2.0])
    with pytest.raises(ValueError):
        Caps(max_pop=0)
