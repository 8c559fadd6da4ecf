import pytest

from growfrag import RampAboveThreshold, default_spec
from growfrag.validate import Settings, check_criterion, check_growth_bound, check_martingale

LIGHT = dict(grid_n=100, pde_n=200, pde_T=20.0, replicas=200, max_pop=100,
             martingale_replicas=1000, growth_replicas=300, growth_times=(1.0, 2.0, 4.0))


@pytest.fixture(scope="module")
def lambda0():
    rep = check_criterion(default_spec(0.0), Settings(**LIGHT, run_martingale=False, run_growth=False))
    return rep.lambda0


def test_supercritical_all_routes_agree():
    rep = check_criterion(default_spec(0.0), Settings(**LIGHT))
    assert rep.lambda_eigen > 0.1
    assert rep.p_profile["dichotomy"] == "survival-possible"
    assert rep.mc_survival["ci"][0] > 0
    assert rep.passed, rep.verdicts


def test_subcritical_all_routes_agree(lambda0):
    rep = check_criterion(default_spec(lambda0 + 0.2), Settings(**LIGHT))
    assert rep.lambda_eigen < -0.1
    assert rep.mc_survival["survivors"] == 0
    assert rep.p_profile["dichotomy"] == "extinction-certain"
    assert rep.verdicts["sign"]["status"] == "pass"
    assert rep.passed, rep.verdicts


def test_no_division_eigen_refuses_extinction_agrees():
    spec = default_spec(0.2).with_division(RampAboveThreshold(0.0, 0.25))
    rep = check_criterion(spec, Settings(**LIGHT))
    assert rep.lambda_eigen is None
    assert rep.verdicts["eigen"]["status"] == "info"
    assert rep.verdicts["sign"]["status"] == "pass"
    assert rep.p_profile["min_p"] == pytest.approx(1.0, abs=1e-12)


def test_near_critical_is_informational(lambda0):
    rep = check_criterion(default_spec(lambda0 - 0.05), Settings(**{**LIGHT, "replicas": 50},
                                                                 run_martingale=False, run_growth=False))
    assert rep.verdicts["sign"]["status"] == "info"


def test_martingale_time_zero_is_exact(eig200, spec):
    res = check_martingale(spec, eig200.lambda_, (eig200.grid.nodes, eig200.phi), 0.5, [0.0], 20, 1)
    assert res["z"] == [0.0]
    assert res["mean"][0] == pytest.approx(res["target"], abs=1e-12)


def test_martingale_negative_control_fails(eig200, spec):
    res = check_martingale(spec, eig200.lambda_ + 0.2, (eig200.grid.nodes, eig200.phi), 0.5,
                           [1.0, 2.0, 4.0], 1000, 5)
    assert not res["passed"]


def test_growth_bound_time_zero_is_one(eig200, spec):
    res = check_growth_bound(spec, eig200.lambda_, 0.5, [1.0], 50, 1)
    assert res["times"][0] == 0.0 and res["scaled_mean"][0] == 1.0


def test_growth_bound_default_passes(eig200, spec):
    res = check_growth_bound(spec, eig200.lambda_, 0.5, [1, 2, 4, 6], 500, 3)
    assert res["passed"], res


def test_growth_bound_negative_control_fails(eig200, spec):
    res = check_growth_bound(spec, eig200.lambda_ - 0.3, 0.5, [1, 2, 4, 6], 500, 3)
    assert not res["passed"]
    assert res["slope"] == pytest.approx(0.3, abs=0.05)


def test_report_is_deterministic():
    st = Settings(**{**LIGHT, "replicas": 50}, run_martingale=False, run_growth=False)
    a = check_criterion(default_spec(0.5), st).to_dict()
    b = check_criterion(default_spec(0.5), st).to_dict()
    assert a == b
