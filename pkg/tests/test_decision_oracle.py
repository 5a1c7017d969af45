import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from regret_dissect.core_model import ParamFamily, TrueDistribution
from regret_dissect.decision_oracle import (
    CostModel,
    cost,
    expected_cost,
    expected_grad,
    expected_hess,
    oracle_decision,
    oracle_jacobian,
    portfolio_constants,
    regret,
    true_optimum,
)

LOC = ParamFamily.gaussian_location([[1.0]])
N01 = TrueDistribution.gaussian([0.0], [[1.0]])
NV11 = CostModel.newsvendor([1.0], [1.0])
NV13 = CostModel.newsvendor([1.0], [3.0])
PF = CostModel.portfolio(0.5)
MIX = TrueDistribution.gaussian_mixture([0.5, 0.5], [[-2.0], [2.0]], [[1.0]])


def test_pointwise_costs():
    assert cost(NV13, [0.0], [2.0]) == 6.0
    assert cost(NV11, [1.3], [1.3]) == 0.0
    assert cost(PF, [0.0], [4.2]) == 1.0


def test_newsvendor_oracle_quantiles():
    assert oracle_decision(NV13, LOC, [0.0]).omega[0] == pytest.approx(0.67449, abs=1e-5)
    assert oracle_decision(NV11, LOC, [0.0]).omega[0] == pytest.approx(0.0, abs=1e-12)


def test_portfolio_oracle_solves_stationarity():
    w = oracle_decision(PF, LOC, [1.0]).omega[0]
    assert w == pytest.approx(0.418, abs=1e-2)
    assert (w - 1.0) * math.exp(-w + w * w / 2) + w == pytest.approx(0.0, abs=1e-9)


def test_expected_cost_examples():
    assert expected_cost(NV11, N01, [0.0]) == pytest.approx(math.sqrt(2 / math.pi), abs=1e-10)
    assert expected_cost(PF, N01, [0.0]) == pytest.approx(1.0, abs=1e-12)
    assert expected_cost(PF, N01, [1.0]) == pytest.approx(math.exp(0.5) + 0.5, abs=1e-9)


def test_expected_cost_matches_monte_carlo_2d():
    cov = np.array([[1.0, 0.5], [0.5, 2.0]])
    law = TrueDistribution.gaussian([0.2, -0.1], cov)
    nv = CostModel.newsvendor([1.0, 2.0], [3.0, 1.0])
    z = np.random.default_rng(0).multivariate_normal([0.2, -0.1], cov, size=400_000)
    omega = np.array([0.4, 0.3])
    assert expected_cost(nv, law, omega) == pytest.approx(nv.values(omega, z).mean(), abs=1e-2)


def test_expected_grad_and_hess_are_consistent():
    law = TrueDistribution.gaussian_mixture([0.3, 0.7], [[-1.0], [1.5]], [[0.5]])
    w, h = np.array([0.2]), 1e-5
    fd = (expected_cost(PF, law, w + h) - expected_cost(PF, law, w - h)) / (2 * h)
    assert expected_grad(PF, law, w)[0] == pytest.approx(fd, rel=1e-6)
    fd2 = (expected_grad(PF, law, w + h) - expected_grad(PF, law, w - h)) / (2 * h)
    assert expected_hess(PF, law, w)[0, 0] == pytest.approx(fd2[0], rel=1e-6)
    assert expected_hess(PF, N01, [0.0])[0, 0] > 0


def test_true_optimum_examples():
    assert true_optimum(NV11, N01).omega[0] == pytest.approx(0.0, abs=1e-9)
    assert true_optimum(PF, N01).omega[0] == pytest.approx(0.0, abs=1e-9)
    # 0.75-quantile of the symmetric mixture; bisection on its CDF gives 2.00008
    assert true_optimum(NV13, MIX).omega[0] == pytest.approx(2.00007936, abs=1e-4)


def test_regret_values():
    opt = true_optimum(NV11, N01)
    phi1, cdf1 = stats.norm.pdf(1.0), stats.norm.cdf(1.0)
    expected = (2 * phi1 + 2 * cdf1 - 1) - math.sqrt(2 / math.pi)
    assert regret(NV11, N01, [1.0], opt) == pytest.approx(expected, abs=1e-6)
    assert expected == pytest.approx(0.368746, abs=1e-6)
    assert regret(NV11, N01, opt.omega, opt) == 0.0


@given(st.floats(-4, 4))
def test_regret_nonnegative(w):
    assert regret(NV13, MIX, [w]) >= 0.0


def test_jacobian_location_newsvendor_is_identity():
    assert oracle_jacobian(NV13, LOC, [0.3])[0, 0] == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("theta", [0.0, 0.8, -1.1])
def test_portfolio_jacobian_matches_finite_differences(theta):
    h = 1e-4
    fd = (oracle_decision(PF, LOC, [theta + h]).omega - oracle_decision(PF, LOC, [theta - h]).omega) / (2 * h)
    assert oracle_jacobian(PF, LOC, [theta])[0, 0] == pytest.approx(fd[0], abs=1e-5)


def test_jacobian_symmetric_for_exchangeable_model():
    fam = ParamFamily.gaussian_location(np.eye(2))
    model = CostModel.portfolio(0.5, p=2)
    jac = oracle_jacobian(model, fam, [0.4, 0.4])
    assert jac[0, 0] == pytest.approx(jac[1, 1], rel=1e-6)
    assert jac[0, 1] == pytest.approx(jac[1, 0], rel=1e-6, abs=1e-9)


def test_portfolio_constants_strong_convexity():
    consts = portfolio_constants(PF, -1.0, 1.0)
    assert consts["rho_c"] == 1.0
    assert consts["L_c"] > 0 and consts["B_c"] > 0


def test_invalid_cost_parameters():
    with pytest.raises(ValueError):
        CostModel.newsvendor([-1.0], [1.0])
    with pytest.raises(ValueError):
        CostModel.portfolio(0.0)
