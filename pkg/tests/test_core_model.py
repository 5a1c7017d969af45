import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from regret_dissect.core_model import (
    Dataset,
    ParamFamily,
    RngStream,
    TrueDistribution,
    expectation_under,
    log_density,
    sample,
    score_and_hessian,
    tv_distance,
    tv_lipschitz_constant,
)
from regret_dissect.errors import DomainError

LOC = ParamFamily.gaussian_location([[1.0]])
TWO_POINT = ParamFamily.finite_discrete([[0.0], [1.0]])


def test_sample_quantile_matches_shifted_normal():
    data = sample(LOC, [2.0], 100_000, RngStream(1))
    assert abs(np.quantile(data.samples[:, 0], 0.75) - (2.0 + 0.67449)) < 1e-2


def test_sample_moments_large_n():
    z = sample(LOC, [0.0], 1_000_000, RngStream(2)).samples[:, 0]
    assert abs(z.mean()) < 4e-3
    assert abs(z.var() - 1.0) < 1e-2


def test_degenerate_discrete_sample():
    data = sample(TWO_POINT, [1.0, 0.0], 5, RngStream(3))
    assert np.all(data.samples == 0.0)


def test_streams_are_reproducible_and_distinct():
    a = sample(LOC, [0.0], 50, RngStream(11, 4)).samples
    b = sample(LOC, [0.0], 50, RngStream(11, 4)).samples
    c = sample(LOC, [0.0], 50, RngStream(11, 5)).samples
    d = sample(LOC, [0.0], 50, RngStream(11, 4, namespace=(1,))).samples
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_dataset_digest_tracks_content():
    assert Dataset(np.array([1.0, 2.0])).digest() == Dataset(np.array([[1.0], [2.0]])).digest()
    assert Dataset(np.array([1.0, 2.0])).digest() != Dataset(np.array([1.0, 2.5])).digest()


def test_dataset_rejects_nonfinite():
    with pytest.raises(ValueError):
        Dataset(np.array([1.0, np.nan]))


def test_log_density_values():
    assert log_density(LOC, [0.0], [0.0]) == pytest.approx(-0.918939, abs=1e-6)
    assert log_density(TWO_POINT, [0.5, 0.5], [0.0]) == pytest.approx(math.log(0.5))


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_log_density_mode_at_mean(theta, z):
    assert log_density(LOC, [z], [z]) >= log_density(LOC, [theta], [z])


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_location_score_closed_form(theta, z):
    g, h = score_and_hessian(LOC, [theta], [z])
    assert g[0] == pytest.approx(z - theta, abs=1e-12)
    assert h[0, 0] == -1.0


def _fd_gradient(family, theta, z, step=1e-5):
    theta = np.asarray(theta, float)
    out = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = step
        out[j] = (log_density(family, theta + e, z) - log_density(family, theta - e, z)) / (2 * step)
    return out


@pytest.mark.parametrize(
    "family,theta,z",
    [
        (ParamFamily.gaussian_location([[2.0, 0.4], [0.4, 1.0]]), [0.3, -1.2], [1.0, 0.5]),
        (ParamFamily.gaussian_full_mean(2), [0.3, -1.2, 1.5, 0.7], [1.0, 0.5]),
    ],
)
def test_score_matches_finite_differences(family, theta, z):
    g, _ = score_and_hessian(family, theta, z)
    fd = _fd_gradient(family, theta, z)
    assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-6


def test_discrete_score_along_simplex_directions():
    fam = ParamFamily.finite_discrete([[0.0], [1.0], [2.0]])
    theta, z, step = np.array([0.2, 0.5, 0.3]), [1.0], 1e-5
    g, _ = score_and_hessian(fam, theta, z)
    for v in (np.array([1.0, -1.0, 0.0]), np.array([0.0, 1.0, -1.0]), np.array([-0.5, 1.0, -0.5])):
        fd = (log_density(fam, theta + step * v, z) - log_density(fam, theta - step * v, z)) / (2 * step)
        assert abs(g @ v - fd) / abs(fd) < 1e-6


def test_full_mean_hessian_matches_differenced_score():
    fam = ParamFamily.gaussian_full_mean(1)
    theta, z, step = np.array([0.4, 1.3]), np.array([1.1]), 1e-6
    _, h = score_and_hessian(fam, theta, z)
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        col = (score_and_hessian(fam, theta + e, z)[0] - score_and_hessian(fam, theta - e, z)[0]) / (2 * step)
        assert np.allclose(h[:, j], col, atol=1e-6)


def test_tv_examples():
    assert tv_distance(LOC, [0.0], [2.0]) == pytest.approx(0.682689, abs=1e-6)
    assert tv_distance(TWO_POINT, [1.0, 0.0], [0.0, 1.0]) == 1.0
    assert tv_distance(LOC, [0.7], [0.7]) == 0.0


def test_tv_matches_numerical_integral():
    for a, b in [(0.0, 2.0), (-1.0, 0.3), (0.5, 0.51)]:
        val, _ = integrate.quad(lambda x: abs(stats.norm.pdf(x, a) - stats.norm.pdf(x, b)), -30, 30,
                                points=[(a + b) / 2], epsabs=1e-12, limit=200)
        assert abs(0.5 * val - tv_distance(LOC, [a], [b])) < 1e-4


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_tv_lipschitz_bound(a, b):
    assert tv_distance(LOC, [a], [b]) <= tv_lipschitz_constant(LOC) * abs(a - b) + 1e-12


def test_tv_not_available_for_full_mean():
    with pytest.raises(NotImplementedError):
        tv_distance(ParamFamily.gaussian_full_mean(1), [0.0, 1.0], [0.0, 2.0])


def test_family_domain_checks():
    with pytest.raises(DomainError):
        TWO_POINT.check([0.7, 0.7])
    with pytest.raises(DomainError):
        LOC.check([50.0])
    with pytest.raises(ValueError):
        ParamFamily.gaussian_location([[1.0, 2.0], [2.0, 1.0]])


def test_expectation_examples():
    n01 = TrueDistribution.gaussian([0.0], [[1.0]])
    mix = TrueDistribution.gaussian_mixture([0.5, 0.5], [[-2.0], [2.0]], [[1.0]])
    assert abs(expectation_under(n01, lambda z: z[:, 0] ** 2).value - 1.0) < 1e-10
    assert abs(expectation_under(mix, lambda z: z[:, 0]).value) < 1e-10
    absval = expectation_under(n01, lambda z: np.abs(z[:, 0]), kinks=[0.0]).value
    assert abs(absval - math.sqrt(2 / math.pi)) < 1e-6


def test_expectation_matrix_valued_and_empirical():
    emp = TrueDistribution.empirical(np.array([[1.0], [3.0]]))
    val = expectation_under(emp, lambda z: z[:, :, None] * z[:, None, :]).value
    assert val.shape == (1, 1) and val[0, 0] == pytest.approx(5.0)


def test_mixture_quantile_and_moments():
    mix = TrueDistribution.gaussian_mixture([0.5, 0.5], [[-2.0], [2.0]], [[1.0]])
    assert mix.marginal_quantile(0.75) == pytest.approx(2.00007936, abs=1e-6)
    assert mix.mean()[0] == pytest.approx(0.0, abs=1e-12)
    assert mix.covariance()[0, 0] == pytest.approx(5.0)


@settings(max_examples=25)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_empirical_law_atoms(points):
    emp = TrueDistribution.empirical(np.array(points)[:, None])
    w, z = emp.atoms()
    assert w.sum() == pytest.approx(1.0)
    assert emp.mean()[0] == pytest.approx(np.mean(points), abs=1e-9)
