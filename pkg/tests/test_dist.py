import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from stsdetect.dist import (
    BetaBinParams,
    DirMultParams,
    NegBinParams,
    betabin_logpmf,
    betabin_pmf,
    binom_logpmf,
    dirmult_pmf,
    multinom_pmf,
    nb_cdf,
    nb_logpmf,
    nb_pmf,
    nb_quantile,
    normal_quantile,
    pois_cdf,
    pois_pmf,
    pois_quantile,
)


def compositions(n, k):
    if k == 1:
        yield (n,)
        return
    for i in range(n + 1):
        for rest in compositions(n - i, k - 1):
            yield (i,) + rest


def test_poisson_matches_scipy():
    y = np.arange(40)
    assert np.allclose(pois_pmf(y, 6.5), stats.poisson.pmf(y, 6.5), rtol=1e-12)


def test_nb_mean_size_parameterization():
    mu, nu = 4.0, 2.5
    y = np.arange(60)
    # scipy's nbinom(n, p) with n = nu, p = nu / (nu + mu)
    assert np.allclose(nb_pmf(y, mu, nu), stats.nbinom.pmf(y, nu, nu / (nu + mu)), rtol=1e-12)
    assert np.isclose(NegBinParams(mu, nu).phi, 1 + mu / nu)
    assert np.isclose(NegBinParams.from_dispersion(mu, 2.0).nu, 4.0)


def test_nb_infinite_size_is_poisson():
    y = np.arange(20)
    assert np.allclose(nb_logpmf(y, 3.0, np.inf), stats.poisson.logpmf(y, 3.0))


def test_betabinomial_matches_scipy_and_variance():
    n, pi, sigma = 30, 0.3, 0.2
    y = np.arange(n + 1)
    ref = stats.betabinom.pmf(y, n, pi / sigma, (1 - pi) / sigma)
    p = betabin_pmf(y, n, pi, sigma)
    assert np.allclose(p, ref, rtol=1e-12)
    mean = (y * p).sum()
    var = ((y - mean) ** 2 * p).sum()
    prm = BetaBinParams(n, pi, sigma)
    assert np.isclose(mean, prm.mean()) and np.isclose(var, prm.var())


def test_betabinomial_sigma_zero_is_binomial():
    y = np.arange(11)
    assert np.allclose(betabin_logpmf(y, 10, 0.4, 0.0), stats.binom.logpmf(y, 10, 0.4))
    assert np.allclose(betabin_logpmf(y, 10, 0.4, 1e-9), binom_logpmf(y, 10, 0.4), atol=1e-6)


@pytest.mark.parametrize("mu,nu", [(0.3, 1.0), (5.0, 2.5), (40.0, 0.7), (12.0, np.inf)])
def test_count_pmfs_normalize(mu, nu):
    q = nb_quantile(1 - 1e-15, mu, nu)
    total = nb_pmf(np.arange(50 * q + 200), mu, nu).sum()
    assert abs(total - 1) < 1e-10


@pytest.mark.parametrize("n,pi,sigma", [(0, 0.5, 0.1), (1, 0.2, 0.0), (25, 0.7, 0.05), (60, 0.1, 2.0)])
def test_betabin_normalizes(n, pi, sigma):
    assert abs(betabin_pmf(np.arange(n + 1), n, pi, sigma).sum() - 1) < 1e-10


@pytest.mark.parametrize("n,k", [(0, 3), (7, 3), (12, 4)])
def test_multinomial_and_dm_normalize(n, k):
    prob = np.arange(1, k + 1) / np.arange(1, k + 1).sum()
    alpha = DirMultParams(tuple(0.5 + np.arange(k)), n)
    ys = list(compositions(n, k))
    assert abs(sum(multinom_pmf(y, n, prob) for y in ys) - 1) < 1e-10
    assert abs(sum(dirmult_pmf(y, alpha) for y in ys) - 1) < 1e-10


def test_dm_two_categories_is_betabinomial():
    a, b, n = 1.5, 3.5, 9
    for y in range(n + 1):
        lhs = dirmult_pmf([y, n - y], DirMultParams((a, b), n))
        rhs = betabin_pmf(y, n, a / (a + b), 1 / (a + b))
        assert np.isclose(lhs, rhs, rtol=1e-12)


def test_multinomial_size_mismatch():
    with pytest.raises(ValueError):
        multinom_pmf([1, 2], 4, [0.5, 0.5])


def test_quantile_anchors():
    assert pois_quantile(0.975, 5) == 10
    assert pois_quantile(0.5, 1) == 1
    assert nb_quantile(0.975, 5, 2.5) == int(stats.nbinom.ppf(0.975, 2.5, 2.5 / 7.5))


def test_normal_quantile():
    assert np.isclose(normal_quantile(0.975), 1.959963984540054)
    with pytest.raises(ValueError):
        normal_quantile(1.0)


@given(
    st.floats(1e-3, 1 - 1e-3),
    st.floats(0.05, 80.0),
    st.one_of(st.just(np.inf), st.floats(0.1, 50.0)),
)
def test_quantile_cdf_adjoint(p, mu, nu):
    q = nb_quantile(p, mu, nu)
    cdf = nb_cdf if np.isfinite(nu) else (lambda q, mu, nu: pois_cdf(q, mu))
    assert cdf(q, mu, nu) >= p
    if q > 0:
        assert cdf(q - 1, mu, nu) < p


@pytest.mark.parametrize("bad", [dict(mu=0, nu=1), dict(mu=1, nu=0), dict(mu=-1, nu=2)])
def test_nb_params_validate(bad):
    with pytest.raises(ValueError):
        NegBinParams(**bad)
