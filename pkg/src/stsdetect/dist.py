"""Probability kernels shared by the detectors.

Negative binomial uses the mean/size parametrization: ``NB(mu, nu)`` has
variance ``mu + mu**2 / nu``.  Beta-binomial uses the mean/dispersion
parametrization ``BB(n, pi, sigma)`` with shapes ``pi/sigma`` and
``(1-pi)/sigma``.  Everything is evaluated in log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln, ndtri, xlogy


@dataclass(frozen=True)
class NegBinParams:
    mu: float
    nu: float

    def __post_init__(self):
        if not self.mu > 0 or not self.nu > 0:
            raise ValueError(f"invalid negative binomial parameters mu={self.mu}, nu={self.nu}")

    @classmethod
    def from_dispersion(cls, mu: float, phi: float) -> "NegBinParams":
        """Parameters with ``Var = phi * mu``; requires ``phi > 1``."""
        if not phi > 1:
            raise ValueError("phi must exceed 1 for a negative binomial")
        return cls(mu, mu / (phi - 1.0))

    @property
    def phi(self) -> float:
        return 1.0 + self.mu / self.nu


@dataclass(frozen=True)
class BetaBinParams:
    size: int
    pi: float
    sigma: float

    def __post_init__(self):
        if self.size < 0 or not 0 < self.pi < 1 or self.sigma < 0:
            raise ValueError(f"invalid beta-binomial parameters {self}")

    def mean(self) -> float:
        return self.size * self.pi

    def var(self) -> float:
        n, p, s = self.size, self.pi, self.sigma
        return n * p * (1 - p) * (1 + s * (n - 1) / (s + 1))


@dataclass(frozen=True)
class DirMultParams:
    alpha: tuple[float, ...]
    size: int

    def __post_init__(self):
        if len(self.alpha) < 2 or any(not a > 0 for a in self.alpha):
            raise ValueError("Dirichlet-multinomial needs >= 2 positive concentrations")


def _check_prob(p) -> None:
    p = np.asarray(p)
    if np.any(~(p > 0)) or np.any(~(p < 1)):
        raise ValueError(f"probability must lie in (0, 1), got {p}")


# -- Poisson ---------------------------------------------------------------


def pois_logpmf(y, lam):
    y = np.asarray(y, dtype=float)
    return xlogy(y, lam) - lam - gammaln(y + 1)


def pois_pmf(y, lam):
    return np.exp(pois_logpmf(y, lam))


# -- negative binomial -----------------------------------------------------


def nb_logpmf(y, mu, nu):
    """log NB(y; mu, nu); ``nu = inf`` gives the Poisson limit."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.all(np.isinf(nu)):
        return pois_logpmf(y, mu)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (
            gammaln(y + nu)
            - gammaln(nu)
            - gammaln(y + 1)
            + nu * np.log(nu / (nu + mu))
            + xlogy(y, mu / (nu + mu))
        )
    return np.where(np.isinf(nu), pois_logpmf(y, mu), out)


def nb_pmf(y, mu, nu):
    return np.exp(nb_logpmf(y, mu, nu))


def _tail_bound(mean: float, var: float) -> int:
    return int(np.ceil(mean + 12.0 * np.sqrt(var) + 20))


def _cum_pmf(logpmf, upper: int) -> np.ndarray:
    return np.cumsum(np.exp(logpmf(np.arange(upper + 1))))


def _discrete_quantile(p: float, logpmf, mean: float, var: float) -> int:
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    upper = _tail_bound(mean, var)
    for _ in range(8):
        cdf = _cum_pmf(logpmf, upper)
        hit = np.flatnonzero(cdf >= p)
        if hit.size:
            return int(hit[0])
        upper *= 2
    # p indistinguishable from 1 in double precision
    return upper


def pois_cdf(q, lam):
    q = int(np.floor(q))
    if q < 0:
        return 0.0
    return float(_cum_pmf(lambda y: pois_logpmf(y, lam), q)[-1])


def pois_quantile(p: float, lam: float) -> int:
    """Smallest integer ``q`` with ``P(Y <= q) >= p`` for ``Y ~ Poisson(lam)``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return _discrete_quantile(p, lambda y: pois_logpmf(y, lam), lam, lam)


def nb_cdf(q, mu, nu):
    q = int(np.floor(q))
    if q < 0:
        return 0.0
    return float(_cum_pmf(lambda y: nb_logpmf(y, mu, nu), q)[-1])


def nb_quantile(p: float, mu: float, nu: float) -> int:
    """Smallest integer ``q`` with ``P(Y <= q) >= p`` for ``Y ~ NB(mu, nu)``."""
    if np.isinf(nu):
        return pois_quantile(p, mu)
    NegBinParams(mu, nu)  # validates
    return _discrete_quantile(p, lambda y: nb_logpmf(y, mu, nu), mu, mu + mu * mu / nu)


# -- binomial / beta-binomial ----------------------------------------------


def _lchoose(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def binom_logpmf(y, size, pi):
    y = np.asarray(y, dtype=float)
    return _lchoose(size, y) + xlogy(y, pi) + xlogy(size - y, 1 - pi)


def betabin_logpmf(y, size, pi, sigma):
    """log BetaBin(y; size, pi, sigma); ``sigma == 0`` is the binomial."""
    y = np.asarray(y, dtype=float)
    size = np.asarray(size, dtype=float)
    if np.any(y < 0) or np.any(y > size):
        raise ValueError("y outside 0..size")
    sigma = np.asarray(sigma, dtype=float)
    if np.all(sigma == 0):
        return binom_logpmf(y, size, pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = pi / sigma
        b = (1 - pi) / sigma
        out = _lchoose(size, y) + betaln(y + a, size - y + b) - betaln(a, b)
    return np.where(sigma == 0, binom_logpmf(y, size, pi), out)


def betabin_pmf(y, size, pi, sigma, log: bool = False):
    lp = betabin_logpmf(y, size, pi, sigma)
    return lp if log else np.exp(lp)


# -- multinomial / Dirichlet-multinomial -----------------------------------


def multinom_logpmf(y, prob) -> float:
    y = np.asarray(y, dtype=float)
    prob = np.asarray(prob, dtype=float)
    if y.shape != prob.shape:
        raise ValueError("y and prob must have the same length")
    if np.any(y < 0) or abs(prob.sum() - 1) > 1e-8 or np.any(prob < 0):
        raise ValueError("invalid multinomial arguments")
    size = y.sum()
    return float(gammaln(size + 1) - gammaln(y + 1).sum() + xlogy(y, prob).sum())


def multinom_pmf(y, size, prob, log: bool = False):
    if np.sum(y) != size:
        raise ValueError(f"counts sum to {np.sum(y)}, size is {size}")
    lp = multinom_logpmf(y, prob)
    return lp if log else float(np.exp(lp))


def dirmult_logpmf(y, alpha) -> float:
    y = np.asarray(y, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if y.shape != alpha.shape:
        raise ValueError("y and alpha must have the same length")
    if np.any(~(alpha > 0)):
        raise ValueError("alpha must be positive")
    size = y.sum()
    a0 = alpha.sum()
    return float(
        gammaln(size + 1)
        - gammaln(y + 1).sum()
        + gammaln(a0)
        - gammaln(size + a0)
        + (gammaln(y + alpha) - gammaln(alpha)).sum()
    )


def dirmult_pmf(y, params: DirMultParams, log: bool = False):
    if np.sum(y) != params.size:
        raise ValueError(f"counts sum to {np.sum(y)}, size is {params.size}")
    lp = dirmult_logpmf(y, params.alpha)
    return lp if log else float(np.exp(lp))


# -- normal ----------------------------------------------------------------


def normal_quantile(p):
    """Standard normal inverse CDF."""
    _check_prob(p)
    return ndtri(p)
