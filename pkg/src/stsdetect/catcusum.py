"""Likelihood-ratio CUSUM for categorical time series.

Each monitored row holds the counts ``(y_t1, ..., y_tk)`` of ``n_t``
cases.  In-control and out-of-control parameters are supplied as
``k x T`` matrices (one column per monitored timepoint): probabilities
for the binomial-type and multinomial families, concentrations for the
Dirichlet-multinomial.  The binomial families use only the first row
(the second is its complement).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, logit, xlogy

from .dist import betabin_logpmf, binom_logpmf, dirmult_logpmf, multinom_logpmf
from .glr import CusumTrace
from .regress import CategoricalFit, predict_categorical
from .sts import MonitoringRange, StsFrame, SurveillanceResult, subset

FAMILIES = ("binomial", "betabinomial", "multinomial", "dirichletmultinomial")


def shift_logit(pi0, R):
    """Out-of-control proportion after multiplying the odds by ``R``."""
    pi0 = np.asarray(pi0, dtype=float)
    if np.any(~(pi0 > 0)) or np.any(~(pi0 < 1)):
        raise ValueError("pi0 must lie strictly inside (0, 1)")
    if not R > 0:
        raise ValueError("odds ratio R must be positive")
    out = expit(logit(pi0) + np.log(R))
    return float(out) if out.ndim == 0 else out


def shift_multinomial_intercept(fit: CategoricalFit, delta, X_phase2) -> np.ndarray:
    """Parameters (``k x T``) predicted after adding ``delta`` to the intercepts.

    For a multinomial fit ``delta`` has one entry per non-reference
    category (a scalar is broadcast); for a Dirichlet-multinomial fit one
    entry per category.  The intercept is the first design column.
    """
    shifted = CategoricalFit(**{**fit.__dict__, "coefficients": fit.coefficients.copy()})
    coef = shifted.coefficients
    delta = np.broadcast_to(np.asarray(delta, dtype=float), coef[0].shape)
    coef[0] = coef[0] + delta
    return np.asarray(predict_categorical(shifted, np.atleast_2d(X_phase2))).T


def cat_logpmf_rows(Y, size, par, family: str, sigma: float = 0.0) -> np.ndarray:
    """Log-pmf of each row of ``Y`` (``N x k``) under one parameter column."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    par = np.asarray(par, dtype=float)
    size = np.asarray(size, dtype=float)
    if family == "binomial":
        return binom_logpmf(Y[:, 0], size, par[0])
    if family == "betabinomial":
        return betabin_logpmf(Y[:, 0], size, par[0], sigma)
    if Y.shape[1] != par.size:
        raise ValueError(f"{Y.shape[1]} categories but {par.size} parameters")
    n = Y.sum(axis=1)
    base = gammaln(n + 1) - gammaln(Y + 1).sum(axis=1)
    if family == "multinomial":
        return base + xlogy(Y, par).sum(axis=1)
    if family == "dirichletmultinomial":
        a0 = par.sum()
        return base + gammaln(a0) - gammaln(n + a0) + (gammaln(Y + par) - gammaln(par)).sum(axis=1)
    raise ValueError(f"unknown family {family!r}")


def cat_logpmf(y, size, par, family: str, sigma: float = 0.0) -> float:
    """Log-pmf of one row of counts under the family's parameter column."""
    if family == "multinomial":
        return multinom_logpmf(y, par)
    if family == "dirichletmultinomial":
        return dirmult_logpmf(y, par)
    return float(cat_logpmf_rows(y, size, par, family, sigma)[0])


@dataclass
class CatControl:
    range: tuple[int, ...]
    h: float
    pi0: np.ndarray
    pi1: np.ndarray
    family: str = "multinomial"
    sigma: float = 0.0
    ret: str = "value"

    def __post_init__(self):
        self.range = tuple(int(i) for i in self.range)
        self.pi0 = np.atleast_2d(np.asarray(self.pi0, dtype=float))
        self.pi1 = np.atleast_2d(np.asarray(self.pi1, dtype=float))
        # a single column applies to every monitored timepoint
        T = len(self.range)
        if self.pi0.shape[1] == 1:
            self.pi0 = np.repeat(self.pi0, T, axis=1)
        if self.pi1.shape[1] == 1:
            self.pi1 = np.repeat(self.pi1, T, axis=1)
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if not self.h > 0:
            raise ValueError("threshold h must be positive")
        if self.ret not in ("value", "cases"):
            raise ValueError("ret must be 'value' or 'cases'")
        if self.ret == "cases" and self.family not in ("binomial", "betabinomial"):
            raise ValueError("ret='cases' is only defined for the binomial families")
        if self.pi0.shape != self.pi1.shape or self.pi0.shape[1] != len(self.range):
            raise ValueError("pi0 and pi1 must be k x len(range) matrices")
        if self.family in ("binomial", "betabinomial", "multinomial"):
            for name, p in (("pi0", self.pi0), ("pi1", self.pi1)):
                if np.any(p <= 0) or np.any(p >= 1):
                    raise ValueError(f"{name} probabilities must lie in (0, 1)")
            if self.family == "multinomial" and np.any(np.abs(self.pi0.sum(0) - 1) > 1e-8):
                raise ValueError("pi0 columns must sum to 1")
            if self.family == "multinomial" and np.any(np.abs(self.pi1.sum(0) - 1) > 1e-8):
                raise ValueError("pi1 columns must sum to 1")
        elif np.any(self.pi0 <= 0) or np.any(self.pi1 <= 0):
            raise ValueError("Dirichlet-multinomial concentrations must be positive")
        if self.family == "betabinomial" and self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


def categorical_cusum(sts: StsFrame, control: CatControl) -> SurveillanceResult:
    """Run the categorical CUSUM on a multinomial-mode frame.

    An alarm is raised when the statistic exceeds ``h``; the statistic is
    then reset to 0.  ``upperbound`` holds the score (statistic or, with
    ``ret="cases"``, the smallest category-1 count that would alarm).
    """
    c = control
    if not sts.multinomial_mode:
        raise ValueError("categorical CUSUM needs a frame in multinomial mode")
    rng = MonitoringRange.of(c.range, sts.n)
    idx = rng.array
    k = sts.m
    if c.family in ("multinomial", "dirichletmultinomial") and c.pi0.shape[0] != k:
        raise ValueError(f"pi0 has {c.pi0.shape[0]} rows, frame has {k} categories")
    if c.family in ("binomial", "betabinomial") and k != 2:
        raise ValueError("binomial families need exactly two categories")
    totals = sts.population[:, 0]

    def inc(y, t_pos, size):
        return cat_logpmf(y, size, c.pi1[:, t_pos], c.family, c.sigma) - cat_logpmf(
            y, size, c.pi0[:, t_pos], c.family, c.sigma
        )

    T = idx.size
    stat = np.zeros(T)
    score = np.full(T, np.nan)
    alarm = np.zeros(T, dtype=bool)
    trace = CusumTrace(stat)
    C = 0.0
    for pos, t in enumerate(idx):
        y = sts.observed[t]
        size = int(totals[t])
        s = max(0.0, C + inc(y, pos, size))
        stat[pos] = s
        if c.ret == "cases":
            for y1 in range(size + 1):
                if C + inc(np.array([y1, size - y1]), pos, size) > c.h:
                    score[pos] = y1
                    break
        else:
            score[pos] = s
        if s > c.h:
            alarm[pos] = True
            trace.alarms.append(int(t))
            trace.resets.append(int(t))
            C = 0.0
        else:
            C = s
    alarm_m = np.repeat(alarm[:, None], k, axis=1)
    ub_m = np.repeat(score[:, None], k, axis=1)
    out = subset(sts, rows=idx).with_results(alarm_m, ub_m)
    ctrl = {
        "algorithm": "categoricalCUSUM",
        "range": idx.tolist(),
        "h": c.h,
        "family": c.family,
        "sigma": c.sigma,
        "ret": c.ret,
        "pi0": c.pi0.tolist(),
        "pi1": c.pi1.tolist(),
    }
    return SurveillanceResult(out, score, ctrl, trace=trace)
