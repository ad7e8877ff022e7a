"""Likelihood fitting for count and categorical regression models.

* quasi-Poisson GLM with log link, fitted by IRLS with a QR solve per step
* Anscombe residuals and outbreak down-weighting for the Farrington family
* beta-binomial regression (logit mean, log dispersion)
* multinomial logit regression with a reference category
* Dirichlet-multinomial regression with ``alpha_tj = exp(x_t' beta_j)``

The categorical fitters share one damped Newton maximizer.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import digamma, expit, gammaln, polygamma, xlogy

from .dist import pois_logpmf

log = logging.getLogger(__name__)


@dataclass
class DesignMatrix:
    X: np.ndarray
    labels: tuple[str, ...] = ()
    offset: np.ndarray | None = None
    prior_weights: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        n, p = self.X.shape
        if not self.labels:
            self.labels = tuple(f"x{j}" for j in range(p))
        if len(self.labels) != p:
            raise ValueError("one label per design column required")
        self.offset = np.zeros(n) if self.offset is None else np.asarray(self.offset, dtype=float)
        if self.prior_weights is None:
            self.prior_weights = np.ones(n)
        else:
            self.prior_weights = np.asarray(self.prior_weights, dtype=float)
        if self.offset.shape != (n,) or self.prior_weights.shape != (n,):
            raise ValueError("offset and prior_weights must have one entry per row")
        if np.any(self.prior_weights < 0):
            raise ValueError("prior weights must be nonnegative")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_weights(self, w) -> "DesignMatrix":
        return DesignMatrix(self.X, self.labels, self.offset, np.asarray(w, dtype=float))


def _as_design(design) -> DesignMatrix:
    return design if isinstance(design, DesignMatrix) else DesignMatrix(design)


def independent_columns(X: np.ndarray, tol: float = 1e-7) -> np.ndarray:
    """Mask of columns kept when aliased ones are dropped left to right."""
    keep = np.zeros(X.shape[1], dtype=bool)
    for j in range(X.shape[1]):
        col = X[:, j]
        norm = np.linalg.norm(col)
        if norm == 0:
            continue
        if keep.any():
            basis = X[:, keep]
            coef, *_ = np.linalg.lstsq(basis, col, rcond=None)
            resid = col - basis @ coef
            if np.linalg.norm(resid) <= tol * norm:
                continue
        keep[j] = True
    return keep


@dataclass
class GlmFit:
    """Fitted Poisson / quasi-Poisson log-linear model."""

    coefficients: np.ndarray
    cov: np.ndarray
    dispersion: float
    fitted: np.ndarray
    working_weights: np.ndarray
    prior_weights: np.ndarray
    hat: np.ndarray
    deviance: float
    pearson: float
    df_residual: int
    loglik: float
    aic: float | None
    converged: bool
    iterations: int
    y: np.ndarray
    design: DesignMatrix
    aliased: np.ndarray

    @property
    def labels(self) -> tuple[str, ...]:
        return self.design.labels

    def coef(self, label: str) -> float:
        return float(self.coefficients[self.labels.index(label)])

    def se(self, label: str) -> float:
        j = self.labels.index(label)
        return float(np.sqrt(self.cov[j, j]))

    def score(self) -> np.ndarray:
        """Weighted score ``X' diag(w) (y - mu)``; zero at the optimum."""
        d = self.design
        return d.X[:, ~self.aliased].T @ (d.prior_weights * (self.y - self.fitted))


def fit_glm_poisson(y, design, quasi: bool = True, tol: float = 1e-8, max_iter: int = 50) -> GlmFit:
    """Fit ``log E(y) = X beta + offset`` by iteratively reweighted least squares.

    Convergence is declared when the relative deviance change drops below
    ``tol``.  Aliased design columns are dropped (coefficient 0, flagged in
    ``aliased``).  With ``quasi`` the dispersion is the Pearson estimate
    floored at 1.
    """
    d = _as_design(design)
    y = np.asarray(y, dtype=float)
    if y.shape != (d.n,):
        raise ValueError("y must have one entry per design row")
    if np.any(y < 0):
        raise ValueError("counts must be nonnegative")
    pw = d.prior_weights
    used = pw > 0
    keep = independent_columns(d.X[used])
    if not keep.all():
        dropped = [lab for lab, k in zip(d.labels, keep) if not k]
        warnings.warn(f"aliased design columns dropped: {dropped}", RuntimeWarning, stacklevel=2)
    Xk = d.X[:, keep]
    off = d.offset

    mu = y + 0.1
    eta = np.log(mu)
    dev_old = np.inf
    converged = False
    beta = np.zeros(Xk.shape[1])
    it = 0
    for it in range(1, max_iter + 1):
        z = eta - off + (y - mu) / mu
        sw = np.sqrt(pw * mu)
        Q, R = linalg.qr(sw[:, None] * Xk, mode="economic")
        beta = linalg.solve_triangular(R, Q.T @ (sw * z))
        eta = np.clip(Xk @ beta + off, -700, 700)
        mu = np.exp(eta)
        dev = _poisson_deviance(y, mu, pw)
        if abs(dev - dev_old) / (abs(dev) + 0.1) < tol:
            converged = True
            break
        dev_old = dev
    if not converged:
        log.warning("IRLS did not converge in %d iterations", max_iter)

    w = pw * mu
    sw = np.sqrt(w)
    Q, R = linalg.qr(sw[:, None] * Xk, mode="economic")
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    unscaled = Rinv @ Rinv.T
    hat = np.sum(Q * Q, axis=1)

    pearson = float(np.sum(pw * (y - mu) ** 2 / mu))
    df_res = int(used.sum() - keep.sum())
    phi = max(1.0, pearson / df_res) if quasi and df_res > 0 else 1.0

    p = d.p
    coef = np.zeros(p)
    coef[keep] = beta
    cov = np.zeros((p, p))
    cov[np.ix_(keep, keep)] = phi * unscaled
    loglik = float(np.sum(pw * pois_logpmf(y, mu)))
    aic = None if quasi else -2 * loglik + 2 * int(keep.sum())
    return GlmFit(
        coefficients=coef,
        cov=cov,
        dispersion=phi,
        fitted=mu,
        working_weights=w,
        prior_weights=pw.copy(),
        hat=hat,
        deviance=_poisson_deviance(y, mu, pw),
        pearson=pearson,
        df_residual=df_res,
        loglik=loglik,
        aic=aic,
        converged=converged,
        iterations=it,
        y=y,
        design=d,
        aliased=~keep,
    )


def _poisson_deviance(y, mu, w) -> float:
    return float(2 * np.sum(w * (xlogy(y, y / mu) - (y - mu))))


def anscombe_residuals(fit: GlmFit) -> np.ndarray:
    """Anscombe residuals of a (quasi-)Poisson fit with leverage correction."""
    y, mu = fit.y, fit.fitted
    one_minus_h = np.maximum(1.0 - fit.hat, 1e-10)
    return 1.5 * (y ** (2 / 3) - mu ** (2 / 3)) / (mu ** (1 / 6) * np.sqrt(fit.dispersion * one_minus_h))


def outbreak_weights(residuals, threshold: float, normalize: bool = True) -> np.ndarray:
    """``(threshold / r)**2`` for residuals above ``threshold``, 1 otherwise."""
    r = np.asarray(residuals, dtype=float)
    w = np.ones_like(r)
    hi = r > threshold
    w[hi] = np.minimum(1.0, (threshold / r[hi]) ** 2)
    if normalize and w.size:
        w = w * (w.size / w.sum())
    return w


def reweight_outbreaks(y, design, fit: GlmFit, weights_threshold: float, quasi: bool = True) -> GlmFit:
    """Down-weight likely past outbreaks and refit once."""
    d = _as_design(design)
    r = anscombe_residuals(fit)
    w = outbreak_weights(r, weights_threshold)
    if np.all(w == 1.0):
        return fit
    return fit_glm_poisson(y, d.with_weights(w), quasi=quasi)


def predict_glm(fit: GlmFit, x_new, offset_new: float = 0.0) -> tuple[float, float]:
    """Predicted mean and variance of the linear predictor at ``x_new``."""
    x = np.asarray(x_new, dtype=float)
    if x.shape != (fit.design.p,):
        raise ValueError(f"x_new must have length {fit.design.p}")
    eta = float(x @ fit.coefficients + offset_new)
    var_eta = float(x @ fit.cov @ x)
    return float(np.exp(eta)), max(var_eta, 0.0)


# -- categorical models ----------------------------------------------------


@dataclass
class CategoricalFit:
    """Fitted categorical regression.

    ``coefficients`` is ``p x (k-1)`` for the multinomial (reference column
    omitted), ``p x k`` for the Dirichlet-multinomial and a ``p`` vector for
    the beta-binomial, whose dispersion is ``sigma = exp(log_sigma)``.
    """

    family: str
    coefficients: np.ndarray
    loglik: float
    n_params: int
    converged: bool
    iterations: int
    gradient: np.ndarray
    k: int
    reference: int | None = None
    log_sigma: float | None = None
    messages: list[str] = field(default_factory=list)

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def sigma(self) -> float | None:
        return None if self.log_sigma is None else float(np.exp(self.log_sigma))


def _newton_maximize(fun, theta0, max_iter: int = 200, gtol: float = 1e-6):
    """Damped Newton ascent; ``fun(theta) -> (loglik, grad, hessian)``."""
    theta = np.asarray(theta0, dtype=float).copy()
    ll, g, H = fun(theta)
    it = 0
    for it in range(1, max_iter + 1):
        A = -0.5 * (H + H.T)
        ridge = 1e-8
        while True:
            try:
                c = linalg.cho_factor(A, check_finite=True)
                break
            except (linalg.LinAlgError, ValueError):
                A = A + ridge * np.eye(A.shape[0])
                ridge *= 10
                if ridge > 1e8:
                    raise RuntimeError("Hessian could not be stabilised")
        step = linalg.cho_solve(c, g)
        improved = False
        for _ in range(60):
            cand = theta + step
            ll_c, g_c, H_c = fun(cand)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * abs(ll):
                improved = True
                break
            step = step / 2
        if not improved:
            break
        small_step = np.max(np.abs(cand - theta)) < 1e-11
        theta, ll, g, H = cand, ll_c, g_c, H_c
        if small_step or np.max(np.abs(g)) < 1e-10:
            break
    converged = bool(np.max(np.abs(g)) < gtol)
    return theta, ll, g, H, converged, it


def _check_categorical(Y, X):
    Y = np.asarray(Y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if Y.ndim != 2 or Y.shape[1] < 2:
        raise ValueError("Y must be an n x k count matrix with k >= 2")
    if X.shape[0] != Y.shape[0]:
        raise ValueError("Y and X must have the same number of rows")
    if np.any(Y < 0) or np.any(Y != np.round(Y)):
        raise ValueError("Y must hold nonnegative integer counts")
    empty = np.flatnonzero(Y.sum(axis=0) == 0)
    if empty.size:
        raise ValueError(f"empty categories {empty.tolist()}: no finite maximum likelihood fit")
    return Y, X


def _log_multinomial_coef(Y) -> np.ndarray:
    return gammaln(Y.sum(axis=1) + 1) - gammaln(Y + 1).sum(axis=1)


def _softmax_rows(eta: np.ndarray) -> np.ndarray:
    eta = eta - eta.max(axis=1, keepdims=True)
    e = np.exp(eta)
    return e / e.sum(axis=1, keepdims=True)


def _full_eta(X, B, k, reference):
    nonref = [j for j in range(k) if j != reference]
    eta = np.zeros((X.shape[0], k))
    eta[:, nonref] = X @ B
    return eta


def multinomial_loglik(theta, Y, X, reference: int = 0):
    """Log-likelihood, gradient and Hessian of the multinomial logit model."""
    n, k = Y.shape
    p = X.shape[1]
    B = theta.reshape(k - 1, p).T
    nonref = [j for j in range(k) if j != reference]
    P = _softmax_rows(_full_eta(X, B, k, reference))
    N = Y.sum(axis=1)
    ll = float(np.sum(_log_multinomial_coef(Y)) + np.sum(xlogy(Y, P)))
    Pn = P[:, nonref]
    grad = (X.T @ (Y[:, nonref] - N[:, None] * Pn)).T.ravel()
    W = N[:, None, None] * (np.einsum("tj,jl->tjl", Pn, np.eye(k - 1)) - Pn[:, :, None] * Pn[:, None, :])
    H = -np.einsum("tjl,ta,tb->jalb", W, X, X).reshape((k - 1) * p, (k - 1) * p)
    return ll, grad, H


def fit_multinomial_logit(Y, X, reference: int = 0, max_iter: int = 200) -> CategoricalFit:
    """Maximum-likelihood multinomial logit fit; ``reference`` has zero coefficients."""
    Y, X = _check_categorical(Y, X)
    n, k = Y.shape
    p = X.shape[1]
    if not 0 <= reference < k:
        raise ValueError("reference category out of range")
    theta, ll, g, _, ok, it = _newton_maximize(
        lambda th: multinomial_loglik(th, Y, X, reference), np.zeros(p * (k - 1)), max_iter
    )
    if not ok:
        log.warning("multinomial logit fit did not converge")
    return CategoricalFit(
        family="multinomial",
        coefficients=theta.reshape(k - 1, p).T,
        loglik=ll,
        n_params=p * (k - 1),
        converged=ok,
        iterations=it,
        gradient=g,
        k=k,
        reference=reference,
    )


def dirmult_loglik(theta, Y, X):
    """Log-likelihood, gradient and Hessian of Dirichlet-multinomial regression."""
    n, k = Y.shape
    p = X.shape[1]
    B = theta.reshape(k, p).T
    alpha = np.exp(np.clip(X @ B, -700, 700))
    A = alpha.sum(axis=1)
    N = Y.sum(axis=1)
    ll = float(
        np.sum(_log_multinomial_coef(Y))
        + np.sum(gammaln(A) - gammaln(N + A))
        + np.sum(gammaln(Y + alpha) - gammaln(alpha))
    )
    common = digamma(A) - digamma(N + A)
    own = digamma(Y + alpha) - digamma(alpha)
    d1 = alpha * (common[:, None] + own)
    grad = (X.T @ d1).T.ravel()
    tri_common = polygamma(1, A) - polygamma(1, N + A)
    tri_own = polygamma(1, Y + alpha) - polygamma(1, alpha)
    W = alpha[:, :, None] * alpha[:, None, :] * tri_common[:, None, None]
    diag = d1 + alpha**2 * tri_own
    W = W + np.einsum("tj,jl->tjl", diag, np.eye(k))
    H = np.einsum("tjl,ta,tb->jalb", W, X, X).reshape(k * p, k * p)
    return ll, grad, H


def fit_dirichlet_multinomial(Y, X, max_iter: int = 200) -> CategoricalFit:
    """Maximum-likelihood Dirichlet-multinomial regression."""
    Y, X = _check_categorical(Y, X)
    n, k = Y.shape
    p = X.shape[1]
    N = Y.sum(axis=1)
    props = Y.sum(axis=0) / Y.sum()
    # moment estimate of the total concentration from the category-1 variance
    q = Y / np.maximum(N, 1)[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.nanmean((q - props) ** 2 / (props * (1 - props)), axis=0).mean()
        nbar = N.mean()
        a0 = (nbar - rho * nbar) / (rho * nbar - 1) if rho * nbar > 1 else 1e3
    a0 = float(np.clip(a0, 0.1, 1e4)) if np.isfinite(a0) else 10.0
    B0 = np.zeros((p, k))
    icpt = _intercept_column(X)
    if icpt is not None:
        B0[icpt] = np.log(props * a0)
    theta, ll, g, _, ok, it = _newton_maximize(lambda th: dirmult_loglik(th, Y, X), B0.T.ravel(), max_iter)
    if not ok:
        log.warning("Dirichlet-multinomial fit did not converge")
    return CategoricalFit(
        family="dirichletmultinomial",
        coefficients=theta.reshape(k, p).T,
        loglik=ll,
        n_params=p * k,
        converged=ok,
        iterations=it,
        gradient=g,
        k=k,
    )


def _intercept_column(X) -> int | None:
    hits = np.flatnonzero(np.all(X == 1.0, axis=0))
    return int(hits[0]) if hits.size else None


def betabin_loglik(theta, y, size, X):
    """Log-likelihood and gradient of the beta-binomial logit model.

    ``theta = (beta, log_sigma)``.
    """
    beta, tau = theta[:-1], theta[-1]
    pi = expit(X @ beta)
    sigma = np.exp(tau)
    a = pi / sigma
    b = (1 - pi) / sigma
    ll = float(
        np.sum(
            gammaln(size + 1)
            - gammaln(y + 1)
            - gammaln(size - y + 1)
            + gammaln(y + a)
            + gammaln(size - y + b)
            - gammaln(size + a + b)
            - gammaln(a)
            - gammaln(b)
            + gammaln(a + b)
        )
    )
    dab = digamma(a + b) - digamma(size + a + b)
    dla = digamma(y + a) - digamma(a) + dab
    dlb = digamma(size - y + b) - digamma(b) + dab
    deta = (dla - dlb) * pi * (1 - pi) / sigma
    dtau = -(dla * a + dlb * b)
    return ll, np.concatenate([X.T @ deta, [dtau.sum()]])


def _fd_hessian(grad_fun, theta, eps: float = 1e-5) -> np.ndarray:
    k = theta.size
    H = np.empty((k, k))
    for j in range(k):
        h = eps * max(1.0, abs(theta[j]))
        e = np.zeros(k)
        e[j] = h
        H[:, j] = (grad_fun(theta + e) - grad_fun(theta - e)) / (2 * h)
    return 0.5 * (H + H.T)


def fit_betabin_logit(y, size, X, max_iter: int = 200) -> CategoricalFit:
    """Beta-binomial regression with ``logit(pi_t) = x_t' beta`` and constant ``log sigma``."""
    y = np.asarray(y, dtype=float)
    size = np.asarray(size, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if np.any(y < 0) or np.any(y > size):
        raise ValueError("need 0 <= y <= size")
    p = X.shape[1]
    pbar = y.sum() / size.sum()
    if not 0 < pbar < 1:
        raise ValueError("all counts at a boundary: proportion not estimable")
    theta0 = np.zeros(p + 1)
    icpt = _intercept_column(X)
    if icpt is not None:
        theta0[icpt] = np.log(pbar / (1 - pbar))
    theta0[-1] = np.log(0.1)

    def fun(th):
        ll, g = betabin_loglik(th, y, size, X)
        return ll, g, _fd_hessian(lambda t: betabin_loglik(t, y, size, X)[1], th)

    theta, ll, g, _, ok, it = _newton_maximize(fun, theta0, max_iter)
    msgs = []
    if np.any(np.abs(theta[:-1]) > 25):
        msgs.append("separation: mean coefficients diverging")
        ok = False
    if not ok:
        log.warning("beta-binomial fit did not converge")
    return CategoricalFit(
        family="betabinomial",
        coefficients=theta[:-1],
        loglik=ll,
        n_params=p + 1,
        converged=ok,
        iterations=it,
        gradient=g,
        k=2,
        log_sigma=float(theta[-1]),
        messages=msgs,
    )


def predict_categorical(fit: CategoricalFit, x_new) -> np.ndarray:
    """Category probabilities (multinomial), concentrations (Dirichlet-multinomial)
    or ``pi`` (beta-binomial) at each row of ``x_new``."""
    x = np.asarray(x_new, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if fit.family == "multinomial":
        out = _softmax_rows(_full_eta(X, fit.coefficients, fit.k, fit.reference))
    elif fit.family == "dirichletmultinomial":
        out = np.exp(X @ fit.coefficients)
    elif fit.family == "betabinomial":
        out = expit(X @ fit.coefficients)
    else:
        raise ValueError(f"unknown family {fit.family!r}")
    return out[0] if single else out
