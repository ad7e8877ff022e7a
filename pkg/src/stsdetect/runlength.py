"""Run-length distribution of likelihood-ratio CUSUM schemes.

A :class:`CusumScheme` describes the increments ``log f(y; theta1_t) -
log f(y; theta0_t)`` of a CUSUM and the model ``theta_true_t`` the data
are generated from.  The probability of at least one alarm within a
horizon is obtained either from a Markov-chain approximation (the
statistic discretized into ``M_states`` intervals on ``[0, h)`` plus an
absorbing alarm state) or by simulation.

Simulation ``i`` draws from its own generator seeded with
``SeedSequence([seed, i])``, so results do not depend on how the
simulations are split across workers.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.special import comb

from .catcusum import FAMILIES as CAT_FAMILIES
from .catcusum import cat_logpmf_rows
from .dist import nb_logpmf, nb_quantile, pois_logpmf, pois_quantile

COUNT_FAMILIES = ("poisson", "nb")
TAIL_MASS = 1e-10
MAX_SUPPORT = 2_000_000


@dataclass
class CusumScheme:
    """Increment model of a CUSUM.

    ``theta0``, ``theta1`` and ``theta_true`` are ``k x T`` parameter
    matrices as in the categorical CUSUM; for the count families they are
    ``1 x T`` means.  A single column is reused for every timepoint.
    ``strict`` selects the alarm rule ``C > h`` (default for categorical
    families) or ``C >= h`` (default for count families).
    """

    family: str
    theta0: np.ndarray
    theta1: np.ndarray
    theta_true: np.ndarray | None = None
    totals: np.ndarray | None = None
    sigma: float = 0.0
    size: float | np.ndarray = np.inf
    strict: bool | None = None

    def __post_init__(self):
        if self.family not in CAT_FAMILIES + COUNT_FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        self.theta0 = np.atleast_2d(np.asarray(self.theta0, dtype=float))
        self.theta1 = np.atleast_2d(np.asarray(self.theta1, dtype=float))
        if self.family in COUNT_FAMILIES:
            self.theta0 = self.theta0.reshape(1, -1)
            self.theta1 = self.theta1.reshape(1, -1)
        self.theta_true = self.theta0 if self.theta_true is None else np.atleast_2d(np.asarray(self.theta_true, dtype=float))
        if self.family in COUNT_FAMILIES:
            self.theta_true = self.theta_true.reshape(1, -1)
        if self.family == "binomial" or self.family == "betabinomial":
            # a single row of proportions is completed with its complement
            for name in ("theta0", "theta1", "theta_true"):
                th = getattr(self, name)
                if th.shape[0] == 1:
                    setattr(self, name, np.vstack([th, 1 - th]))
        k = self.theta0.shape[0]
        if self.theta1.shape[0] != k or self.theta_true.shape[0] != k:
            raise ValueError("theta0, theta1 and theta_true need the same number of rows")
        if self.family in CAT_FAMILIES:
            if self.totals is None:
                raise ValueError("categorical schemes need the totals n_t")
            self.totals = np.atleast_1d(np.asarray(self.totals, dtype=np.int64))
            if np.any(self.totals < 0):
                raise ValueError("totals must be nonnegative")
        if self.family in COUNT_FAMILIES:
            for th in (self.theta0, self.theta1, self.theta_true):
                if np.any(~(th > 0)):
                    raise ValueError("means must be positive")
            if self.family == "poisson":
                self.size = np.inf
        if self.strict is None:
            self.strict = self.family in CAT_FAMILIES

    @property
    def stationary(self) -> bool:
        arrays = [self.theta0, self.theta1, self.theta_true, np.asarray(self.size).reshape(-1)]
        if self.totals is not None:
            arrays.append(self.totals)
        return all(a.shape[-1] == 1 for a in arrays)

    def columns(self, horizon: int):
        """Per-timepoint ``(theta0, theta1, theta_true, total, size)`` for ``t < horizon``."""
        if horizon < 1:
            raise ValueError("horizon must be >= 1")

        def take(a, name):
            a = np.asarray(a)
            if a.ndim == 0 or a.shape[-1] == 1:
                return np.broadcast_to(a, a.shape[:-1] + (horizon,)) if a.ndim else np.full(horizon, a)
            if a.shape[-1] < horizon:
                raise ValueError(f"{name} has {a.shape[-1]} columns, horizon is {horizon}")
            return a[..., :horizon]

        th0 = take(self.theta0, "theta0")
        th1 = take(self.theta1, "theta1")
        tht = take(self.theta_true, "theta_true")
        tot = take(self.totals, "totals") if self.totals is not None else np.zeros(horizon, dtype=np.int64)
        size = take(np.asarray(self.size, dtype=float).reshape(-1), "size")
        for t in range(horizon):
            yield th0[:, t], th1[:, t], tht[:, t], int(tot[t]), float(size[t])

    def _logpmf(self, Y, par, total, size):
        if self.family == "poisson":
            return pois_logpmf(Y[:, 0], par[0])
        if self.family == "nb":
            return nb_logpmf(Y[:, 0], par[0], size)
        return cat_logpmf_rows(Y, total, par, self.family, self.sigma)

    def increments(self, Y, th0, th1, total, size):
        return self._logpmf(Y, th1, total, size) - self._logpmf(Y, th0, total, size)


@dataclass
class RunLengthCdf:
    """``cdf[t-1] = P(first alarm <= t)`` for ``t = 1..horizon``."""

    cdf: np.ndarray
    method: str
    h: float
    states: int | None = None
    n_sims: int | None = None
    seed: int | None = None
    elapsed: float = 0.0

    @property
    def prob(self) -> float:
        return float(self.cdf[-1])

    @property
    def se(self) -> float:
        """Binomial standard error of ``prob`` (Monte Carlo only)."""
        if self.n_sims is None:
            return 0.0
        p = self.prob
        return float(np.sqrt(p * (1 - p) / self.n_sims))


def compositions(n: int, k: int) -> np.ndarray:
    """All vectors of ``k`` nonnegative integers summing to ``n`` (stars and bars)."""
    count = int(comb(n + k - 1, k - 1, exact=True))
    if count > MAX_SUPPORT:
        raise ValueError(f"support of {count} compositions too large to enumerate; use Monte Carlo")
    if k == 1:
        return np.array([[n]], dtype=np.int64)
    bars = np.array(list(combinations(range(n + k - 1), k - 1)), dtype=np.int64).reshape(-1, k - 1)
    edges = np.column_stack([np.full(len(bars), -1), bars, np.full(len(bars), n + k - 1)])
    return np.diff(edges, axis=1) - 1


def increment_distribution(scheme: CusumScheme, th0, th1, tht, total, size):
    """Support of the increment at one timepoint: ``(values, probs, residual)``.

    ``residual`` is the probability mass not enumerated (unbounded
    families are truncated once the cdf reaches ``1 - 1e-10``).
    """
    fam = scheme.family
    if fam in ("binomial", "betabinomial"):
        y1 = np.arange(total + 1)
        Y = np.column_stack([y1, total - y1])
    elif fam in ("multinomial", "dirichletmultinomial"):
        Y = compositions(total, th0.size)
    else:
        mu = tht[0]
        q = pois_quantile(1 - TAIL_MASS, mu) if np.isinf(size) else nb_quantile(1 - TAIL_MASS, mu, size)
        Y = np.arange(q + 1).reshape(-1, 1)
    probs = np.exp(scheme._logpmf(Y, tht, total, size))
    values = scheme.increments(Y, th0, th1, total, size)
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(probs))):
        raise ValueError("degenerate increment distribution (non-finite values)")
    residual = max(0.0, 1.0 - probs.sum())
    if fam in CAT_FAMILIES and residual > 1e-8:
        raise ValueError("enumerated support does not carry the full probability mass")
    return values, probs, residual if fam in COUNT_FAMILIES else 0.0


def transition_matrix(values, probs, residual, h: float, M: int, strict: bool) -> np.ndarray:
    """``(M+1) x (M+1)`` transition matrix; the last state is the absorbing alarm."""
    width = h / M
    reps = (np.arange(M) + 0.5) * width
    nxt = np.maximum(0.0, reps[:, None] + values[None, :])
    alarm = nxt > h if strict else nxt >= h
    dest = np.where(alarm, M, np.minimum((nxt / width).astype(np.int64), M - 1))
    flat = (np.arange(M)[:, None] * (M + 1) + dest).ravel()
    P = np.bincount(flat, weights=np.broadcast_to(probs, dest.shape).ravel(), minlength=M * (M + 1))
    P = P.reshape(M, M + 1)
    P[:, M] += residual
    absorbing = np.zeros((1, M + 1))
    absorbing[0, M] = 1.0
    return np.vstack([P, absorbing])


def runlength_markov(scheme: CusumScheme, h: float, horizon: int, M_states: int = 128) -> RunLengthCdf:
    """Markov-chain approximation of the run-length cdf, started at ``C = 0``."""
    if not h > 0:
        raise ValueError("h must be positive")
    if M_states < 1:
        raise ValueError("M_states must be >= 1")
    t_start = time.perf_counter()
    dists = _distributions(scheme, horizon)
    cdf = _markov_cdf(dists, h, M_states, scheme.strict)
    return RunLengthCdf(cdf, "markov", h, states=M_states, elapsed=time.perf_counter() - t_start)


def _markov_cdf(dists, h, M, strict) -> np.ndarray:
    v = np.zeros(M + 1)
    v[0] = 1.0
    cdf = np.empty(len(dists))
    P = None
    for t, dist in enumerate(dists):
        if P is None or dist is not dists[t - 1]:
            P = transition_matrix(*dist, h, M, strict)
        v = v @ P
        cdf[t] = v[M]
    return cdf


def _distributions(scheme: CusumScheme, horizon: int) -> list:
    cols = scheme.columns(horizon)
    if scheme.stationary:
        return [increment_distribution(scheme, *next(cols))] * horizon
    return [increment_distribution(scheme, *col) for col in cols]


def _draw(scheme: CusumScheme, gen: np.random.Generator, cols) -> np.ndarray:
    """One in-control series of length ``len(cols)``: array ``T x k``."""
    rows = []
    for _, _, tht, total, size in cols:
        fam = scheme.family
        if fam == "poisson" or (fam == "nb" and np.isinf(size)):
            rows.append([gen.poisson(tht[0])])
        elif fam == "nb":
            rows.append([gen.negative_binomial(size, size / (size + tht[0]))])
        elif fam == "binomial":
            y1 = gen.binomial(total, tht[0])
            rows.append([y1, total - y1])
        elif fam == "betabinomial":
            p = tht[0] if scheme.sigma == 0 else gen.beta(tht[0] / scheme.sigma, (1 - tht[0]) / scheme.sigma)
            y1 = gen.binomial(total, p)
            rows.append([y1, total - y1])
        elif fam == "multinomial":
            rows.append(gen.multinomial(total, tht))
        else:
            g = gen.gamma(tht)
            rows.append(gen.multinomial(total, g / g.sum()))
    return np.asarray(rows, dtype=float)


def simulate_increments(scheme: CusumScheme, horizon: int, n_sims: int, seed: int, jobs: int = 1) -> np.ndarray:
    """CUSUM increments of ``n_sims`` in-control series, shape ``n_sims x horizon``."""
    if n_sims < 1:
        raise ValueError("n_sims must be >= 1")
    cols = list(scheme.columns(horizon))

    def chunk(ids):
        return np.stack([_draw(scheme, np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, int(i)]))), cols) for i in ids])

    parts = np.array_split(np.arange(n_sims), max(1, min(jobs, n_sims)))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            Y = np.concatenate(list(ex.map(chunk, parts)))
    else:
        Y = chunk(parts[0])
    inc = np.empty((n_sims, horizon))
    for t, (th0, th1, _, total, size) in enumerate(cols):
        inc[:, t] = scheme.increments(Y[:, t, :], th0, th1, total, size)
    return inc


def first_alarm_cdf(increments: np.ndarray, h: float, strict: bool) -> np.ndarray:
    """Empirical cdf of the first alarm time of CUSUM paths started at 0."""
    S, T = increments.shape
    C = np.zeros(S)
    alarmed = np.zeros(S, dtype=bool)
    cdf = np.empty(T)
    for t in range(T):
        C = np.maximum(0.0, C + increments[:, t])
        alarmed |= (C > h) if strict else (C >= h)
        cdf[t] = alarmed.mean()
    return cdf


def runlength_montecarlo(scheme: CusumScheme, h: float, horizon: int, n_sims: int = 10_000, seed: int = 0, jobs: int = 1) -> RunLengthCdf:
    t_start = time.perf_counter()
    inc = simulate_increments(scheme, horizon, n_sims, seed, jobs)
    cdf = first_alarm_cdf(inc, h, scheme.strict)
    return RunLengthCdf(cdf, "montecarlo", h, n_sims=n_sims, seed=seed, elapsed=time.perf_counter() - t_start)


@dataclass
class Calibration:
    h_grid: np.ndarray
    target_prob: float
    prob_markov: np.ndarray | None
    prob_mc: np.ndarray | None
    mc_se: np.ndarray | None
    h_star: float
    met: bool
    timing: dict = field(default_factory=dict)

    @property
    def curve(self) -> np.ndarray:
        return self.prob_markov if self.prob_markov is not None else self.prob_mc


def calibrate_threshold(
    h_grid,
    target_prob: float,
    horizon: int,
    method: str,
    scheme: CusumScheme,
    M_states: int = 128,
    n_sims: int = 10_000,
    seed: int = 0,
    jobs: int = 1,
) -> Calibration:
    """Smallest ``h`` in the grid whose false-alarm probability within
    ``horizon`` is at most ``target_prob``.

    ``method`` is ``markov``, ``montecarlo`` or ``both`` (the Markov curve
    then decides).  When no grid value meets the target the largest ``h``
    is returned with ``met=False``.
    """
    h_grid = np.asarray(h_grid, dtype=float)
    if h_grid.size == 0 or np.any(np.diff(h_grid) <= 0) or np.any(h_grid <= 0):
        raise ValueError("h_grid must be a nonempty increasing grid of positive values")
    if not 0 < target_prob < 1:
        raise ValueError("target_prob must lie in (0, 1)")
    if method not in ("markov", "montecarlo", "both"):
        raise ValueError("method must be markov, montecarlo or both")
    prob_markov = prob_mc = mc_se = None
    timing = {}
    if method in ("markov", "both"):
        t0 = time.perf_counter()
        dists = _distributions(scheme, horizon)
        prob_markov = np.array([_markov_cdf(dists, h, M_states, scheme.strict)[-1] for h in h_grid])
        timing["markov"] = time.perf_counter() - t0
    if method in ("montecarlo", "both"):
        t0 = time.perf_counter()
        inc = simulate_increments(scheme, horizon, n_sims, seed, jobs)
        prob_mc = np.array([first_alarm_cdf(inc, h, scheme.strict)[-1] for h in h_grid])
        mc_se = np.sqrt(prob_mc * (1 - prob_mc) / n_sims)
        timing["montecarlo"] = time.perf_counter() - t0
    curve = prob_markov if prob_markov is not None else prob_mc
    ok = np.flatnonzero(curve <= target_prob)
    met = ok.size > 0
    h_star = float(h_grid[ok[0]] if met else h_grid[-1])
    return Calibration(h_grid, target_prob, prob_markov, prob_mc, mc_se, h_star, met, timing)
