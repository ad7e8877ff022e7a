"""Likelihood-ratio and GLR CUSUM for count time series.

The in-control mean comes from a log-linear model with ``S`` harmonic
pairs and an optional trend, fitted on phase 1 (every row before the
monitored range).  The out-of-control mean is either a multiplicative
shift ``mu0 * exp(kappa)`` ("intercept") or an autoregressive excess
``mu0 + lambda * y[t-1]`` ("epi").  With a fixed shift the statistic is
the CUSUM recursion; without one the shift is maximised at every
candidate change point (GLR), optionally limited to the last ``M`` rows.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .regress import DesignMatrix, fit_glm_poisson
from .sts import MonitoringRange, StsFrame, SurveillanceResult, subset

log = logging.getLogger(__name__)

KAPPA_MAX = 5.0
LAMBDA_MAX = 20.0
CASES_CAP = 10**6


@dataclass
class GlrControl:
    range: tuple[int, ...] = ()
    c_ARL: float = 5.0
    theta: float | None = None
    change: str = "intercept"
    ret: str = "value"
    mu0: dict | list | None = None
    size: float | list | None = None
    M: int | None = None
    fir: bool | float = False
    family: str = "nb"

    def __post_init__(self):
        self.range = tuple(int(i) for i in self.range)
        if not self.c_ARL > 0:
            raise ValueError("c_ARL must be positive")
        if self.change not in ("intercept", "epi"):
            raise ValueError("change must be 'intercept' or 'epi'")
        if self.ret not in ("value", "cases"):
            raise ValueError("ret must be 'value' or 'cases'")
        if self.theta is not None and not self.theta > 0:
            raise ValueError("a fixed theta must be positive")
        if self.family not in ("nb", "poisson"):
            raise ValueError("family must be 'nb' or 'poisson'")
        if self.mu0 is None:
            self.mu0 = {"S": 1, "trend": False, "refit": False}
        if isinstance(self.mu0, dict):
            spec = {"S": 1, "trend": False, "refit": False, **self.mu0}
            if spec["S"] < 0:
                raise ValueError("number of harmonics S must be >= 0")
            self.mu0 = spec
        if self.M is not None and self.M < 1:
            raise ValueError("window depth M must be >= 1")

    @property
    def glr(self) -> bool:
        return self.theta is None

    @property
    def restart_value(self) -> float:
        if self.fir is True:
            return self.c_ARL / 2
        if self.fir is False or self.fir is None:
            return 0.0
        return float(self.fir)

    @classmethod
    def from_dict(cls, d: dict, family: str = "nb") -> "GlrControl":
        d = dict(d)
        if "c.ARL" in d:
            d["c_ARL"] = d.pop("c.ARL")
        d.setdefault("family", family)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown glr parameters: {sorted(unknown)}")
        return cls(**d)


@dataclass
class CusumTrace:
    statistic: np.ndarray
    alarms: list[int] = field(default_factory=list)
    resets: list[int] = field(default_factory=list)
    refits: list[int] = field(default_factory=list)
    saturated: list[int] = field(default_factory=list)


def harmonic_design(t: np.ndarray, S: int, period: int, trend: bool) -> tuple[np.ndarray, tuple[str, ...]]:
    """Intercept, optional trend and ``S`` cos/sin pairs at (1-based) times ``t``."""
    t = np.asarray(t, dtype=float)
    cols = [np.ones(t.size)]
    labels = ["(Intercept)"]
    if trend:
        cols.append(t)
        labels.append("t")
    for s in range(1, S + 1):
        cols.append(np.cos(2 * np.pi * s * t / period))
        cols.append(np.sin(2 * np.pi * s * t / period))
        labels += [f"cos{s}", f"sin{s}"]
    return np.column_stack(cols), tuple(labels)


def fit_incontrol(sts: StsFrame, phase1, S: int = 1, trend: bool = False, unit=0, predict_at=None, family: str = "nb"):
    """Fit the in-control model on ``phase1`` rows.

    Returns ``(mu0, size, fit)`` where ``mu0`` and the negative binomial
    sizes are evaluated at ``predict_at`` (default: all rows after phase 1).
    ``size`` is ``inf`` (Poisson) when the dispersion estimate is 1 or the
    family is Poisson.
    """
    phase1 = np.asarray(phase1, dtype=np.int64)
    if phase1.size == 0:
        raise ValueError("phase 1 is empty")
    j = sts.unit_index(unit)
    y = sts.observed[:, j].astype(float)
    if predict_at is None:
        predict_at = np.arange(phase1.max() + 1, sts.n)
    predict_at = np.asarray(predict_at, dtype=np.int64)
    X, labels = harmonic_design(phase1 + 1, S, sts.freq, trend)
    fit = fit_glm_poisson(y[phase1], DesignMatrix(X, labels), quasi=family == "nb")
    Xp, _ = harmonic_design(predict_at + 1, S, sts.freq, trend)
    mu0 = np.exp(Xp @ fit.coefficients)
    phi = fit.dispersion
    size = np.full(mu0.size, np.inf) if phi <= 1 else mu0 / (phi - 1.0)
    return mu0, size, fit


def lr_increment(y, mu0, mu1, size=np.inf):
    """``log f(y; mu1) - log f(y; mu0)`` for Poisson (``size=inf``) or NB with fixed size."""
    y = np.asarray(y, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    size = np.asarray(size, dtype=float)
    kappa = np.log(mu1 / mu0)
    pois = y * kappa - (mu1 - mu0)
    with np.errstate(invalid="ignore"):
        nb = y * kappa - (size + y) * (np.log(size + mu1) - np.log(size + mu0))
    return np.where(np.isinf(size), pois, nb)


def cusum_path(increments, start: float = 0.0) -> np.ndarray:
    """CUSUM recursion ``C_t = max(0, C_{t-1} + inc_t)`` without alarms."""
    out = np.empty(len(increments))
    c = start
    for i, inc in enumerate(increments):
        c = max(0.0, c + inc)
        out[i] = c
    return out


def _golden_max(f: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, shape, tol: float = 1e-7):
    """Vectorised golden-section maximisation of unimodal ``f`` on ``[lo, hi]``."""
    g = (np.sqrt(5) - 1) / 2
    a = np.full(shape, lo, dtype=float)
    b = np.full(shape, hi, dtype=float)
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = f(c), f(d)
    while np.max(b - a) > tol:
        left = fc > fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = b - g * (b - a)
        d_new = a + g * (b - a)
        c, d = c_new, d_new
        fc, fd = f(c), f(d)
    x = (a + b) / 2
    return x, f(x)


def _glr_intercept(y, mu0, size) -> float:
    """sup over change points and kappa >= 0 of the summed log-likelihood ratio."""
    # suffix sums: candidate change point u covers rows u..end
    if np.all(np.isinf(size)):
        Y = np.cumsum(y[::-1])[::-1]
        M = np.cumsum(mu0[::-1])[::-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(Y > M, Y * np.log(Y / M) - (Y - M), 0.0)
        return float(max(0.0, val.max()))
    n = y.size

    def total(kappa):
        mu1 = mu0[None, :] * np.exp(kappa[:, None])
        inc = lr_increment(y[None, :], mu0[None, :], mu1, size[None, :])
        mask = np.arange(n)[None, :] >= np.arange(n)[:, None]
        return np.sum(np.where(mask, inc, 0.0), axis=1)

    _, best = _golden_max(total, 0.0, KAPPA_MAX, n)
    return float(max(0.0, best.max()))


def _glr_epi(y, ylag, mu0, size) -> float:
    n = y.size
    mask = np.arange(n)[None, :] >= np.arange(n)[:, None]

    def total(lam):
        mu1 = mu0[None, :] + lam[:, None] * ylag[None, :]
        inc = lr_increment(y[None, :], mu0[None, :], mu1, size[None, :])
        return np.sum(np.where(mask, inc, 0.0), axis=1)

    _, best = _golden_max(total, 1e-10, LAMBDA_MAX, n)
    return float(max(0.0, best.max()))


def smallest_alarming_count(statistic_at: Callable[[int], float], threshold: float, cap: int = CASES_CAP, strict: bool = False) -> tuple[int, bool]:
    """Smallest ``y >= 0`` whose statistic reaches ``threshold``.

    ``statistic_at`` must be nondecreasing in ``y``.  Returns
    ``(y, saturated)``; when even ``cap`` does not alarm, ``(cap, True)``.
    """

    def alarms(v):
        s = statistic_at(v)
        return s > threshold if strict else s >= threshold

    if alarms(0):
        return 0, False
    lo, hi = 0, 1
    while not alarms(hi):
        lo = hi
        hi *= 2
        if hi >= cap:
            if alarms(cap):
                hi = cap
                break
            return cap, True
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if alarms(mid):
            hi = mid
        else:
            lo = mid
    return hi, False


def cases_needed(mu0: float, mu1: float, c_ARL: float, current_C: float = 0.0, size: float = np.inf) -> int:
    """Smallest count at the next timepoint that lifts a fixed-shift CUSUM to ``c_ARL``."""
    y, _ = smallest_alarming_count(
        lambda v: max(0.0, current_C + float(lr_increment(v, mu0, mu1, size))), c_ARL
    )
    return y


def glr_run(sts: StsFrame, control: GlrControl | dict, unit=0) -> SurveillanceResult:
    """Run the count CUSUM / GLR detector on one unit of ``sts``.

    The result's ``upperbound`` holds the score: the statistic for
    ``ret="value"`` or the number of cases needed for an alarm for
    ``ret="cases"``.
    """
    c = control if isinstance(control, GlrControl) else GlrControl.from_dict(control)
    rng = MonitoringRange.of(c.range, sts.n)
    j = sts.unit_index(unit)
    y = sts.observed[:, j].astype(float)
    idx = rng.array
    T = idx.size
    if c.change == "epi" and idx[0] == 0:
        raise ValueError("epi change needs a count before the first monitored timepoint")

    refit = False
    if isinstance(c.mu0, dict):
        refit = bool(c.mu0["refit"])
        phase1 = np.arange(idx[0])
        mu0, size, _ = fit_incontrol(sts, phase1, c.mu0["S"], c.mu0["trend"], j, idx, c.family)
    else:
        mu0 = np.asarray(c.mu0, dtype=float)
        if mu0.shape != (T,):
            raise ValueError("explicit mu0 must have one value per monitored timepoint")
        if c.family == "poisson" or c.size is None:
            size = np.full(T, np.inf)
        else:
            size = np.broadcast_to(np.asarray(c.size, dtype=float), (T,)).copy()
    if c.family == "poisson":
        size = np.full(T, np.inf)

    M = c.M if c.M is not None else (sts.freq if c.glr else None)
    ylag = y[idx - 1] if c.change == "epi" else None

    def shifted_mean(k):
        if c.change == "intercept":
            return mu0[k] * np.exp(c.theta)
        return mu0[k] + c.theta * ylag[k]

    def glr_stat(k, run_start, yk):
        lo = run_start if M is None else max(run_start, k - M + 1)
        yy = y[idx[lo : k + 1]].copy()
        yy[-1] = yk
        if c.change == "intercept":
            return _glr_intercept(yy, mu0[lo : k + 1], size[lo : k + 1])
        return _glr_epi(yy, ylag[lo : k + 1], mu0[lo : k + 1], size[lo : k + 1])

    stat = np.zeros(T)
    score = np.zeros(T)
    alarm = np.zeros(T, dtype=bool)
    trace = CusumTrace(stat)
    C = c.restart_value
    run_start = 0
    for k in range(T):
        t = idx[k]
        if c.glr:
            s = glr_stat(k, run_start, y[t])
        else:
            s = max(0.0, C + float(lr_increment(y[t], mu0[k], shifted_mean(k), size[k])))
        stat[k] = s
        if c.ret == "cases":
            if c.glr:
                f = lambda v, k=k, r=run_start: glr_stat(k, r, float(v))
            else:
                f = lambda v, k=k, C=C: max(0.0, C + float(lr_increment(v, mu0[k], shifted_mean(k), size[k])))
            score[k], sat = smallest_alarming_count(f, c.c_ARL)
            if sat:
                trace.saturated.append(int(t))
        else:
            score[k] = s
        if s >= c.c_ARL:
            alarm[k] = True
            trace.alarms.append(int(t))
            trace.resets.append(int(t))
            C = c.restart_value
            run_start = k + 1
            if refit and k + 1 < T:
                rest = idx[k + 1 :]
                mu_new, size_new, _ = fit_incontrol(sts, np.arange(t), c.mu0["S"], c.mu0["trend"], j, rest, c.family)
                mu0 = mu0.copy()
                size = size.copy()
                mu0[k + 1 :] = mu_new
                size[k + 1 :] = np.inf if c.family == "poisson" else size_new
                trace.refits.append(int(t))
        else:
            C = s
    out = subset(sts, rows=idx, units=[j]).with_results(alarm, score)
    ctrl = {"algorithm": "glrpois" if c.family == "poisson" else "glrnb", **asdict(c)}
    ctrl["range"] = idx.tolist()
    ctrl["M"] = M
    if not isinstance(ctrl["mu0"], dict):
        ctrl["mu0"] = np.asarray(ctrl["mu0"]).tolist()
    return SurveillanceResult(out, score, ctrl, trace=trace)
