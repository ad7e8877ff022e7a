"""Flexible Farrington detector.

For each monitored timepoint ``t0`` a quasi-Poisson GLM is fitted to
reference values from the ``b`` previous years, optionally with a
``noPeriods``-level seasonal factor covering all past data, a linear
trend and a log-population offset.  Past outbreaks are down-weighted via
Anscombe residuals and the upperbound is derived from the predicted mean
at ``t0`` by one of three methods:

``delta``
    normal approximation of the prediction error (optionally on the
    two-thirds power scale)
``nbPlugin``
    negative binomial quantile with plug-in mean and dispersion
``muan``
    negative binomial quantile at the upper confidence limit of the mean
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from .dist import nb_quantile, normal_quantile, pois_quantile
from .regress import DesignMatrix, GlmFit, fit_glm_poisson, predict_glm, reweight_outbreaks
from .sts import MonitoringRange, StsFrame, SurveillanceResult, subset

log = logging.getLogger(__name__)

THRESHOLD_METHODS = ("delta", "nbPlugin", "muan")


@dataclass
class FarringtonControl:
    """Configuration; field names follow the established control-list vocabulary."""

    range: tuple[int, ...] = ()
    b: int = 3
    w: int = 3
    noPeriods: int = 1
    weightsThreshold: float = 2.58
    pastWeeksNotIncluded: int = 26
    pThresholdTrend: float = 0.05
    thresholdMethod: str = "delta"
    alpha: float = 0.05
    powertrans: str | None = None
    populationOffset: bool = False
    limit54: tuple[int, int] = (5, 4)

    def __post_init__(self):
        self.range = tuple(int(i) for i in self.range)
        if self.b < 1 or self.w < 0 or self.noPeriods < 1:
            raise ValueError("need b >= 1, w >= 0 and noPeriods >= 1")
        if self.pastWeeksNotIncluded < 0:
            raise ValueError("pastWeeksNotIncluded must be nonnegative")
        if not 0 < self.pThresholdTrend <= 1:
            raise ValueError("pThresholdTrend must lie in (0, 1]")
        if self.thresholdMethod not in THRESHOLD_METHODS:
            raise ValueError(f"thresholdMethod must be one of {THRESHOLD_METHODS}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.powertrans is None:
            self.powertrans = "twothirds" if self.thresholdMethod == "delta" else "none"
        if self.powertrans not in ("none", "twothirds"):
            raise ValueError("powertrans must be 'none' or 'twothirds'")
        self.limit54 = (int(self.limit54[0]), int(self.limit54[1]))

    @classmethod
    def from_dict(cls, d: dict) -> "FarringtonControl":
        d = dict(d)
        if "populationBool" in d:
            d["populationOffset"] = d.pop("populationBool")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown farringtonFlexible parameters: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ReferenceDesign:
    """Reference timepoints for one ``t0`` and their seasonal factor levels.

    ``windows`` lists the anchor windows oldest first; the last one is the
    current-year window ``t0-w .. t0`` (it contains ``t0`` itself, which is
    never part of ``indices``).
    """

    t0: int
    indices: np.ndarray
    period_level: np.ndarray
    windows: list[np.ndarray] = field(default_factory=list)

    @property
    def trend_column(self) -> np.ndarray:
        return (self.indices - self.t0).astype(float)


def build_reference_design(t0: int, b: int, w: int, noPeriods: int, freq: int, n: int | None = None) -> ReferenceDesign:
    """Reference indices (0-based) for monitoring ``t0``."""
    first = t0 - b * freq - w
    if first < 0:
        raise ValueError(f"t0={t0} needs {b * freq + w} earlier timepoints, has {t0}")
    if n is not None and t0 >= n:
        raise IndexError("t0 outside the series")
    centers = [t0 - j * freq for j in range(b, 0, -1)]
    windows = [np.arange(c - w, c + w + 1) for c in centers]
    windows.append(np.arange(t0 - w, t0 + 1))
    if noPeriods == 1:
        idx = np.concatenate(windows[:-1])
        return ReferenceDesign(t0, idx, np.ones(idx.size, dtype=int), windows)

    level = {}
    for win in windows:
        for i in win:
            level[int(i)] = 1
    for j in range(b):
        arc = np.arange(windows[j][-1] + 1, windows[j + 1][0])
        for lev, seg in enumerate(np.array_split(arc, noPeriods - 1), start=2):
            for i in seg:
                level[int(i)] = lev
    idx = np.arange(first, t0)
    return ReferenceDesign(t0, idx, np.array([level[int(i)] for i in idx]), windows)


def trend_decision(fit_with_trend: GlmFit, years_available: int, pThresholdTrend: float, mu_hat_t0: float, max_reference_count: float, label: str = "trend") -> bool:
    """Keep the trend only when significant, with more than three years of
    reference data and without overextrapolation."""
    if years_available <= 3:
        return False
    if mu_hat_t0 > max_reference_count:
        return False
    j = fit_with_trend.labels.index(label)
    if fit_with_trend.aliased[j]:
        return False
    se = np.sqrt(fit_with_trend.cov[j, j])
    if se == 0:
        return False
    pval = 2.0 * ndtr(-abs(fit_with_trend.coefficients[j]) / se)
    return bool(pval <= pThresholdTrend)


def _z(alpha: float) -> float:
    return float(normal_quantile(1.0 - alpha))


def threshold_delta(mu_hat: float, var_eta: float, phi: float, alpha: float, powertrans: str = "none") -> float:
    """Normal-approximation upperbound; ``var_eta`` is the variance of the
    linear predictor, so ``Var(mu_hat) = mu_hat**2 * var_eta``."""
    z = max(_z(alpha), 0.0)
    if powertrans == "none":
        return mu_hat + z * np.sqrt(phi * mu_hat + mu_hat**2 * var_eta)
    if powertrans == "twothirds":
        sd = (2.0 / 3.0) * np.sqrt(phi * mu_hat ** (1 / 3) + mu_hat ** (4 / 3) * var_eta)
        return (mu_hat ** (2 / 3) + z * sd) ** 1.5
    raise ValueError(f"unknown powertrans {powertrans!r}")


def _nb_or_pois_quantile(p: float, mu: float, phi: float) -> int:
    if phi > 1:
        return nb_quantile(p, mu, mu / (phi - 1.0))
    return pois_quantile(p, mu)


def threshold_nbplugin(mu_hat: float, phi: float, alpha: float) -> float:
    return float(_nb_or_pois_quantile(1.0 - alpha, mu_hat, phi))


def threshold_muan(eta_hat: float, se_eta: float, phi: float, alpha: float) -> float:
    if se_eta < 0:
        raise ValueError("se_eta must be nonnegative")
    mu_star = float(np.exp(eta_hat + _z(alpha) * se_eta))
    return float(_nb_or_pois_quantile(1.0 - alpha, mu_star, phi))


def _design(ref: ReferenceDesign, idx: np.ndarray, levels: np.ndarray, noPeriods: int, trend: bool):
    cols = [np.ones(idx.size)]
    labels = ["(Intercept)"]
    x0 = [1.0]
    if trend:
        cols.append((idx - ref.t0).astype(float))
        labels.append("trend")
        x0.append(0.0)
    for lev in range(2, noPeriods + 1):
        ind = (levels == lev).astype(float)
        if ind.any():
            cols.append(ind)
            labels.append(f"period{lev}")
            x0.append(0.0)
    return np.column_stack(cols), tuple(labels), np.array(x0)


def _fit(y, X, labels, offset, weightsThreshold):
    d = DesignMatrix(X, labels, offset)
    fit = fit_glm_poisson(y, d, quasi=True)
    if np.isfinite(weightsThreshold):
        fit = reweight_outbreaks(y, d, fit, weightsThreshold)
    return fit


def _one_timepoint(y, pop, t0, freq, c: FarringtonControl):
    """Return ``(upperbound, mu_hat, note)`` for one monitored timepoint."""
    cases, periods = c.limit54
    recent = y[max(0, t0 - periods + 1) : t0 + 1].sum()
    if recent <= cases:
        return np.nan, np.nan, "limit54"

    ref = build_reference_design(t0, c.b, c.w, c.noPeriods, freq)
    keep = ref.indices < t0 - c.pastWeeksNotIncluded
    idx, levels = ref.indices[keep], ref.period_level[keep]
    if idx.size == 0:
        raise ValueError("no reference values left after pastWeeksNotIncluded")
    yref = y[idx]
    offset = np.log(pop[idx]) if c.populationOffset else np.zeros(idx.size)
    off0 = float(np.log(pop[t0])) if c.populationOffset else 0.0

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        X_t, lab_t, x0_t = _design(ref, idx, levels, c.noPeriods, trend=True)
        fit_t = _fit(yref, X_t, lab_t, offset, c.weightsThreshold)
        mu_t, _ = predict_glm(fit_t, x0_t, off0)
        if trend_decision(fit_t, c.b, c.pThresholdTrend, mu_t, yref.max()):
            fit, x0 = fit_t, x0_t
        else:
            X_n, lab_n, x0 = _design(ref, idx, levels, c.noPeriods, trend=False)
            fit = _fit(yref, X_n, lab_n, offset, c.weightsThreshold)

    mu_hat, var_eta = predict_glm(fit, x0, off0)
    phi = fit.dispersion
    if c.thresholdMethod == "delta":
        ub = threshold_delta(mu_hat, var_eta, phi, c.alpha, c.powertrans)
    elif c.thresholdMethod == "nbPlugin":
        ub = threshold_nbplugin(mu_hat, phi, c.alpha)
    else:
        ub = threshold_muan(np.log(mu_hat), np.sqrt(var_eta), phi, c.alpha)
    return float(ub), mu_hat, None


def farrington_flexible(sts: StsFrame, control: FarringtonControl | dict, unit=0) -> SurveillanceResult:
    """Run the flexible Farrington detector on one unit of ``sts``."""
    c = control if isinstance(control, FarringtonControl) else FarringtonControl.from_dict(control)
    rng = MonitoringRange.of(c.range, sts.n)
    need = c.b * sts.freq + c.w
    if rng.indices[0] < need:
        raise ValueError(f"first monitored timepoint needs {need} earlier timepoints (b={c.b}, w={c.w}, freq={sts.freq})")
    j = sts.unit_index(unit)
    y = sts.observed[:, j].astype(float)
    pop = sts.population[:, j]
    idx = rng.array
    ub = np.full(idx.size, np.nan)
    score = np.full(idx.size, np.nan)
    notes: dict[int, str] = {}
    for k, t0 in enumerate(idx):
        try:
            u, mu_hat, note = _one_timepoint(y, pop, int(t0), sts.freq, c)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("farringtonFlexible: timepoint %d not computed: %s", t0, exc)
            notes[int(t0)] = f"not computed: {exc}"
            continue
        if note:
            notes[int(t0)] = note
            continue
        ub[k] = u
        score[k] = (y[t0] - mu_hat) / (u - mu_hat) if u != mu_hat else 0.0
    alarm = np.where(np.isnan(ub), False, y[idx] > np.nan_to_num(ub, nan=np.inf))
    out = subset(sts, rows=idx, units=[j]).with_results(alarm, ub)
    ctrl = {"algorithm": "farringtonFlexible", **asdict(c)}
    ctrl["range"] = idx.tolist()
    return SurveillanceResult(out, score, ctrl, notes)
