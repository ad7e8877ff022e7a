"""EARS C1: one-timepoint detection against the previous seven counts."""

from __future__ import annotations

import numpy as np

from .dist import normal_quantile
from .sts import MonitoringRange, StsFrame, SurveillanceResult, subset

BASELINE = 7


def c1_bound(baseline, alpha: float) -> tuple[float, float, float]:
    """Return ``(mean, sd, upperbound)`` for one baseline window."""
    b = np.asarray(baseline, dtype=float)
    ybar = b.mean()
    s = b.std(ddof=1)
    return ybar, s, ybar + normal_quantile(1 - alpha) * s


def ears_c1(sts: StsFrame, range, alpha: float = 0.001, unit=0) -> SurveillanceResult:
    """Monitor one unit of ``sts`` over ``range`` with the C1 rule.

    The upperbound is ``mean + z_{1-alpha} * sd`` of the seven preceding
    counts and an alarm is raised when the count exceeds it.  When the
    baseline is constant the score is reported as 0.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    rng = MonitoringRange.of(range, sts.n)
    if rng.indices[0] < BASELINE:
        raise ValueError(f"EARS C1 needs {BASELINE} timepoints before the first monitored one")
    j = sts.unit_index(unit)
    y = sts.observed[:, j].astype(float)
    idx = rng.array
    ub = np.empty(idx.size)
    score = np.empty(idx.size)
    for k, t in enumerate(idx):
        ybar, s, u = c1_bound(y[t - BASELINE : t], alpha)
        ub[k] = u
        score[k] = (y[t] - ybar) / s if s > 0 else 0.0
    alarm = y[idx] > ub
    out = subset(sts, rows=idx, units=[j]).with_results(alarm, ub)
    return SurveillanceResult(out, score, {"algorithm": "earsC1", "range": idx.tolist(), "alpha": alpha})
