import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from stsdetect.farrington import (
    FarringtonControl,
    build_reference_design,
    farrington_flexible,
    threshold_delta,
    threshold_muan,
    threshold_nbplugin,
    trend_decision,
)
from stsdetect.regress import fit_glm_poisson
from stsdetect.sts import new_sts

T0 = 300


def test_original_window_count():
    ref = build_reference_design(T0, b=4, w=3, noPeriods=1, freq=52)
    assert ref.indices.size == 28
    for j in range(1, 5):
        c = T0 - 52 * j
        assert set(range(c - 3, c + 4)) <= set(ref.indices.tolist())
    assert np.all(ref.period_level == 1)


@pytest.mark.parametrize("noPeriods", [2, 3])
def test_window_sizes_for_two_years(noPeriods):
    w, b, freq = 3, 2, 52
    ref = build_reference_design(T0, b, w, noPeriods, freq)
    assert [len(x) for x in ref.windows] == [2 * w + 1, 2 * w + 1, w + 1]
    # all data from the oldest window to t0 - 1 is used
    assert ref.indices.tolist() == list(range(T0 - b * freq - w, T0))
    assert set(ref.period_level.tolist()) == set(range(1, noPeriods + 1))
    # every arc between windows is split into noPeriods - 1 near-equal periods
    arc_len = freq - (2 * w + 1)
    for lev in range(2, noPeriods + 1):
        n_lev = np.sum(ref.period_level == lev)
        assert b * (arc_len // (noPeriods - 1)) <= n_lev <= b * (arc_len // (noPeriods - 1) + 1)
    # the current-year window (minus t0 itself) is level 1
    assert np.all(ref.period_level[ref.indices >= T0 - w] == 1)


def test_reference_design_needs_history():
    with pytest.raises(ValueError):
        build_reference_design(100, b=2, w=3, noPeriods=1, freq=52)


def test_nbplugin_poisson_anchor():
    assert threshold_nbplugin(5.0, 1.0, 0.025) == 10
    assert threshold_nbplugin(5.0, 1.0, 0.025) == stats.poisson.ppf(0.975, 5.0)


def test_nbplugin_negative_binomial():
    mu, phi = 6.0, 2.5
    nu = mu / (phi - 1)
    assert threshold_nbplugin(mu, phi, 0.05) == stats.nbinom.ppf(0.95, nu, nu / (nu + mu))


def test_muan_dominates_nbplugin():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        mu = rng.uniform(0.1, 50)
        se = rng.uniform(0, 1)
        phi = rng.uniform(1, 5)
        assert threshold_muan(np.log(mu), se, phi, 0.05) >= threshold_nbplugin(mu, phi, 0.05)


def test_delta_formula():
    mu, v, phi, a = 5.0, 0.04, 1.5, 0.05
    z = stats.norm.ppf(0.95)
    assert np.isclose(threshold_delta(mu, v, phi, a), mu + z * np.sqrt(phi * mu + mu**2 * v))
    sd = 2 / 3 * np.sqrt(phi * mu ** (1 / 3) + mu ** (4 / 3) * v)
    assert np.isclose(threshold_delta(mu, v, phi, a, "twothirds"), (mu ** (2 / 3) + z * sd) ** 1.5)


def test_delta_floors_z_at_zero():
    assert threshold_delta(4.0, 0.1, 2.0, 0.7) == 4.0


@given(
    st.floats(0.1, 100),
    st.floats(0, 2),
    st.floats(1, 10),
    st.floats(0, 2),
    st.floats(0, 5),
    st.sampled_from(["none", "twothirds"]),
)
def test_delta_monotone(mu, v, phi, dv, dphi, pt):
    base = threshold_delta(mu, v, phi, 0.05, pt)
    assert threshold_delta(mu, v + dv, phi, 0.05, pt) >= base - 1e-12
    assert threshold_delta(mu, v, phi + dphi, 0.05, pt) >= base - 1e-12


def _trend_fit(slope, n=40, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(-n, 0, dtype=float)
    X = np.column_stack([np.ones(n), t])
    y = rng.poisson(np.exp(2 + slope * t)).astype(float)
    fit = fit_glm_poisson(y, X)
    fit.design.labels = ("(Intercept)", "trend")
    return fit, y


def test_trend_decision_rules():
    fit, y = _trend_fit(0.03)
    mu0 = float(np.exp(fit.coefficients[0]))
    assert trend_decision(fit, 4, 0.05, mu0, y.max())
    assert not trend_decision(fit, 3, 0.05, mu0, y.max())
    assert not trend_decision(fit, 4, 0.05, y.max() + 1, y.max())
    flat, yf = _trend_fit(0.0, seed=3)
    assert not trend_decision(flat, 4, 1e-6, 1.0, yf.max())
    # pThresholdTrend = 1 always keeps a trend
    assert trend_decision(flat, 4, 1.0, 1.0, yf.max())


def seasonal_series(years=6, seed=0, outbreak=None):
    rng = np.random.default_rng(seed)
    n = years * 52
    t = np.arange(n)
    mu = np.exp(1.8 + 0.8 * np.sin(2 * np.pi * t / 52))
    y = rng.negative_binomial(3, 3 / (3 + mu))
    if outbreak is not None:
        y[outbreak] += 25
    return new_sts(y, freq=52, start=(2005, 1))


def test_run_detects_injected_outbreak():
    s = seasonal_series(outbreak=slice(290, 293))
    ctrl = FarringtonControl(range=range(260, 312), b=4, w=3, noPeriods=10, weightsThreshold=2.58,
                             pastWeeksNotIncluded=26, pThresholdTrend=1, thresholdMethod="nbPlugin")
    res = farrington_flexible(s, ctrl)
    assert res.alarm[30:33].any()
    assert res.control["algorithm"] == "farringtonFlexible"
    assert res.sts.n == 52
    ok = ~np.isnan(res.upperbound)
    assert np.all(res.alarm[ok] == (res.sts.observed[ok, 0] > res.upperbound[ok]))


def test_limit54_suppresses():
    y = np.zeros(260, dtype=int)
    y[::7] = 1
    s = new_sts(y)
    res = farrington_flexible(s, {"range": [250, 255], "b": 3, "w": 2})
    assert np.all(np.isnan(res.upperbound))
    assert not res.alarm.any()
    assert set(res.notes.values()) == {"limit54"}


def test_past_weeks_not_included_changes_reference():
    s = seasonal_series(seed=2, outbreak=slice(280, 290))
    common = dict(range=[300], b=4, w=3, noPeriods=10, weightsThreshold=np.inf, pThresholdTrend=1,
                  thresholdMethod="nbPlugin", limit54=(0, 4))
    near = farrington_flexible(s, FarringtonControl(pastWeeksNotIncluded=0, **common))
    far = farrington_flexible(s, FarringtonControl(pastWeeksNotIncluded=26, **common))
    # the recent outbreak inflates the threshold only when recent weeks are used
    assert near.upperbound[0] > far.upperbound[0]


def test_population_offset_scales_threshold():
    s = seasonal_series(seed=4)
    pop = np.full((s.n, 1), 1000.0)
    s2 = new_sts(s.observed, freq=52, population=pop)
    base = dict(range=[300], b=4, w=3, thresholdMethod="nbPlugin", limit54=(0, 4))
    a = farrington_flexible(s, base)
    b = farrington_flexible(s2, {**base, "populationOffset": True})
    assert np.isclose(a.upperbound[0], b.upperbound[0])


def test_control_validation():
    with pytest.raises(ValueError):
        FarringtonControl(thresholdMethod="bogus")
    with pytest.raises(ValueError, match="unknown"):
        FarringtonControl.from_dict({"bogus": 1})
    assert FarringtonControl.from_dict({"populationBool": True}).populationOffset
    assert FarringtonControl().powertrans == "twothirds"
    assert FarringtonControl(thresholdMethod="muan").powertrans == "none"


def test_insufficient_history_rejected():
    with pytest.raises(ValueError, match="earlier timepoints"):
        farrington_flexible(seasonal_series(years=3), {"range": [100], "b": 3})
