import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from oracles import cusum_max_form
from stsdetect.glr import (
    GlrControl,
    _glr_intercept,
    cases_needed,
    cusum_path,
    fit_incontrol,
    glr_run,
    harmonic_design,
    lr_increment,
    smallest_alarming_count,
)
from stsdetect.sts import new_sts


def test_lr_increment_poisson_anchors():
    assert np.isclose(lr_increment(0, 1.0, 2.0), -1.0)
    assert np.isclose(lr_increment(1, 1.0, 2.0), np.log(2) - 1)


@pytest.mark.parametrize("size", [0.5, 3.0, 40.0])
def test_lr_increment_nb_matches_scipy(size):
    y = np.arange(30)
    mu0, mu1 = 4.0, 7.5
    ref = stats.nbinom.logpmf(y, size, size / (size + mu1)) - stats.nbinom.logpmf(y, size, size / (size + mu0))
    assert np.allclose(lr_increment(y, mu0, mu1, size), ref)


@given(st.lists(st.integers(-64, 64), min_size=1, max_size=50))
def test_cusum_recursion_equals_max_form(ints):
    inc = np.array(ints) / 16.0
    assert np.array_equal(cusum_path(inc), cusum_max_form(inc))


def test_cases_needed_anchor():
    assert cases_needed(1.0, 2.0, 4.0) == 8


def test_cases_needed_sandwich_random_states():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        mu0 = rng.uniform(0.2, 30)
        kappa = rng.uniform(0.05, 1.5)
        c_arl = rng.uniform(0.5, 8)
        C = rng.uniform(0, c_arl)
        size = np.inf if rng.random() < 0.5 else rng.uniform(0.5, 20)
        y = cases_needed(mu0, mu0 * np.exp(kappa), c_arl, C, size)
        stat = lambda v: max(0.0, C + float(lr_increment(v, mu0, mu0 * np.exp(kappa), size)))
        assert stat(y) >= c_arl
        if y > 0:
            assert stat(y - 1) < c_arl


def test_smallest_alarming_count_saturates():
    y, sat = smallest_alarming_count(lambda v: 0.0, 1.0, cap=1000)
    assert sat and y == 1000
    y, sat = smallest_alarming_count(lambda v: v / 10, 3.0)
    assert (y, sat) == (30, False)
    assert smallest_alarming_count(lambda v: v / 10, 3.0, strict=True)[0] == 31


def test_glr_intercept_poisson_closed_form_vs_grid():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(1, 15))
        mu0 = rng.uniform(0.5, 5, n)
        y = rng.poisson(mu0 * rng.uniform(0.5, 3)).astype(float)
        kappas = np.linspace(0, 5, 20001)
        brute = 0.0
        for u in range(n):
            tot = (y[u:, None] * kappas - mu0[u:, None] * (np.exp(kappas) - 1)).sum(axis=0)
            brute = max(brute, tot.max())
        val = _glr_intercept(y, mu0, np.full(n, np.inf))
        assert val >= brute - 1e-9
        assert val <= brute + 1e-3


def test_glr_intercept_nb_approaches_poisson():
    y = np.array([2.0, 5.0, 9.0, 7.0])
    mu0 = np.array([2.0, 2.5, 3.0, 2.5])
    pois = _glr_intercept(y, mu0, np.full(4, np.inf))
    nb = _glr_intercept(y, mu0, np.full(4, 1e7))
    assert np.isclose(nb, pois, rtol=1e-4)


def seasonal(n=364, seed=0, shift_from=None, factor=2.0):
    rng = np.random.default_rng(seed)
    t = np.arange(1, n + 1)
    mu = np.exp(1.5 + 0.6 * np.cos(2 * np.pi * t / 52))
    if shift_from is not None:
        mu[shift_from:] *= factor
    return new_sts(rng.poisson(mu), freq=52), mu


def test_harmonic_design_columns():
    X, labels = harmonic_design(np.array([1, 13, 27]), 2, 52, trend=True)
    assert labels == ("(Intercept)", "t", "cos1", "sin1", "cos2", "sin2")
    assert X.shape == (3, 6)
    assert np.isclose(X[1, 2], np.cos(2 * np.pi * 13 / 52))


def test_fixed_shift_run_matches_manual_recursion():
    s, _ = seasonal(shift_from=320)
    ctrl = GlrControl(range=range(312, 364), c_ARL=4, theta=np.log(2), mu0={"S": 1}, family="poisson")
    res = glr_run(s, ctrl)
    mu0, size, _ = fit_incontrol(s, np.arange(312), S=1, predict_at=np.arange(312, 364), family="poisson")
    assert np.all(np.isinf(size))
    y = s.observed[312:, 0]
    C, manual = 0.0, []
    for k in range(52):
        C = max(0.0, C + float(lr_increment(y[k], mu0[k], 2 * mu0[k])))
        manual.append(C)
        if C >= 4:
            C = 0.0
    assert np.allclose(res.trace.statistic, manual)
    assert res.trace.alarms and res.trace.alarms == res.trace.resets
    assert np.array_equal(res.alarm, np.array(manual) >= 4)
    assert np.array_equal(res.upperbound, res.trace.statistic)


def test_fir_restart_value():
    s, _ = seasonal(shift_from=316, factor=3)
    res = glr_run(s, GlrControl(range=range(312, 364), c_ARL=3, theta=np.log(2), fir=True, family="poisson"))
    first = res.trace.alarms[0] - 312
    y = s.observed[312:, 0]
    mu0, _, _ = fit_incontrol(s, np.arange(312), predict_at=np.arange(312, 364), family="poisson")
    expect = max(0.0, 1.5 + float(lr_increment(y[first + 1], mu0[first + 1], 2 * mu0[first + 1])))
    assert np.isclose(res.trace.statistic[first + 1], expect)


def test_ret_cases_is_sandwiched():
    s, _ = seasonal(shift_from=330)
    ctrl = GlrControl(range=range(312, 364), c_ARL=4, theta=np.log(2), ret="cases", family="nb")
    res = glr_run(s, ctrl)
    mu0, size, _ = fit_incontrol(s, np.arange(312), predict_at=np.arange(312, 364))
    C = 0.0
    for k in range(52):
        ystar = res.score[k]
        f = lambda v: max(0.0, C + float(lr_increment(v, mu0[k], 2 * mu0[k], size[k])))
        assert f(ystar) >= 4
        if ystar > 0:
            assert f(ystar - 1) < 4
        assert res.alarm[k] == (s.observed[312 + k, 0] >= ystar)
        s_k = f(s.observed[312 + k, 0])
        C = 0.0 if s_k >= 4 else s_k


def test_glr_dominates_fixed_shift_cusum():
    s, _ = seasonal(seed=5, shift_from=340)
    rng = range(312, 364)
    big = 1e9
    glr = glr_run(s, GlrControl(range=rng, c_ARL=big, M=None, family="poisson"))
    for theta in (0.2, 0.7, 1.5):
        lr = glr_run(s, GlrControl(range=rng, c_ARL=big, theta=theta, family="poisson"))
        assert np.all(glr.trace.statistic >= lr.trace.statistic - 1e-9)


def test_glr_detects_shift_and_window_limits():
    s, _ = seasonal(seed=1, shift_from=330, factor=2.5)
    res = glr_run(s, {"range": list(range(312, 364)), "c.ARL": 5, "family": "poisson"})
    assert res.control["M"] == 52
    assert res.trace.alarms and res.trace.alarms[0] >= 330
    short = glr_run(s, {"range": list(range(312, 364)), "c.ARL": 1e9, "M": 1, "family": "poisson"})
    mu0, _, _ = fit_incontrol(s, np.arange(312), predict_at=np.arange(312, 364), family="poisson")
    y = s.observed[312:, 0]
    one_point = [_glr_intercept(y[k : k + 1].astype(float), mu0[k : k + 1], np.array([np.inf])) for k in range(52)]
    assert np.allclose(short.trace.statistic, one_point)


def test_epi_change_runs():
    s, _ = seasonal(seed=2, shift_from=330, factor=3)
    res = glr_run(s, GlrControl(range=range(312, 364), c_ARL=5, change="epi", family="nb"))
    assert res.trace.alarms
    cases = glr_run(s, GlrControl(range=range(312, 316), c_ARL=5, change="epi", ret="cases", family="nb"))
    assert np.all(cases.score >= 0)


def test_refit_after_alarm():
    s, _ = seasonal(seed=3, shift_from=320, factor=3)
    res = glr_run(s, GlrControl(range=range(312, 364), c_ARL=3, theta=np.log(2), mu0={"S": 1, "refit": True}))
    assert res.trace.refits == res.trace.alarms[: len(res.trace.refits)]
    assert res.trace.refits


def test_explicit_mu0():
    s = new_sts([3, 4, 10, 12, 2])
    res = glr_run(s, GlrControl(range=range(5), c_ARL=2, theta=np.log(2), mu0=[3.0] * 5, family="poisson"))
    expect = cusum_path(lr_increment(np.array([3, 4, 10, 12, 2]), 3.0, 6.0))
    assert np.isclose(res.trace.statistic[0], expect[0])
    assert res.trace.alarms[0] == 2


@pytest.mark.parametrize("bad", [dict(c_ARL=0), dict(change="x"), dict(theta=-1.0), dict(ret="y"), dict(family="zip")])
def test_control_validation(bad):
    with pytest.raises(ValueError):
        GlrControl(range=(1,), **bad)
