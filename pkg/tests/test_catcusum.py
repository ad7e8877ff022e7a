import numpy as np
import pytest
from scipy import stats

from oracles import compositions_list, cusum_max_form

from stsdetect.catcusum import (
    CatControl,
    cat_logpmf,
    cat_logpmf_rows,
    categorical_cusum,
    shift_logit,
    shift_multinomial_intercept,
)
from stsdetect.regress import fit_dirichlet_multinomial, fit_multinomial_logit, predict_categorical
from stsdetect.sts import new_sts


def test_shift_logit_anchors():
    assert abs(shift_logit(0.5, 2) - 2 / 3) < 1e-12
    assert abs(shift_logit(0.25, 3) - 0.5) < 1e-12
    p = np.linspace(0.01, 0.99, 50)
    assert np.max(np.abs(shift_logit(p, 1.0) - p)) < 1e-12


@pytest.mark.parametrize("pi0,R", [(0.0, 2), (1.0, 2), (0.3, 0), (0.3, -1)])
def test_shift_logit_rejects(pi0, R):
    with pytest.raises(ValueError):
        shift_logit(pi0, R)


def binomial_frame(y1, n):
    y1 = np.asarray(y1)
    n = np.broadcast_to(n, y1.shape)
    return new_sts(np.column_stack([y1, n - y1]), population=n, multinomial_mode=True)


def test_identical_models_never_alarm():
    rng = np.random.default_rng(0)
    s = binomial_frame(rng.binomial(50, 0.3, 40), 50)
    res = categorical_cusum(s, CatControl(range(40), 0.5, [[0.3]], [[0.3]], family="binomial"))
    assert np.all(res.trace.statistic == 0) and not res.alarm.any()


def binom_inc(y, n, p0, p1):
    return stats.binom.logpmf(y, n, p1) - stats.binom.logpmf(y, n, p0)


def test_recursion_equals_max_form_without_alarms():
    rng = np.random.default_rng(1)
    for _ in range(50):
        T = int(rng.integers(1, 51))
        n = rng.integers(5, 40, T)
        y = rng.binomial(n, 0.3)
        p0 = rng.uniform(0.2, 0.4, T)
        p1 = shift_logit(p0, 2.0)
        s = binomial_frame(y, n)
        res = categorical_cusum(s, CatControl(range(T), 1e9, p0[None, :], p1[None, :], family="binomial"))
        assert np.allclose(res.trace.statistic, cusum_max_form(binom_inc(y, n, p0, p1)), atol=1e-12)


def test_reset_after_alarm():
    y = np.array([10, 30, 30, 5, 30, 30, 30])
    s = binomial_frame(y, 50)
    ctrl = CatControl(range(7), 2.0, [[0.2]], [[shift_logit(0.2, 3)]], family="binomial")
    res = categorical_cusum(s, ctrl)
    inc = binom_inc(y, 50, 0.2, shift_logit(0.2, 3))
    C = 0.0
    for k in range(7):
        C = max(0.0, C + inc[k])
        assert np.isclose(res.trace.statistic[k], C)
        assert res.alarm[k] == (C > 2.0)
        if C > 2.0:
            C = 0.0
    assert res.trace.resets == res.trace.alarms and res.trace.alarms


def test_swap_categories_symmetry():
    rng = np.random.default_rng(2)
    n = rng.integers(10, 60, 60)
    y = rng.binomial(n, 0.35)
    p0 = np.full(60, 0.3)
    p1 = shift_logit(p0, 2.5)
    a = categorical_cusum(binomial_frame(y, n), CatControl(range(60), 1.5, p0[None], p1[None], family="binomial"))
    b = categorical_cusum(binomial_frame(n - y, n), CatControl(range(60), 1.5, 1 - p0[None], 1 - p1[None], family="binomial"))
    assert a.trace.alarms == b.trace.alarms
    assert np.allclose(a.trace.statistic, b.trace.statistic)


CASES = [
    ("binomial", np.array([0.3, 0.7]), np.array([0.45, 0.55]), 0.0),
    ("betabinomial", np.array([0.3, 0.7]), np.array([0.45, 0.55]), 0.2),
    ("multinomial", np.array([0.2, 0.5, 0.3]), np.array([0.4, 0.3, 0.3]), 0.0),
    ("dirichletmultinomial", np.array([2.0, 5.0, 3.0]), np.array([4.0, 3.0, 3.0]), 0.0),
]


@pytest.mark.parametrize("family,p0,p1,sigma", CASES)
@pytest.mark.parametrize("n", [1, 8, 30])
def test_expected_increment_is_negative(family, p0, p1, sigma, n):
    Y = compositions_list(n, p0.size)
    lp0 = cat_logpmf_rows(Y, n, p0, family, sigma)
    lp1 = cat_logpmf_rows(Y, n, p1, family, sigma)
    assert abs(np.exp(lp0).sum() - 1) < 1e-10
    assert np.sum(np.exp(lp0) * (lp1 - lp0)) < 0


@pytest.mark.parametrize("family,p0,p1,sigma", CASES)
def test_row_logpmf_matches_scalar(family, p0, p1, sigma):
    Y = compositions_list(6, p0.size)
    rows = cat_logpmf_rows(Y, 6, p0, family, sigma)
    single = [cat_logpmf(y, 6, p0, family, sigma) for y in Y]
    assert np.allclose(rows, single)


@pytest.mark.parametrize("family,sigma", [("binomial", 0.0), ("betabinomial", 0.15)])
def test_ret_cases_sandwich(family, sigma):
    rng = np.random.default_rng(3)
    n = rng.integers(20, 80, 40)
    y = rng.binomial(n, 0.25)
    p0 = np.full((1, 40), 0.2)
    p1 = shift_logit(p0, 2.0)
    s = binomial_frame(y, n)
    val = categorical_cusum(s, CatControl(range(40), 2.0, p0, p1, family=family, sigma=sigma))
    res = categorical_cusum(s, CatControl(range(40), 2.0, p0, p1, family=family, sigma=sigma, ret="cases"))
    assert res.trace.alarms == val.trace.alarms
    C = 0.0
    for k in range(40):
        f = lambda v: C + cat_logpmf([v, n[k] - v], n[k], p1[:, k], family, sigma) - cat_logpmf([v, n[k] - v], n[k], p0[:, k], family, sigma)
        ystar = res.score[k]
        if not np.isnan(ystar):
            ystar = int(ystar)
            assert f(ystar) > 2.0
            if ystar > 0:
                assert f(ystar - 1) <= 2.0
        else:
            assert f(n[k]) <= 2.0
        C = 0.0 if val.alarm[k] else val.trace.statistic[k]


def multinomial_data(seed=4, n=120, k=4):
    rng = np.random.default_rng(seed)
    tot = rng.integers(30, 80, n)
    Y = np.array([rng.multinomial(t, [0.4, 0.3, 0.2, 0.1][:k]) for t in tot])
    return Y, np.ones((n, 1))


def test_shift_multinomial_intercept_identity_and_odds():
    Y, X = multinomial_data()
    fit = fit_multinomial_logit(Y, X)
    pi0 = predict_categorical(fit, X[:5]).T
    assert np.allclose(shift_multinomial_intercept(fit, 0.0, X[:5]), pi0)
    pi1 = shift_multinomial_intercept(fit, np.log(7), X[:5])
    odds0 = pi0[1:] / pi0[0]
    odds1 = pi1[1:] / pi1[0]
    assert np.allclose(odds1 / odds0, 7.0)
    assert np.allclose(pi1.sum(axis=0), 1.0)
    # the original fit is untouched
    assert np.allclose(predict_categorical(fit, X[:5]).T, pi0)


def test_shift_dirichlet_multinomial_intercept():
    Y, X = multinomial_data(k=4)
    fit = fit_dirichlet_multinomial(Y, X)
    alpha0 = predict_categorical(fit, X[:3]).T
    delta = 2.0
    shift = np.concatenate([[-delta], np.full(3, delta / 4)])
    alpha1 = shift_multinomial_intercept(fit, shift, X[:3])
    assert np.allclose(alpha1 / alpha0, np.exp(shift)[:, None])


def test_multinomial_cusum_detects_composition_change():
    rng = np.random.default_rng(5)
    p0 = np.array([0.4, 0.3, 0.2, 0.1])
    p_out = np.array([0.1, 0.3, 0.3, 0.3])
    tot = rng.integers(40, 60, 60)
    Y = np.array([rng.multinomial(t, p0 if i < 40 else p_out) for i, t in enumerate(tot)])
    s = new_sts(Y, population=tot, multinomial_mode=True)
    p1 = p0 * np.array([1, 7, 7, 7])
    p1 /= p1.sum()
    res = categorical_cusum(s, CatControl(range(60), 2.0, p0[:, None], p1[:, None], family="multinomial"))
    assert res.trace.alarms and min(res.trace.alarms) >= 40
    assert np.all(res.trace.statistic >= 0)


def test_validation_errors():
    s = binomial_frame([1, 2], 5)
    with pytest.raises(ValueError):
        CatControl(range(2), 0.0, [[0.2]], [[0.3]], family="binomial")
    with pytest.raises(ValueError):
        CatControl(range(2), 1.0, [[0.2]], [[0.3]], family="poisson")
    with pytest.raises(ValueError, match="cases"):
        CatControl(range(2), 1.0, [[0.5], [0.5]], [[0.4], [0.6]], family="multinomial", ret="cases")
    with pytest.raises(ValueError):
        CatControl(range(2), 1.0, [[0.5], [0.6]], [[0.4], [0.6]], family="multinomial")
    with pytest.raises(ValueError, match="multinomial mode"):
        categorical_cusum(new_sts([1, 2]), CatControl(range(2), 1.0, [[0.2]], [[0.3]], family="binomial"))
    with pytest.raises(ValueError, match="categories"):
        categorical_cusum(s, CatControl(range(2), 1.0, [[0.2], [0.3], [0.5]], [[0.3], [0.3], [0.4]]))
