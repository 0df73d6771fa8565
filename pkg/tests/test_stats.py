import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bbmre.errors import ConfigError
from bbmre.stats import (StatResult, correlation, fit_through_origin, ks_2samp, ks_test, ks_test_normal,
                         linear_fit, mean_ci, pooled_autocorrelation, variance_jackknife)


def test_ks_self_test_mostly_passes():
    rng = np.random.default_rng(0)
    ps = [ks_test(rng.standard_normal(10_000)).pvalue for _ in range(100)]
    assert sum(p > 0.01 for p in ps) >= 95


def test_ks_detects_shift():
    rng = np.random.default_rng(1)
    assert ks_test_normal(rng.standard_normal(2000) + 0.2).pvalue < 1e-6
    assert ks_2samp(rng.standard_normal(2000), rng.standard_normal(2000) + 0.3).pvalue < 1e-6


def test_ks_needs_eight():
    with pytest.raises(ConfigError):
        ks_test([0.1] * 7)
    with pytest.raises(ConfigError):
        ks_test_normal(np.zeros(10), sd=0.0)


def test_linear_fit_exact_line():
    f = linear_fit([0, 1, 2, 3], [1, 3, 5, 7])
    assert f.slope == pytest.approx(2) and f.intercept == pytest.approx(1)
    assert f.r2 == 1.0 and f.slope_se == pytest.approx(0, abs=1e-12)


def test_linear_fit_errors():
    with pytest.raises(ConfigError):
        linear_fit([1], [2])
    with pytest.raises(ConfigError):
        linear_fit([1, 1, 1], [1, 2, 3])
    with pytest.raises(ConfigError):
        linear_fit([1, 2], [1, 2, 3])


def test_fit_through_origin():
    f = fit_through_origin([1, 2, 4], [2, 4, 8])
    assert f.slope == pytest.approx(2) and f.r2 == 1.0 and f.intercept == 0.0


def test_mean_ci_constant_sample():
    r = mean_ci([3.0] * 10)
    assert r.estimate == 3.0 and r.ci_low == r.ci_high == 3.0 and r.stderr == 0.0


def test_empty_input():
    with pytest.raises(ConfigError):
        mean_ci([])


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50))
def test_mean_ci_invariants(xs):
    r = mean_ci(xs)
    assert r.stderr >= 0 and r.ci_low <= r.estimate <= r.ci_high


def test_statresult_rejects_inconsistency():
    with pytest.raises(ValueError):
        StatResult(1.0, -1.0, 0.0, 2.0, 3)
    with pytest.raises(ValueError):
        StatResult(1.0, 0.1, 1.5, 2.0, 3)


def test_mean_ci_coverage():
    rng = np.random.default_rng(2)
    cover = 0
    for _ in range(400):
        r = mean_ci(rng.exponential(size=200))
        cover += r.ci_low <= 1.0 <= r.ci_high
    assert 0.92 <= cover / 400 <= 0.98


def test_variance_jackknife_matches_numpy_and_brute_force():
    rng = np.random.default_rng(3)
    a = rng.standard_normal(40)
    r = variance_jackknife(a, scale=0.5)
    assert r.estimate == pytest.approx(0.5 * np.var(a, ddof=1), rel=1e-12)
    loo = np.array([np.var(np.delete(a, i), ddof=1) for i in range(a.size)])
    se = math.sqrt((a.size - 1) / a.size * np.sum((loo - loo.mean()) ** 2))
    assert r.stderr == pytest.approx(0.5 * se, rel=1e-9)
    assert variance_jackknife(np.ones(5)).estimate == 0.0


def test_pooled_autocorrelation_white_and_ar1():
    rng = np.random.default_rng(4)
    white = rng.standard_normal((500, 40))
    assert np.all(np.abs(pooled_autocorrelation(white, 3)) < 0.03)
    x = np.zeros((500, 40))
    x[:, 0] = rng.standard_normal(500)
    for j in range(1, 40):
        x[:, j] = 0.6 * x[:, j - 1] + math.sqrt(1 - 0.36) * rng.standard_normal(500)
    ac = pooled_autocorrelation(x, 2)
    assert ac[0] == pytest.approx(0.6, abs=0.03) and ac[1] == pytest.approx(0.36, abs=0.03)


def test_correlation_degenerate():
    assert correlation([1, 1, 1], [1, 2, 3]) == 0.0
    assert correlation([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
