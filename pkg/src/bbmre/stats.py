"""Small statistics kit: confidence intervals, KS tests, least squares."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from .errors import ConfigError

Z95 = 1.959963984540054


@dataclass(frozen=True)
class StatResult:
    estimate: float
    stderr: float
    ci_low: float
    ci_high: float
    n: int

    def __post_init__(self):
        if self.stderr < 0 or not (self.ci_low <= self.estimate <= self.ci_high):
            raise ValueError(f"inconsistent StatResult {self}")

    @classmethod
    def from_se(cls, estimate, stderr, n, z=Z95) -> "StatResult":
        estimate, stderr = float(estimate), float(stderr)
        return cls(estimate, stderr, estimate - z * stderr, estimate + z * stderr, int(n))

    @classmethod
    def point(cls, value, n=1) -> "StatResult":
        return cls.from_se(value, 0.0, n)

    def z_against(self, target: float) -> float:
        d = self.estimate - target
        if self.stderr == 0:
            return 0.0 if d == 0 else math.copysign(math.inf, d)
        return d / self.stderr

    def to_dict(self) -> dict:
        return asdict(self)


def _nonempty(sample, min_n=1, what="sample") -> np.ndarray:
    a = np.asarray(sample, dtype=float).ravel()
    if a.size < min_n:
        raise ConfigError(f"need at least {min_n} values, got {a.size}", what)
    return a


def mean_ci(sample) -> StatResult:
    """Normal-theory 95% interval for the mean."""
    a = _nonempty(sample)
    n = a.size
    mean = math.fsum(a) / n
    if n == 1:
        return StatResult.from_se(mean, 0.0, 1)
    var = math.fsum((a - mean) ** 2) / (n - 1)
    return StatResult.from_se(mean, math.sqrt(var / n), n)


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    n: int


def ks_test(sample, cdf: Callable | str = "norm", args=()) -> KSResult:
    """One-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    a = _nonempty(sample, 8)
    res = sps.kstest(a, cdf, args=args, method="asymp")
    return KSResult(float(res.statistic), float(res.pvalue), a.size)


def ks_test_normal(sample, mean=0.0, sd=1.0) -> KSResult:
    if not sd > 0:
        raise ConfigError("normal reference needs sd > 0", "sd")
    return ks_test(sample, "norm", args=(mean, sd))


def ks_2samp(a, b) -> KSResult:
    a = _nonempty(a, 8, "a")
    b = _nonempty(b, 8, "b")
    res = sps.ks_2samp(a, b, method="asymp")
    return KSResult(float(res.statistic), float(res.pvalue), min(a.size, b.size))


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float
    slope_se: float
    n: int

    def slope_ci(self, z=Z95):
        return self.slope - z * self.slope_se, self.slope + z * self.slope_se


def linear_fit(xs, ys) -> LinearFit:
    """Ordinary least squares y = a x + b."""
    x = _nonempty(xs, 2, "xs")
    y = _nonempty(ys, 2, "ys")
    if x.size != y.size:
        raise ConfigError("xs and ys differ in length", "ys")
    if np.ptp(x) == 0:
        raise ConfigError("xs must not be constant", "xs")
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    sxy = float(np.sum((x - xm) * (y - ym)))
    syy = float(np.sum((y - ym) ** 2))
    slope = sxy / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    sse = float(np.sum(resid ** 2))
    r2 = 1.0 if syy == 0 else 1.0 - sse / syy
    se = math.sqrt(sse / (n - 2) / sxx) if n > 2 else math.nan
    return LinearFit(slope, intercept, r2, se, n)


def fit_through_origin(xs, ys) -> LinearFit:
    """Least squares y = a x; R^2 is the uncentered coefficient."""
    x = _nonempty(xs, 1, "xs")
    y = _nonempty(ys, 1, "ys")
    sxx = float(np.dot(x, x))
    if sxx == 0:
        raise ConfigError("xs must not be all zero", "xs")
    slope = float(np.dot(x, y)) / sxx
    sse = float(np.sum((y - slope * x) ** 2))
    syy = float(np.dot(y, y))
    r2 = 1.0 if syy == 0 else 1.0 - sse / syy
    se = math.sqrt(sse / max(x.size - 1, 1) / sxx)
    return LinearFit(slope, 0.0, r2, se, x.size)


def variance_jackknife(sample, scale=1.0) -> StatResult:
    """Unbiased sample variance times ``scale`` with a jackknife standard error."""
    a = _nonempty(sample, 3)
    n = a.size
    a = a - a.mean()
    s = a.sum()
    q = float(np.dot(a, a))
    var = (q - s * s / n) / (n - 1)
    loo = (q - a * a - (s - a) ** 2 / (n - 1)) / (n - 2)
    loo = np.maximum(loo, 0.0)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    var = max(var, 0.0)
    return StatResult.from_se(var * scale, se * scale, n)


def quantile_summary(sample) -> dict:
    a = _nonempty(sample)
    q1, med, q3 = np.quantile(a, [0.25, 0.5, 0.75])
    return {"q1": float(q1), "median": float(med), "q3": float(q3)}


def pooled_autocorrelation(rows, max_lag=5) -> np.ndarray:
    """Lag-1..max_lag correlations of a (n_paths, n_steps) array.

    Each column is standardized across paths first, so per-step means and
    variances may differ; the lag-l correlation is the mean product of
    standardized values l columns apart.
    """
    x = np.asarray(rows, dtype=float)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] <= max_lag:
        raise ConfigError("need a 2-D array with >= 3 rows and > max_lag columns", "rows")
    sd = x.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0
    z = (x - x.mean(axis=0)) / sd
    return np.array([float(np.mean(z[:, :-lag] * z[:, lag:])) for lag in range(1, max_lag + 1)])


def correlation(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])
