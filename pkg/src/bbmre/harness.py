"""Theorem-level experiments built on the spectral, population and spine layers.

Every experiment is a pure function of its arguments and seeds, and returns
an ``ExperimentReport`` whose verdict is computed only from the thresholds it
was given (and echoes).  Calibration and test environments come from
different seed-derivation tags, so they cannot overlap.
"""
from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bbm import MaxSeries, OffspringLaw, SimConfig, max_position_series
from .env import EnvField, EnvSpec, make_env
from .errors import CappedRunError, ConfigError
from .io import digest
from .rng import derive_seed
from .spectral import (DEFAULT_DX, FrontTable, Grid, SpectralSummary, ensemble_env, find_lambda_star,
                       front_ensemble, front_positions, gamma_of_lambda, sigma_constants, sigma_samples)
from .stats import (StatResult, correlation, fit_through_origin, ks_test_normal, linear_fit, mean_ci,
                    variance_jackknife)

PASS, FAIL, QUALITATIVE, SKIPPED = "pass", "fail", "qualitative", "skipped"

DEFAULT_THRESHOLDS = {
    "lln": {"rel_tol_constant": 0.07, "rel_tol_random": 0.10},
    "front_gap": {"r2_min": 0.7},
    "vt_clt": {"ks_p_min": 0.01, "doubling_rtol": 0.15, "degenerate_var": 1e-10, "degenerate_bound": 1.0},
    "invariance": {"r2_min": 0.9, "slope_rtol": 0.20, "ks_p_min": 0.01, "corr_band_z": 2.0},
    "annealed": {},
    "env_stats": {"z_max": 3.0, "constant_sigma_max": 0.02},
}

TAG_CALIBRATION_FIELD = "calibration"
TAG_VT_CALIBRATION = "vt-calibration"
TAG_VT_TEST = "vt-test"
TAG_ANNEALED = "annealed"
TAG_LLN = "lln"
TAG_G = "g-mean"
TAG_SIGMA = "sigma"


def thresholds_for(name: str, overrides: Optional[dict] = None) -> dict:
    base = copy.deepcopy(DEFAULT_THRESHOLDS[name])
    for k, v in (overrides or {}).items():
        if k not in base:
            raise ConfigError(f"unknown threshold {k!r}", f"thresholds.{name}.{k}")
        base[k] = float(v)
    return base


# ---------------------------------------------------------------- report

@dataclass
class ExperimentReport:
    name: str
    config_digest: str
    metrics: dict = field(default_factory=dict)   # name -> StatResult
    checks: dict = field(default_factory=dict)    # name -> bool
    thresholds: dict = field(default_factory=dict)
    verdict: str = QUALITATIVE
    runtime: float = 0.0
    notes: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)    # name -> (header, rows), written as CSV

    def metric(self, key: str, value, stderr=None, n=1):
        if isinstance(value, StatResult):
            self.metrics[key] = value
        elif stderr is None:
            self.metrics[key] = StatResult.point(value, n)
        else:
            self.metrics[key] = StatResult.from_se(value, stderr, n)

    def finish(self, t0: float, skipped: bool = False, qualitative: bool = False) -> "ExperimentReport":
        if skipped:
            self.verdict = SKIPPED
        elif qualitative or not self.checks:
            self.verdict = QUALITATIVE
        else:
            self.verdict = PASS if all(self.checks.values()) else FAIL
        self.runtime = time.perf_counter() - t0
        return self

    @property
    def passed(self) -> bool:
        return self.verdict != FAIL

    def to_dict(self) -> dict:
        return {
            "name": self.name, "config_digest": self.config_digest,
            "metrics": {k: v.to_dict() for k, v in sorted(self.metrics.items())},
            "checks": {k: bool(v) for k, v in sorted(self.checks.items())},
            "thresholds": self.thresholds, "verdict": self.verdict,
            "runtime": self.runtime, "notes": list(self.notes),
        }

    def lines(self) -> list:
        out = [f"{self.name}: {self.verdict} ({self.runtime:.1f} s)"]
        for k, v in sorted(self.checks.items()):
            out.append(f"  check {k}: {'ok' if v else 'FAILED'}")
        for k, v in sorted(self.metrics.items()):
            se = f" +- {v.stderr:.4g}" if v.stderr else ""
            out.append(f"  {k} = {v.estimate:.6g}{se}")
        out.extend(f"  note: {n}" for n in self.notes)
        return out


def _digest_or(d, params):
    return d if d else digest(params)


# ---------------------------------------------------------------- calibration pipeline

@dataclass(frozen=True)
class Pipeline:
    """Deterministic spectral quantities of an environment family.

    For a random family they are measured on one long calibration field.
    ``gammas`` holds (gamma(lambda* - h), gamma*, gamma(lambda* + h)).
    """

    spec: EnvSpec
    m: float
    summary: SpectralSummary
    gammas: tuple
    h: float
    length: float
    dx: float

    def gammas_at(self, lam: float) -> tuple:
        """(gamma(lam - h), gamma(lam), gamma(lam + h)) for lam = +-lambda*."""
        if not math.isclose(abs(lam), self.summary.lambda_star, rel_tol=1e-12):
            raise ConfigError("the pipeline only carries gammas at +-lambda*", "lam")
        return self.gammas if lam > 0 else self.gammas[::-1]

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "m": self.m, "summary": self.summary.to_dict(),
                "gammas": list(self.gammas), "h": self.h, "length": self.length, "dx": self.dx}


def spectral_pipeline(spec: EnvSpec, m: float, length: float = 4000.0, dx: float = 1e-2,
                      rel_h: float = 1e-3, tol: float = 1e-12) -> Pipeline:
    if spec.kind == "constant":
        env = make_env(spec)
        summ = find_lambda_star(env, Grid(0.0, 1.0, dx), m)
        lam = summ.lambda_star
        h = rel_h * lam
        m1 = m - 1.0
        gammas = tuple(m1 * env.ei + 0.5 * l * l for l in (lam - h, lam, lam + h))
        return Pipeline(spec, float(m), summ, gammas, h, 0.0, dx)
    env = make_env(spec.with_seed(derive_seed(spec.env_seed, TAG_CALIBRATION_FIELD)))
    grid = Grid(0.0, length, dx)
    summ = find_lambda_star(env, grid, m, tol=tol)
    lam = summ.lambda_star
    h = rel_h * lam
    gammas = (gamma_of_lambda(env, lam - h, grid, m, tol), summ.gamma_star,
              gamma_of_lambda(env, lam + h, grid, m, tol))
    return Pipeline(spec, float(m), summ, gammas, h, float(length), dx)


def pipeline_from_summary(spec: EnvSpec, summary: SpectralSummary, h: float, gammas: tuple) -> Pipeline:
    return Pipeline(spec, summary.m, summary, tuple(gammas), float(h), 0.0, DEFAULT_DX)


# ---------------------------------------------------------------- environment statistics

def env_stats_experiment(spec: EnvSpec, pipe: Pipeline, n_envs: int = 200, L_sigma: float = 200.0,
                         n_sigma_envs: int = 100, dx: float = 1e-2, workers: int = 1,
                         thresholds: Optional[dict] = None, config_digest: str = "") -> ExperimentReport:
    """E g(1, -lambda*) against -1, and the fluctuation constants at -lambda*.

    For a constant environment sigma'^2 must vanish.
    """
    t0 = time.perf_counter()
    thr = thresholds_for("env_stats", thresholds)
    rep = ExperimentReport("env_stats", _digest_or(config_digest, {
        "spec": spec.to_dict(), "pipeline": pipe.to_dict(), "n_envs": n_envs, "L_sigma": L_sigma,
        "n_sigma_envs": n_sigma_envs, "dx": dx}), thresholds=thr)
    lam = -pipe.summary.lambda_star
    gammas = pipe.gammas_at(lam)
    _, g1 = sigma_samples(spec, lam, 1.0, n_envs, pipe.m, gammas=gammas, h=pipe.h, dx=dx,
                          tag=TAG_G, workers=workers)
    gm = mean_ci(g1)
    z = gm.z_against(-1.0)
    rep.metric("mean_g1", gm)
    rep.metric("mean_g1_z", z)
    rep.checks[f"mean_g1_within_{thr['z_max']:g}_se"] = bool(abs(z) <= thr["z_max"])
    sc = sigma_constants(spec, lam, L_sigma, n_sigma_envs, pipe.m, gammas=gammas, h=pipe.h, dx=dx,
                         tag=TAG_SIGMA, workers=workers)
    rep.metric("sigma_prime_sq", sc.sigma_prime_sq)
    rep.metric("sigma_dprime_sq", sc.sigma_dprime_sq)
    rep.metric("sigma_lambda_sq", sc.sigma_lambda_sq)
    rep.metric("sigma_tilde_sq_spectral", sc.sigma_prime_sq.estimate * pipe.summary.v_star
               / pipe.summary.lambda_star ** 2)
    if spec.kind == "constant":
        rep.checks[f"sigma_prime_sq_lt_{thr['constant_sigma_max']:g}"] = bool(
            sc.sigma_prime_sq.estimate < thr["constant_sigma_max"])
    rep.tables["g1_samples.csv"] = (("env_index", "g_1"), [(i, v) for i, v in enumerate(g1)])
    return rep.finish(t0)


# ---------------------------------------------------------------- LLN and front gap

def _check_grid(t_grid, lo, hi, min_points, what="t_grid"):
    ts = np.asarray(sorted(float(t) for t in t_grid))
    if ts.size < min_points:
        raise ConfigError(f"{what} needs at least {min_points} points", what)
    if len(set(ts.tolist())) != ts.size:
        raise ConfigError(f"{what} has repeated points", what)
    if ts[0] < lo or ts[-1] > hi:
        raise ConfigError(f"{what} must lie in [{lo}, {hi}]", what)
    return ts


def _series(env, law, ts, n_reps, seed, workers, cap, partial, label):
    cfg = SimConfig(float(ts[-1]), tuple(ts), 0.0, int(cap))
    try:
        return max_position_series(env, law, cfg, n_reps, seed, workers)
    except CappedRunError as e:
        partial.notes.append(f"{label}: {e}")
        partial.verdict = FAIL
        raise CappedRunError(f"{label}: {e}", partial=partial) from e


def lln_experiment(envs: Sequence[EnvField], law: OffspringLaw, t_grid, n_reps: int,
                   summary, seed, workers: int = 1, cap: int = 5_000_000,
                   thresholds: Optional[dict] = None, config_digest: str = "",
                   labels: Optional[Sequence[str]] = None):
    """Median-M_t regression slope per environment against v*.

    ``summary`` is one SpectralSummary shared by all environments or a list
    with one per environment.  Returns (report, list of MaxSeries) so the
    front-gap experiment can reuse the same replicates.
    """
    t0 = time.perf_counter()
    ts = _check_grid(t_grid, 4.0, 14.0, 2)
    if n_reps < 1:
        raise ConfigError("n_reps must be >= 1", "n_reps")
    envs = list(envs)
    if not envs:
        raise ConfigError("need at least one environment", "envs")
    summaries = list(summary) if isinstance(summary, (list, tuple)) else [summary] * len(envs)
    labels = list(labels) if labels else [f"env{i}" for i in range(len(envs))]
    thr = thresholds_for("lln", thresholds)
    rep = ExperimentReport("lln", _digest_or(config_digest, {
        "t_grid": ts.tolist(), "n_reps": n_reps, "seed": int(seed), "law": law.to_dict(),
        "envs": [e.spec.to_dict() for e in envs]}), thresholds=thr)
    series = []
    rows = []
    for i, (env, summ, lab) in enumerate(zip(envs, summaries, labels)):
        ms = _series(env, law, ts, n_reps, derive_seed(seed, TAG_LLN, i), workers, cap, rep, lab)
        series.append(ms)
        med = ms.medians
        fit = linear_fit(ts, med)
        rel = abs(fit.slope - summ.v_star) / summ.v_star
        tol = thr["rel_tol_constant"] if env.is_constant else thr["rel_tol_random"]
        rep.metric(f"{lab}.slope", fit.slope, fit.slope_se if math.isfinite(fit.slope_se) else 0.0, ts.size)
        rep.metric(f"{lab}.v_star", summ.v_star)
        rep.metric(f"{lab}.rel_error", rel)
        rep.metric(f"{lab}.intercept", fit.intercept)
        rep.checks[f"{lab}.slope_within_{tol:g}"] = bool(rel <= tol)
        for k, t in enumerate(ts):
            rows.append((lab, t, med[k], summ.v_star * t))
    rep.tables["lln_medians.csv"] = (("env", "t", "median_M_t", "v_star_t"), rows)
    return rep.finish(t0), series


def front_gap_experiment(env: EnvField, law: OffspringLaw, front, t_grid, n_reps: int, seed,
                         workers: int = 1, cap: int = 5_000_000, series: Optional[MaxSeries] = None,
                         thresholds: Optional[dict] = None, config_digest: str = "",
                         label: str = "env") -> ExperimentReport:
    """Quantiles of |M_t - V_t|, the slope Gamma-hat of its 90th percentile
    against ln t, and the decrease of median |M_t - V_t| / t.

    ``front`` is a FrontTable, a callable t -> V_t, or a SpectralSummary (in
    which case V_t comes from a forward sweep at gamma*).
    """
    t0 = time.perf_counter()
    ts = _check_grid(t_grid, math.e, math.inf, 3)
    thr = thresholds_for("front_gap", thresholds)
    rep = ExperimentReport("front_gap", _digest_or(config_digest, {
        "t_grid": ts.tolist(), "n_reps": n_reps, "seed": int(seed), "law": law.to_dict(),
        "env": env.spec.to_dict()}), thresholds=thr)
    if isinstance(front, SpectralSummary):
        V = front_positions(env, front.gamma_star, front.m, ts)
    elif isinstance(front, FrontTable):
        V = np.atleast_1d(front.V(ts))
    else:
        V = np.array([float(front(t)) for t in ts])
    if series is None:
        series = _series(env, law, ts, n_reps, derive_seed(seed, "front-gap"), workers, cap, rep, label)
    elif not np.array_equal(np.asarray(series.times, float), ts):
        raise ConfigError("supplied series does not match t_grid", "series")
    gap = np.abs(series.samples - V[None, :])
    med = np.median(gap, axis=0)
    p90 = np.quantile(gap, 0.9, axis=0)
    lnt = np.log(ts)
    fit = linear_fit(lnt, p90)
    ratio = med / ts
    rep.metric("Gamma_hat", fit.slope, fit.slope_se if math.isfinite(fit.slope_se) else 0.0, ts.size)
    rep.metric("p90_fit_intercept", fit.intercept)
    rep.metric("p90_fit_r2", fit.r2)
    med_fit = fit.slope * lnt + fit.intercept
    for k, t in enumerate(ts):
        rep.metric(f"median_gap_t{t:g}", med[k])
        rep.metric(f"p90_gap_t{t:g}", p90[k])
    rep.checks["Gamma_hat_finite"] = bool(math.isfinite(fit.slope))
    rep.checks[f"p90_fit_r2_ge_{thr['r2_min']:g}"] = bool(fit.r2 >= thr["r2_min"])
    rep.checks["median_gap_over_t_decreasing"] = bool(np.all(np.diff(ratio) < 0))
    rep.checks["median_gap_below_fit"] = bool(np.all(med <= med_fit))
    rep.tables[f"front_gap_{label}.csv"] = (
        ("t", "V_t", "median_gap", "p90_gap", "median_gap_over_t"),
        [(t, V[k], med[k], p90[k], ratio[k]) for k, t in enumerate(ts)])
    return rep.finish(t0)


# ---------------------------------------------------------------- V_t CLT and invariance paths

@dataclass(frozen=True)
class FrontCalibration:
    """v-hat and sigma-tilde-hat^2 measured on calibration environments."""

    t: float
    v_hat: StatResult
    sigma_tilde_sq: StatResult


def calibrate_front(spec: EnvSpec, pipe: Pipeline, t: float, n_envs: int, dx: float = 1e-2,
                    workers: int = 1, tag: str = TAG_VT_CALIBRATION) -> FrontCalibration:
    V = front_ensemble(spec, tag, n_envs, pipe.summary.gamma_star, pipe.m, [t], dx, workers)[:, 0]
    return _calibration(V, t)


def _calibration(V, t):
    v_hat = mean_ci(np.asarray(V) / t)
    s2 = variance_jackknife(np.asarray(V) - v_hat.estimate * t, 1.0 / t)
    return FrontCalibration(float(t), v_hat, s2)


def vt_clt_experiment(spec: EnvSpec, pipe: Pipeline, t: float, n_envs: int, dx: float = 1e-2,
                      workers: int = 1, thresholds: Optional[dict] = None,
                      config_digest: str = "", min_envs: int = 1000):
    """KS of (V_t - v-hat t)/sqrt(t) on test environments against
    N(0, sigma-tilde-hat^2) from disjoint calibration environments.

    Returns (report, FrontCalibration at t).
    """
    t0 = time.perf_counter()
    if n_envs < min_envs:
        raise ConfigError(f"n_envs must be at least {min_envs}", "n_envs")
    if not (t > 0 and math.isfinite(t)):
        raise ConfigError("t must be positive", "t")
    thr = thresholds_for("vt_clt", thresholds)
    rep = ExperimentReport("vt_clt", _digest_or(config_digest, {
        "spec": spec.to_dict(), "pipeline": pipe.to_dict(), "t": t, "n_envs": n_envs, "dx": dx}),
        thresholds=thr)
    g, m = pipe.summary.gamma_star, pipe.m
    ts = [float(t), 2.0 * t]
    cal = front_ensemble(spec, TAG_VT_CALIBRATION, n_envs, g, m, ts, dx, workers)
    test = front_ensemble(spec, TAG_VT_TEST, n_envs, g, m, ts, dx, workers)
    c1, c2 = _calibration(cal[:, 0], ts[0]), _calibration(cal[:, 1], ts[1])
    rep.metric("v_hat", c1.v_hat)
    rep.metric("v_star_spectral", pipe.summary.v_star)
    rep.metric("sigma_tilde_sq_hat", c1.sigma_tilde_sq)
    rep.metric("sigma_tilde_sq_hat_2t", c2.sigma_tilde_sq)
    z1 = (test[:, 0] - c1.v_hat.estimate * ts[0]) / math.sqrt(ts[0])
    z2 = (test[:, 1] - c2.v_hat.estimate * ts[1]) / math.sqrt(ts[1])
    rep.tables["vt_clt_samples.csv"] = (
        ("env_index", "V_t", "V_2t", "standardized_t", "standardized_2t"),
        [(i, test[i, 0], test[i, 1], z1[i], z2[i]) for i in range(n_envs)])
    s2 = c1.sigma_tilde_sq.estimate
    if s2 < thr["degenerate_var"]:
        dev = float(np.max(np.abs(test[:, 0] - c1.v_hat.estimate * ts[0])))
        rep.metric("max_abs_deviation", dev)
        rep.checks["degenerate_deviation_bounded"] = bool(dev <= thr["degenerate_bound"])
        rep.notes.append("sigma-tilde^2 is numerically zero: degenerate route")
        return rep.finish(t0), c1
    ks = ks_test_normal(z1, 0.0, math.sqrt(s2))
    rep.metric("ks_statistic", ks.statistic, n=ks.n)
    rep.metric("ks_pvalue", ks.pvalue, n=ks.n)
    ratio = float(np.var(z2, ddof=1) / np.var(z1, ddof=1))
    rep.metric("variance_ratio_2t_over_t", ratio)
    rep.metric("centering_offset_sd", (c1.v_hat.estimate - pipe.summary.v_star) * math.sqrt(ts[0]) / math.sqrt(s2))
    rep.checks[f"ks_p_gt_{thr['ks_p_min']:g}"] = bool(ks.pvalue > thr["ks_p_min"])
    rep.checks[f"doubling_variance_within_{thr['doubling_rtol']:g}"] = bool(abs(ratio - 1.0) <= thr["doubling_rtol"])
    return rep.finish(t0), c1


def invariance_paths_experiment(spec: EnvSpec, pipe: Pipeline, calib: FrontCalibration, n: float,
                                t_grid, n_envs: int, dx: float = 1e-2, workers: int = 1,
                                thresholds: Optional[dict] = None, config_digest: str = "",
                                tag: str = TAG_VT_TEST) -> ExperimentReport:
    """Rescaled paths s -> (V_{ns} - v-hat n s)/(sigma-tilde-hat sqrt(n)) and
    three Brownian checks: increment variance against increment length,
    Gaussianity of X(1) - X(1/2), and independence of disjoint increments."""
    t0 = time.perf_counter()
    thr = thresholds_for("invariance", thresholds)
    s = _check_grid(t_grid, 0.0, 1.0, 2)
    if 0.5 not in s or 1.0 not in s:
        raise ConfigError("t_grid must contain 0.5 and 1", "t_grid")
    rep = ExperimentReport("invariance_paths", _digest_or(config_digest, {
        "spec": spec.to_dict(), "pipeline": pipe.to_dict(), "n": n, "t_grid": s.tolist(),
        "n_envs": n_envs, "v_hat": calib.v_hat.estimate, "s2": calib.sigma_tilde_sq.estimate}),
        thresholds=thr)
    s2 = calib.sigma_tilde_sq.estimate
    if not s2 > DEFAULT_THRESHOLDS["vt_clt"]["degenerate_var"]:
        rep.notes.append("sigma-tilde^2 is numerically zero: the rescaled paths are degenerate")
        return rep.finish(t0, skipped=True)
    if n_envs < 3:
        raise ConfigError("n_envs must be at least 3", "n_envs")
    s_pos = s[s > 0]
    V = front_ensemble(spec, tag, n_envs, pipe.summary.gamma_star, pipe.m, n * s_pos, dx, workers)
    X = (V - calib.v_hat.estimate * n * s_pos[None, :]) / math.sqrt(s2 * n)
    grid = np.concatenate([[0.0], s_pos])
    X = np.concatenate([np.zeros((n_envs, 1)), X], axis=1)
    lens, vars_ = [], []
    for i in range(grid.size):
        for j in range(i + 1, grid.size):
            lens.append(grid[j] - grid[i])
            vars_.append(float(np.var(X[:, j] - X[:, i], ddof=1)))
    fit = fit_through_origin(lens, vars_)
    k_half = int(np.searchsorted(grid, 0.5))
    k_one = int(np.searchsorted(grid, 1.0))
    inc2 = X[:, k_one] - X[:, k_half]
    inc1 = X[:, k_half]
    ks = ks_test_normal(inc2, 0.0, math.sqrt(0.5))
    rho = correlation(inc1, inc2)
    band = thr["corr_band_z"] / math.sqrt(n_envs)
    rep.metric("variance_slope", fit.slope, fit.slope_se, fit.n)
    rep.metric("variance_r2", fit.r2)
    rep.metric("increment_ks_statistic", ks.statistic, n=ks.n)
    rep.metric("increment_ks_pvalue", ks.pvalue, n=ks.n)
    rep.metric("increment_correlation", rho, n=n_envs)
    rep.metric("correlation_band", band)
    rep.checks[f"variance_r2_ge_{thr['r2_min']:g}"] = bool(fit.r2 >= thr["r2_min"])
    rep.checks[f"variance_slope_within_{thr['slope_rtol']:g}"] = bool(abs(fit.slope - 1.0) <= thr["slope_rtol"])
    rep.checks[f"increment_ks_p_gt_{thr['ks_p_min']:g}"] = bool(ks.pvalue > thr["ks_p_min"])
    rep.checks["increment_correlation_in_band"] = bool(abs(rho) <= band)
    rep.tables["invariance_paths.csv"] = (
        ("env_index",) + tuple(f"X_{g:g}" for g in grid),
        [(i,) + tuple(X[i]) for i in range(n_envs)])
    return rep.finish(t0)


# ---------------------------------------------------------------- annealed M_t CLT

def annealed_mt_clt_experiment(spec: EnvSpec, law: OffspringLaw, pipe: Pipeline, T, n_envs: int,
                               n_reps_per_env: int, seed, sigma_tilde_sq: Optional[float] = None,
                               workers: int = 1, cap: int = 5_000_000, thresholds: Optional[dict] = None,
                               config_digest: str = "", tag: str = TAG_ANNEALED) -> ExperimentReport:
    """One M_T per (environment, replicate); KS of (M_T - v* T)/sqrt(T)
    against N(0, sigma-tilde^2) at each T, judged by its trend in T.

    When sigma-tilde^2 is numerically zero the check is instead that the
    standardized spread shrinks as T grows.
    """
    t0 = time.perf_counter()
    if n_envs < 1 or n_reps_per_env < 1:
        raise ConfigError("n_envs and n_reps_per_env must be >= 1", "n_envs")
    Ts = _check_grid(T, 0.0, 14.0, 2, "T")
    thr = thresholds_for("annealed", thresholds)
    rep = ExperimentReport("annealed_mt_clt", _digest_or(config_digest, {
        "spec": spec.to_dict(), "pipeline": pipe.to_dict(), "T": Ts.tolist(), "n_envs": n_envs,
        "n_reps_per_env": n_reps_per_env, "seed": int(seed), "law": law.to_dict()}), thresholds=thr)
    v = pipe.summary.v_star
    samples = []
    for i in range(n_envs):
        env = ensemble_env(spec, tag, i)
        ms = _series(env, law, Ts, n_reps_per_env, derive_seed(seed, tag, i), workers, cap, rep, f"env{i}")
        samples.append(ms.samples)
    M = np.concatenate(samples, axis=0)
    Z = (M - v * Ts[None, :]) / np.sqrt(Ts)[None, :]
    rep.notes.append("qualitative: at T <= 14 the centering carries an O(ln T / sqrt T) bias, "
                     "so only the trend in T is judged")
    if sigma_tilde_sq is None:
        raise ConfigError("sigma_tilde_sq is required (from the V_t calibration)", "sigma_tilde_sq")
    s2 = float(sigma_tilde_sq)
    rep.metric("sigma_tilde_sq", s2)
    for k, t in enumerate(Ts):
        rep.metric(f"mean_standardized_T{t:g}", mean_ci(Z[:, k]))
        rep.metric(f"sd_standardized_T{t:g}", float(np.std(Z[:, k], ddof=1)), n=Z.shape[0])
    if s2 > DEFAULT_THRESHOLDS["vt_clt"]["degenerate_var"]:
        ks = [ks_test_normal(Z[:, k], 0.0, math.sqrt(s2)) for k in range(Ts.size)]
        for k, t in enumerate(Ts):
            rep.metric(f"ks_statistic_T{t:g}", ks[k].statistic, n=ks[k].n)
            rep.metric(f"ks_pvalue_T{t:g}", ks[k].pvalue, n=ks[k].n)
        rep.checks["ks_decreasing_in_T"] = bool(all(ks[k + 1].statistic < ks[k].statistic
                                                    for k in range(Ts.size - 1)))
    else:
        sd = np.std(Z, axis=0, ddof=1)
        rep.checks["spread_shrinking_in_T"] = bool(np.all(np.diff(sd) < 0))
    rep.tables["annealed_samples.csv"] = (
        ("sample",) + tuple(f"M_T{t:g}" for t in Ts),
        [(i,) + tuple(M[i]) for i in range(M.shape[0])])
    return rep.finish(t0)
