"""Acceptance criteria 1-12, each at its stated tolerance and scale.

Every test records one pass/fail line (shown in the terminal summary) and
then asserts the same verdict.
"""
import json
import math
import os
import time

import numpy as np
import pytest
from scipy import optimize

from bbmre.bbm import OffspringLaw, fk_hitting_laplace_many, many_to_one_check, many_to_two_check
from bbmre.cli import main
from bbmre.env import EnvSpec, make_env
from bbmre.harness import (PASS, annealed_mt_clt_experiment, env_stats_experiment, front_gap_experiment,
                           invariance_paths_experiment, lln_experiment, spectral_pipeline, vt_clt_experiment)
from bbmre.spectral import (INCREASING, _LyapunovMap, Grid, band, ensemble_env, find_lambda_star, front_table,
                            g_profile, gamma_of_lambda, riccati_profile)
from bbmre.spine import expected_hitting_time, hitting_time_tests, martingale_limit_probe, spine_ensemble

pytestmark = pytest.mark.slow

BIN = OffspringLaw.binary()
CONST = EnvSpec.constant(1.0)
FAMILY = EnvSpec.lattice(0.8, 1.2, corr_radius=1.0, env_seed=2024)
SEED = 20240601


@pytest.fixture(scope="module")
def family_pipe():
    return spectral_pipeline(FAMILY, 2.0)


@pytest.fixture(scope="module")
def const_pipe():
    return spectral_pipeline(CONST, 2.0)


@pytest.fixture(scope="module")
def quenched():
    """One realization of the family with its own spectral summary."""
    env = make_env(FAMILY)
    return env, find_lambda_star(env, Grid(0.0, 1000.0, 1e-2), 2.0)


@pytest.fixture(scope="module")
def vt_run(family_pipe):
    t0 = time.perf_counter()
    rep, cal = vt_clt_experiment(FAMILY, family_pipe, 400.0, 2000)
    return rep, cal, time.perf_counter() - t0


@pytest.fixture(scope="module")
def lln_run(family_pipe, const_pipe):
    envs = [make_env(CONST)] + [ensemble_env(FAMILY, "lln-envs", i) for i in range(3)]
    labels = ["constant", "env0", "env1", "env2"]
    summaries = [const_pipe.summary] + [family_pipe.summary] * 3
    t0 = time.perf_counter()
    rep, series = lln_experiment(envs, BIN, [6.0, 8.0, 10.0, 12.0], 100, summaries, SEED, labels=labels)
    return envs, labels, summaries, rep, series, time.perf_counter() - t0


# ---------------------------------------------------------------- 1-3: spectral and FK golden values

def _numeric_gamma(env, lam, grid):
    """gamma(lambda) by brentq on the Lyapunov map over a widened bracket,
    bypassing the collapsed sandwich that a constant field would return."""
    f = _LyapunovMap(env, grid, 2.0, "decaying", 1.0 + lam * lam / 4)
    return optimize.brentq(lambda g: f(g) - lam, 1.0 + lam * lam / 4, 1.0 + lam * lam, xtol=1e-13)


def test_criterion_01_homogeneous_spectrum(criterion):
    t0 = time.perf_counter()
    env = make_env(CONST)
    grid = Grid(-20.0, 20.0, 1e-3)
    lams = (1.2, 1.5, 2.0, 3.0)
    errs = [abs(gamma_of_lambda(env, lam, grid, 2.0) - (lam * lam / 2 + 1)) for lam in lams]
    errs += [abs(_numeric_gamma(env, lam, grid) - (lam * lam / 2 + 1)) for lam in lams]
    s = find_lambda_star(env, grid, 2.0)
    res = optimize.minimize_scalar(lambda l: _numeric_gamma(env, l, grid) / l, bracket=(1.0, 1.4, 2.0),
                                   method="golden", options={"xtol": 1e-9})
    lam_num = float(res.x)
    dl = max(abs(s.lambda_star - math.sqrt(2)), abs(lam_num - math.sqrt(2)))
    dv = max(abs(s.v_star - math.sqrt(2)), abs(res.fun - math.sqrt(2)))
    rt = time.perf_counter() - t0
    ok = max(errs) <= 1e-6 and dl <= 1e-4 and dv <= 1e-4 and rt < 5
    assert criterion(1, ok, f"max|gamma err|={max(errs):.2e} |dlambda*|={dl:.2e} |dv*|={dv:.2e} "
                     f"(closed-form and Riccati routes, {rt:.1f} s)")


def test_criterion_02_band_invariants(criterion):
    t0 = time.perf_counter()
    violations = 0
    checked = 0
    for seed in range(20):
        env = make_env(FAMILY.with_seed(seed))
        s = find_lambda_star(env, Grid(0.0, 200.0, 1e-2), 2.0)
        for lam in (-s.lambda_star, 0.8 * s.lambda_star, s.lambda_star, 1.5 * s.lambda_star):
            gam = gamma_of_lambda(env, lam, Grid(0.0, 200.0, 1e-2), 2.0)
            orient = INCREASING if lam < 0 else "decaying"
            p = riccati_profile(env, gam, orient, Grid(-20.0, 20.0, 1e-3), 2.0, lam=lam)
            k2, k1 = band(gam, 2.0, FAMILY.ei, FAMILY.es)
            a = np.abs(p.u)
            violations += int(np.sum((a < k2 * (1 - 1e-9)) | (a > k1 * (1 + 1e-9))))
            checked += a.size
        V = front_table(env, s, Grid(-1.0, 5.0, 1e-3)).V(np.linspace(0.0, 20.0, 201))
        dV = np.diff(V) / 0.1
        g = s.gamma_star
        violations += int(np.sum((dV < g / s.K1 * (1 - 1e-6)) | (dV > g / s.K2 * (1 + 1e-6))))
        checked += dV.size
    rt = time.perf_counter() - t0
    ok = violations == 0 and rt < 30
    assert criterion(2, ok, f"{violations} violations over {checked} nodes, 20 seeds ({rt:.1f} s)")


def test_criterion_03_feynman_kac_laplace(criterion):
    t0 = time.perf_counter()
    us = (0.5, 1.0, 2.0)
    rs = fk_hitting_laplace_many(1.0, 0.0, us, 100_000, 1e-3, SEED)
    zs = [r.z_against(math.exp(-math.sqrt(2 * u))) for r, u in zip(rs, us)]
    rt = time.perf_counter() - t0
    ok = all(abs(z) <= 3 for z in zs) and rt < 60
    assert criterion(3, ok, "z=" + ", ".join(f"{z:+.2f}" for z in zs) + f" ({rt:.1f} s)")


# ---------------------------------------------------------------- 4-6: moment formulas, martingale, spine

def test_criterion_04_many_to_one_and_two(criterion):
    t0 = time.perf_counter()
    env = make_env(FAMILY)
    one = many_to_one_check(env, BIN, 0.0, 4.0, "indicator_nonneg", 2000, 200_000, SEED)
    two = many_to_two_check(env, BIN, 0.0, 2.0, 2000, 1000, SEED + 1)
    rt = time.perf_counter() - t0
    ok = abs(one.z) < 3 and abs(two.z) < 3 and rt < 300
    assert criterion(4, ok, f"many-to-one z={one.z:+.2f}, many-to-two z={two.z:+.2f} ({rt:.1f} s)")


def test_criterion_05_martingale_mean(criterion, quenched):
    t0 = time.perf_counter()
    env, s = quenched
    lam = -s.lambda_star
    prof = riccati_profile(env, s.gamma_star, INCREASING, Grid(-5.0, 20.0, 1e-3), 2.0, lam=lam)
    probe = martingale_limit_probe(env, BIN, s, {lam: prof}, [1.0, 2.0, 4.0, 6.0, 8.0], 2000, SEED)
    tr = probe.tracks[lam]
    zs = [r.z_against(1.0) for r in tr.means()[:3]]
    med = tr.medians[1:]
    rt = time.perf_counter() - t0
    ok = all(abs(z) <= 3 for z in zs) and bool(np.all(np.diff(med) < 0)) and rt < 300
    assert criterion(5, ok, "mean z(t=1,2,4)=" + ", ".join(f"{z:+.2f}" for z in zs)
                     + " median ln W(2,4,6,8)=" + ", ".join(f"{v:.3f}" for v in med) + f" ({rt:.1f} s)")


def test_criterion_06_spine(criterion, quenched):
    t0 = time.perf_counter()
    env, s = quenched
    lam = -s.lambda_star
    prof = riccati_profile(env, s.gamma_star, INCREASING, Grid(-5.0, 20.0, 1e-3), 2.0, lam=lam)
    long = spine_ensemble(env, prof, 200.0, 1e-3, BIN, SEED, 16, stride=1000)
    speed = float(np.mean([p.final_position / p.T for p in long]))
    paths = spine_ensemble(env, prof, 1e4, 1e-3, BIN, SEED + 1, 500, k_max=50, stride=10_000,
                           stop_at_level=True)
    g = g_profile(env, lam, Grid(-1.0, 25.0, 1e-3), 2.0)
    rep = hitting_time_tests(paths, s, prof, g, k_mean=20)
    rho1 = float(rep.autocorr[0])
    rt = time.perf_counter() - t0
    ok = abs(speed - s.v_star) < 0.05 and abs(rep.mean_z) <= 3 and abs(rho1) <= rep.band and rt < 180
    assert criterion(6, ok, f"speed={speed:.4f} v*={s.v_star:.4f}, H20 z={rep.mean_z:+.2f}, "
                     f"lag-1 rho={rho1:+.4f} (band {rep.band:.4f}) ({rt:.1f} s)")


# ---------------------------------------------------------------- 7-8: environment statistics and V_t

def test_criterion_07_env_stats(criterion, family_pipe, const_pipe):
    t0 = time.perf_counter()
    rnd = env_stats_experiment(FAMILY, family_pipe, n_envs=200, L_sigma=200.0, n_sigma_envs=100)
    cst = env_stats_experiment(CONST, const_pipe, n_envs=200, L_sigma=200.0, n_sigma_envs=100)
    z = rnd.metrics["mean_g1_z"].estimate
    sp = cst.metrics["sigma_prime_sq"].estimate
    rt = time.perf_counter() - t0
    ok = abs(z) <= 3 and sp < 0.02 and rt < 120
    assert criterion(7, ok, f"E g(1)={rnd.metrics['mean_g1'].estimate:.5f} (z={z:+.2f}), "
                     f"constant sigma'^2={sp:.2e}, family sigma'^2="
                     f"{rnd.metrics['sigma_prime_sq'].estimate:.4f} ({rt:.1f} s)")


def test_criterion_08_vt_clt(criterion, family_pipe, vt_run):
    rep, cal, rt_vt = vt_run
    t0 = time.perf_counter()
    inv = invariance_paths_experiment(FAMILY, family_pipe, cal, 400.0, [0.1 * k for k in range(1, 11)], 2000)
    rt = rt_vt + time.perf_counter() - t0
    p = rep.metrics["ks_pvalue"].estimate
    slope = inv.metrics["variance_slope"].estimate
    rho = inv.metrics["increment_correlation"].estimate
    ok = p > 0.01 and abs(slope - 1) <= 0.2 and abs(rho) <= 2 / math.sqrt(2000) and rt < 600
    assert criterion(8, ok, f"KS p={p:.3f}, variance slope={slope:.3f}, increment corr={rho:+.4f} "
                     f"(band {2 / math.sqrt(2000):.4f}) ({rt:.1f} s)")


# ---------------------------------------------------------------- 9-11: particle front

def test_criterion_09_quenched_lln(criterion, lln_run):
    _, labels, summaries, rep, _, rt = lln_run
    parts = []
    for lab, s in zip(labels, summaries):
        parts.append(f"{lab} slope={rep.metrics[lab + '.slope'].estimate:.4f} "
                     f"rel={rep.metrics[lab + '.rel_error'].estimate:.3f}")
    ok = rep.verdict == PASS and rt < 1200
    assert criterion(9, ok, "; ".join(parts) + f" ({rt:.1f} s)")


def test_criterion_10_front_gap(criterion, lln_run):
    envs, labels, summaries, _, series, _ = lln_run
    parts, ok = [], True
    for env, lab, s, ser in zip(envs, labels, summaries, series):
        r = front_gap_experiment(env, BIN, s, [6.0, 8.0, 10.0, 12.0], 100, SEED, series=ser, label=lab)
        ok &= r.verdict == PASS
        parts.append(f"{lab} Gamma={r.metrics['Gamma_hat'].estimate:.2f} R2={r.metrics['p90_fit_r2'].estimate:.2f}"
                     + ("" if r.verdict == PASS else " [" + ",".join(k for k, v in r.checks.items() if not v) + "]"))
    assert criterion(10, ok, "; ".join(parts))


def test_criterion_11_annealed_trend(criterion, family_pipe, vt_run):
    _, cal, _ = vt_run
    t0 = time.perf_counter()
    rep = annealed_mt_clt_experiment(FAMILY, BIN, family_pipe, [8.0, 12.0], 200, 4, SEED,
                                     sigma_tilde_sq=cal.sigma_tilde_sq.estimate)
    d8, d12 = rep.metrics["ks_statistic_T8"].estimate, rep.metrics["ks_statistic_T12"].estimate
    mean12 = rep.metrics["mean_standardized_T12"].estimate
    rt = time.perf_counter() - t0
    ok = rep.verdict == PASS
    assert criterion(11, ok, f"KS(T=8)={d8:.4f} KS(T=12)={d12:.4f} on 800 samples, "
                     f"mean standardized M_12={mean12:+.3f}, sigma-tilde={math.sqrt(cal.sigma_tilde_sq.estimate):.4f} "
                     f"({rt:.1f} s)")


# ---------------------------------------------------------------- 12: determinism

def test_criterion_12_determinism(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = {"env": FAMILY.to_dict(), "master_seed": SEED,
           "simulate": {"T": 6.0, "checkpoints": [3.0, 6.0], "n_reps": 4},
           "experiments": {"env_stats": {"n_envs": 40, "n_sigma_envs": 30, "L_sigma": 100.0},
                           "vt_clt": {"t": 100.0, "n_envs": 1000},
                           "lln": {"t_grid": [4.0, 6.0, 8.0], "n_reps": 20, "n_envs": 2},
                           "front_gap": {"t_grid": [4.0, 6.0, 8.0], "n_reps": 20, "n_envs": 2}}}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    outs = {}
    for w in ("1", "3"):
        out = tmp_path / f"w{w}"
        codes = [main(["verify", "--config", str(path), "--out", str(out), "--workers", w,
              "--experiment", "env_stats", "--experiment", "vt_clt", "--experiment", "lln",
              "--experiment", "front_gap"]),
                 main(["simulate", "--config", str(path), "--out", str(out), "--workers", w])]
        assert max(codes) <= 1, codes
        outs[w] = {f: (out / f).read_bytes() for f in sorted(os.listdir(out)) if f.endswith(".csv")}
    same = outs["1"] == outs["3"]
    rt = time.perf_counter() - t0
    ok = same and len(outs["1"]) >= 5
    assert criterion(12, ok, f"{len(outs['1'])} CSV files byte-identical across --workers 1/3: {same} ({rt:.1f} s)")
