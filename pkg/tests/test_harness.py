import math

import numpy as np
import pytest

from bbmre.bbm import OffspringLaw
from bbmre.env import EnvSpec, make_env
from bbmre.errors import ConfigError
from bbmre.harness import (FAIL, PASS, QUALITATIVE, SKIPPED, ExperimentReport, annealed_mt_clt_experiment,
                           calibrate_front, front_gap_experiment, invariance_paths_experiment,
                           lln_experiment, spectral_pipeline, thresholds_for, vt_clt_experiment)

BIN = OffspringLaw.binary()
CONST = EnvSpec.constant(1.0)


@pytest.fixture(scope="module")
def const_pipe():
    return spectral_pipeline(CONST, 2.0)


def test_report_verdicts():
    r = ExperimentReport("x", "d")
    assert r.finish(0.0).verdict == QUALITATIVE
    r.checks["a"] = True
    assert r.finish(0.0).verdict == PASS
    r.checks["b"] = False
    assert r.finish(0.0).verdict == FAIL and not r.passed
    assert r.finish(0.0, skipped=True).verdict == SKIPPED
    assert "check b: FAILED" in "\n".join(r.lines())


def test_thresholds_override_and_unknown():
    t = thresholds_for("lln", {"rel_tol_random": 0.2})
    assert t == {"rel_tol_constant": 0.07, "rel_tol_random": 0.2}
    with pytest.raises(ConfigError):
        thresholds_for("lln", {"nope": 1})


def test_constant_pipeline(const_pipe):
    s = const_pipe.summary
    assert s.lambda_star == pytest.approx(math.sqrt(2), abs=1e-6)
    g_lo, g, g_hi = const_pipe.gammas_at(-s.lambda_star)
    assert g_lo > g_hi  # reversed for negative lambda
    with pytest.raises(ConfigError):
        const_pipe.gammas_at(1.0)


def test_vt_clt_degenerate_constant(const_pipe):
    rep, cal = vt_clt_experiment(CONST, const_pipe, 50.0, 1000)
    assert rep.verdict == PASS
    assert "degenerate_deviation_bounded" in rep.checks
    assert cal.v_hat.estimate == pytest.approx(math.sqrt(2), abs=1e-3)
    inv = invariance_paths_experiment(CONST, const_pipe, cal, 50.0, [0.5, 1.0], 10)
    assert inv.verdict == SKIPPED


def test_vt_clt_config_errors(const_pipe):
    with pytest.raises(ConfigError):
        vt_clt_experiment(CONST, const_pipe, 50.0, 10)
    with pytest.raises(ConfigError):
        vt_clt_experiment(CONST, const_pipe, -1.0, 1000)


def test_grid_errors(const_pipe):
    env = make_env(CONST)
    with pytest.raises(ConfigError):
        lln_experiment([env], BIN, [6.0], 5, const_pipe.summary, 1)
    with pytest.raises(ConfigError):
        lln_experiment([env], BIN, [2.0, 6.0], 5, const_pipe.summary, 1)
    with pytest.raises(ConfigError):
        lln_experiment([env], BIN, [6.0, 8.0], 0, const_pipe.summary, 1)
    with pytest.raises(ConfigError):
        front_gap_experiment(env, BIN, const_pipe.summary, [6.0, 8.0], 5, 1)
    cal = calibrate_front(CONST, const_pipe, 10.0, 3)
    with pytest.raises(ConfigError):
        invariance_paths_experiment(EnvSpec.lattice(0.8, 1.2), const_pipe, cal, 10.0, [0.25, 1.0], 5)


def test_lln_and_gap_small_rerun_is_bit_exact(const_pipe):
    env = make_env(CONST)
    a, sa = lln_experiment([env], BIN, [4.0, 5.0, 6.0], 20, const_pipe.summary, 11)
    b, sb = lln_experiment([env], BIN, [4.0, 5.0, 6.0], 20, const_pipe.summary, 11, workers=2)
    assert np.array_equal(sa[0].samples, sb[0].samples)
    assert a.to_dict()["metrics"] == b.to_dict()["metrics"]
    assert a.thresholds == thresholds_for("lln")
    g = front_gap_experiment(env, BIN, const_pipe.summary, [4.0, 5.0, 6.0], 20, 11, series=sa[0])
    assert g.verdict in (PASS, FAIL) and math.isfinite(g.metrics["Gamma_hat"].estimate)
    header, rows = g.tables["front_gap_env.csv"]
    assert len(rows) == 3 and header[0] == "t"


def test_annealed_needs_sigma(const_pipe):
    with pytest.raises(ConfigError):
        annealed_mt_clt_experiment(CONST, BIN, const_pipe, [4.0, 6.0], 2, 2, 3)


def test_annealed_constant_small(const_pipe):
    rep = annealed_mt_clt_experiment(CONST, BIN, const_pipe, [4.0, 6.0], 3, 4, 3, sigma_tilde_sq=0.0)
    assert "spread_shrinking_in_T" in rep.checks
    assert len(rep.tables["annealed_samples.csv"][1]) == 12
