import math

import numpy as np
import pytest

from oracles import fkpp_exceedance

from bbmre.bbm import (OffspringLaw, PopulationSnapshot, SimConfig, additive_martingale, first_split_oracle,
                       first_split_times, fk_expectation, fk_hitting_laplace_many, many_to_one_check,
                       many_to_two_check, max_position_series, population_functional, resolve_payoff,
                       simulate_population)
from bbmre.env import EnvSpec, make_env
from bbmre.errors import CappedRunError, ConfigError
from bbmre.spectral import DECAYING, Grid, riccati_profile
from bbmre.stats import ks_2samp, mean_ci

BIN = OffspringLaw.binary()


# ---------------------------------------------------------------- offspring and config

def test_offspring_law():
    law = OffspringLaw.from_probs({"1": 0.25, "2": 0.5, "3": 0.25})
    assert law.m == pytest.approx(2.0) and law.m2 == pytest.approx(0.25 + 2 + 2.25)
    sb = law.size_biased()
    assert sb.ps == pytest.approx((0.125, 0.5, 0.375))
    assert OffspringLaw.from_probs(law.to_dict()) == law
    for bad in ({"0": 0.5, "2": 0.5}, {"1": 1.0}, {"2": 0.7}, {"x": 1.0}, {}):
        with pytest.raises(ConfigError):
            OffspringLaw.from_probs(bad)


def test_sim_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(2.0, (1.0, 3.0))
    with pytest.raises(ConfigError):
        SimConfig(2.0, (1.0, 1.0))
    with pytest.raises(ConfigError):
        SimConfig(-1.0)
    assert SimConfig(2.0).checkpoints == (2.0,)


# ---------------------------------------------------------------- population

def test_yule_mean_count(const_env):
    n = population_functional(const_env, BIN, 0.0, 3.0, 400, 11, lambda s: s.count)
    r = mean_ci(n)
    assert abs(r.z_against(math.exp(3.0))) < 4


def test_ternary_growth(rand_env):
    law = OffspringLaw.from_probs({"1": 0.5, "3": 0.5})
    c = make_env(EnvSpec.constant(0.7))
    n = population_functional(c, law, 0.0, 2.0, 600, 3, lambda s: s.count)
    assert abs(mean_ci(n).z_against(math.exp((law.m - 1) * 0.7 * 2.0))) < 4


def test_worker_count_does_not_change_population(rand_env):
    cfg = SimConfig(5.0, (2.0, 5.0))
    a = simulate_population(rand_env, BIN, cfg, 123, workers=1)
    b = simulate_population(rand_env, BIN, cfg, 123, workers=3)
    for s, t in zip(a, b):
        assert np.array_equal(s.positions, t.positions) and np.array_equal(s.streams, t.streams)
    c = simulate_population(rand_env, BIN, cfg, 124)
    assert not np.array_equal(a[-1].positions, c[-1].positions)


def test_cap_raises_with_partial(const_env):
    with pytest.raises(CappedRunError) as e:
        simulate_population(const_env, BIN, SimConfig(8.0, (1.0, 8.0), cap=200), 5)
    partial = e.value.partial
    assert len(partial) == 1 and partial[0].t == 1.0


def test_first_split_matches_inverse_hazard(rand_env):
    a = first_split_times(rand_env, 0.3, 20000, 5)
    b = first_split_oracle(rand_env, 0.3, 20000, 6)
    assert ks_2samp(a, b).pvalue > 1e-3


@pytest.mark.parametrize("which", ["constant", "random"])
def test_max_law_matches_mckean_pde(which, rand_env, const_env):
    env = const_env if which == "constant" else rand_env
    levels = np.array([1.0, 2.5, 4.0])
    p = fkpp_exceedance(env.eval, levels, [4.0])[:, 0]
    M = max_position_series(env, BIN, SimConfig(4.0), 2000, 21).samples[:, 0]
    emp = np.array([(M > a).mean() for a in levels])
    z = (emp - p) / np.sqrt(p * (1 - p) / M.size)
    assert np.all(np.abs(z) < 4), (emp, p)


def test_pruning_keeps_the_maximum(rand_env):
    # pruning adds internal restart stops; an unpruned run with the same stops
    # draws the same numbers for every surviving particle
    cfg = SimConfig(6.0, (3.0, 6.0), prune_window=1e9)
    pr = SimConfig(6.0, (3.0, 6.0), prune_window=12.0)
    for r in range(10):
        a = simulate_population(rand_env, BIN, cfg, 900 + r)
        b = simulate_population(rand_env, BIN, pr, 900 + r)
        assert a[-1].M_t == b[-1].M_t
        assert b[-1].count <= a[-1].count


def test_snapshot_serialization():
    s = PopulationSnapshot(1.0, np.array([0.0, 1.0, 3.0]), np.zeros(3, dtype=np.uint64))
    d = s.to_dict(bins=3)
    assert d["count"] == 3 and d["M_t"] == 3.0 and sum(d["histogram"]["counts"]) == 3
    assert '"M_t": 3.0' in s.to_ndjson()


def test_additive_martingale_constant_env(const_env):
    lam = 2.0
    gam = 1.0 + lam * lam / 2
    prof = riccati_profile(const_env, gam, DECAYING, Grid(-5.0, 5.0, 1e-3), 2.0, lam=lam)
    snap = simulate_population(const_env, BIN, SimConfig(2.0), 8)[0]
    w = additive_martingale(snap, prof)
    direct = math.exp(-gam * 2.0) * np.sum(np.exp(-lam * snap.positions))
    assert w.W == pytest.approx(direct, rel=1e-8)


# ---------------------------------------------------------------- Feynman-Kac

def test_fk_constant_env_is_exact(const_env):
    r = fk_expectation(const_env, 0.0, 1.5, "one", 1000, 1e-2, 1)
    assert r.estimate == pytest.approx(math.exp(1.5), rel=1e-12) and r.stderr < 1e-10
    r0 = fk_expectation(const_env, 0.0, 0.0, "indicator_nonneg", 10, 1e-2, 1)
    assert r0.estimate == 1.0


def test_fk_payoff_errors(const_env):
    with pytest.raises(ConfigError):
        resolve_payoff("nope")
    with pytest.raises(ConfigError):
        fk_expectation(const_env, 0.0, 1.0, "one", 10, 0.1, 1)


def test_fk_laplace_small():
    rs = fk_hitting_laplace_many(1.0, 0.0, [0.5, 2.0], 20000, 1e-3, 3)
    for r, u in zip(rs, (0.5, 2.0)):
        assert abs(r.z_against(math.exp(-math.sqrt(2 * u)))) < 4


def test_many_to_one_small(rand_env):
    rep = many_to_one_check(rand_env, BIN, 0.0, 2.0, "indicator_nonneg", 500, 50000, 4)
    assert abs(rep.z) < 4


def test_many_to_two_constant(const_env):
    rep = many_to_two_check(const_env, BIN, 0.0, 1.0, 2000, 500, 4)
    # E N_t^2 = 2 e^{2t} - e^{t} for binary Yule
    assert abs(rep.population.z_against(2 * math.e ** 2 - math.e)) < 4
    assert abs(rep.z) < 4
