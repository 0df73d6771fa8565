import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbmre.env import EnvSpec, make_env, shift_env
from bbmre.errors import ConfigError

SPECS = [
    EnvSpec.constant(1.0),
    EnvSpec.lattice(0.8, 1.2, corr_radius=1.0, env_seed=7),
    EnvSpec.lattice(0.5, 2.0, corr_radius=2.0, kernel_width=0.7, env_seed=3),
    EnvSpec("periodic", 0.8, 1.2, period=3.0, env_seed=1),
]


def test_constant_value():
    assert make_env(EnvSpec.constant(1.0)).eval(3.7) == 1.0


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_bounds_over_random_points(spec):
    env = make_env(spec)
    x = np.random.default_rng(0).uniform(-1e4, 1e4, 100_000)
    v = env.eval(x)
    assert v.min() >= spec.ei and v.max() <= spec.es


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_lipschitz_quotient(spec):
    env = make_env(spec)
    rng = np.random.default_rng(1)
    x = rng.uniform(-100, 100, 20000)
    y = x + rng.uniform(-0.05, 0.05, x.size)
    q = np.abs(env.eval(x) - env.eval(y)) / np.abs(x - y)
    assert q.max() <= env.lipschitz_bound * (1 + 1e-9) + 1e-12


def test_shift_identity_example():
    env = make_env(EnvSpec.lattice(0.8, 1.2, env_seed=7))
    assert shift_env(env, 2.0).eval(5.25) == env.eval(7.25)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_shift_is_exact(x, y):
    env = make_env(SPECS[1])
    assert shift_env(env, y).eval(x) == env.eval(x + y)


def test_shift_group_laws():
    env = make_env(SPECS[1])
    xs = np.linspace(-10, 10, 101)
    assert np.array_equal(shift_env(env, 0.0).eval(xs), env.eval(xs))
    assert np.array_equal(shift_env(shift_env(env, 3.0), -3.0).eval(xs), env.eval(xs))
    c = make_env(EnvSpec.constant(1.0))
    assert np.all(shift_env(c, 17.3).eval(xs) == 1.0)


def test_determinism():
    xs = np.linspace(-50, 50, 1001)
    assert np.array_equal(make_env(SPECS[1]).eval(xs), make_env(SPECS[1]).eval(xs))
    other = make_env(SPECS[1].with_seed(8)).eval(xs)
    assert not np.array_equal(other, make_env(SPECS[1]).eval(xs))


@pytest.mark.parametrize("k", [-3, 0, 5])
def test_finite_range(k):
    spec = EnvSpec.lattice(0.8, 1.2, corr_radius=1.0, env_seed=11)
    env = make_env(spec)
    mod = env.with_cell_height(k, 0.8 if env.cell_heights([k])[0] > 1.0 else 1.2)
    xs = np.linspace(k - 10, k + 10, 4001)
    changed = xs[env.eval(xs) != mod.eval(xs)]
    assert changed.size > 0
    assert np.all(np.abs(changed - k) <= 2 * spec.corr_radius + 1)


def test_cell_heights_uniform():
    env = make_env(EnvSpec.lattice(0.8, 1.2, env_seed=2))
    h = env.cell_heights(np.arange(20000))
    assert h.min() >= 0.8 and h.max() <= 1.2
    assert abs(h.mean() - 1.0) < 0.005


@pytest.mark.parametrize("bad, path", [
    ({"kind": "constant", "ei": 1.0, "es": 2.0}, "env.es"),
    ({"kind": "smoothed-lattice", "ei": 1.0, "es": 1.0, "corr_radius": 1.0, "kernel_width": 1.0}, "env.es"),
    ({"kind": "smoothed-lattice", "ei": 0.8, "es": 1.2, "corr_radius": 1.0, "kernel_width": 2.0}, "env.kernel_width"),
    ({"kind": "smoothed-lattice", "ei": 0.8, "es": 1.2}, "env.corr_radius"),
    ({"kind": "periodic", "ei": 0.8, "es": 1.2}, "env.period"),
    ({"kind": "wavy", "ei": 0.8, "es": 1.2}, "env.kind"),
    ({"kind": "constant", "ei": -1.0, "es": -1.0}, "env.ei"),
    ({"kind": "constant", "ei": 1.0, "es": 1.0, "colour": 3}, "env"),
])
def test_validation_names_field(bad, path):
    with pytest.raises(ConfigError) as e:
        EnvSpec.from_dict(bad)
    assert e.value.path == path


def test_json_round_trip():
    s = SPECS[2]
    d = json.loads(s.to_json())
    assert set(d) == {"kind", "ei", "es", "corr_radius", "kernel_width", "period", "env_seed"}
    assert EnvSpec.from_json(s.to_json()) == s
