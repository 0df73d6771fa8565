import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from bbmre.env import EnvSpec, make_env  # noqa: E402

# numba compiles on first call, which would trip per-example deadlines
settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def const_env():
    return make_env(EnvSpec.constant(1.0))


@pytest.fixture(scope="session")
def rand_spec():
    return EnvSpec.lattice(0.8, 1.2, corr_radius=1.0, env_seed=7)


@pytest.fixture(scope="session")
def rand_env(rand_spec):
    return make_env(rand_spec)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one 'criterion N: PASS/FAIL ...' line, print it, return the verdict."""
    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
