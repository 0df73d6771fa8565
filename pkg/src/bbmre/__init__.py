"""Branching Brownian motion in a random environment: spectral fronts,
exact population simulation, spine sampling and an experiment harness."""
from .env import EnvField, EnvSpec, make_env, shift_env
from .errors import (AssumptionViolation, BBMREError, CappedRunError, ConfigError, DomainError,
                     ExtensionError, NumericalInstabilityError, RegimeError, SampleSizeError)

__version__ = "0.1.0"

__all__ = [
    "EnvField", "EnvSpec", "make_env", "shift_env",
    "AssumptionViolation", "BBMREError", "CappedRunError", "ConfigError", "DomainError",
    "ExtensionError", "NumericalInstabilityError", "RegimeError", "SampleSizeError",
]
