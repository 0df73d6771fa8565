"""Strict JSON run configuration."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .bbm import DEFAULT_CAP, OffspringLaw
from .env import EnvSpec
from .errors import ConfigError
from .harness import DEFAULT_THRESHOLDS
from .io import digest
from .spectral import DEFAULT_DX, Grid

EXPERIMENT_DEFAULTS = {
    "env_stats": {"n_envs": 200, "L_sigma": 200.0, "n_sigma_envs": 100, "dx": 1e-2},
    "lln": {"t_grid": [6.0, 8.0, 10.0, 12.0], "n_reps": 100, "n_envs": 3},
    "front_gap": {"t_grid": [6.0, 8.0, 10.0, 12.0], "n_reps": 100, "n_envs": 3},
    "vt_clt": {"t": 400.0, "n_envs": 2000, "dx": 1e-2},
    "invariance_paths": {"n": 400.0, "t_grid": [0.1 * k for k in range(1, 11)], "n_envs": 2000, "dx": 1e-2},
    "annealed_mt_clt": {"T": [8.0, 12.0], "n_envs": 200, "n_reps_per_env": 4, "calibration_t": 400.0,
                        "calibration_envs": 1000},
}
THRESHOLD_KEY = {"env_stats": "env_stats", "lln": "lln", "front_gap": "front_gap", "vt_clt": "vt_clt",
                 "invariance_paths": "invariance", "annealed_mt_clt": "annealed"}
EXPERIMENTS = tuple(EXPERIMENT_DEFAULTS)

SPECTRAL_DEFAULTS = {"grid": {"x_min": -20.0, "x_max": 20.0, "dx": DEFAULT_DX, "burn_in": None},
                     "tol": 1e-11, "calibration_length": 4000.0, "calibration_dx": 1e-2,
                     "lambdas": None}
FRONT_DEFAULTS = {"t": [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]}
SIMULATE_DEFAULTS = {"T": 8.0, "checkpoints": None, "x0": 0.0, "cap": DEFAULT_CAP, "n_reps": 1,
                     "bins": 40, "prune_window": None}
SPINE_DEFAULTS = {"T": 50.0, "dt": 1e-3, "n_paths": 1, "k_max": 0, "stride": 100, "x0": 0.0}
TOP_KEYS = {"env", "law", "spectral", "front", "simulate", "spine", "experiments", "master_seed",
            "output_dir"}


def _merge(defaults: dict, given, path: str) -> dict:
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError("expected a JSON object", path)
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", path)
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def _num(d, key, path, lo=-math.inf, hi=math.inf, integer=False, optional=False):
    v = d[key]
    if v is None and optional:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError("must be a finite number", f"{path}.{key}")
    if integer and int(v) != v:
        raise ConfigError("must be an integer", f"{path}.{key}")
    if not lo <= v <= hi:
        raise ConfigError(f"must lie in [{lo}, {hi}]", f"{path}.{key}")
    return int(v) if integer else float(v)


def _nums(d, key, path, optional=False):
    v = d[key]
    if v is None and optional:
        return None
    if not isinstance(v, list) or not v:
        raise ConfigError("must be a nonempty list of numbers", f"{path}.{key}")
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigError("must be a finite number", f"{path}.{key}[{i}]")
    return [float(x) for x in v]


def _law(d, path="law") -> OffspringLaw:
    if d is None:
        return OffspringLaw.binary()
    if not isinstance(d, dict) or not d:
        raise ConfigError("expected an object {k: p_k}", path)
    for k, p in d.items():
        if not str(k).isdigit():
            raise ConfigError("offspring counts must be integer keys", f"{path}.{k}")
        if isinstance(p, bool) or not isinstance(p, (int, float)):
            raise ConfigError("probability must be a number", f"{path}.{k}")
    try:
        return OffspringLaw.from_probs(d)
    except ConfigError as e:
        raise ConfigError(str(e).split(": ", 1)[-1], path) from None


@dataclass
class RunConfig:
    env: EnvSpec
    law: OffspringLaw
    master_seed: int
    spectral: dict
    front: dict
    simulate: dict
    spine: dict
    experiments: dict
    output_dir: Optional[str] = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self) -> Grid:
        return Grid.from_dict(self.spectral["grid"], "spectral.grid")

    @property
    def digest(self) -> str:
        """Digest of the validated content; output_dir and workers are excluded."""
        return digest({"env": self.env.to_dict(), "law": self.law.to_dict(), "master_seed": self.master_seed,
                       "spectral": self.spectral, "front": self.front, "simulate": self.simulate,
                       "spine": self.spine, "experiments": self.experiments})

    @classmethod
    def from_dict(cls, d: dict, seed_override: Optional[int] = None) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("expected a JSON object", "config")
        unknown = sorted(set(d) - TOP_KEYS)
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown}", "config")
        if "env" not in d:
            raise ConfigError("missing required key", "env")
        env = EnvSpec.from_dict(d["env"], "env")
        law = _law(d.get("law"))
        if seed_override is not None:
            seed = seed_override
        elif "master_seed" not in d:
            raise ConfigError("missing required key (no wall-clock seeding)", "master_seed")
        else:
            seed = d["master_seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ConfigError("must be an unsigned 64-bit integer", "master_seed")

        sp = _merge(SPECTRAL_DEFAULTS, d.get("spectral"), "spectral")
        sp["grid"] = _merge(SPECTRAL_DEFAULTS["grid"], sp["grid"], "spectral.grid")
        Grid.from_dict(sp["grid"], "spectral.grid")
        sp["tol"] = _num(sp, "tol", "spectral", 1e-15, 1e-3)
        sp["calibration_length"] = _num(sp, "calibration_length", "spectral", 10.0)
        sp["calibration_dx"] = _num(sp, "calibration_dx", "spectral", 1e-5, 0.1)
        sp["lambdas"] = _nums(sp, "lambdas", "spectral", optional=True)

        fr = _merge(FRONT_DEFAULTS, d.get("front"), "front")
        fr["t"] = _nums(fr, "t", "front")
        if min(fr["t"]) < 0:
            raise ConfigError("times must be nonnegative", "front.t")

        sim = _merge(SIMULATE_DEFAULTS, d.get("simulate"), "simulate")
        sim["T"] = _num(sim, "T", "simulate", 0.0)
        sim["checkpoints"] = _nums(sim, "checkpoints", "simulate", optional=True)
        sim["x0"] = _num(sim, "x0", "simulate")
        sim["cap"] = _num(sim, "cap", "simulate", 1, integer=True)
        sim["n_reps"] = _num(sim, "n_reps", "simulate", 1, integer=True)
        sim["bins"] = _num(sim, "bins", "simulate", 0, integer=True)
        sim["prune_window"] = _num(sim, "prune_window", "simulate", 1e-9, optional=True)

        spn = _merge(SPINE_DEFAULTS, d.get("spine"), "spine")
        spn["T"] = _num(spn, "T", "spine", 1e-9)
        spn["dt"] = _num(spn, "dt", "spine", 1e-9, 1e-3)
        spn["n_paths"] = _num(spn, "n_paths", "spine", 1, integer=True)
        spn["k_max"] = _num(spn, "k_max", "spine", 0, integer=True)
        spn["stride"] = _num(spn, "stride", "spine", 1, integer=True)
        spn["x0"] = _num(spn, "x0", "spine")

        exps = {}
        given = d.get("experiments") or {}
        if not isinstance(given, dict):
            raise ConfigError("expected a JSON object", "experiments")
        for name, block in given.items():
            path = f"experiments.{name}"
            if name not in EXPERIMENT_DEFAULTS:
                raise ConfigError(f"unknown experiment; expected one of {list(EXPERIMENTS)}", path)
            block = dict(block or {})
            thr = block.pop("thresholds", {})
            b = _merge(EXPERIMENT_DEFAULTS[name], block, path)
            tkey = THRESHOLD_KEY[name]
            b["thresholds"] = _merge(DEFAULT_THRESHOLDS[tkey], thr, f"{path}.thresholds")
            for k, v in b["thresholds"].items():
                _num(b["thresholds"], k, f"{path}.thresholds")
            exps[name] = _validate_experiment(name, b, path)
        return cls(env, law, int(seed), sp, fr, sim, spn, exps, d.get("output_dir"), d)

    @classmethod
    def from_json(cls, text: str, seed_override: Optional[int] = None) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e}", "config") from None
        return cls.from_dict(d, seed_override)

    @classmethod
    def load(cls, path: str, seed_override: Optional[int] = None) -> "RunConfig":
        try:
            with open(path) as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(str(e), "--config") from None
        return cls.from_json(text, seed_override)

    def experiment(self, name: str) -> dict:
        if name not in EXPERIMENT_DEFAULTS:
            raise ConfigError(f"unknown experiment; expected one of {list(EXPERIMENTS)}", f"--experiment {name}")
        if name in self.experiments:
            return self.experiments[name]
        b = copy.deepcopy(EXPERIMENT_DEFAULTS[name])
        b["thresholds"] = copy.deepcopy(DEFAULT_THRESHOLDS[THRESHOLD_KEY[name]])
        return _validate_experiment(name, b, f"experiments.{name}")


def _validate_experiment(name, b, path):
    for k, v in b.items():
        if k == "thresholds":
            continue
        if isinstance(v, list):
            b[k] = _nums(b, k, path)
        elif k.startswith("n_") or k in ("calibration_envs",):
            b[k] = _num(b, k, path, 1, integer=True)
        else:
            b[k] = _num(b, k, path)
    return b
