"""Random branching-rate environments.

Three kinds are supported:

* ``constant``: xi(x) = c, with ``ei == es == c``.
* ``periodic``: a cosine of the given period with a seed-dependent random
  phase.  Ergodic under shifts but not mixing; use it for debugging only.
* ``smoothed-lattice``: every unit cell [k, k+1) carries an independent
  height, uniform in (ei, es), obtained by hashing (env_seed, k).  The
  piecewise-constant profile is convolved with the normalized C^2 bump
  ``(35/32w) (1 - (s/w)^2)^3`` supported on |s| < w, w = kernel_width.
  Each value is a convex combination of heights so ei <= xi <= es holds by
  construction, and xi(x) depends only on cells meeting (x - w - 1, x + w),
  giving finite-range dependence.

Fields are lazy: nothing is stored, any x can be evaluated, and the value is
a pure function of (spec, offset, x).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from numba import njit

from .errors import ConfigError
from .rng import mix64, uniform

KINDS = ("constant", "periodic", "smoothed-lattice")
_KIND_CODE = {"constant": 0, "periodic": 1, "smoothed-lattice": 2}

# parameter vector layout shared with the numba kernels
P_EI, P_ES, P_W, P_PERIOD, P_PHASE, P_OFFSET, P_PATCH_K, P_PATCH_H = range(8)
N_PARAMS = 8


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    ei: float
    es: float
    corr_radius: Optional[float] = None
    kernel_width: Optional[float] = None
    period: Optional[float] = None
    env_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}; expected one of {KINDS}", "kind")
        for name in ("ei", "es"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError("must be a finite number", name)
        if not 0 < self.ei <= self.es:
            raise ConfigError(f"need 0 < ei <= es, got ei={self.ei}, es={self.es}", "ei")
        if self.kind != "constant" and not self.ei < self.es:
            raise ConfigError("ei < es is required for non-constant kinds", "es")
        if self.kind == "constant" and self.ei != self.es:
            raise ConfigError("constant kind needs ei == es", "es")
        if self.kind == "smoothed-lattice":
            if self.corr_radius is None or not self.corr_radius > 0:
                raise ConfigError("corr_radius > 0 required", "corr_radius")
            if self.kernel_width is None or not self.kernel_width > 0:
                raise ConfigError("kernel_width > 0 required", "kernel_width")
            if self.kernel_width > self.corr_radius:
                raise ConfigError("kernel_width must not exceed corr_radius", "kernel_width")
        if self.kind == "periodic" and (self.period is None or not self.period > 0):
            raise ConfigError("period > 0 required", "period")
        if not isinstance(self.env_seed, int) or not 0 <= self.env_seed < 2**64:
            raise ConfigError("must be an unsigned 64-bit integer", "env_seed")

    @classmethod
    def constant(cls, c: float) -> "EnvSpec":
        return cls("constant", c, c)

    @classmethod
    def lattice(cls, ei, es, corr_radius=1.0, kernel_width=None, env_seed=0) -> "EnvSpec":
        kw = corr_radius if kernel_width is None else kernel_width
        return cls("smoothed-lattice", ei, es, corr_radius=corr_radius,
                   kernel_width=kw, env_seed=env_seed)

    def with_seed(self, env_seed: int) -> "EnvSpec":
        return replace(self, env_seed=int(env_seed))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, path: str = "env") -> "EnvSpec":
        if not isinstance(d, dict):
            raise ConfigError("expected a JSON object", path)
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - allowed)
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown}", path)
        for req in ("kind", "ei", "es"):
            if req not in d:
                raise ConfigError("missing required key", f"{path}.{req}")
        try:
            return cls(**d)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], f"{path}.{exc.path}") from None
        except TypeError as exc:
            raise ConfigError(str(exc), path) from None

    @classmethod
    def from_json(cls, text: str) -> "EnvSpec":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- kernels

@njit(cache=True, inline="always")
def _bump_cdf(s):
    if s <= -1.0:
        return 0.0
    if s >= 1.0:
        return 1.0
    s2 = s * s
    return 0.5 + (35.0 / 32.0) * s * (1.0 - s2 + 0.6 * s2 * s2 - s2 * s2 * s2 / 7.0)


@njit(cache=True, inline="always")
def _cell_height(seed, k, p):
    if k == p[P_PATCH_K]:
        return p[P_PATCH_H]
    return p[P_EI] + (p[P_ES] - p[P_EI]) * uniform(seed, np.uint64(np.int64(k)))


@njit(cache=True)
def xi_at(kind, p, seed, x):
    """Branching rate at a single point; ``p`` follows the P_* layout."""
    y = x + p[P_OFFSET]
    if kind == 0:
        return p[P_EI]
    ei = p[P_EI]
    es = p[P_ES]
    if kind == 1:
        v = 0.5 * (ei + es) + 0.5 * (es - ei) * math.cos(2.0 * math.pi * y / p[P_PERIOD] + p[P_PHASE])
    else:
        w = p[P_W]
        k0 = int(math.floor(y - w)) - 1
        k1 = int(math.floor(y + w)) + 1
        v = 0.0
        f_hi = _bump_cdf((y - k0) / w)
        for k in range(k0, k1 + 1):
            f_lo = _bump_cdf((y - k - 1) / w)
            wt = f_hi - f_lo
            if wt != 0.0:
                v += wt * _cell_height(seed, k, p)
            f_hi = f_lo
    if v < ei:
        v = ei
    elif v > es:
        v = es
    return v


@njit(cache=True)
def xi_many(kind, p, seed, xs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = xi_at(kind, p, seed, xs[i])
    return out


@njit(cache=True)
def xi_halfgrid(kind, p, seed, j0, n, half_dx):
    """xi at the points (j0 + j) * half_dx for j = 0..n-1."""
    out = np.empty(n)
    for j in range(n):
        out[j] = xi_at(kind, p, seed, (j0 + j) * half_dx)
    return out


# ---------------------------------------------------------------- fields

def _lipschitz(spec: EnvSpec) -> float:
    if spec.kind == "constant":
        return 0.0
    if spec.kind == "periodic":
        return math.pi * (spec.es - spec.ei) / spec.period
    w = spec.kernel_width
    # xi' = sum_k (h_k - h_{k-1}) K_w(x - k): at most floor(2w)+1 nonzero terms
    return (spec.es - spec.ei) * (35.0 / 32.0) / w * (math.floor(2.0 * w) + 1)


@dataclass(frozen=True)
class EnvField:
    """An immutable, lazily evaluated realization of xi(., omega)."""

    spec: EnvSpec
    offset: float = 0.0
    lipschitz_bound: float = 0.0
    patch: tuple = field(default=(), repr=False)

    @property
    def kind_code(self) -> int:
        return _KIND_CODE[self.spec.kind]

    @property
    def seed(self) -> np.uint64:
        return np.uint64(mix64(np.uint64(self.spec.env_seed) ^ np.uint64(0x5EED5EED5EED5EED)))

    @property
    def params(self) -> np.ndarray:
        p = np.zeros(N_PARAMS)
        s = self.spec
        p[P_EI], p[P_ES] = s.ei, s.es
        p[P_W] = s.kernel_width or 0.0
        p[P_PERIOD] = s.period or 0.0
        if s.kind == "periodic":
            p[P_PHASE] = 2.0 * math.pi * uniform(self.seed, np.uint64(0))
        p[P_OFFSET] = self.offset
        if self.patch:
            p[P_PATCH_K], p[P_PATCH_H] = self.patch
        else:
            p[P_PATCH_K] = math.nan
        return p

    @property
    def ei(self) -> float:
        return self.spec.ei

    @property
    def es(self) -> float:
        return self.spec.es

    @property
    def is_constant(self) -> bool:
        return self.spec.kind == "constant"

    def kernel_args(self):
        """(kind, params, seed) triple for the numba kernels."""
        return self.kind_code, self.params, self.seed

    def eval(self, x):
        kind, p, seed = self.kernel_args()
        if np.ndim(x) == 0:
            return xi_at(kind, p, seed, float(x))
        xs = np.ascontiguousarray(x, dtype=np.float64)
        return xi_many(kind, p, seed, xs.ravel()).reshape(xs.shape)

    __call__ = eval

    def shift(self, y: float) -> "EnvField":
        return shift_env(self, y)

    def with_cell_height(self, k: int, height: float) -> "EnvField":
        """Copy with lattice cell ``k`` forced to ``height`` (finite-range checks)."""
        if self.spec.kind != "smoothed-lattice":
            raise ConfigError("only smoothed-lattice fields have cells", "kind")
        return replace(self, patch=(float(k), float(height)))

    def cell_heights(self, ks) -> np.ndarray:
        kind, p, seed = self.kernel_args()
        return np.array([_cell_height(seed, int(k), p) for k in np.atleast_1d(ks)])


def make_env(spec: EnvSpec) -> EnvField:
    if not isinstance(spec, EnvSpec):
        raise ConfigError("expected an EnvSpec", "spec")
    return EnvField(spec=spec, offset=0.0, lipschitz_bound=_lipschitz(spec))


def shift_env(env: EnvField, y: float) -> EnvField:
    """The shifted environment x -> xi(x + y)."""
    return replace(env, offset=env.offset + float(y))
