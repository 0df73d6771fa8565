"""Spectral objects of the tilted Feynman-Kac problem.

With u = psi_x / psi the eigen-equation ``psi''/2 + (m-1) xi psi = gamma psi``
becomes the Riccati flow

    u' = 2 (gamma - (m-1) xi(x)) - u^2 .

For gamma > (m-1) es it has an attracting branch in the band
[K2, K1] (increasing psi, integrated forward in x) and a mirror branch in
[-K1, -K2] (decaying psi, integrated backward), where
K2 = sqrt(2 (gamma - (m-1) es)) and K1 = sqrt(2 (gamma - (m-1) ei)).
The spatial mean of |u| is the Lyapunov exponent; inverting it in gamma gives
gamma(lambda).  Everything else (lambda*, v*, the front V_t, g = psi_lambda /
psi, the variance constants) is built on top of that one kernel.
"""
from __future__ import annotations

import csv
import io
import json
import math
import threading
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from numba import njit
from scipy import optimize

from .env import EnvField, EnvSpec, make_env, xi_halfgrid
from .errors import (AssumptionViolation, ConfigError, DomainError, ExtensionError,
                     NumericalInstabilityError, RegimeError)
from .rng import derive_seed
from .stats import StatResult, variance_jackknife

DEFAULT_DX = 1e-3
DEFAULT_TOL = 1e-8
FOC_RTOL = 1e-4
BAND_RTOL = 1e-9
MAX_NODES = 60_000_000
MAX_AUTO_BURN_IN = 1000.0

DECAYING = "decaying"
INCREASING = "increasing"


# ---------------------------------------------------------------- grid

@dataclass(frozen=True)
class Grid:
    """Integration window [x_min, x_max] with step dx.

    ``burn_in=None`` picks 20/K2 per gamma (transients decay like
    exp(-2 K2 x)), capped at MAX_AUTO_BURN_IN.
    """

    x_min: float
    x_max: float
    dx: float = DEFAULT_DX
    burn_in: Optional[float] = None

    def __post_init__(self):
        if not self.dx > 0:
            raise ConfigError("dx must be positive", "dx")
        if not self.x_max > self.x_min:
            raise ConfigError("x_max must exceed x_min", "x_max")
        if self.burn_in is not None:
            if not self.burn_in > 0:
                raise ConfigError("burn_in must be positive", "burn_in")
            if self.x_max - self.x_min < 10 * self.burn_in:
                raise ConfigError("need x_max - x_min >= 10 * burn_in", "burn_in")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    def burn_in_for(self, k2: float) -> float:
        if self.burn_in is not None:
            return self.burn_in
        auto = 20.0 / k2 if k2 > 0 else math.inf
        return min(auto, MAX_AUTO_BURN_IN)

    def node_range(self):
        """Node indices (i_lo, i_hi) of the hull of the window and 0."""
        i_lo = math.floor(min(self.x_min, 0.0) / self.dx + 1e-9)
        i_hi = math.ceil(max(self.x_max, 0.0) / self.dx - 1e-9)
        return i_lo, i_hi

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d, path="grid") -> "Grid":
        if not isinstance(d, dict):
            raise ConfigError("expected a JSON object", path)
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown}", path)
        try:
            return cls(**d)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], f"{path}.{exc.path}") from None
        except TypeError as exc:
            raise ConfigError(str(exc), path) from None


def band(gamma, m, ei, es):
    """(K2, K1) for the given gamma; raises DomainError below the band."""
    m1 = m - 1.0
    lo = gamma - m1 * es
    if not lo > 0:
        raise DomainError(f"gamma={gamma} must exceed (m-1)*es={m1 * es}")
    return math.sqrt(2.0 * lo), math.sqrt(2.0 * (gamma - m1 * ei))


# ---------------------------------------------------------------- kernels

@njit(cache=True)
def _sweep_store(xis, j0, dj, n, gamma, m1, u0, h, out):
    """RK4 over n steps; xis[j0 + 2 i dj] is xi at the i-th node of the sweep."""
    u = u0
    out[0] = u
    j = j0
    for i in range(n):
        a0 = 2.0 * (gamma - m1 * xis[j])
        a1 = 2.0 * (gamma - m1 * xis[j + dj])
        a2 = 2.0 * (gamma - m1 * xis[j + 2 * dj])
        k1 = a0 - u * u
        t = u + 0.5 * h * k1
        k2 = a1 - t * t
        t = u + 0.5 * h * k2
        k3 = a1 - t * t
        t = u + h * k3
        k4 = a2 - t * t
        u = u + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        out[i + 1] = u
        j += 2 * dj
    return u


@njit(cache=True)
def _sweep_integral(xis, j0, dj, n_burn, n_win, gamma, m1, u0, h, dx):
    """RK4 without storage; returns (trapezoid integral of u, min u, max u) over the window."""
    u = u0
    j = j0
    acc = 0.0
    umin = np.inf
    umax = -np.inf
    for i in range(n_burn + n_win):
        a0 = 2.0 * (gamma - m1 * xis[j])
        a1 = 2.0 * (gamma - m1 * xis[j + dj])
        a2 = 2.0 * (gamma - m1 * xis[j + 2 * dj])
        k1 = a0 - u * u
        t = u + 0.5 * h * k1
        k2 = a1 - t * t
        t = u + 0.5 * h * k2
        k3 = a1 - t * t
        t = u + h * k3
        k4 = a2 - t * t
        un = u + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if i >= n_burn:
            acc += 0.5 * (u + un) * dx
            if un < umin:
                umin = un
            if un > umax:
                umax = un
        elif i == n_burn - 1:
            umin = un
            umax = un
        u = un
        j += 2 * dj
    return acc, umin, umax


@njit(cache=True)
def _sweep_crossings(xis, j0, n_burn, n_max, gamma, m1, u0, dx, targets, out):
    """Forward sweep; for each ascending target, the index-space position
    where the running integral of u (zero at the node after the burn-in)
    first reaches it.  Unreached targets are left at -1."""
    u = u0
    j = j0
    acc = 0.0
    h = dx
    q = 0
    nt = targets.shape[0]
    for k in range(nt):
        out[k] = -1.0
    while q < nt and targets[q] <= 0.0:
        out[q] = 0.0
        q += 1
    for i in range(n_burn + n_max):
        if q >= nt:
            break
        a0 = 2.0 * (gamma - m1 * xis[j])
        a1 = 2.0 * (gamma - m1 * xis[j + 1])
        a2 = 2.0 * (gamma - m1 * xis[j + 2])
        k1 = a0 - u * u
        t = u + 0.5 * h * k1
        k2 = a1 - t * t
        t = u + 0.5 * h * k2
        k3 = a1 - t * t
        t = u + h * k3
        k4 = a2 - t * t
        un = u + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if i >= n_burn:
            nxt = acc + 0.5 * (u + un) * dx
            while q < nt and nxt >= targets[q]:
                out[q] = (i - n_burn) + (targets[q] - acc) / (nxt - acc)
                q += 1
            acc = nxt
        u = un
        j += 2


@njit(cache=True)
def _cumtrapz_from(u, i0, dx):
    """Trapezoid antiderivative of u with value 0 at index i0."""
    n = u.shape[0]
    out = np.empty(n)
    out[i0] = 0.0
    for i in range(i0 + 1, n):
        out[i] = out[i - 1] + 0.5 * (u[i - 1] + u[i]) * dx
    for i in range(i0 - 1, -1, -1):
        out[i] = out[i + 1] - 0.5 * (u[i] + u[i + 1]) * dx
    return out


# ---------------------------------------------------------------- xi cache

class XiTable:
    """xi sampled at half-steps j * dx / 2 over a growing index range."""

    def __init__(self, env: EnvField, dx: float):
        self.env = env
        self.dx = dx
        self.j_lo = 0
        self.values = np.empty(0)

    @property
    def j_hi(self) -> int:
        return self.j_lo + self.values.size - 1

    def _compute(self, j0, n):
        kind, p, seed = self.env.kernel_args()
        return xi_halfgrid(kind, p, seed, j0, n, 0.5 * self.dx)

    def ensure(self, j_lo: int, j_hi: int) -> None:
        if j_hi - j_lo + 1 > 2 * MAX_NODES + 1:
            raise ExtensionError(f"xi table of {j_hi - j_lo + 1} points exceeds the node cap")
        if self.values.size == 0:
            self.j_lo = j_lo
            self.values = self._compute(j_lo, j_hi - j_lo + 1)
            return
        parts = []
        if j_lo < self.j_lo:
            parts.append(self._compute(j_lo, self.j_lo - j_lo))
        parts.append(self.values)
        if j_hi > self.j_hi:
            parts.append(self._compute(self.j_hi + 1, j_hi - self.j_hi))
        if len(parts) > 1:
            self.j_lo = min(j_lo, self.j_lo)
            self.values = np.concatenate(parts)

    def index(self, j: int) -> int:
        return j - self.j_lo


_XI_CACHE: "OrderedDict[tuple, XiTable]" = OrderedDict()
_XI_CACHE_SIZE = 4


def xi_table(env: EnvField, dx: float) -> XiTable:
    key = (env, float(dx))
    tab = _XI_CACHE.get(key)
    if tab is None:
        tab = XiTable(env, dx)
        _XI_CACHE[key] = tab
        while len(_XI_CACHE) > _XI_CACHE_SIZE:
            _XI_CACHE.popitem(last=False)
    else:
        _XI_CACHE.move_to_end(key)
    return tab


def clear_xi_cache() -> None:
    _XI_CACHE.clear()


# ---------------------------------------------------------------- profiles

def _orientation(value: str) -> str:
    if value not in (DECAYING, INCREASING):
        raise ConfigError(f"orientation must be {DECAYING!r} or {INCREASING!r}", "orientation")
    return value


def orientation_of(lam: float) -> str:
    if lam == 0:
        raise DomainError("lambda must be nonzero")
    return DECAYING if lam > 0 else INCREASING


class PsiProfile:
    """u = psi_x / psi and ln psi on the nodes x_i = i * dx, i_lo <= i <= i_hi.

    The profile can grow on demand (``ensure``).  Growth on the continuation
    side (right for increasing, left for decaying) extends the sweep exactly;
    growth on the start side re-integrates with a longer window, which moves
    the stored values by a relative amount of order exp(-2 K2 burn_in).
    """

    def __init__(self, env, gamma, orientation, m, dx, i_lo, u, burn_in, lam=None):
        self.env = env
        self.gamma = float(gamma)
        self.orientation = orientation
        self.m = float(m)
        self.dx = float(dx)
        self.i_lo = int(i_lo)
        self.u = u
        self.burn_in = float(burn_in)
        self.K2, self.K1 = band(gamma, m, env.ei, env.es)
        self.ln_psi = _cumtrapz_from(u, -self.i_lo, self.dx)
        self._lock = threading.RLock()
        if lam is None:
            lam = (-1.0 if orientation == INCREASING else 1.0) * lyapunov_exponent(self)
        self.lam = float(lam)

    # -- geometry
    @property
    def i_hi(self) -> int:
        return self.i_lo + self.u.size - 1

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.i_lo, self.i_hi + 1) * self.dx

    @property
    def x_min(self) -> float:
        return self.i_lo * self.dx

    @property
    def x_max(self) -> float:
        return self.i_hi * self.dx

    def covers(self, a: float, b: float) -> bool:
        return self.x_min <= a and b <= self.x_max

    # -- lookups
    def _locate(self, x):
        s = np.asarray(x, dtype=float) / self.dx - self.i_lo
        if np.any(s < 0) or np.any(s > self.u.size - 1) or not np.all(np.isfinite(s)):
            raise ExtensionError(f"x outside profile range [{self.x_min}, {self.x_max}]")
        k = np.minimum(np.floor(s).astype(np.int64), self.u.size - 2)
        return k, s - k

    def _interp(self, arr, x):
        k, f = self._locate(x)
        out = arr[k] * (1.0 - f) + arr[k + 1] * f
        return float(out) if np.ndim(x) == 0 else out

    def u_at(self, x):
        self.ensure(np.min(x), np.max(x))
        return self._interp(self.u, x)

    def ln_psi_at(self, x):
        self.ensure(np.min(x), np.max(x))
        return self._interp(self.ln_psi, x)

    def ln_phi_at(self, x):
        return self.ln_psi_at(x) + self.lam * np.asarray(x, dtype=float)

    # -- growth
    def table(self):
        """Consistent (u, i_lo) pair for kernels."""
        with self._lock:
            return self.u, self.i_lo

    def ensure(self, a: float, b: float, margin: float = 1.0) -> "PsiProfile":
        a, b = float(a), float(b)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ExtensionError("non-finite coordinate requested")
        if self.covers(a, b):
            return self
        with self._lock:
            if not self.covers(a, b):
                self._grow(a, b, margin)
        return self

    def _grow(self, a, b, margin):
        lo = min(a - margin, self.x_min)
        hi = max(b + margin, self.x_max)
        # grow geometrically to amortize repeated small extensions
        width = self.x_max - self.x_min
        if hi > self.x_max:
            hi = max(hi, self.x_max + 0.5 * width)
        if lo < self.x_min:
            lo = min(lo, self.x_min - 0.5 * width)
        if (hi - lo) / self.dx > MAX_NODES:
            raise ExtensionError(f"profile extension to [{lo}, {hi}] exceeds {MAX_NODES} nodes")
        i_lo = math.floor(lo / self.dx + 1e-9)
        i_hi = math.ceil(hi / self.dx - 1e-9)
        cont_ok = (self.orientation == INCREASING and i_lo >= self.i_lo) or \
                  (self.orientation == DECAYING and i_hi <= self.i_hi)
        if cont_ok:
            self._continue(i_lo, i_hi)
        else:
            fresh = _integrate(self.env, self.gamma, self.orientation, self.m, self.dx,
                               min(i_lo, self.i_lo), max(i_hi, self.i_hi), self.burn_in)
            self.i_lo, self.u, self.ln_psi = fresh.i_lo, fresh.u, fresh.ln_psi

    def _continue(self, i_lo, i_hi):
        tab = xi_table(self.env, self.dx)
        m1 = self.m - 1.0
        if self.orientation == INCREASING:
            n = i_hi - self.i_hi
            tab.ensure(2 * self.i_hi, 2 * i_hi)
            out = np.empty(n + 1)
            _sweep_store(tab.values, tab.index(2 * self.i_hi), 1, n, self.gamma, m1,
                         self.u[-1], self.dx, out)
            _check_band(out[1:], self.orientation, self.K2, self.K1, self.i_hi + 1, self.dx)
            self.u = np.concatenate([self.u, out[1:]])
            ext = np.empty(n)
            acc = self.ln_psi[-1]
            prev = self.u[self.u.size - n - 1]
            for k in range(n):
                acc = acc + 0.5 * (prev + out[k + 1]) * self.dx
                ext[k] = acc
                prev = out[k + 1]
            self.ln_psi = np.concatenate([self.ln_psi, ext])
        else:
            n = self.i_lo - i_lo
            tab.ensure(2 * i_lo, 2 * self.i_lo)
            out = np.empty(n + 1)
            _sweep_store(tab.values, tab.index(2 * self.i_lo), -1, n, self.gamma, m1,
                         self.u[0], -self.dx, out)
            new = out[1:][::-1]
            _check_band(new, self.orientation, self.K2, self.K1, i_lo, self.dx)
            ext = np.empty(n)
            acc = self.ln_psi[0]
            prev = self.u[0]
            for k in range(n):
                acc = acc - 0.5 * (prev + out[k + 1]) * self.dx
                ext[n - 1 - k] = acc
                prev = out[k + 1]
            self.u = np.concatenate([new, self.u])
            self.ln_psi = np.concatenate([ext, self.ln_psi])
            self.i_lo = i_lo

    # -- export
    def to_csv(self, stride: int = 1) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "u", "ln_psi"])
        for i in range(0, self.u.size, stride):
            w.writerow([repr(float((self.i_lo + i) * self.dx)), repr(float(self.u[i])),
                        repr(float(self.ln_psi[i]))])
        return buf.getvalue()

    def __repr__(self):
        return (f"PsiProfile(lam={self.lam:.6g}, gamma={self.gamma:.10g}, "
                f"orientation={self.orientation}, x=[{self.x_min:g}, {self.x_max:g}], dx={self.dx:g})")


def _check_band(u, orientation, k2, k1, i_first, dx):
    slack = BAND_RTOL * k1 + 1e-12
    mag = -u if orientation == DECAYING else u
    bad = (mag < k2 - slack) | (mag > k1 + slack) | ~np.isfinite(mag)
    if np.any(bad):
        dev = np.where(np.isfinite(mag), np.maximum(k2 - mag, mag - k1), np.inf)
        i = int(np.argmax(dev))
        raise NumericalInstabilityError(
            f"u left the band [{k2:.6g}, {k1:.6g}] (|u|={mag[i]:.6g})", worst_x=(i_first + i) * dx)


def _integrate(env, gamma, orientation, m, dx, i_lo, i_hi, burn_in) -> PsiProfile:
    k2, k1 = band(gamma, m, env.ei, env.es)
    nb = max(1, math.ceil(burn_in / dx - 1e-9))
    n = i_hi - i_lo
    if n + nb > MAX_NODES:
        raise ExtensionError(f"{n + nb} nodes exceed the node cap {MAX_NODES}")
    tab = xi_table(env, dx)
    m1 = m - 1.0
    out = np.empty(n + nb + 1)
    if orientation == INCREASING:
        i_s = i_lo - nb
        tab.ensure(2 * i_s, 2 * i_hi)
        _sweep_store(tab.values, tab.index(2 * i_s), 1, n + nb, gamma, m1, k2, dx, out)
        u = out[nb:].copy()
    else:
        i_s = i_hi + nb
        tab.ensure(2 * i_lo, 2 * i_s)
        _sweep_store(tab.values, tab.index(2 * i_s), -1, n + nb, gamma, m1, -k2, -dx, out)
        u = out[nb:][::-1].copy()
    _check_band(u, orientation, k2, k1, i_lo, dx)
    return PsiProfile(env, gamma, orientation, m, dx, i_lo, u, burn_in)


def riccati_profile(env: EnvField, gamma: float, orientation: str, grid: Grid, m: float,
                    lam: Optional[float] = None) -> PsiProfile:
    """Stable Riccati branch on ``grid`` (extended to include x = 0).

    ``lam`` labels the profile; by default it is the signed Lyapunov exponent.
    """
    _orientation(orientation)
    k2, _ = band(gamma, m, env.ei, env.es)
    i_lo, i_hi = grid.node_range()
    prof = _integrate(env, gamma, orientation, m, grid.dx, i_lo, i_hi, grid.burn_in_for(k2))
    if lam is None:
        lam = (-1.0 if orientation == INCREASING else 1.0) * lyapunov_exponent(prof)
    prof.lam = float(lam)
    return prof


def lyapunov_exponent(profile: PsiProfile) -> float:
    """Spatial mean of |u| over the stored (post burn-in) window."""
    span = profile.x_max - profile.x_min
    d = (profile.ln_psi[-1] - profile.ln_psi[0]) / span
    return -d if profile.orientation == DECAYING else d


# ---------------------------------------------------------------- gamma(lambda)

class _LyapunovMap:
    """gamma -> Lyapunov exponent on a fixed window, reusing one xi table."""

    def __init__(self, env, grid, m, orientation, gamma_lo):
        self.env, self.grid, self.m, self.orientation = env, grid, float(m), orientation
        self.i_lo, self.i_hi = grid.node_range()
        k2, _ = band(gamma_lo, m, env.ei, env.es) if gamma_lo > (m - 1) * env.es else (0.0, 0.0)
        self.burn_in = grid.burn_in_for(k2)
        self.nb = max(1, math.ceil(self.burn_in / grid.dx - 1e-9))
        if (self.i_hi - self.i_lo) + self.nb > MAX_NODES:
            raise ExtensionError("window plus burn-in exceed the node cap")
        self.tab = xi_table(env, grid.dx)
        if orientation == INCREASING:
            self.tab.ensure(2 * (self.i_lo - self.nb), 2 * self.i_hi)
        else:
            self.tab.ensure(2 * self.i_lo, 2 * (self.i_hi + self.nb))

    def __call__(self, gamma):
        k2, k1 = band(gamma, self.m, self.env.ei, self.env.es)
        dx, n = self.grid.dx, self.i_hi - self.i_lo
        m1 = self.m - 1.0
        if self.orientation == INCREASING:
            j0 = self.tab.index(2 * (self.i_lo - self.nb))
            acc, lo, hi = _sweep_integral(self.tab.values, j0, 1, self.nb, n, gamma, m1, k2, dx, dx)
            lyap = acc / (n * dx)
        else:
            j0 = self.tab.index(2 * (self.i_hi + self.nb))
            acc, lo, hi = _sweep_integral(self.tab.values, j0, -1, self.nb, n, gamma, m1, -k2, -dx, dx)
            lyap = -acc / (n * dx)
            lo, hi = -hi, -lo
        slack = BAND_RTOL * k1 + 1e-12
        if lo < k2 - slack or hi > k1 + slack or not math.isfinite(acc):
            raise NumericalInstabilityError(f"u left the band at gamma={gamma}")
        return lyap


def gamma_bracket(lam: float, m: float, ei: float, es: float):
    m1 = m - 1.0
    eps = 1e-12 * max(1.0, m1 * es)
    lo = max(m1 * ei + 0.5 * lam * lam, m1 * es + eps)
    hi = m1 * es + 0.5 * lam * lam
    return lo, hi


def gamma_of_lambda(env: EnvField, lam: float, grid: Grid, m: float, tol: float = DEFAULT_TOL) -> float:
    """gamma(lambda) by bracketed root finding on the Lyapunov exponent.

    Only |lambda| enters, so the result is even in lambda.
    """
    if lam == 0 or not math.isfinite(lam):
        raise DomainError("lambda must be finite and nonzero")
    a = abs(float(lam))
    m1 = m - 1.0
    lo, hi = gamma_bracket(a, m, env.ei, env.es)
    if hi <= m1 * env.es + 1e-12 * max(1.0, m1 * env.es) or lo > hi:
        raise RegimeError("lambda too close to rho: gamma(lambda) <= (m-1)es not representable")
    if hi - lo <= tol:
        # sandwich collapses (constant field): the bracket is the answer
        return 0.5 * (lo + hi)
    # orientation does not matter for the exponent; use the decaying branch
    f = _LyapunovMap(env, grid, m, DECAYING, lo)
    f_lo = f(lo) - a
    f_hi = f(hi) - a
    if f_lo > 0:
        raise RegimeError("lambda too close to rho: gamma(lambda) <= (m-1)es not representable")
    if f_lo == 0:
        return lo
    if f_hi <= 0:
        return hi
    return float(optimize.brentq(lambda g: f(g) - a, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps))


@dataclass(frozen=True)
class GammaCurve:
    lambdas: np.ndarray
    gammas: np.ndarray
    derivatives: np.ndarray
    m: float
    ei: float
    es: float

    def sandwich_ok(self, tol=DEFAULT_TOL) -> bool:
        m1 = self.m - 1.0
        half = 0.5 * self.lambdas ** 2
        return bool(np.all(self.gammas >= m1 * self.ei + half - tol)
                    and np.all(self.gammas <= m1 * self.es + half + tol))

    def is_increasing(self) -> bool:
        return bool(np.all(np.diff(self.gammas) > 0))

    def second_differences(self) -> np.ndarray:
        """Second divided differences (nonnegative for a convex curve)."""
        l, g = self.lambdas, self.gammas
        s = np.diff(g) / np.diff(l)
        return 2.0 * np.diff(s) / (l[2:] - l[:-2])

    def is_convex(self, tol=1e-6) -> bool:
        return bool(np.all(self.second_differences() >= -tol))

    def foc_sign(self) -> np.ndarray:
        """Sign of lambda gamma'(lambda) - gamma(lambda) per sample."""
        return np.sign(self.lambdas * self.derivatives - self.gammas)


def gamma_prime(env, lam, grid, m, rel_h=1e-3, tol=1e-12) -> float:
    h = rel_h * abs(lam)
    return (gamma_of_lambda(env, lam + h, grid, m, tol) - gamma_of_lambda(env, lam - h, grid, m, tol)) / (2 * h)


def gamma_curve(env, lambdas: Sequence[float], grid: Grid, m: float, tol: float = 1e-11) -> GammaCurve:
    lams = np.asarray(sorted(float(l) for l in lambdas))
    if lams.size == 0 or np.any(lams <= 0):
        raise ConfigError("lambdas must be a nonempty set of positive numbers", "lambdas")
    g = np.array([gamma_of_lambda(env, l, grid, m, tol) for l in lams])
    d = np.array([gamma_prime(env, l, grid, m, tol=tol) for l in lams])
    return GammaCurve(lams, g, d, float(m), env.ei, env.es)


# ---------------------------------------------------------------- lambda*

@dataclass(frozen=True)
class SpectralSummary:
    lambda_star: float
    v_star: float
    gamma_star: float
    K1: float
    K2: float
    C1: float
    C2: float
    h2_margin: float
    gamma_prime: float
    foc_residual: float
    m: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "SpectralSummary":
        return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__})


def summary_from(lam_star, gamma_star, gprime, m, ei, es) -> SpectralSummary:
    m1 = m - 1.0
    margin = gamma_star - m1 * es
    if not margin > 0:
        raise AssumptionViolation("(H2) fails for this environment: gamma(lambda*) <= (m-1)es")
    k2, k1 = band(gamma_star, m, ei, es)
    return SpectralSummary(
        lambda_star=float(lam_star), v_star=float(gamma_star / lam_star), gamma_star=float(gamma_star),
        K1=k1, K2=k2, C1=float(gprime / k2), C2=float(gprime / k1), h2_margin=float(margin),
        gamma_prime=float(gprime), foc_residual=float(lam_star * gprime - gamma_star), m=float(m))


def find_lambda_star(env: EnvField, grid: Grid, m: float, tol: float = 1e-11,
                     foc_rtol: float = FOC_RTOL, n_scan: int = 25) -> SpectralSummary:
    """Minimize gamma(lambda)/lambda: coarse scan, then golden section."""
    m1 = m - 1.0
    if not m1 > 0:
        raise ConfigError("offspring mean must exceed 1", "m")
    if env.is_constant:
        # closed form: gamma = (m-1)c + lambda^2/2 exactly, so lambda* = sqrt(2(m-1)c)
        lam = math.sqrt(2.0 * m1 * env.ei)
        return summary_from(lam, m1 * env.ei + 0.5 * lam * lam, lam, m, env.ei, env.es)

    def ratio(lam):
        try:
            return gamma_of_lambda(env, lam, grid, m, tol) / lam
        except RegimeError:
            return math.inf

    lam_lo = 0.2 * math.sqrt(2.0 * m1 * env.ei)
    lam_hi = 2.5 * math.sqrt(2.0 * m1 * env.es)
    lams = np.geomspace(lam_lo, lam_hi, n_scan)
    vals = np.array([ratio(l) for l in lams])
    if not np.any(np.isfinite(vals)):
        raise AssumptionViolation("(H2) fails for this environment: no lambda in the representable regime")
    i = int(np.argmin(vals))
    if i == 0 or i == n_scan - 1 or not np.isfinite(vals[i - 1]):
        raise AssumptionViolation("(H2) fails for this environment: gamma/lambda minimal at the regime edge")
    res = optimize.minimize_scalar(ratio, bracket=(lams[i - 1], lams[i], lams[i + 1]),
                                   method="golden", options={"xtol": 1e-9})
    lam = float(res.x)
    g = gamma_of_lambda(env, lam, grid, m, tol)
    gp = gamma_prime(env, lam, grid, m, tol=tol)
    summ = summary_from(lam, g, gp, m, env.ei, env.es)
    if abs(summ.foc_residual) > foc_rtol * g:
        raise NumericalInstabilityError(
            f"first-order condition violated: |lambda* gamma' - gamma| = {abs(summ.foc_residual):.3g}")
    return summ


# ---------------------------------------------------------------- front

class FrontTable:
    """V_t from the increasing profile at (-lambda*, gamma*)."""

    def __init__(self, profile: PsiProfile, summary: SpectralSummary):
        if profile.orientation != INCREASING:
            raise ConfigError("front table needs the increasing profile", "profile")
        self.profile = profile
        self.summary = summary

    def _ensure_target(self, target):
        p = self.profile
        while p.ln_psi[-1] < target:
            need = p.x_max + (target - p.ln_psi[-1]) / p.K2 + 1.0
            p.ensure(p.x_min, need, margin=0.0)

    def V(self, t):
        ts = np.asarray(t, dtype=float)
        if np.any(ts < 0) or not np.all(np.isfinite(ts)):
            raise DomainError("t must be finite and nonnegative")
        targets = self.summary.gamma_star * ts
        self._ensure_target(float(np.max(targets)) if targets.size else 0.0)
        p = self.profile
        lp = p.ln_psi
        i0 = -p.i_lo
        # ln psi is strictly increasing, so searchsorted is a monotone bisection
        k = np.searchsorted(lp, targets, side="left")
        k = np.clip(k, max(i0, 1), lp.size - 1)
        frac = (targets - lp[k - 1]) / (lp[k] - lp[k - 1])
        x = (p.i_lo + k - 1 + frac) * p.dx
        x = np.where(targets == 0, 0.0, x)
        return float(x) if ts.ndim == 0 else x

    __call__ = V

    def to_csv(self, ts) -> str:
        vs = np.atleast_1d(self.V(np.asarray(ts, dtype=float)))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "V_t"])
        for t, v in zip(np.atleast_1d(ts), vs):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue()


def front_table(env: EnvField, summary: SpectralSummary, grid: Grid) -> FrontTable:
    g = Grid(min(grid.x_min, -1.0), max(grid.x_max, 1.0), grid.dx, grid.burn_in)
    prof = riccati_profile(env, summary.gamma_star, INCREASING, g, summary.m, lam=-summary.lambda_star)
    return FrontTable(prof, summary)


def front_positions(env: EnvField, gamma: float, m: float, ts, dx: float = DEFAULT_DX,
                    burn_in: Optional[float] = None) -> np.ndarray:
    """V_t for every t in ``ts`` by one forward sweep from -burn_in, storing
    nothing.  Same nodes and summation order as ``front_table``, so the two
    agree to rounding whenever their burn-in lengths match."""
    ts = np.asarray(ts, dtype=float)
    if np.any(ts < 0) or not np.all(np.isfinite(ts)):
        raise DomainError("t must be finite and nonnegative")
    k2, _ = band(gamma, m, env.ei, env.es)
    order = np.argsort(ts, kind="stable")
    targets = gamma * ts[order]
    if burn_in is None:
        burn_in = min(20.0 / k2, MAX_AUTO_BURN_IN)
    nb = max(1, math.ceil(burn_in / dx - 1e-9))
    top = float(targets[-1]) if targets.size else 0.0
    n_max = math.ceil(top / k2 / dx) + 2
    if n_max + nb > MAX_NODES:
        raise ExtensionError("front sweep exceeds the node cap")
    tab = xi_table(env, dx)
    tab.ensure(-2 * nb, 2 * n_max)
    idx = np.empty(targets.size)
    _sweep_crossings(tab.values, tab.index(-2 * nb), nb, n_max, gamma, m - 1.0, k2, dx, targets, idx)
    if np.any(idx < 0):
        raise NumericalInstabilityError("front sweep did not reach the target level")
    out = np.empty(ts.size)
    out[order] = idx * dx
    return out


def front_position(env: EnvField, gamma: float, m: float, t: float, dx: float = DEFAULT_DX,
                   burn_in: Optional[float] = None) -> float:
    return float(front_positions(env, gamma, m, [t], dx, burn_in)[0])


def _front_rows(args):
    spec, tag, idx, gamma, m, ts, dx = args
    rows = []
    for i in idx:
        rows.append(front_positions(ensemble_env(spec, tag, i), gamma, m, ts, dx))
        clear_xi_cache()
    return rows


def front_ensemble(spec: EnvSpec, tag: str, n_envs: int, gamma: float, m: float, ts,
                   dx: float = DEFAULT_DX, workers: int = 1) -> np.ndarray:
    """(n_envs, len(ts)) array of V_t over environments seeded by (tag, i)."""
    ts = tuple(float(t) for t in ts)
    tasks = [(spec, tag, idx, gamma, m, ts, dx) for idx in chunk_indices(n_envs, workers)]
    out = np.empty((n_envs, len(ts)))
    for t_, rows in zip(tasks, map_chunks(_front_rows, tasks, workers)):
        out[t_[2]] = rows
    return out


# ---------------------------------------------------------------- g profile

@dataclass
class GProfile:
    lam: float
    h: float
    i_lo: int
    dx: float
    g: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return (self.i_lo + np.arange(self.g.size)) * self.dx

    def at(self, x):
        s = np.asarray(x, dtype=float) / self.dx - self.i_lo
        if np.any(s < 0) or np.any(s > self.g.size - 1):
            raise ExtensionError("x outside g profile range")
        k = np.minimum(np.floor(s).astype(np.int64), self.g.size - 2)
        f = s - k
        out = self.g[k] * (1 - f) + self.g[k + 1] * f
        return float(out) if np.ndim(x) == 0 else out

    def slopes(self) -> np.ndarray:
        return np.diff(self.g) / self.dx


def g_profile(env: EnvField, lam: float, grid: Grid, m: float, h: Optional[float] = None,
              gammas: Optional[tuple] = None, tol: float = 1e-11) -> GProfile:
    """g = psi_lambda / psi by a central difference in lambda.

    ``gammas`` may supply (gamma(lam - h), gamma(lam + h)) computed elsewhere,
    e.g. deterministic values from a calibration environment.
    """
    if h is None:
        h = 1e-3 * abs(lam)
    if not h > 0 or abs(lam) <= h:
        raise ConfigError("need 0 < h < |lambda|", "h")
    orient = orientation_of(lam)
    if gammas is None:
        gammas = (gamma_of_lambda(env, lam - h, grid, m, tol), gamma_of_lambda(env, lam + h, grid, m, tol))
    g_minus, g_plus = gammas
    pm = riccati_profile(env, g_minus, orient, grid, m, lam=lam - h)
    pp = riccati_profile(env, g_plus, orient, grid, m, lam=lam + h)
    g = (pp.ln_psi - pm.ln_psi) / (2.0 * h)
    g[-pp.i_lo] = 0.0
    return GProfile(float(lam), float(h), pp.i_lo, pp.dx, g)


# ---------------------------------------------------------------- ensembles

def window_log_psi(env: EnvField, gamma: float, m: float, orientation: str, L: float,
                   dx: float = DEFAULT_DX, burn_in: Optional[float] = None) -> float:
    """ln psi(L) for the profile normalized at 0, computed without storage."""
    k2, k1 = band(gamma, m, env.ei, env.es)
    if burn_in is None:
        burn_in = 20.0 / k2
    nb = max(1, math.ceil(burn_in / dx - 1e-9))
    n = int(round(L / dx))
    if n < 1:
        raise ConfigError("L must be at least one step", "L")
    tab = xi_table(env, dx)
    m1 = m - 1.0
    if orientation == INCREASING:
        tab.ensure(-2 * nb, 2 * n)
        acc, lo, hi = _sweep_integral(tab.values, tab.index(-2 * nb), 1, nb, n, gamma, m1, k2, dx, dx)
    else:
        tab.ensure(0, 2 * (n + nb))
        acc, lo, hi = _sweep_integral(tab.values, tab.index(2 * (n + nb)), -1, nb, n, gamma, m1, -k2, -dx, dx)
        lo, hi = -hi, -lo
    slack = BAND_RTOL * k1 + 1e-12
    if lo < k2 - slack or hi > k1 + slack:
        raise NumericalInstabilityError(f"u left the band at gamma={gamma}")
    return acc


def ensemble_env(spec: EnvSpec, tag: str, i: int) -> EnvField:
    return make_env(spec.with_seed(derive_seed(spec.env_seed, tag, int(i))))


def _sigma_rows(args):
    spec, tag, idx, lam, h, gammas, L, m, dx, burn_in = args
    orient = orientation_of(lam)
    rows = []
    for i in idx:
        env = ensemble_env(spec, tag, i)
        lp = window_log_psi(env, gammas[1], m, orient, L, dx, burn_in)
        lm = window_log_psi(env, gammas[0], m, orient, L, dx, burn_in)
        lpl = window_log_psi(env, gammas[2], m, orient, L, dx, burn_in)
        clear_xi_cache()
        rows.append((lp, (lpl - lm) / (2.0 * h)))
    return rows


def map_chunks(fn, tasks, workers=1):
    """Deterministic ordered map over task chunks, optionally in processes."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


def chunk_indices(n: int, workers: int) -> list:
    k = max(1, min(n, 4 * max(1, workers)))
    return [list(range(s, n, k)) for s in range(k)] if n else []


class SigmaConstants(NamedTuple):
    sigma_prime_sq: StatResult
    sigma_dprime_sq: StatResult
    sigma_lambda_sq: StatResult


def calibration_gammas(spec: EnvSpec, lam: float, m: float, h: float, length: float = 4000.0,
                       dx: float = 1e-2, tag: str = "calibration") -> tuple:
    """(gamma(lam - h), gamma(lam), gamma(lam + h)) from one long calibration field."""
    env = make_env(spec.with_seed(derive_seed(spec.env_seed, tag)))
    grid = Grid(0.0, length, dx)
    return tuple(gamma_of_lambda(env, l, grid, m, 1e-12) for l in (lam - h, lam, lam + h))


def sigma_samples(spec: EnvSpec, lam: float, L: float, n_envs: int, m: float, *,
                  gammas: Optional[tuple] = None, h: Optional[float] = None, dx: float = DEFAULT_DX,
                  burn_in: Optional[float] = None, tag: str = "sigma", workers: int = 1):
    """Per-environment (ln psi(L), g(L)) arrays at a common deterministic gamma."""
    if h is None:
        h = 1e-3 * abs(lam)
    if gammas is None:
        gammas = calibration_gammas(spec, lam, m, h)
    if len(gammas) != 3:
        raise ConfigError("gammas must be (gamma(lam-h), gamma(lam), gamma(lam+h))", "gammas")
    tasks = [(spec, tag, idx, lam, h, tuple(gammas), L, m, dx, burn_in)
             for idx in chunk_indices(n_envs, workers)]
    out = np.empty((n_envs, 2))
    for idx, rows in zip([t[2] for t in tasks], map_chunks(_sigma_rows, tasks, workers)):
        out[idx] = rows
    return out[:, 0], out[:, 1]


def sigma_constants(spec: EnvSpec, lam: float, L: float, n_envs: int, m: float, **kw) -> SigmaConstants:
    """Variances per unit length of ln phi(L), phi_lambda/phi(L) and sum U_i."""
    if n_envs < 30:
        raise ConfigError("n_envs must be at least 30", "n_envs")
    lp, gl = sigma_samples(spec, lam, L, n_envs, m, **kw)
    a = lp + lam * L
    b = gl + L
    c = lp - lam * gl
    return SigmaConstants(variance_jackknife(a, 1.0 / L), variance_jackknife(b, 1.0 / L),
                          variance_jackknife(c, 1.0 / L))


def sigma_tilde(summary: SpectralSummary, sigma_prime_sq) -> float:
    s = sigma_prime_sq.estimate if isinstance(sigma_prime_sq, StatResult) else float(sigma_prime_sq)
    if not math.isfinite(s) or s < 0:
        raise DomainError("sigma'^2 must be finite and nonnegative")
    return s * summary.v_star / summary.lambda_star ** 2
