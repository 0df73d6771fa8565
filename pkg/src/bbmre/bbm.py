"""Exact simulation of branching Brownian motion in a fixed environment.

Branch times come from thinning a rate-``es`` Poisson clock: at each candidate
the particle jumps by an exact Gaussian increment over the elapsed gap and
splits with probability xi(x)/es.  Positions at checkpoints are exact.  All
randomness of a particle is drawn from its own counter-based stream, derived
from the parent's stream and the birth index, so any partition of the
particles over workers produces the same population.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .env import EnvField, xi_at
from .errors import CappedRunError, ConfigError
from .rng import child_stream, derive_seed, mix64, normal, seed_sequence, uniform
from .stats import StatResult, mean_ci

DEFAULT_CAP = 5_000_000
PRUNE_STEP = 1.0


# ---------------------------------------------------------------- offspring

@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support offspring distribution with p_0 = 0."""

    ks: tuple
    ps: tuple

    def __post_init__(self):
        if len(self.ks) == 0 or len(self.ks) != len(self.ps):
            raise ConfigError("ks and ps must be nonempty and of equal length", "law")
        if any(int(k) != k or k < 1 for k in self.ks):
            raise ConfigError("offspring counts must be integers >= 1 (p_0 = 0)", "law")
        if len(set(self.ks)) != len(self.ks):
            raise ConfigError("duplicate offspring counts", "law")
        if any(not (p >= 0) for p in self.ps):
            raise ConfigError("probabilities must be nonnegative", "law")
        if abs(math.fsum(self.ps) - 1.0) > 1e-12:
            raise ConfigError("probabilities must sum to 1", "law")
        if not self.m > 1:
            raise ConfigError("offspring mean must exceed 1", "law")

    @classmethod
    def binary(cls) -> "OffspringLaw":
        return cls((2,), (1.0,))

    @classmethod
    def from_probs(cls, probs) -> "OffspringLaw":
        """From a mapping {k: p_k} (keys may be strings, as in JSON)."""
        if not isinstance(probs, dict) or not probs:
            raise ConfigError("expected a nonempty mapping from counts to probabilities", "law")
        try:
            items = sorted((int(k), float(v)) for k, v in probs.items())
        except (TypeError, ValueError):
            raise ConfigError("keys must be integers and values numbers", "law") from None
        if any(k == 0 and p > 0 for k, p in items):
            raise ConfigError("p_0 must be 0", "law")
        items = [(k, p) for k, p in items if k != 0]
        return cls(tuple(k for k, _ in items), tuple(p for _, p in items))

    def to_dict(self) -> dict:
        return {str(k): p for k, p in zip(self.ks, self.ps)}

    @property
    def m(self) -> float:
        return math.fsum(k * p for k, p in zip(self.ks, self.ps))

    @property
    def m2(self) -> float:
        return math.fsum(k * k * p for k, p in zip(self.ks, self.ps))

    def size_biased(self) -> "OffspringLaw":
        """p~_k = k p_k / m."""
        m = self.m
        return OffspringLaw(self.ks, tuple(k * p / m for k, p in zip(self.ks, self.ps)))

    def tables(self):
        """(ks, cdf) arrays for the kernels; the last cdf entry is exactly 1."""
        ks = np.asarray(self.ks, dtype=np.int64)
        cdf = np.cumsum(np.asarray(self.ps, dtype=float))
        cdf[-1] = 1.0
        return ks, cdf


# ---------------------------------------------------------------- config & snapshots

@dataclass(frozen=True)
class SimConfig:
    T: float
    checkpoints: tuple = ()
    x0: float = 0.0
    cap: int = DEFAULT_CAP
    prune_window: Optional[float] = None

    def __post_init__(self):
        if not (self.T >= 0 and math.isfinite(self.T)):
            raise ConfigError("T must be finite and >= 0", "T")
        cps = tuple(float(c) for c in self.checkpoints) or (float(self.T),)
        if list(cps) != sorted(set(cps)):
            raise ConfigError("checkpoints must be strictly increasing", "checkpoints")
        if cps[0] < 0 or cps[-1] > self.T:
            raise ConfigError("checkpoints must lie in [0, T]", "checkpoints")
        object.__setattr__(self, "checkpoints", cps)
        if not (isinstance(self.cap, int) and self.cap >= 1):
            raise ConfigError("cap must be an integer >= 1", "cap")
        if self.prune_window is not None and not self.prune_window > 0:
            raise ConfigError("prune_window must be positive", "prune_window")


@dataclass
class PopulationSnapshot:
    t: float
    positions: np.ndarray
    streams: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return int(self.positions.size)

    @property
    def M_t(self) -> float:
        return float(self.positions.max())

    def to_dict(self, bins: Optional[int] = None) -> dict:
        d = {"t": self.t, "count": self.count, "M_t": self.M_t}
        if bins:
            h, edges = np.histogram(self.positions, bins=bins)
            d["histogram"] = {"counts": h.tolist(), "edges": [float(e) for e in edges]}
        return d

    def to_ndjson(self, bins: Optional[int] = None, **extra) -> str:
        d = self.to_dict(bins)
        d.update(extra)
        return json.dumps(d, sort_keys=True)


def root_stream(seed) -> np.uint64:
    return np.uint64(mix64(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF) ^ np.uint64(0xB5B5A5A5C3C3E1E1)))


# ---------------------------------------------------------------- kernels

@njit(cache=True, nogil=True)
def _grow(a, size):
    b = np.empty(size, dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=True, nogil=True)
def _advance(kind, p, seed, es, ks, cdf, pos, strm, ctr, t0, t1, cap):
    """Advance the particles from t0 to t1; returns (pos, streams, counters, overflow)."""
    n_in = pos.shape[0]
    size = max(16, 2 * n_in)
    o_pos = np.empty(size)
    o_s = np.empty(size, dtype=np.uint64)
    o_c = np.empty(size, dtype=np.int64)
    n_out = 0
    ssize = 64
    s_pos = np.empty(ssize)
    s_t = np.empty(ssize)
    s_s = np.empty(ssize, dtype=np.uint64)
    s_c = np.empty(ssize, dtype=np.int64)
    for i in range(n_in):
        sp = 1
        s_pos[0] = pos[i]
        s_t[0] = t0
        s_s[0] = strm[i]
        s_c[0] = ctr[i]
        while sp > 0:
            sp -= 1
            x = s_pos[sp]
            t = s_t[sp]
            s = s_s[sp]
            c = s_c[sp]
            while True:
                gap = -math.log(uniform(s, c)) / es
                c += 1
                if t + gap >= t1:
                    x += math.sqrt(t1 - t) * normal(s, c)
                    c += 2
                    if n_out == size:
                        size *= 2
                        o_pos = _grow(o_pos, size)
                        o_s = _grow(o_s, size)
                        o_c = _grow(o_c, size)
                    o_pos[n_out] = x
                    o_s[n_out] = s
                    o_c[n_out] = c
                    n_out += 1
                    break
                x += math.sqrt(gap) * normal(s, c)
                c += 2
                t += gap
                accept = uniform(s, c) * es < xi_at(kind, p, seed, x)
                c += 1
                if accept:
                    v = uniform(s, c)
                    c += 1
                    j = 0
                    while cdf[j] < v:
                        j += 1
                    k = ks[j]
                    if sp + k > ssize:
                        ssize = 2 * (sp + k)
                        s_pos = _grow(s_pos, ssize)
                        s_t = _grow(s_t, ssize)
                        s_s = _grow(s_s, ssize)
                        s_c = _grow(s_c, ssize)
                    for b in range(k):
                        s_pos[sp] = x
                        s_t[sp] = t
                        s_s[sp] = child_stream(s, b)
                        s_c[sp] = 0
                        sp += 1
                    break
            if n_out + sp + (n_in - i - 1) > cap:
                return o_pos[:n_out], o_s[:n_out], o_c[:n_out], True
    return o_pos[:n_out], o_s[:n_out], o_c[:n_out], False


@njit(cache=True, nogil=True)
def _first_splits(kind, p, seed, es, x0, root, n, t_max, out):
    """First real split time of a single particle started at x0 (inf past t_max)."""
    for i in range(n):
        s = child_stream(root, i)
        c = 0
        x = x0
        t = 0.0
        out[i] = np.inf
        while t < t_max:
            gap = -math.log(uniform(s, c)) / es
            c += 1
            x += math.sqrt(gap) * normal(s, c)
            c += 2
            t += gap
            if uniform(s, c) * es < xi_at(kind, p, seed, x):
                out[i] = t
                break
            c += 1


# ---------------------------------------------------------------- population

def _sorted(pos, strm, ctr):
    order = np.lexsort((pos, strm))
    return pos[order], strm[order], ctr[order]


def _prune(pos, strm, ctr, window):
    keep = pos >= pos.max() - window
    return pos[keep], strm[keep], ctr[keep]


def simulate_population(env: EnvField, law: OffspringLaw, cfg: SimConfig, seed,
                        workers: int = 1) -> list:
    """Snapshots of the population at every checkpoint of ``cfg``.

    ``workers > 1`` advances particle chunks on threads; the merged result is
    sorted by stream id, so it does not depend on the worker count.
    """
    kind, p, eseed = env.kernel_args()
    ks, cdf = law.tables()
    es = env.es
    pos = np.array([float(cfg.x0)])
    strm = np.array([root_stream(seed)], dtype=np.uint64)
    ctr = np.zeros(1, dtype=np.int64)
    snaps = []
    # internal stops for pruning are never reported
    stops = list(cfg.checkpoints)
    if cfg.prune_window is not None:
        extra = np.arange(PRUNE_STEP, cfg.T, PRUNE_STEP)
        stops = sorted(set(stops) | set(float(e) for e in extra))
    report = set(cfg.checkpoints)
    t = 0.0
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t1 in stops:
            if t1 > t:
                if pool is None or pos.size < 2 * workers:
                    pos, strm, ctr, over = _advance(kind, p, eseed, es, ks, cdf, pos, strm, ctr, t, t1, cfg.cap)
                    if over:
                        raise CappedRunError(f"particle count exceeded cap {cfg.cap} before t={t1}", snaps)
                else:
                    parts = np.array_split(np.arange(pos.size), workers)
                    futs = [pool.submit(_advance, kind, p, eseed, es, ks, cdf, pos[ix], strm[ix], ctr[ix],
                                        t, t1, cfg.cap) for ix in parts]
                    res = [f.result() for f in futs]
                    if any(r[3] for r in res) or sum(r[0].size for r in res) > cfg.cap:
                        raise CappedRunError(f"particle count exceeded cap {cfg.cap} before t={t1}", snaps)
                    pos = np.concatenate([r[0] for r in res])
                    strm = np.concatenate([r[1] for r in res])
                    ctr = np.concatenate([r[2] for r in res])
                pos, strm, ctr = _sorted(pos, strm, ctr)
                t = t1
            if cfg.prune_window is not None:
                pos, strm, ctr = _prune(pos, strm, ctr, cfg.prune_window)
            if t1 in report:
                snaps.append(PopulationSnapshot(float(t1), pos.copy(), strm.copy()))
    finally:
        if pool is not None:
            pool.shutdown()
    return snaps


def first_split_times(env: EnvField, x0: float, n: int, seed, t_max: float = 1e3) -> np.ndarray:
    kind, p, eseed = env.kernel_args()
    out = np.empty(int(n))
    _first_splits(kind, p, eseed, env.es, float(x0), root_stream(seed), int(n), float(t_max), out)
    return out


def first_split_oracle(env: EnvField, x0: float, n: int, seed, dt: float = 1e-3,
                       batch: int = 20000, t_max: float = 200.0) -> np.ndarray:
    """Inverse-hazard sampling on a fine time grid: the first t with
    int_0^t xi(B_s) ds >= E, E ~ Exp(1), trapezoid hazard along the path."""
    rng = seed_sequence(seed, "first-split-oracle")
    out = np.empty(int(n))
    sq = math.sqrt(dt)
    for b0 in range(0, n, batch):
        nb = min(batch, n - b0)
        e = rng.exponential(size=nb)
        x = np.full(nb, float(x0))
        r = env.eval(x)
        haz = np.zeros(nb)
        res = np.full(nb, np.inf)
        alive = np.ones(nb, dtype=bool)
        t = 0.0
        while alive.any() and t < t_max:
            idx = np.flatnonzero(alive)
            xn = x[idx] + sq * rng.standard_normal(idx.size)
            rn = env.eval(xn)
            hn = haz[idx] + 0.5 * (r[idx] + rn) * dt
            hit = hn >= e[idx]
            if hit.any():
                # linear interpolation of the hazard inside the step
                w = (e[idx][hit] - haz[idx][hit]) / (hn[hit] - haz[idx][hit])
                res[idx[hit]] = t + w * dt
                alive[idx[hit]] = False
            x[idx], r[idx], haz[idx] = xn, rn, hn
            t += dt
        out[b0:b0 + nb] = res
    return out


# ---------------------------------------------------------------- martingale

@dataclass(frozen=True)
class MartingaleValue:
    W: float
    ln_W: float


def additive_martingale(snapshot: PopulationSnapshot, profile, summary=None) -> MartingaleValue:
    """W_t(lambda) = exp(-gamma t) sum_nu psi(X_nu, lambda) in log-sum-exp form."""
    pos = snapshot.positions
    profile.ensure(float(pos.min()), float(pos.max()))
    ln_terms = np.atleast_1d(profile.ln_psi_at(pos))
    ln_w = float(logsumexp(ln_terms)) - profile.gamma * snapshot.t
    return MartingaleValue(math.exp(ln_w) if ln_w < 700 else math.inf, ln_w)


# ---------------------------------------------------------------- Feynman-Kac

PAYOFFS = {
    "one": lambda x: np.ones_like(x),
    "zero": lambda x: np.zeros_like(x),
    "indicator_nonneg": lambda x: (x >= 0).astype(float),
}


def resolve_payoff(payoff) -> Callable:
    if callable(payoff):
        return payoff
    try:
        return PAYOFFS[payoff]
    except KeyError:
        raise ConfigError(f"unknown payoff {payoff!r}; known: {sorted(PAYOFFS)}", "payoff") from None


@dataclass(frozen=True)
class FKResult(StatResult):
    dt: float = 0.0


def _fk_block(env, x0, t, m1, dt, rng):
    """Brownian paths from x0 (array) over [0, t]: (exp of the trapezoid
    integral of m1 xi, terminal positions)."""
    x = np.array(x0, dtype=float, copy=True)
    n_steps = int(math.ceil(t / dt - 1e-12)) if t > 0 else 0
    if n_steps == 0:
        return np.ones_like(x), x
    h = t / n_steps
    sq = math.sqrt(h)
    acc = np.zeros_like(x)
    r = env.eval(x) if m1 != 0 else None
    for _ in range(n_steps):
        x += sq * rng.standard_normal(x.shape)
        if m1 != 0:
            rn = env.eval(x)
            acc += 0.5 * (r + rn) * h
            r = rn
    return np.exp(m1 * acc), x


def fk_expectation(env: EnvField, x: float, t: float, payoff, n_paths: int, dt: float, seed,
                   m: float = 2.0, batch: int = 50000) -> FKResult:
    """Pi_x[exp(int_0^t (m-1) xi(B_r) dr) f(B_t)] by Monte Carlo.

    ``m = 1`` switches the growth weight off (rate multiplier zero).
    """
    if not 0 < dt <= 1e-2:
        raise ConfigError("dt must lie in (0, 1e-2]", "dt")
    if t < 0:
        raise ConfigError("t must be >= 0", "t")
    f = resolve_payoff(payoff)
    m1 = float(m) - 1.0
    if t == 0:
        v = float(f(np.array([float(x)]))[0])
        return FKResult(v, 0.0, v, v, int(n_paths), dt=dt)
    vals = np.empty(int(n_paths))
    for k, b0 in enumerate(range(0, n_paths, batch)):
        nb = min(batch, n_paths - b0)
        rng = seed_sequence(seed, "fk", k)
        w, xt = _fk_block(env, np.full(nb, float(x)), t, m1, dt, rng)
        vals[b0:b0 + nb] = w * f(xt)
    r = mean_ci(vals)
    return FKResult(r.estimate, r.stderr, r.ci_low, r.ci_high, r.n, dt=t / math.ceil(t / dt - 1e-12))


@njit(cache=True, nogil=True)
def _hit_paths(kind, p, seed, x, y, m1, gammas, root, n, dt, t_max, out):
    """Per-path Pi_x[exp(-int_0^{H_y} (gamma - m1 xi(B)) ds)] for every gamma
    in ``gammas``, with a Brownian-bridge correction for crossings between
    grid times.  All gammas share the same paths."""
    sq = math.sqrt(dt)
    ng = gammas.shape[0]
    xi_y = xi_at(kind, p, seed, y)
    far = 20.0 * dt  # bridge crossing probability below exp(-40)
    logw = np.empty(ng)
    surv_pc = 0.0
    for i in range(n):
        s = child_stream(root, i)
        c = 0
        b = x
        side = 1.0 if x > y else -1.0
        xb = xi_at(kind, p, seed, b)
        for g in range(ng):
            logw[g] = 0.0
            out[i, g] = 0.0
        surv = 1.0
        t = 0.0
        z2 = 0.0
        have = False
        while t < t_max:
            if have:
                z = z2
                have = False
            else:
                r = math.sqrt(-2.0 * math.log(uniform(s, c)))
                th = 2.0 * math.pi * uniform(s, c + 1)
                c += 2
                z = r * math.cos(th)
                z2 = r * math.sin(th)
                have = True
            bn = b + sq * z
            if (bn - y) * side <= 0.0:
                f = (b - y) / (b - bn)
                for g in range(ng):
                    out[i, g] += surv * math.exp(logw[g] - 0.5 * f * dt * (2.0 * gammas[g] - m1 * (xb + xi_y)))
                surv = 0.0
                break
            xn = xi_at(kind, p, seed, bn) if m1 != 0.0 else 0.0
            ab = (b - y) * (bn - y)
            if ab < far:
                surv_pc = math.exp(-2.0 * ab / dt)
                for g in range(ng):
                    out[i, g] += surv * surv_pc * math.exp(logw[g] - 0.25 * dt * (2.0 * gammas[g] - m1 * (xb + xi_y)))
                surv *= 1.0 - surv_pc
            for g in range(ng):
                logw[g] -= 0.5 * dt * (2.0 * gammas[g] - m1 * (xb + xn))
            b = bn
            xb = xn
            t += dt


def _no_env():
    p = np.zeros(8)
    p[6] = math.nan
    return 0, p, np.uint64(0), 0.0


def fk_hitting_many(env: Optional[EnvField], x: float, y: float, gammas, m: float, n_paths: int,
                    dt: float, seed, trunc: float = 1e-7) -> list:
    """Pi_x[exp(int_0^{H_y} ((m-1) xi(B_s) - gamma) ds)] for several gamma > (m-1) es
    on shared paths.  Paths stop once exp(-(gamma - (m-1) es) t) <= trunc
    for the smallest gamma."""
    if x == y:
        raise ConfigError("x must differ from y", "y")
    if not dt > 0:
        raise ConfigError("dt must be positive", "dt")
    gam = np.atleast_1d(np.asarray(gammas, dtype=float))
    if env is None:
        kind, p, eseed, es = _no_env()
        m1 = 0.0
    else:
        kind, p, eseed = env.kernel_args()
        es = env.es
        m1 = float(m) - 1.0
    floor_rate = float(gam.min()) - m1 * es
    if not floor_rate > 0:
        raise ConfigError("need gamma > (m-1) es", "gamma")
    t_max = math.log(1.0 / trunc) / floor_rate
    out = np.empty((int(n_paths), gam.size))
    _hit_paths(kind, p, eseed, float(x), float(y), m1, gam, root_stream(seed), int(n_paths),
               float(dt), t_max, out)
    res = []
    for g in range(gam.size):
        r = mean_ci(out[:, g])
        res.append(FKResult(r.estimate, r.stderr, r.ci_low, r.ci_high, r.n, dt=dt))
    return res


def fk_hitting(env, x, y, gamma, m, n_paths, dt, seed, trunc=1e-7) -> FKResult:
    return fk_hitting_many(env, x, y, [gamma], m, n_paths, dt, seed, trunc)[0]


def fk_hitting_laplace(x: float, y: float, u: float, n_paths: int, dt: float, seed) -> FKResult:
    """E[exp(-u H_y)] for Brownian motion started at x."""
    if not u > 0:
        raise ConfigError("u must be positive", "u")
    return fk_hitting(None, x, y, u, 1.0, n_paths, dt, seed)


def fk_hitting_laplace_many(x, y, us, n_paths, dt, seed) -> list:
    if any(not u > 0 for u in us):
        raise ConfigError("u must be positive", "u")
    return fk_hitting_many(None, x, y, us, 1.0, n_paths, dt, seed)


# ---------------------------------------------------------------- moment checks

@dataclass(frozen=True)
class ZReport:
    population: StatResult
    fk: StatResult
    z: float

    @property
    def se(self) -> float:
        return math.hypot(self.population.stderr, self.fk.stderr)

    def to_dict(self) -> dict:
        return {"population": self.population.to_dict(), "fk": self.fk.to_dict(),
                "z": self.z, "pooled_se": self.se}


def _z(a: StatResult, b: StatResult) -> float:
    se = math.hypot(a.stderr, b.stderr)
    d = a.estimate - b.estimate
    if se == 0:
        return 0.0 if d == 0 else math.copysign(math.inf, d)
    return d / se


def _replicate_map(fn, n_reps, workers):
    if workers <= 1:
        return [fn(r) for r in range(n_reps)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(n_reps)))


def population_functional(env, law, x, t, n_reps, seed, fn, workers=1, cap=DEFAULT_CAP) -> np.ndarray:
    """fn(snapshot at t) over independent replicates."""
    cfg = SimConfig(float(t), (float(t),), float(x), cap)

    def one(r):
        return fn(simulate_population(env, law, cfg, derive_seed(seed, "replicate", r))[0])

    return np.asarray(_replicate_map(one, int(n_reps), workers), dtype=float)


def many_to_one_check(env, law, x, t, payoff, n_reps, n_paths, seed, dt=1e-2, workers=1) -> ZReport:
    f = resolve_payoff(payoff)
    vals = population_functional(env, law, x, t, n_reps, derive_seed(seed, "population"),
                                 lambda s: float(np.sum(f(s.positions))), workers)
    pop = mean_ci(vals)
    fk = fk_expectation(env, x, t, f, n_paths, dt, derive_seed(seed, "fk"), m=law.m)
    return ZReport(pop, fk, _z(pop, fk))


def second_moment_rhs(env, law, x, t, n_outer, n_inner, seed, dt=1e-2, n_s=9) -> StatResult:
    """Barrier-free second-moment formula for E[N_t^2] by nested Monte Carlo.

    The s-integral uses Simpson's rule on n_s points; the inner expectation
    is squared without bias as the product of two independent half-sample
    means.  Standard errors of the Simpson nodes are combined as independent.
    """
    if n_s < 3 or n_s % 2 == 0:
        raise ConfigError("n_s must be odd and >= 3", "n_s")
    m1 = law.m - 1.0
    first = fk_expectation(env, x, t, "one", n_outer * 4, dt, derive_seed(seed, "first"), m=law.m)
    if t == 0:
        return first
    s_grid = np.linspace(0.0, t, n_s)
    h = t / (n_s - 1)
    wts = np.ones(n_s)
    wts[1:-1:2], wts[2:-1:2] = 4.0, 2.0
    wts *= h / 3.0
    total, var = 0.0, 0.0
    half = max(1, n_inner // 2)
    for k, s in enumerate(s_grid):
        rng = seed_sequence(seed, "outer", k)
        w_out, b_s = _fk_block(env, np.full(n_outer, float(x)), float(s), m1, dt, rng)
        w_out = w_out * env.eval(b_s)
        if s < t:
            starts = np.repeat(b_s, 2 * half)
            w_in, _ = _fk_block(env, starts, float(t - s), m1, dt, rng)
            w_in = w_in.reshape(n_outer, 2, half).mean(axis=2)
            sq = w_in[:, 0] * w_in[:, 1]
        else:
            sq = np.ones(n_outer)
        r = mean_ci(w_out * sq)
        total += wts[k] * r.estimate
        var += (wts[k] * r.stderr) ** 2
    c = law.m2 - law.m
    est = first.estimate + c * total
    se = math.sqrt(first.stderr ** 2 + c * c * var)
    return StatResult.from_se(est, se, n_outer)


def many_to_two_check(env, law, x, t, n_reps, n_paths, seed, dt=1e-2, n_inner=40, n_s=9,
                      workers=1) -> ZReport:
    vals = population_functional(env, law, x, t, n_reps, derive_seed(seed, "population"),
                                 lambda s: float(s.count) ** 2, workers)
    pop = mean_ci(vals)
    rhs = second_moment_rhs(env, law, x, t, n_paths, n_inner, derive_seed(seed, "rhs"), dt, n_s)
    return ZReport(pop, rhs, _z(pop, rhs))


# ---------------------------------------------------------------- M_t series

@dataclass
class MaxSeries:
    times: np.ndarray
    samples: np.ndarray  # (n_reps, n_checkpoints)
    counts: np.ndarray

    @property
    def medians(self) -> np.ndarray:
        return np.median(self.samples, axis=0)

    @property
    def quartiles(self):
        return np.quantile(self.samples, 0.25, axis=0), np.quantile(self.samples, 0.75, axis=0)

    def quantile(self, q) -> np.ndarray:
        return np.quantile(self.samples, q, axis=0)


def max_position_series(env, law, cfg: SimConfig, n_reps: int, seed, workers: int = 1) -> MaxSeries:
    if n_reps < 1:
        raise ConfigError("n_reps must be >= 1", "n_reps")

    def one(r):
        snaps = simulate_population(env, law, cfg, derive_seed(seed, "replicate", r))
        return [s.M_t for s in snaps], [s.count for s in snaps]

    res = _replicate_map(one, int(n_reps), workers)
    return MaxSeries(np.asarray(cfg.checkpoints), np.array([r[0] for r in res]),
                     np.array([r[1] for r in res]))
