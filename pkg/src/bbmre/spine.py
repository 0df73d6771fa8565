"""The tilted spine diffusion and its size-biased branching.

Under the W-change of measure the marked particle solves
``dXi = dW + u(Xi) dt`` with u = psi_x / psi, branches at rate m xi(Xi) and
leaves k children with probability k p_k / m.  Paths use Euler-Maruyama with
counter-based normals, so a path interrupted to extend the drift table
resumes with exactly the draws it would have used anyway.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .bbm import OffspringLaw, PopulationSnapshot, additive_martingale, root_stream, simulate_population, SimConfig
from .env import EnvField, xi_at
from .errors import ConfigError, ExtensionError, SampleSizeError
from .rng import child_stream, derive_seed, uniform
from .spectral import GProfile, PsiProfile, SpectralSummary
from .stats import (KSResult, LinearFit, StatResult, ks_test_normal, linear_fit, mean_ci,
                    pooled_autocorrelation)

# kernel exit codes
_DONE, _LEFT, _RIGHT, _LEVEL = 0, 1, 2, 3


@njit(cache=True, nogil=True)
def _spine_kernel(kind, p, seed, es, cand_rate, u_tab, i_lo, tdx, state, n_steps, dt, s_move, s_branch,
                  ks, cdf, dirn, k_max, hits, stride, rec, br_t, br_x, br_k, stop_level):
    """Advance the spine; ``state`` = [x, t, step, next_branch_time, n_branch,
    next_level, drift_min, drift_max, x0, n_rec, branch_counter].  Returns an
    exit code."""
    x = state[0]
    t = state[1]
    step = int(state[2])
    nb_t = state[3]
    n_br = int(state[4])
    lev = int(state[5])
    dmin = state[6]
    dmax = state[7]
    x0 = state[8]
    n_rec = int(state[9])
    sq = math.sqrt(dt)
    n_tab = u_tab.shape[0]
    b_ctr = int(state[10])
    code = _DONE
    while step < n_steps:
        s = x / tdx - i_lo
        j = int(math.floor(s))
        if j < 0:
            code = _LEFT
            break
        if j >= n_tab - 1:
            code = _RIGHT
            break
        f = s - j
        drift = u_tab[j] * (1.0 - f) + u_tab[j + 1] * f
        if drift < dmin:
            dmin = drift
        if drift > dmax:
            dmax = drift
        # Box-Muller cosine branch keyed by the step index
        u1 = uniform(s_move, 2 * step)
        u2 = uniform(s_move, 2 * step + 1)
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        xn = x + drift * dt + sq * z
        tn = t + dt
        # branch candidates at rate m es inside (t, tn]
        while nb_t <= tn:
            v = uniform(s_branch, b_ctr)
            b_ctr += 1
            if v * es < xi_at(kind, p, seed, x):
                if n_br < br_t.shape[0]:
                    w = uniform(s_branch, b_ctr)
                    jj = 0
                    while cdf[jj] < w:
                        jj += 1
                    br_t[n_br] = nb_t
                    br_x[n_br] = x
                    br_k[n_br] = ks[jj]
                n_br += 1
            b_ctr += 1
            nb_t += -math.log(uniform(s_branch, b_ctr)) / cand_rate
            b_ctr += 1
        # integer-level crossings in the drift direction
        while lev <= k_max and dirn * (xn - x0) >= lev:
            a = dirn * (x - x0)
            b = dirn * (xn - x0)
            hits[lev - 1] = t + (lev - a) / (b - a) * dt
            lev += 1
        x = xn
        t = tn
        step += 1
        if stride > 0 and step % stride == 0 and n_rec < rec.shape[0]:
            rec[n_rec] = x
            n_rec += 1
        if stop_level and lev > k_max:
            code = _LEVEL
            break
    state[0] = x
    state[1] = t
    state[2] = step
    state[3] = nb_t
    state[4] = n_br
    state[5] = lev
    state[6] = dmin
    state[7] = dmax
    state[9] = n_rec
    state[10] = b_ctr
    return code


@dataclass
class SpinePath:
    lam: float
    dt: float
    stride: int
    x0: float
    positions: np.ndarray
    branch_times: np.ndarray
    branch_positions: np.ndarray
    offspring: np.ndarray
    hitting_times: np.ndarray
    drift_min: float
    drift_max: float
    T: float
    n_branch: int = 0

    @property
    def times(self) -> np.ndarray:
        return (np.arange(1, self.positions.size + 1) * self.stride) * self.dt

    @property
    def final_position(self) -> float:
        return float(self.positions[-1]) if self.positions.size else self.x0

    def levels(self) -> np.ndarray:
        return np.arange(1, self.hitting_times.size + 1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "Xi"])
        w.writerow([repr(0.0), repr(float(self.x0))])
        for t, x in zip(self.times, self.positions):
            w.writerow([repr(float(t)), repr(float(x))])
        return buf.getvalue()

    def hitting_csv(self, ln_psi_levels: Optional[np.ndarray] = None, scale: float = 1.0) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "H_k", "beta_k"])
        for k, h in zip(self.levels(), self.hitting_times):
            beta = h - ln_psi_levels[k - 1] / scale if ln_psi_levels is not None else math.nan
            w.writerow([int(k), repr(float(h)), repr(float(beta))])
        return buf.getvalue()


def simulate_spine(env: EnvField, profile: PsiProfile, T: float, dt: float, law: OffspringLaw, seed,
                   x0: float = 0.0, k_max: int = 0, stride: int = 1, stop_at_level: bool = False,
                   max_branch_log: int = 100_000) -> SpinePath:
    """Euler-Maruyama spine over [0, T] (or until level ``k_max`` if
    ``stop_at_level``); the drift table extends itself as the path moves."""
    if not 0 < dt <= 1e-3:
        raise ConfigError("dt must lie in (0, 1e-3]", "dt")
    if not T > 0:
        raise ConfigError("T must be positive", "T")
    if stride < 1:
        raise ConfigError("stride must be >= 1", "stride")
    kind, p, eseed = env.kernel_args()
    tilt = law.size_biased()
    ks, cdf = tilt.tables()
    m = law.m
    root = root_stream(seed)
    s_move, s_branch = np.uint64(child_stream(root, 0)), np.uint64(child_stream(root, 1))
    n_steps = int(round(T / dt))
    dirn = 1.0 if profile.orientation == "increasing" else -1.0
    hits = np.full(max(k_max, 0), np.nan)
    rec = np.empty(n_steps // stride + 1)
    br_t = np.empty(max_branch_log)
    br_x = np.empty(max_branch_log)
    br_k = np.empty(max_branch_log, dtype=np.int64)
    first = -math.log(uniform(s_branch, 0)) / (m * env.es)
    state = np.array([x0, 0.0, 0.0, first, 0.0, 1.0, np.inf, -np.inf, x0, 0.0, 1.0])
    while True:
        u_tab, i_lo = profile.table()
        code = _spine_kernel(kind, p, eseed, env.es, m * env.es, u_tab, i_lo, profile.dx, state, n_steps,
                             dt, s_move, s_branch, ks, cdf, dirn, int(k_max), hits, stride, rec,
                             br_t, br_x, br_k, bool(stop_at_level))
        if code in (_DONE, _LEVEL):
            break
        x = state[0]
        width = 50.0 + 0.25 * (profile.x_max - profile.x_min)
        if code == _RIGHT:
            profile.ensure(profile.x_min, x + width, margin=0.0)
        else:
            profile.ensure(x - width, profile.x_max, margin=0.0)
    n_br = int(state[4])
    nlog = min(n_br, max_branch_log)
    return SpinePath(lam=profile.lam, dt=dt, stride=stride, x0=float(x0), positions=rec[: int(state[9])].copy(),
                     branch_times=br_t[:nlog].copy(), branch_positions=br_x[:nlog].copy(),
                     offspring=br_k[:nlog].copy(), hitting_times=hits, drift_min=float(state[6]),
                     drift_max=float(state[7]), T=float(state[1]), n_branch=n_br)


def spine_ensemble(env, profile, T, dt, law, seed, n_paths, workers=1, **kw) -> list:
    def one(i):
        return simulate_spine(env, profile, T, dt, law, derive_seed(seed, "spine", i), **kw)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, range(n_paths)))
    return [one(i) for i in range(n_paths)]


def speed_fit(path: SpinePath) -> LinearFit:
    """Least-squares slope of Xi_t against t over [T/2, T]."""
    t = path.times
    keep = t >= 0.5 * path.T
    return linear_fit(t[keep], path.positions[keep])


def expected_hitting_time(g: GProfile, summary: SpectralSummary, y: float, k: float) -> float:
    """Mean time for the spine at lambda = -lambda* to travel from y to k.

    gamma' is odd, so gamma'(-lambda*) = -v*.
    """
    if k == y:
        return 0.0
    return (g.at(k) - g.at(y)) / (-summary.v_star)


@dataclass
class HittingReport:
    n_paths: int
    k_max: int
    autocorr: np.ndarray
    band: float
    ks: KSResult
    mean_H: Optional[StatResult] = None
    expected_H: Optional[float] = None
    k_mean: Optional[int] = None
    beta: np.ndarray = field(default=None, repr=False)

    @property
    def autocorr_ok(self) -> bool:
        return bool(np.all(np.abs(self.autocorr) <= self.band))

    @property
    def mean_z(self) -> float:
        if self.mean_H is None:
            return math.nan
        return self.mean_H.z_against(self.expected_H)

    def to_dict(self) -> dict:
        d = {"n_paths": self.n_paths, "k_max": self.k_max, "autocorr": self.autocorr.tolist(),
             "band": self.band, "ks_statistic": self.ks.statistic, "ks_pvalue": self.ks.pvalue}
        if self.mean_H is not None:
            d.update(mean_H=self.mean_H.to_dict(), expected_H=self.expected_H, k_mean=self.k_mean,
                     mean_z=self.mean_z)
        return d


def hitting_time_tests(paths: Sequence[SpinePath], summary: SpectralSummary, front, g: Optional[GProfile] = None,
                       k_mean: int = 20, max_lag: int = 5) -> HittingReport:
    """beta-increment autocorrelations, KS of standardized T_kmax, and the
    empirical mean of H_{k_mean} against ``expected_hitting_time``."""
    n = len(paths)
    if n < 300:
        raise SampleSizeError(f"need at least 300 paths, got {n}")
    H = np.array([p.hitting_times for p in paths])
    if H.ndim != 2 or H.shape[1] < 30:
        raise SampleSizeError("paths must record at least 30 levels")
    if np.isnan(H).any():
        raise SampleSizeError("some paths did not reach k_max")
    k_max = H.shape[1]
    prof = front.profile if hasattr(front, "profile") else front
    ks_ = np.arange(1, k_max + 1, dtype=float)
    ln_psi = np.asarray(prof.ln_psi_at(ks_))
    beta = H - ln_psi / (summary.lambda_star * summary.v_star)
    inc = np.diff(np.concatenate([np.zeros((n, 1)), beta], axis=1), axis=1)
    ac = pooled_autocorrelation(inc, max_lag)
    tk = H[:, -1]
    ks = ks_test_normal((tk - tk.mean()) / tk.std(ddof=1))
    rep = HittingReport(n, k_max, ac, 2.0 / math.sqrt(n), ks, beta=beta)
    if g is not None and k_mean <= k_max:
        rep.mean_H = mean_ci(H[:, k_mean - 1])
        rep.expected_H = expected_hitting_time(g, summary, paths[0].x0, paths[0].x0 + k_mean)
        rep.k_mean = k_mean
    return rep


# ---------------------------------------------------------------- martingale probe

@dataclass
class MartingaleTrack:
    lam: float
    t_grid: np.ndarray
    ln_W: np.ndarray  # (n_reps, n_t)
    W0: float

    @property
    def medians(self) -> np.ndarray:
        return np.median(self.ln_W, axis=0)

    def means(self) -> list:
        return [mean_ci(np.exp(self.ln_W[:, j])) for j in range(self.t_grid.size)]

    def median_fit(self) -> LinearFit:
        return linear_fit(self.t_grid, self.medians)


@dataclass
class MartingaleProbe:
    tracks: dict
    summary: SpectralSummary

    def predicted_median_rate(self, lam: float, gamma: float) -> float:
        """Typical decay rate -(gamma(lam) - |lam| v*) of W_t for |lam| > lambda*:
        the sum is carried by particles near the maximum M_t ~ v* t."""
        return -(gamma - abs(lam) * self.summary.v_star)

    def tilted_rate(self, lam: float, gamma: float, gprime: float) -> float:
        """lam gamma'(lam) - gamma(lam), the growth rate of ln W under the tilted measure."""
        return lam * gprime - gamma

    def to_dict(self) -> dict:
        out = {}
        for lam, tr in self.tracks.items():
            fit = tr.median_fit()
            out[repr(lam)] = {"t": tr.t_grid.tolist(), "median_ln_W": tr.medians.tolist(),
                              "mean_W": [m.to_dict() for m in tr.means()], "W0": tr.W0,
                              "median_slope": fit.slope, "median_slope_se": fit.slope_se}
        return out


def martingale_limit_probe(env: EnvField, law: OffspringLaw, summary: SpectralSummary, profiles: dict,
                           t_grid: Sequence[float], n_reps: int, seed, x0: float = 0.0,
                           workers: int = 1, cap: int = 5_000_000) -> MartingaleProbe:
    """Replicate ln W_t(lam) over ``t_grid`` for each profile in ``profiles``
    (keyed by lam)."""
    ts = np.asarray(t_grid, dtype=float)
    if ts.size < 2 or np.any(np.diff(ts) <= 0):
        raise ConfigError("t_grid must be increasing with at least two points", "t_grid")
    cfg = SimConfig(float(ts[-1]), tuple(ts), x0, cap)
    lams = list(profiles)
    for lam in lams:
        profiles[lam].ensure(x0 - 1.0, x0 + 1.0)

    def one(r):
        snaps = simulate_population(env, law, cfg, derive_seed(seed, "replicate", r))
        return [[additive_martingale(s, profiles[lam]).ln_W for s in snaps] for lam in lams]

    if workers > 1:
        # extend tables up front: the profiles are shared between threads
        for lam in lams:
            pr = profiles[lam]
            pr.ensure(x0 - 3 * ts[-1] - 10, x0 + 3 * ts[-1] + 10)
        with ThreadPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(one, range(n_reps)))
    else:
        res = [one(r) for r in range(n_reps)]
    arr = np.array(res)  # (n_reps, n_lam, n_t)
    tracks = {}
    for i, lam in enumerate(lams):
        w0 = math.exp(profiles[lam].ln_psi_at(x0))
        tracks[lam] = MartingaleTrack(lam, ts, arr[:, i, :], w0)
    return MartingaleProbe(tracks, summary)
