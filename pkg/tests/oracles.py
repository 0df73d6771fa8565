"""Independent reference computations used only by the tests.

``fkpp_exceedance`` solves the McKean equation for the law of the maximum of
BBM with binary branching at rate xi(y):

    w_t = w_yy / 2 + xi(y) w (1 - w),   w(0, y) = 1{y > a},

so that w(t, 0) = P_0(M_t > a).  Strang splitting: exact logistic reaction
per node, exact heat flow by FFT on the even reflection of the domain.
"""
from __future__ import annotations

import numpy as np


def fkpp_exceedance(xi_fn, levels, times, y_min=-40.0, y_max=60.0, n=2 ** 13, dt=2e-3):
    """P_0(M_t > a) for every level a (rows) and time t (columns)."""
    levels = np.atleast_1d(np.asarray(levels, float))
    times = np.sort(np.atleast_1d(np.asarray(times, float)))
    dx = (y_max - y_min) / n
    y = y_min + dx * (np.arange(n) + 0.5)
    r = np.asarray(xi_fn(y), float)
    k = 2 * np.pi * np.fft.rfftfreq(2 * n, dx)
    heat = np.exp(-0.5 * k * k * dt)
    i0 = int(np.argmin(np.abs(y)))
    steps = np.rint(times / dt).astype(int)
    out = np.empty((levels.size, times.size))

    def react(w, h):
        e = np.exp(r * h)
        return w * e / (1.0 - w + w * e)

    def diffuse(w):
        ext = np.concatenate([w, w[::-1]])
        return np.fft.irfft(np.fft.rfft(ext) * heat, 2 * n)[:n]

    for a_idx, a in enumerate(levels):
        w = (y > a).astype(float)
        w = react(w, 0.5 * dt)
        q = 0
        for s in range(1, steps[-1] + 1):
            w = diffuse(w)
            if s == steps[q]:
                wr = react(w, 0.5 * dt)
                out[a_idx, q] = np.interp(0.0, y, wr)
                q += 1
                if q == steps.size:
                    break
            w = react(w, dt)
    return out


def fkpp_medians(xi_fn, times, levels):
    """Median of M_t from exceedance curves on a level grid (linear interpolation)."""
    p = fkpp_exceedance(xi_fn, levels, times)
    meds = []
    for j in range(p.shape[1]):
        col = p[:, j]
        i = int(np.argmax(col < 0.5))
        meds.append(levels[i - 1] + (col[i - 1] - 0.5) / (col[i - 1] - col[i]) * (levels[i] - levels[i - 1]))
    return np.array(meds)
