"""Spectral quantities of one random environment.

Computes gamma(lambda) on a lambda grid, locates lambda* and v*, checks
that gamma/lambda is minimized there, and tabulates the front V_t.
Run: python demos/01_spectrum.py
"""
import numpy as np

from bbmre.env import EnvSpec, make_env
from bbmre.spectral import Grid, find_lambda_star, front_table, gamma_curve

env = make_env(EnvSpec.lattice(0.8, 1.2, corr_radius=1.0, env_seed=2024))
grid = Grid(0.0, 1000.0, 1e-2)
m = 2.0

summ = find_lambda_star(env, grid, m)
print(f"lambda* = {summ.lambda_star:.5f}  v* = {summ.v_star:.5f}  gamma* = {summ.gamma_star:.5f}")
print(f"speed band [{summ.C2:.4f}, {summ.C1:.4f}] (homogeneous value at the mean rate: {np.sqrt(2.0):.4f})")

lams = summ.lambda_star * np.array([0.6, 0.8, 1.0, 1.25, 1.5])
curve = gamma_curve(env, lams, grid, m)
print("\n lambda    gamma    gamma/lambda")
for l, g in zip(curve.lambdas, curve.gammas):
    print(f"{l:7.4f}  {g:8.5f}  {g / l:8.5f}")
print(f"convex: {curve.is_convex()}  within the constant-field sandwich: {curve.sandwich_ok()}")

ft = front_table(env, summ, Grid(-1.0, 10.0, 1e-3))
ts = np.array([1.0, 10.0, 100.0, 1000.0])
for t, v in zip(ts, ft.V(ts)):
    print(f"V_{t:<6g} = {v:10.4f}   V_t - v* t = {v - summ.v_star * t:+.4f}")
