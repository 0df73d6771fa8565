"""Command-line entry point: ``bbmre <command> --config run.json --out DIR``.

Exit codes: 0 pass, 1 verification failure, 2 configuration error,
3 resource cap, 4 numerical instability.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

import numpy as np

from .bbm import SimConfig, simulate_population
from .config import EXPERIMENTS, RunConfig
from .env import make_env
from .errors import (AssumptionViolation, CappedRunError, ConfigError, DomainError, ExtensionError,
                     NumericalInstabilityError, SampleSizeError)
from .harness import (FAIL, annealed_mt_clt_experiment, calibrate_front, env_stats_experiment,
                      ensemble_env, front_gap_experiment, invariance_paths_experiment, lln_experiment,
                      spectral_pipeline, vt_clt_experiment)
from .io import MANIFEST, RunDir, file_digest
from .rng import derive_seed
from .spectral import (INCREASING, find_lambda_star, front_table, gamma_curve, riccati_profile)
from .spine import simulate_spine

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_CAP, EXIT_NUMERIC = 0, 1, 2, 3, 4


def _out_dir(cfg: RunConfig, out: Optional[str]) -> str:
    d = out or cfg.output_dir
    if not d:
        raise ConfigError("no output directory: pass --out or set output_dir", "--out")
    return d


# ---------------------------------------------------------------- commands

def cmd_spectrum(cfg: RunConfig, out: str, workers: int = 1) -> list:
    """Quenched spectral summary of the configured environment, plus gamma(lambda)."""
    env = make_env(cfg.env)
    grid = cfg.grid
    summ = find_lambda_star(env, grid, cfg.law.m, tol=cfg.spectral["tol"])
    lams = cfg.spectral["lambdas"] or list(summ.lambda_star * np.array([0.6, 0.8, 0.9, 1.0, 1.1, 1.25, 1.5, 2.0]))
    curve = gamma_curve(env, lams, grid, cfg.law.m, cfg.spectral["tol"])
    rd = RunDir(out, cfg.digest)
    files = [rd.write_json("spectrum.json", {"summary": summ.to_dict(), "env": cfg.env.to_dict(),
                                              "law": cfg.law.to_dict(), "grid": grid.to_dict(),
                                              "sandwich_ok": curve.sandwich_ok(),
                                              "convex": curve.is_convex()})]
    files.append(rd.write_csv("gamma_curve.csv", ("lambda", "gamma", "gamma_over_lambda"),
                              [(l, g, g / l) for l, g in zip(curve.lambdas, curve.gammas)]))
    return files


def cmd_front(cfg: RunConfig, out: str, ts=None, workers: int = 1) -> list:
    env = make_env(cfg.env)
    summ = find_lambda_star(env, cfg.grid, cfg.law.m, tol=cfg.spectral["tol"])
    ft = front_table(env, summ, cfg.grid)
    ts = list(ts if ts is not None else cfg.front["t"])
    vs = np.atleast_1d(ft.V(np.asarray(ts)))
    rd = RunDir(out, cfg.digest)
    return [rd.write_csv("front.csv", ("t", "V_t", "v_star_t"),
                         [(t, v, summ.v_star * t) for t, v in zip(ts, vs)]),
            rd.write_json("front_summary.json", {"summary": summ.to_dict()})]


def cmd_simulate(cfg: RunConfig, out: str, workers: int = 1) -> list:
    s = cfg.simulate
    sim = SimConfig(s["T"], tuple(s["checkpoints"] or (s["T"],)), s["x0"], s["cap"], s["prune_window"])
    env = make_env(cfg.env)
    rows, recs = [], []
    for r in range(s["n_reps"]):
        snaps = simulate_population(env, cfg.law, sim, derive_seed(cfg.master_seed, "simulate", r), workers)
        for sn in snaps:
            rows.append((r, sn.t, sn.count, sn.M_t))
            d = sn.to_dict(s["bins"] or None)
            d["replicate"] = r
            recs.append(d)
    rd = RunDir(out, cfg.digest)
    return [rd.write_csv("population.csv", ("replicate", "t", "count", "M_t"), rows),
            rd.write_ndjson("population.ndjson", recs)]


def cmd_spine(cfg: RunConfig, out: str, workers: int = 1) -> list:
    s = cfg.spine
    env = make_env(cfg.env)
    summ = find_lambda_star(env, cfg.grid, cfg.law.m, tol=cfg.spectral["tol"])
    prof = riccati_profile(env, summ.gamma_star, INCREASING, cfg.grid, cfg.law.m, lam=-summ.lambda_star)
    rd = RunDir(out, cfg.digest)
    path_rows, hit_rows, br_rows, speeds = [], [], [], []
    for i in range(s["n_paths"]):
        p = simulate_spine(env, prof, s["T"], s["dt"], cfg.law, derive_seed(cfg.master_seed, "spine", i),
                           x0=s["x0"], k_max=s["k_max"], stride=s["stride"])
        path_rows.append((i, 0.0, p.x0))
        path_rows.extend((i, t, x) for t, x in zip(p.times, p.positions))
        hit_rows.extend((i, k, h) for k, h in zip(p.levels(), p.hitting_times))
        br_rows.extend((i, t, x, k) for t, x, k in zip(p.branch_times, p.branch_positions, p.offspring))
        speeds.append((p.final_position - p.x0) / p.T)
    files = [rd.write_csv("spine_paths.csv", ("path", "t", "Xi"), path_rows),
             rd.write_csv("spine_branches.csv", ("path", "t", "x", "offspring"), br_rows),
             rd.write_json("spine_summary.json", {"summary": summ.to_dict(), "speeds": speeds,
                                                  "mean_speed": float(np.mean(speeds))})]
    if s["k_max"]:
        files.append(rd.write_csv("spine_hitting.csv", ("path", "k", "H_k"), hit_rows))
    return files


def _run_experiment(name, cfg: RunConfig, ctx: dict, workers: int):
    b = cfg.experiment(name)
    thr = b["thresholds"]
    seed = cfg.master_seed
    spec = cfg.env
    m = cfg.law.m
    dg = cfg.digest

    def pipe():
        if "pipeline" not in ctx:
            ctx["pipeline"] = spectral_pipeline(spec, m, cfg.spectral["calibration_length"],
                                                cfg.spectral["calibration_dx"])
        return ctx["pipeline"]

    def lln_envs(n):
        if spec.kind == "constant":
            return [make_env(spec)], ["constant"]
        return [ensemble_env(spec, "lln-envs", i) for i in range(n)], [f"env{i}" for i in range(n)]

    def series(t_grid, n_reps, n_envs):
        key = ("series", tuple(t_grid), n_reps, n_envs)
        if key not in ctx:
            envs, labels = lln_envs(n_envs)
            rep, ser = lln_experiment(envs, cfg.law, t_grid, n_reps, pipe().summary, seed, workers,
                                      thresholds=cfg.experiment("lln")["thresholds"], config_digest=dg, labels=labels)
            ctx[key] = (rep, ser)
        return ctx[key]

    if name == "env_stats":
        return [env_stats_experiment(spec, pipe(), b["n_envs"], b["L_sigma"], b["n_sigma_envs"], b["dx"],
                                     workers, thr, dg)]
    if name == "lln":
        return [series(b["t_grid"], b["n_reps"], b["n_envs"])[0]]
    if name == "front_gap":
        _, ser = series(b["t_grid"], b["n_reps"], b["n_envs"])
        envs, labels = lln_envs(b["n_envs"])
        return [front_gap_experiment(e, cfg.law, pipe().summary, b["t_grid"], b["n_reps"], seed,
                                     series=s, thresholds=thr, config_digest=dg, label=lab)
                for e, s, lab in zip(envs, ser, labels)]
    if name == "vt_clt":
        rep, cal = vt_clt_experiment(spec, pipe(), b["t"], b["n_envs"], b["dx"], workers, thr, dg)
        ctx[("calibration", b["t"], b["n_envs"])] = cal
        return [rep]
    if name == "invariance_paths":
        key = ("calibration", b["n"], b["n_envs"])
        if key not in ctx:
            ctx[key] = calibrate_front(spec, pipe(), b["n"], b["n_envs"], b["dx"], workers)
        return [invariance_paths_experiment(spec, pipe(), ctx[key], b["n"], b["t_grid"], b["n_envs"], b["dx"],
                                            workers, thr, dg)]
    if name == "annealed_mt_clt":
        key = ("calibration", b["calibration_t"], b["calibration_envs"])
        if key not in ctx:
            ctx[key] = calibrate_front(spec, pipe(), b["calibration_t"], b["calibration_envs"], 1e-2, workers)
        s2 = ctx[key].sigma_tilde_sq.estimate
        return [annealed_mt_clt_experiment(spec, cfg.law, pipe(), b["T"], b["n_envs"], b["n_reps_per_env"],
                                           seed, s2, workers, thresholds=thr, config_digest=dg)]
    raise ConfigError(f"unknown experiment; expected one of {list(EXPERIMENTS)}", f"--experiment {name}")


def cmd_verify(cfg: RunConfig, out: str, names, workers: int = 1, echo=print) -> int:
    names = list(dict.fromkeys(names or []))
    rd = RunDir(out, cfg.digest)
    if not names:
        echo("nothing to verify")
        rd.write_json("verify.json", {"experiments": [], "verdict": "pass", "message": "nothing to verify"})
        return EXIT_OK
    for n in names:
        cfg.experiment(n)
    ctx: dict = {}
    reports = []
    for n in names:
        reps = _run_experiment(n, cfg, ctx, workers)
        for k, rep in enumerate(reps):
            reports.append(rep)
            stem = n if len(reps) == 1 else f"{n}_{k}"
            rd.write_json(f"report_{stem}.json", rep.to_dict())
            for tname, (header, rows) in rep.tables.items():
                rd.write_csv(tname, header, rows)
            for line in rep.lines():
                echo(line)
    failed = [r.name for r in reports if r.verdict == FAIL]
    rd.write_json("verify.json", {"experiments": [r.name for r in reports],
                                  "verdicts": [r.verdict for r in reports],
                                  "verdict": "fail" if failed else "pass"})
    return EXIT_FAIL if failed else EXIT_OK


def cmd_report(run_dir: str, echo=print) -> dict:
    mpath = os.path.join(run_dir, MANIFEST)
    if not os.path.exists(mpath):
        raise ConfigError("no manifest in run directory", run_dir)
    with open(mpath) as f:
        man = json.load(f)
    want = man.get("config_digest")
    summary = {"config_digest": want, "files": [], "reports": {}}
    for e in man.get("files", []):
        p = os.path.join(run_dir, e["name"])
        if not os.path.exists(p):
            raise ConfigError("listed artifact is missing", e["name"])
        got = file_digest(p)
        if got != want or e.get("config_digest") != want:
            raise ConfigError(f"config digest {got} does not match the manifest ({want})", e["name"])
        summary["files"].append(e["name"])
        if e["name"].startswith("report_"):
            with open(p) as f:
                r = json.load(f)
            summary["reports"][e["name"]] = {"verdict": r["verdict"], "checks": r["checks"]}
    with open(os.path.join(run_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    echo(f"{len(summary['files'])} artifacts, config digest {want}")
    for k, v in sorted(summary["reports"].items()):
        echo(f"  {k}: {v['verdict']}")
    return summary


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bbmre", description="Branching Brownian motion in random environment.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("spectrum", "front", "simulate", "spine", "verify", "report"):
        p = sub.add_parser(name)
        if name != "report":
            p.add_argument("--config", required=True, metavar="PATH")
            p.add_argument("--seed", type=int, default=None, metavar="U64")
        p.add_argument("--out", metavar="DIR", required=(name == "report"))
        p.add_argument("--workers", type=int, default=1, metavar="N")
        if name == "verify":
            p.add_argument("--experiment", action="append", default=[], metavar="NAME")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        if args.workers < 1:
            raise ConfigError("must be >= 1", "--workers")
        if args.command == "report":
            cmd_report(args.out)
            return EXIT_OK
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("must be an unsigned 64-bit integer", "--seed")
        cfg = RunConfig.load(args.config, args.seed)
        out = _out_dir(cfg, args.out)
        if args.command == "verify":
            return cmd_verify(cfg, out, args.experiment, args.workers)
        fn = {"spectrum": cmd_spectrum, "front": cmd_front, "simulate": cmd_simulate, "spine": cmd_spine}
        for p in fn[args.command](cfg, out, workers=args.workers):
            print(p)
        return EXIT_OK
    except (ConfigError, DomainError, AssumptionViolation, SampleSizeError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CappedRunError, ExtensionError) as e:
        print(f"resource cap: {e}", file=sys.stderr)
        return EXIT_CAP
    except NumericalInstabilityError as e:
        print(f"numerical instability: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
