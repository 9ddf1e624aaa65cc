"""Command-line interface.

Subcommands: simulate, trees, convergence, energy-audit, besov-selftest,
grid-info.  Exit code 0 on success, 2 on usage errors; other failures print a
machine-readable JSON error to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import pathlib
import sys
import time

import numpy as np

from .torus import create_grid
from .besov import operator_constants
from .stochastic import make_trees, q_stats
from .dynamics import SimConfig, CoupledSimulator, energy_audit, simulate_coupled
from .measures import convergence_study
from .harness import (
    ExperimentManifest,
    RunRecord,
    parse_config,
    save_checkpoint,
    load_checkpoint,
)


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="onsigma",
                                 description="spectral lattice simulator for the "
                                             "N-component stochastic dynamics")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("simulate", "coupled run with per-sample diagnostics"),
        ("trees", "tree statistics (constants and cancellation stats)"),
        ("convergence", "distance-to-free-field rate study"),
        ("energy-audit", "energy balance residual record"),
        ("besov-selftest", "measured operator constants"),
        ("grid-info", "grid and constant summary"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=pathlib.Path, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=pathlib.Path, default=pathlib.Path("."))
        p.add_argument("--resume", type=pathlib.Path, default=None)
    return ap


def _load_cfg(args) -> SimConfig:
    cfg = parse_config(args.config) if args.config else SimConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    manifest = ExperimentManifest.create(cfg)
    if args.resume:
        sim = load_checkpoint(args.resume, cfg)
    else:
        sim = CoupledSimulator(cfg)
    n = max(1, int(round(cfg.t_sample / (cfg.dt * cfg.sample_stride))))
    rec = RunRecord(["t", "coupling_l2sq", "mean_phi_sq"], manifest.hash)
    for _ in range(n):
        for _ in range(cfg.sample_stride):
            sim.step()
        st = sim.state()
        diff = st.phi - st.z
        rec.append({
            "t": sim.t,
            "coupling_l2sq": float(sim.grid.cell_volume * np.sum(diff ** 2)
                                   / cfg.N),
            "mean_phi_sq": float(np.mean(st.phi ** 2)),
        })
    args.out.mkdir(parents=True, exist_ok=True)
    rec.write_csv(args.out / "simulate.csv")
    save_checkpoint(args.out / "checkpoint.npz", sim)
    manifest.finish()
    manifest.outputs = ["simulate.csv", "checkpoint.npz"]
    (args.out / "manifest.json").write_text(manifest.to_json())
    return 0


def _cmd_trees(args) -> int:
    cfg = _load_cfg(args)
    manifest = ExperimentManifest.create(cfg)
    grid = create_grid(cfg.d, cfg.M, cfg.side)
    start = time.time()
    trees = make_trees(grid, cfg.m, cfg.N, cfg.seed, cfg.dt,
                       btilde_samples=cfg.btilde_samples)
    trees.burn_in()
    n_window = max(8, int(round(cfg.t_sample / cfg.dt)))
    q0, q1, q2 = q_stats(trees, n_window, cfg.kappa)
    wall = time.time() - start
    rec = RunRecord(["N", "M", "d", "m", "seed", "a_lat", "btilde",
                     "Q0", "Q1", "Q2", "wallclock"], manifest.hash)
    rec.rows.append([cfg.N, cfg.M, cfg.d, cfg.m, cfg.seed, trees.a_lat,
                     trees.btilde, q0, q1, q2, wall])
    args.out.mkdir(parents=True, exist_ok=True)
    rec.write_csv(args.out / "trees.csv")
    manifest.finish()
    (args.out / "manifest.json").write_text(manifest.to_json())
    return 0


def _cmd_convergence(args) -> int:
    cfg = _load_cfg(args)
    manifest = ExperimentManifest.create(cfg)
    n_list = [2, 4, 8, 16, 32, 64]
    rows, fit = convergence_study(cfg, n_list)
    rec = RunRecord(["N", "M", "d", "m", "lambda", "samples", "distance",
                     "stderr", "besov_obs_mean", "besov_obs_stderr", "seed"],
                    manifest.hash)
    for r in rows:
        rec.rows.append([r["N"], cfg.M, cfg.d, cfg.m, cfg.lam, r["samples"],
                         r["distance"], r["stderr"], r["besov_obs_mean"],
                         r["besov_obs_stderr"], cfg.seed])
    args.out.mkdir(parents=True, exist_ok=True)
    rec.write_csv(args.out / "convergence.csv")
    summary = {"fit": fit, "config_hash": manifest.hash}
    (args.out / "convergence_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True))
    manifest.finish()
    (args.out / "manifest.json").write_text(manifest.to_json())
    return 0


def _cmd_energy_audit(args) -> int:
    cfg = _load_cfg(args)
    cfg = dataclasses.replace(cfg, evolve_x=cfg.lam > 0)
    manifest = ExperimentManifest.create(cfg)
    sim = CoupledSimulator(cfg)
    n = max(1, int(round(cfg.t_sample / cfg.dt)))
    rows = energy_audit(sim, n)
    rec = RunRecord(list(rows[0].keys()), manifest.hash)
    for r in rows:
        rec.append(r)
    args.out.mkdir(parents=True, exist_ok=True)
    rec.write_csv(args.out / "energy_audit.csv")
    manifest.finish()
    (args.out / "manifest.json").write_text(manifest.to_json())
    return 0


def _cmd_besov_selftest(args) -> int:
    cfg = _load_cfg(args)
    out = {}
    for M in (8, 16, 32):
        out[str(M)] = operator_constants(M, d=cfg.d, n_fields=100,
                                         seed=cfg.seed, kappa=cfg.kappa)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "operator_constants.json").write_text(
        json.dumps(out, indent=2, sort_keys=True))
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def _cmd_grid_info(args) -> int:
    from .stochastic import wick_a, wick_btilde
    cfg = _load_cfg(args)
    grid = create_grid(cfg.d, cfg.M, cfg.side)
    bt, bt_se = wick_btilde(grid, cfg.m, min(cfg.btilde_samples, 128),
                            seed=cfg.seed)
    info = {
        "d": cfg.d, "M": cfg.M, "side": grid.side,
        "n_sites": grid.n_sites, "dx": grid.dx, "volume": grid.volume,
        "k2_max": float(np.max(grid.k2)),
        "a_lat": wick_a(grid, cfg.m),
        "btilde": bt, "btilde_stderr": bt_se,
    }
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "trees": _cmd_trees,
    "convergence": _cmd_convergence,
    "energy-audit": _cmd_energy_audit,
    "besov-selftest": _cmd_besov_selftest,
    "grid-info": _cmd_grid_info,
}


def run_command(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # report machine-readably, fail nonzero
        err = {"error": type(exc).__name__, "message": str(exc),
               "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
