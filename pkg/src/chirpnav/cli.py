"""Command-line front end: simulate one scenario, sweep a parameter, or
score an estimate CSV against a truth CSV.

Exit codes: 0 ok, 2 bad config, 3 signal lost beyond the tolerated gap.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, RunConfig, config_to_dict, load_config
from .metrics import error_series, evaluate_run, raw_triangulation_rmse, \
    summarize
from .pipeline import SignalLostError, run_scenario
from .runio import read_trajectory, write_run_artifacts
from .scene import MultipathRay

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIGNAL_LOST = 3

SWEEPABLES = ("speed", "distance", "wall_db", "snr", "window")


def _run_from_config(cfg: RunConfig):
    return run_scenario(cfg.scenario, mode=cfg.mode, window_n=cfg.window_n,
                        max_gap_epochs=cfg.max_gap_epochs,
                        fix_yaw=cfg.fix_yaw, cal_sweeps=cfg.cal_sweeps,
                        solver_iters=cfg.solver_iters,
                        solver_tol=cfg.solver_tol)


def _simulate(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg = replace(cfg, out_dir=args.out)
        if args.seed is not None:
            cfg = replace(cfg, scenario=replace(cfg.scenario, seed=args.seed))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    code = EXIT_OK
    try:
        result = _run_from_config(cfg)
    except SignalLostError as e:
        print(f"signal lost: {e.args[0]}", file=sys.stderr)
        result = e.args[1]
        code = EXIT_SIGNAL_LOST
    report = evaluate_run(result)
    write_run_artifacts(cfg.out_dir, result, report,
                        resolved_config=config_to_dict(cfg))
    print(f"wrote {cfg.out_dir}: pos RMSE {report.pos_rmse_m:.4g} m, "
          f"orientation mean {report.orientation_mean_deg:.4g} deg "
          f"({report.n_solves} solves)")
    return code


def _apply_sweep_value(cfg: RunConfig, param: str, value: float) -> RunConfig:
    sc = cfg.scenario
    if param == "speed":
        sc = replace(sc, speed_mps=float(value))
    elif param == "distance":
        sc = replace(sc, start_xy=(float(value), 0.0),
                     center_xy=(float(value), 0.0))
    elif param == "wall_db":
        ray = MultipathRay(excess_path_m=2.5,
                           gain=complex(10.0 ** (-float(value) / 20.0), 0.0))
        sc = replace(sc, noise=replace(sc.noise, multipath=(ray,)))
    elif param == "snr":
        sc = replace(sc, noise=replace(sc.noise, snr_db=float(value)))
    elif param == "window":
        return replace(cfg, window_n=int(value))
    else:
        raise ConfigError(f"unknown sweep parameter {param!r}; "
                          f"choose from {SWEEPABLES}")
    return replace(cfg, scenario=sc)


def _sweep(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg = replace(cfg, out_dir=args.out)
        values = [float(v) for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("empty sweep value list")
        if args.param not in SWEEPABLES:
            raise ConfigError(f"unknown sweep parameter {args.param!r}; "
                              f"choose from {SWEEPABLES}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(cfg.out_dir, exist_ok=True)
    rows = []
    for i, value in enumerate(values):
        case = _apply_sweep_value(cfg, args.param, value)
        # isolated instance: own seed, own subdir
        case = replace(case, scenario=replace(case.scenario,
                                              seed=case.scenario.seed + i))
        sub = os.path.join(cfg.out_dir, f"{args.param}_{value:g}")
        lost = 0
        try:
            result = _run_from_config(case)
        except SignalLostError as e:
            result = e.args[1]
            lost = 1
        report = evaluate_run(result)
        write_run_artifacts(sub, result, report,
                            resolved_config=config_to_dict(case))
        raw = raw_triangulation_rmse(result)
        rows.append((value, report, raw, lost))
        print(f"{args.param}={value:g}: pos RMSE {report.pos_rmse_m:.4g} m, "
              f"raw {raw:.4g} m{', signal lost' if lost else ''}")
    table = os.path.join(cfg.out_dir, "sweep.csv")
    with open(table, "w", newline="\n") as f:
        f.write(f"{args.param},pos_rmse_m,pos_mean_m,raw_rmse_m,"
                "orientation_mean_deg,yaw_rmse_deg,n_solves,signal_lost\n")
        for value, rep, raw, lost in rows:
            f.write(f"{value:.9g},{rep.pos_rmse_m:.9g},{rep.pos_mean_m:.9g},"
                    f"{raw:.9g},{rep.orientation_mean_deg:.9g},"
                    f"{rep.yaw_rmse_deg:.9g},{rep.n_solves},{lost}\n")
    print(f"wrote {table}")
    return EXIT_OK


def _metrics(args) -> int:
    try:
        truth = read_trajectory(args.truth)
        est = read_trajectory(args.estimate)
    except (OSError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    # match rows by timestamp; every estimate epoch must exist in truth
    idx = []
    ti = {round(float(t), 9): j for j, t in enumerate(truth["t"])}
    for t in est["t"]:
        j = ti.get(round(float(t), 9))
        if j is None:
            print(f"config error: estimate time {t} missing from truth",
                  file=sys.stderr)
            return EXIT_CONFIG
        idx.append(j)
    idx = np.asarray(idx, dtype=int)

    def cols(d, names, rows=None):
        m = np.column_stack([d[c] for c in names])
        return m if rows is None else m[rows]

    pos_err, orient, yaw = error_series(
        est["t"],
        cols(est, ("px", "py", "pz")),
        cols(est, ("qw", "qx", "qy", "qz")),
        cols(est, ("rho_x", "rho_y", "rho_z")),
        cols(truth, ("px", "py", "pz"), idx),
        cols(truth, ("qw", "qx", "qy", "qz"), idx),
        cols(truth, ("rho_x", "rho_y", "rho_z"), idx)[0])
    report = summarize(est["t"], pos_err, orient, yaw,
                       n_excluded=args.exclude)
    json.dump(report.to_dict(), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="chirpnav",
        description="Backscatter-chirp MAV state estimation simulator")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="run one configured scenario")
    ps.add_argument("--config", required=True)
    ps.add_argument("--out", default=None,
                    help="output directory (overrides config)")
    ps.add_argument("--seed", type=int, default=None,
                    help="seed override")
    ps.set_defaults(func=_simulate)

    pw = sub.add_parser("sweep", help="repeat a scenario across one knob")
    pw.add_argument("--config", required=True)
    pw.add_argument("--param", required=True,
                    help=f"one of {', '.join(SWEEPABLES)}")
    pw.add_argument("--values", required=True,
                    help="comma-separated list, e.g. 0.5,1,2")
    pw.add_argument("--out", default=None)
    pw.set_defaults(func=_sweep)

    pm = sub.add_parser("metrics", help="score an estimate against truth")
    pm.add_argument("--truth", required=True)
    pm.add_argument("--estimate", required=True)
    pm.add_argument("--exclude", type=int, default=0,
                    help="warm-up rows to exclude from averages")
    pm.set_defaults(func=_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
