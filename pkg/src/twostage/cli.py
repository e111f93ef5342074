"""Command-line entry point: ``twostage <subcommand> [options]``.

Each subcommand writes ``summary.csv`` and ``runs.csv`` into ``--out``.
Both are deterministic given the config and seed. Wall-clock measurements
go to ``timing.csv`` only. On failure a single JSON line
``{"error": <type>, "message": <text>}`` is printed to stderr and the exit
code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .baselines import EkfConfig, PemConfig, ekf_estimate, pem_estimate
from .config import campaign_from_config, read_config, ts_config_from_config
from .core import ConfigurationError, SeedSpec
from .estimator import infer, load_model, save_model, train
from .harness import RUNNERS, write_rows, write_summary
from .simulators import NonlinearSystemSpec, SnrModelSpec, read_record_csv, write_record_csv

CAMPAIGNS = {
    "mc-consistency": "consistency",
    "mc-normality": "normality",
    "compare-baselines": "baseline-compare",
    "bench": "bench",
    "asymptotics": "asymptotics",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI config file")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--jobs", type=int, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twostage", description="Two-stage simulation-driven parameter estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate records to CSV")
    _common(p)
    p.add_argument("--model", choices=("snr", "nonlinear"), default="snr")
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--mu", type=float, default=5.0)
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser("train", help="simulate a training set and fit an estimator")
    _common(p)
    p.add_argument("--m", type=int)
    p.add_argument("--N", type=int)

    p = sub.add_parser("estimate", help="estimate the parameter of one record")
    _common(p)
    p.add_argument("--model", type=Path, required=True, help="model JSON written by train")
    p.add_argument("--record", type=Path, required=True, help="record CSV (t,y,u)")

    p = sub.add_parser("baselines", help="run EKF or PEM on one record")
    _common(p)
    p.add_argument("--record", type=Path, required=True)
    p.add_argument("--method", choices=("ekf-large", "ekf-small", "pem"), required=True)
    p.add_argument("--n-init", type=int, default=1)
    p.add_argument("--theta0", type=float, default=float("nan"), help="true value, echoed for reference")

    for name, experiment in CAMPAIGNS.items():
        p = sub.add_parser(name, help=f"{experiment} campaign")
        _common(p)
        p.add_argument("--runs", type=int)
        p.add_argument("--grid", help="cells as MxN, comma separated")
    return parser


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else args.seed


def cmd_simulate(args) -> None:
    if args.count < 1:
        raise ConfigurationError("--count must be >= 1")
    if args.model == "snr":
        model = SnrModelSpec(args.mu, args.N)
    else:
        model = NonlinearSystemSpec(N=args.N)
    out = args.out
    master = SeedSpec(_seed(args))
    rows, summary = [], []
    for i in range(args.count):
        rec = model.simulate(np.array([args.theta]), master.spawn(i))
        name = "record.csv" if args.count == 1 else f"record_{i:04d}.csv"
        write_record_csv(rec, out / name)
        y = rec.outputs
        rows.append([i, args.theta, len(rec), name])
        summary.append([i, args.model, args.theta, len(rec), float(y.mean()), float(y.var())])
    write_rows(out / "runs.csv", ["record", "theta", "N", "file"], rows)
    write_rows(out / "summary.csv", ["record", "model", "theta", "N", "output_mean", "output_var"], summary)


def cmd_train(args) -> None:
    cfg = read_config(args.config)
    config = ts_config_from_config(cfg, seed=args.seed, jobs=args.jobs, m=args.m, N=args.N)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = train(config)
    out = args.out
    save_model(est, out / "model.json")
    thetas = config.training_thetas()
    write_rows(out / "summary.csv", ["m", "N", "training_mse", "n_rank_deficient"],
               [[config.m, config.N, est.training_mse_, est.n_rank_deficient_]])
    write_rows(out / "runs.csv", ["record"] + [f"theta_{j + 1}" for j in range(thetas.shape[1])],
               [[i, *map(float, thetas[i])] for i in range(config.m)])
    write_rows(out / "timing.csv", ["quantity", "seconds"], [["training", est.training_seconds_]])


def cmd_estimate(args) -> None:
    est = load_model(args.model)
    rec = read_record_csv(args.record)
    theta, micros = infer(est, rec, timing=True)
    names = [f"theta_hat_{j + 1}" for j in range(theta.size)]
    values = [float(v) for v in theta]
    print(",".join(names + ["infer_micros"]))
    print(",".join([repr(v) for v in values] + [f"{micros:.3f}"]))
    write_rows(args.out / "summary.csv", names, [values])
    write_rows(args.out / "runs.csv", ["record"] + names, [[str(args.record.name), *values]])
    write_rows(args.out / "timing.csv", ["quantity", "micros"], [["infer", micros]])


def cmd_baselines(args) -> None:
    rec = read_record_csv(args.record)
    t0 = time.perf_counter_ns()
    if args.method == "pem":
        res = pem_estimate(rec, PemConfig(n_init=args.n_init, seed=SeedSpec(_seed(args))))
        theta, objective = res.theta_hat, res.best_objective
        per_run = [[i, s.init, s.theta, s.objective, s.n_evals] for i, s in enumerate(res.per_init)]
    else:
        cfg = EkfConfig.large() if args.method == "ekf-large" else EkfConfig.small()
        res = ekf_estimate(rec, cfg)
        theta, objective = res.theta_hat, res.nll
        per_run = [[0, float(cfg.x0[2]), theta, objective, len(rec)]]
    micros = (time.perf_counter_ns() - t0) / 1e3
    header = ["method", "theta0", "theta_hat", "objective_or_nll"]
    row = [args.method, args.theta0, theta, objective]
    print(",".join(header + ["infer_micros"]))
    print(",".join([args.method] + [repr(float(v)) for v in row[1:]] + [f"{micros:.3f}"]))
    write_rows(args.out / "summary.csv", header, [row])
    write_rows(args.out / "runs.csv", ["start", "init", "theta", "objective", "n_evals"], per_run)
    write_rows(args.out / "timing.csv", ["quantity", "micros"], [["infer", micros]])


def cmd_campaign(args) -> None:
    cfg = read_config(args.config)
    spec = campaign_from_config(cfg, CAMPAIGNS[args.command], seed=args.seed, jobs=args.jobs,
                                runs=args.runs, grid=args.grid)
    summary = RUNNERS[spec.experiment](spec)
    write_summary(args.out, summary)
    for q, value, ref, ratio, note in summary.statistics:
        if note.startswith("DISCREPANCY"):
            print(f"warning: {q} value {value:.6g} vs reference {ref:.6g} (ratio {ratio:.3g})", file=sys.stderr)


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "estimate": cmd_estimate, "baselines": cmd_baselines}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigurationError("--seed must be an unsigned 64-bit integer")
        if args.jobs is not None and args.jobs < 1:
            raise ConfigurationError("--jobs must be >= 1")
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS.get(args.command, cmd_campaign)(args)
    except Exception as exc:
        msg = str(exc) or repr(exc)
        print(json.dumps({"error": type(exc).__name__, "message": msg}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
