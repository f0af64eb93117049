"""Command-line entry point: ``yflow {train,sample,eval,export-traj,compare}``.

Exit status is 0 on success, 2 for bad configs or inputs and 3 when training
or integration produces non-finite numbers. ``YFLOW_THREADS`` caps the
number of BLAS worker threads.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .datasets import read_csv_matrix, write_csv_matrix
from .diagnostics import displacement_profile, path_lengths, trunk_statistic
from .evaluation import (
    evaluate,
    rollout,
    sample_endpoints,
    source_points,
    target_points,
    trajectory_rows,
)
from .integrate import NonFiniteError
from .training import load_run, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_train(args) -> int:
    config, text = load_config(args.config)
    out = args.out or config.output.dir
    result = train(config, out, config_text=text)
    print(f"wrote {Path(out) / 'final.bin'} after {config.optim.iterations} iterations")
    if result.stats:
        print(f"final loss {result.stats['last_total']:.6g}")
    return EXIT_OK


def cmd_sample(args) -> int:
    config, net, _ = load_run(args.checkpoint)
    if args.steps < 1:
        raise ValueError("--steps must be >= 1")
    x = sample_endpoints(net, source_points(config, args.n, args.seed), args.steps)
    write_csv_matrix(args.out, x, header=[f"x{j + 1}" for j in range(config.data.dim)])
    return EXIT_OK


def cmd_eval(args) -> int:
    config, net, _ = load_run(args.checkpoint)
    if args.data:
        target = read_csv_matrix(args.data)
    else:
        target = target_points(config, config.eval.samples, config.eval.seed + 1)
    metrics = evaluate(config, net, target, args.steps, args.seed)
    metrics["settings"]["data"] = args.data or "fresh draw from the run's dataset"
    _write_json(args.out, metrics)
    return EXIT_OK


def cmd_export_traj(args) -> int:
    config, net, _ = load_run(args.checkpoint)
    if args.steps < 1:
        raise ValueError("--steps must be >= 1")
    rows = trajectory_rows(net, source_points(config, args.n, args.seed), args.steps)
    d = config.data.dim
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["particle", "k", "t", *(f"x{j + 1}" for j in range(d)), "speed"])
        for r in rows:
            w.writerow([int(r[0]), int(r[1]), *(repr(float(v)) for v in r[2:])])
    return EXIT_OK


_SHARED_SECTIONS = ("data", "net", "grid", "seed")


def comparison_report(config_a, net_a, config_b, net_b, n: int = 512) -> dict:
    """Trunk statistics, displacement profiles and endpoint metrics side by side."""
    report = {}
    for label, cfg, net in (("A", config_a, net_a), ("B", config_b, net_b)):
        x0 = source_points(cfg, n, cfg.eval.seed)
        traj = rollout(net, x0, cfg.grid.steps)
        pos, knots = traj.positions, traj.grid.knots
        target = target_points(cfg, cfg.eval.samples, cfg.eval.seed + 1)
        report[label] = {
            "method": cfg.method,
            "alpha": cfg.action.alpha,
            "trunk_t0.2": trunk_statistic(pos, knots, 0.2),
            "trunk_t0.3": trunk_statistic(pos, knots, 0.3),
            "displacement": displacement_profile(pos).tolist(),
            "mean_path_length": float(path_lengths(pos).mean()),
            "metrics": evaluate(cfg, net, target, cfg.grid.steps),
        }
    return report


def check_comparable(config_a, config_b) -> None:
    for sec in _SHARED_SECTIONS:
        if getattr(config_a, sec) != getattr(config_b, sec):
            raise ConfigError(f"configs differ in section {sec!r}; compare needs matched data, net, grid and seeds")


def cmd_compare(args) -> int:
    (cfg_a, text_a), (cfg_b, text_b) = load_config(args.config_a), load_config(args.config_b)
    check_comparable(cfg_a, cfg_b)
    out = Path(args.out)
    run_root = out.parent / (out.stem + "_runs")
    net_a = train(cfg_a, run_root / "A", config_text=text_a).net
    net_b = train(cfg_b, run_root / "B", config_text=text_b).net
    _write_json(out, comparison_report(cfg_a, net_a, cfg_b, net_b))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="yflow", description="Train and inspect branched flows.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: output.dir from the config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="write K'-step endpoints as CSV")
    p.add_argument("checkpoint")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="W1, W2, MMD and Sinkhorn metrics as JSON")
    p.add_argument("checkpoint")
    p.add_argument("--data", help="target CSV (default: a fresh draw from the run's dataset)")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-traj", help="every grid state of n particles as CSV")
    p.add_argument("checkpoint")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_traj)

    p = sub.add_parser("compare", help="train two configs and compare their trajectories")
    p.add_argument("config_a")
    p.add_argument("config_b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return ap


def _thread_cap() -> int | None:
    raw = os.environ.get("YFLOW_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"YFLOW_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"YFLOW_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with threadpool_limits(limits=_thread_cap()):
            return args.func(args)
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
