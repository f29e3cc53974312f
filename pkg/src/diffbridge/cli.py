"""``diffbridge`` command line.

Subcommands read an experiment configuration (see :mod:`diffbridge.bench`)
and write CSV files into the output directory.
"""

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import bench
from .core import TimeGrid, simulate_batch
from .errors import BadConfig, BridgeError
from .models import make_model

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _load(args):
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise BadConfig([f"line 0: cannot read config: {exc}"]) from None
    cfg = bench.parse_config(text)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if getattr(args, "bridge", None):
        changes["bridges"] = (args.bridge,)
    if getattr(args, "iterations", None):
        changes["iterations"] = args.iterations
    cfg = dataclasses.replace(cfg, **changes)
    if changes:
        # re-validate the overridden document as a whole
        cfg = bench.parse_config(bench.serialise(cfg))
    return cfg


def _write_rows(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def cmd_simulate(cfg, args):
    model = make_model(cfg.model, cfg.theta)
    rows = []
    for T in cfg.T:
        grid = TimeGrid(T, cfg.m)
        paths = simulate_batch(model, cfg.x0, grid, args.paths, cfg.seed)
        for p, path in enumerate(paths):
            for k, t in enumerate(grid.times):
                for c, v in enumerate(path[k]):
                    rows.append([bench._cell(T), p, bench._cell(float(t)), c, bench._cell(float(v))])
    out = Path(cfg.out_dir) / "paths.csv"
    _write_rows(out, ("T", "path", "time", "component", "value"), rows)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_quantiles(cfg, args):
    values = bench.resolve_values(cfg)
    rows = []
    for label, value in values.items():
        for c, v in enumerate(np.atleast_1d(value)):
            rows.append([label, c, bench._cell(float(v))])
            print(f"{label}\t{c}\t{v:.4f}")
    _write_rows(Path(cfg.out_dir) / "quantiles.csv", ("scenario", "component", "value"), rows)
    return EXIT_OK


def cmd_benchmark(cfg, args):
    out = Path(cfg.out_dir)
    rows = bench.run_benchmark(cfg, out, threads=args.threads)
    for row in rows:
        status = row.error or f"acceptance={row.acceptance_rate:.4f} min_ess={row.min_ess:.1f}"
        print(f"{row.conditioning}\t{row.bridge}\t{status}")
    print(f"wrote {out / 'summary.csv'}")
    return EXIT_RUNTIME if rows and all(row.error for row in rows) else EXIT_OK


def cmd_bridge(cfg, args):
    if len(cfg.bridge_kinds()) != 1:
        raise BadConfig(["line 0: the bridge subcommand runs exactly one construct; use --bridge"])
    return cmd_benchmark(cfg, args)


def build_parser():
    parser = argparse.ArgumentParser(prog="diffbridge", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment configuration file")
    common.add_argument("--seed", type=int, help="override [mcmc] seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--threads", type=int, default=1, help="chains run concurrently")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="forward Euler-Maruyama paths")
    p.add_argument("--paths", type=int, default=10, help="number of paths per end time")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("quantiles", parents=[common], help="end-point quantile oracle")
    p.set_defaults(func=cmd_quantiles)
    p = sub.add_parser("bridge", parents=[common], help="run one construct and write its bands")
    p.add_argument("--bridge", help="construct label, e.g. MDB or LB(0.01)")
    p.add_argument("--iterations", type=int, help="override [mcmc] iterations")
    p.set_defaults(func=cmd_bridge)
    p = sub.add_parser("benchmark", parents=[common], help="every construct on every scenario")
    p.add_argument("--iterations", type=int, help="override [mcmc] iterations")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _load(args)
        return args.func(cfg, args)
    except BadConfig as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except BridgeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
