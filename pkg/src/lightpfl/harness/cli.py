"""Command-line entry point: ``lightpfl run | compare | partition-report``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from lightpfl.errors import LightPFLError

OUTPUT_ROOT_ENV = "LIGHTPFL_OUTPUT_ROOT"


def _out_dir(arg: str | None, name: str) -> Path:
    if arg:
        p = Path(arg)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        return Path(root) / p if root and not p.is_absolute() else p
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / name


def cmd_run(args) -> int:
    from lightpfl.harness.config import load_config
    from lightpfl.harness.metrics import write_metrics
    from lightpfl.harness.scenario import prepare
    from lightpfl.protocol import run_training

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.validate()
    out = _out_dir(args.out, cfg.name)
    history = run_training(prepare(cfg).setup)
    summary = write_metrics(history, out, figures=not args.no_figures)
    print(f"wrote {out}  final accuracy {summary['final_weighted_acc']:.4f}  "
          f"latency {summary['total_latency']:.4g} s")
    return 0


def cmd_compare(args) -> int:
    from lightpfl.harness.metrics import compare_runs, format_compare, trace_from_client_file

    table = compare_runs(args.metrics, args.target_accuracy)
    sys.stdout.write(format_compare(table))
    if args.plot:
        from lightpfl.harness.plotting import plot_compare

        plot_compare({str(p): trace_from_client_file(p) for p in args.metrics}, args.plot)
    return 0


def cmd_partition_report(args) -> int:
    from lightpfl.harness.config import load_config
    from lightpfl.harness.scenario import partition_report

    sys.stdout.write(partition_report(load_config(args.config)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lightpfl", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one scenario and write metrics")
    run.add_argument("config")
    run.add_argument("--out", help=f"output directory (relative paths sit under ${OUTPUT_ROOT_ENV})")
    run.add_argument("--seed", type=int)
    run.add_argument("--no-figures", action="store_true")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="time-to-accuracy table over runs")
    cmp_.add_argument("metrics", nargs="+", help="run directories or clients.csv files")
    cmp_.add_argument("--target-accuracy", type=float, required=True)
    cmp_.add_argument("--plot", help="also write an accuracy overlay PNG here")
    cmp_.set_defaults(func=cmd_compare)

    rep = sub.add_parser("partition-report", help="per-client class counts")
    rep.add_argument("config")
    rep.set_defaults(func=cmd_partition_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LightPFLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
