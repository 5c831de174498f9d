"""Command line entry point: ``esrf-limit {sweep,check,demo}``."""
from __future__ import annotations

import argparse
import dataclasses
import sys

from .checks import ALL_CHECKS, run_checks
from .config import load_config
from .errors import EsrfError
from .harness import FORMATS, emit_report, run_sweep
from .presets import demo_sweep


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, help="output directory for the report files")
    p.add_argument("--seeds", type=int, default=None, help="override the number of seeds")
    p.add_argument("--parallel", type=int, default=None, help="worker processes (default from config)")
    p.add_argument("--format", choices=FORMATS, default="csv", help="report format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esrf-limit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sw = sub.add_parser("sweep", help="run a sweep described by a YAML config")
    sw.add_argument("--config", required=True, help="path to the YAML sweep config")
    _add_run_flags(sw)
    ck = sub.add_parser("check", help="run the identity and bound checks")
    ck.add_argument("names", nargs="*", choices=[[]] + list(ALL_CHECKS), default=[],
                    metavar="NAME", help=f"subset of checks: {', '.join(ALL_CHECKS)}")
    dm = sub.add_parser("demo", help="built-in scalar-model sweep")
    _add_run_flags(dm)
    return parser


def _sweep(cfg, args) -> int:
    if args.seeds is not None:
        cfg = dataclasses.replace(cfg, num_seeds=args.seeds)
    report = run_sweep(cfg, parallel=args.parallel)
    for line in report.summary_lines():
        print(line)
    for f in report.failures:
        print(f"FAILED CELL seed={f['seed']} variant={f['variant']} h={f['h']}: {f['message']}")
    out = args.out or cfg.output_path
    if out:
        for path in emit_report(report, out, args.format):
            print(f"wrote {path}")
    return 0 if report.passed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sweep":
            return _sweep(load_config(args.config), args)
        if args.command == "demo":
            return _sweep(demo_sweep(), args)
        results = run_checks(args.names or None)
        for r in results:
            print(r.line())
        return 0 if all(r.passed for r in results) else 1
    except EsrfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
