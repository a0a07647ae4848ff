"""Command line driver.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 fit failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from .calibration import FitFailure
from .harness import (FULL_SCALE_MEMBERS, PRESETS, ExperimentSpec, _coerce, base_vector, cmd_closure, cmd_dns,
                      cmd_fit, preset)

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_FIT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _gamma(text: str):
    if text == "fit":
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'fit', got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError("gamma must be non-negative")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--members", type=int, help="ensemble size")
    common.add_argument("--rdev", type=float, help="initial deviation scale r_dev")
    common.add_argument("--gamma", type=_gamma, help="closure parameter, or 'fit'")
    common.add_argument("--buffered", action="store_true", default=None, help="add m zero-mean buffer modes")
    common.add_argument("--out", type=str, help="output directory")
    common.add_argument("--full-scale", action="store_true", help=f"use {FULL_SCALE_MEMBERS} members")
    common.add_argument("--workers", type=int)
    common.add_argument("--cache", type=str, help="directory for reusable DNS outputs")
    common.add_argument("--variant", choices=["nonstationary", "stationary", "linearized"])
    common.add_argument("--t-final", type=float, dest="t_final")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="tbh-closure", description="Truncated Burgers-Hopf ensembles and best-fit closure.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("dns", parents=[common], help="run the DNS ensemble and write dns.csv")
    sub.add_parser("closure", parents=[common], help="integrate the closure at a given gamma")
    sub.add_parser("fit", parents=[common], help="fit gamma against the DNS")
    e = sub.add_parser("experiment", parents=[common], help="full pipeline for a named experiment")
    e.add_argument("name", choices=sorted(PRESETS))
    return p


def spec_from_args(args) -> ExperimentSpec:
    items: dict = {}
    if args.config is not None:
        if not args.config.exists():
            raise UsageError(f"config file not found: {args.config}")
        items.update(io.read_kv(args.config))
    overrides = {
        "seed": args.seed,
        "ensemble_size": args.members,
        "r_dev": args.rdev,
        "gamma": args.gamma,
        "buffered": args.buffered,
        "output_dir": args.out,
        "workers": args.workers,
        "cache_dir": args.cache,
        "variant": args.variant,
        "t_final": args.t_final,
    }
    items.update({k: v for k, v in overrides.items() if v is not None})
    if args.full_scale:
        items["ensemble_size"] = FULL_SCALE_MEMBERS
    try:
        if args.command == "experiment":
            items.pop("name", None)
            return preset(args.name, **{k: _coerce(k, v) for k, v in items.items()})
        return ExperimentSpec.from_items(items)
    except (TypeError, ValueError) as err:
        raise UsageError(str(err))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:
        # --help exits 0, malformed arguments exit 1
        return stop.code if isinstance(stop.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        spec = spec_from_args(args)
        if args.command == "dns":
            series, _, manifest = cmd_dns(spec)
            print(f"wrote {manifest[0]} ({len(series)} snapshots, {series.n_modes} modes)")
        elif args.command == "closure":
            if spec.gamma == "fit":
                raise UsageError("closure needs a numeric --gamma")
            b = base_vector(spec)
            _, path = cmd_closure(spec, float(spec.gamma), b)
            print(f"wrote {path}")
        else:
            report = cmd_fit(spec)
            for key, val in report.items().items():
                if not key.startswith("spec."):
                    print(f"{key} = {io.format_value(val)}")
    except UsageError as err:
        print(f"tbh-closure: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FitFailure as err:
        print(f"tbh-closure: fit failed: {err}\n{err.scan_table()}", file=sys.stderr)
        return EXIT_FIT
    except (FloatingPointError, ArithmeticError) as err:
        print(f"tbh-closure: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
