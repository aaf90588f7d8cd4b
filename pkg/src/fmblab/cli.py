"""Command-line interface: one binary, nine subcommands.

Traces go to files; errors go to stderr as single-line JSON records.
Exit codes: 0 ok, 1 config error, 2 runtime numerical error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import verify as verify_mod
from .config import SUBCOMMANDS, ConfigError, parse_config
from .runners import run_experiment


def _error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fmblab",
        description="Metric-force-bias laboratory: optimizers, populations, filters, and their shared decomposition.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="TOML or JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="trace output path")
        p.add_argument("--format", choices=("csv", "json"), default=None)
        p.add_argument(
            "--replicates",
            default=None,
            help="comma-separated seed list; one output file per seed",
        )
    sub.add_parser("verify", help="run the library invariant suite")
    return parser


def _run_one(args) -> int:
    cfg = parse_config(args.config, subcommand=args.subcommand)
    if args.replicates:
        try:
            seeds = [int(s) for s in args.replicates.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --replicates list: {exc}") from exc
        for seed in seeds:
            out = args.out
            if out is not None:
                stem, dot, ext = out.rpartition(".")
                out = f"{stem}_seed{seed}.{ext}" if dot else f"{out}_seed{seed}"
            manifest = run_experiment(cfg, out_path=out, fmt=args.format, seed=seed)
            sys.stderr.write(
                json.dumps({"replicate": seed, "trace": manifest.get("trace_path")}) + "\n"
            )
        return 0
    manifest = run_experiment(cfg, out_path=args.out, fmt=args.format, seed=args.seed)
    if "record" in manifest and not manifest.get("trace_path"):
        sys.stdout.write(json.dumps(manifest["record"], indent=2) + "\n")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.subcommand == "verify":
        return 0 if verify_mod.run_all() else 3
    try:
        return _run_one(args)
    except ConfigError as exc:
        _error("config", str(exc))
        return 1
    except FileNotFoundError as exc:
        _error("config", str(exc))
        return 1
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        _error("runtime", str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
