"""Command line entry point: ``tailsgd <experiment> --config <path> [--out PATH] [--threads N] [--seed U64]``.

Exit codes: 0 success, 1 bad configuration, 2 a verification check failed,
3 file system error.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .errors import ConfigError
from .harness import EXPERIMENTS, ExperimentConfig, load_config, run

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VERIFY = 2
EXIT_IO = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tailsgd", description="Run a tail-averaged SGD experiment and write a CSV.")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", help="JSON config; omitted keys take their defaults")
    parser.add_argument("--out", help="output CSV path (default: config output_path, else stdout)")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: $TAILSGD_THREADS or 1)")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    return parser


def _threads(arg: int | None) -> int:
    if arg is not None:
        value = arg
    else:
        raw = os.environ.get("TAILSGD_THREADS", "1")
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"TAILSGD_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"thread count must be >= 1, got {value}")
    return value


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        threads = _threads(args.threads)
        if args.config:
            config = load_config(args.config, args.experiment)
        else:
            config = ExperimentConfig(args.experiment)
        if args.seed is not None:
            config = dataclasses.replace(config, master_seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO

    table = run(config, threads)
    out = args.out or config.output_path
    try:
        if out:
            table.write(out)
        else:
            sys.stdout.write(table.to_csv())
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    if not table.ok:
        print("verification failed: see rows with pass=false", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
