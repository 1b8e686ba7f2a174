"""Command-line interface: ``policysearch verify | run <cfg> | compare <cfg...> | sweep <cfg>``."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .exceptions import ConfigError, PolicySearchError
from .workbench import Workbench

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def setup_logging(verbose: bool = False, log_file: Optional[str] = None) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="policysearch",
        description="Policy search with steepest, natural, EM and approximate Newton methods",
    )
    parser.add_argument("--seed", type=int, default=None, help="Override the master seed")
    parser.add_argument("--out", type=str, default="results", help="Output directory")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="Parallel workers (overrides POLICYSEARCH_THREADS)",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--log-file", type=str, default=None, help="Also log to this file")
    parser.add_argument("--progress", action="store_true", help="Show a progress bar")

    sub = parser.add_subparsers(dest="command", required=True)
    verify = sub.add_parser("verify", help="Run the oracle suite and print a pass/fail table")
    verify.add_argument("--corrupt-gradient", type=float, default=0.0, help=argparse.SUPPRESS)

    run = sub.add_parser("run", help="Run one experiment config")
    run.add_argument("config", type=str, help="TOML experiment config")

    compare = sub.add_parser("compare", help="Run configs on a shared seed matrix and compare")
    compare.add_argument("configs", type=str, nargs="+", help="TOML experiment configs")

    sweep = sub.add_parser("sweep", help="Run one config over a grid of step sizes")
    sweep.add_argument("config", type=str, help="TOML experiment config")
    sweep.add_argument(
        "--alphas",
        type=float,
        nargs="+",
        default=None,
        help="Step sizes to try (defaults to the grid of the schedule kind)",
    )
    return parser


def cmd_verify(args: argparse.Namespace) -> int:
    results, report = Workbench.verify(
        seed=args.seed if args.seed is not None else 0,
        corrupt_gradient=args.corrupt_gradient,
    )
    print(report, end="")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def cmd_run(args: argparse.Namespace) -> int:
    bench = Workbench(threads=args.threads, progress=args.progress)
    result = bench.run(args.config, seed=args.seed)
    paths = bench.write(result, args.out, stem=Path(args.config).stem)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    bench = Workbench(threads=args.threads, progress=args.progress)
    table, results = bench.compare(args.configs, seed=args.seed)
    for path, result in zip(args.configs, results):
        bench.write(result, args.out, stem=Path(path).stem)
    table.write_csv(Path(args.out) / "comparison.csv")
    print(table.render(), end="")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    bench = Workbench(threads=args.threads, progress=args.progress)
    table, results = bench.sweep(args.config, seed=args.seed, alphas=args.alphas)
    stem = Path(args.config).stem
    for label, result in zip(table.labels, results):
        bench.write(result, args.out, stem=f"{stem}_{label.replace('=', '')}")
    table.write_csv(Path(args.out) / f"{stem}_sweep.csv")
    print(table.render(), end="")
    if table.iterations:
        print(f"best: {table.best_final()}")
    return EXIT_OK


COMMANDS = {
    "verify": cmd_verify,
    "run": cmd_run,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose, args.log_file)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PolicySearchError as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
