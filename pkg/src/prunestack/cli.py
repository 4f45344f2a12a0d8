#!/usr/bin/env python3
"""
CLI entry point for prunestack package.
"""

import argparse
import logging
import sys
from typing import List, Optional

from . import __version__
from .commands import (
    add_bench_parser,
    add_calibrate_parser,
    add_config_parser,
    add_init_base_parser,
    add_report_parser,
    add_search_parser,
)


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Set up logging based on verbosity flags."""
    if quiet:
        level = logging.WARNING
    elif verbose:
        level = logging.DEBUG
    else:
        level = logging.INFO

    logging.basicConfig(level=level, format="%(levelname)s: %(message)s", datefmt="%H:%M:%S")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prunestack",
        description="Latency-aware hybrid-attention architecture search by structured pruning",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Desk-scale workflow
  prunestack config init
  prunestack init-base
  prunestack calibrate
  prunestack search --stage both
  prunestack report --kind pareto

  # Single measurements and analysis
  prunestack bench --point L13-F6144-M1280-P=F.S.K.F.F.S.F.F.K.F.F.S.F
  prunestack report --kind correlation

  # Configuration
  prunestack config show
  prunestack config set search.stage1_budget 128

For more information, see the user guide in _docs/technical/user-guide.md
        """.strip(),
    )

    parser.add_argument("--version", action="version", version=f"prunestack {__version__}")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose output")
    parser.add_argument("--quiet", "-q", action="store_true", help="Suppress non-error output")

    subparsers = parser.add_subparsers(
        dest="command", help="Available commands", metavar="COMMAND", required=False
    )

    add_init_base_parser(subparsers)
    add_calibrate_parser(subparsers)
    add_search_parser(subparsers)
    add_bench_parser(subparsers)
    add_report_parser(subparsers)
    add_config_parser(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """CLI entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not hasattr(args, "func"):
        parser.print_help()
        return 0

    setup_logging(verbose=args.verbose, quiet=args.quiet)

    try:
        exit_code: int = args.func(args)
        return exit_code
    except KeyboardInterrupt:
        logging.info("Interrupted by user")
        return 130
    except Exception as e:
        if args.verbose:
            logging.exception("Unexpected error occurred")
        else:
            logging.error(f"Error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
