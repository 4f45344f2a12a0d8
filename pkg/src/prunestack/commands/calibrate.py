"""
Calibrate command module.

Runs the calibration corpus through the base model and persists the
importance statistics next to the checkpoint.
"""

import argparse
import logging

from ..calibration import calibrate, load_stats, save_stats
from .common import add_common_arguments, load_base, load_run_config, report_error


def calibrate_command(args: argparse.Namespace) -> int:
    """
    Handle the calibrate subcommand.

    Args:
        args: Parsed command line arguments

    Returns:
        Exit code (0 for success)
    """
    try:
        config = load_run_config(args)
        base = load_base(config)

        if (config.stats_dir / "stats.json").exists() and not args.force:
            existing = load_stats(config.stats_dir)
            if existing.metadata.get("base_checksum") == base.checksum():
                print(f"Calibration stats already present at {config.stats_dir} (use --force)")
                return 0
            logging.warning("Existing stats were computed on another base model; recomputing")

        cal = config.calibration
        stats = calibrate(
            base,
            config.corpus_path,
            n_positions=cal.n_positions,
            seq_len=cal.seq_len,
            workers=cal.workers,
        )
        path = save_stats(stats, config.stats_dir)

        print(f"Calibration stats written to {path}")
        print(f"  Positions: {stats.n_positions:,}")
        print(f"  Layers: {stats.n_layers}")
        print(f"  Degenerate positions: {int(stats.degenerate_positions.sum())}")
        ranked = sorted(range(stats.n_layers), key=lambda i: stats.layer_score[i])
        print(f"  Least important layers: {', '.join(str(i) for i in ranked[:4])}")
        return 0

    except Exception as e:
        return report_error("calibrating", e)


def add_calibrate_parser(subparsers: argparse._SubParsersAction) -> None:  # type: ignore
    """
    Add the calibrate subcommand parser.

    Args:
        subparsers: Subparsers action from main parser
    """
    parser = subparsers.add_parser(
        "calibrate",
        help="Compute pruning statistics on the calibration corpus",
        description="Capture activations of the base model and persist importance metrics",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  prunestack calibrate
  prunestack calibrate --force

Existing statistics for the same base model are reused unless --force is given.
        """.strip(),
    )
    add_common_arguments(parser)
    parser.add_argument(
        "--force", action="store_true", help="Recompute even if statistics already exist"
    )
    parser.set_defaults(func=calibrate_command)
