"""
Search command module.

Runs stage 1 (latency measurement and surrogate fit), stage 2 (NEHVI over
quality and predicted latency) or both, persisting every trial so an
interrupted run resumes where it stopped.
"""

import argparse
import logging
import math
from dataclasses import replace
from typing import Any, Dict

from ..analysis import export_pareto, write_table
from ..search import SearchConfig, run_stage1, run_stage2
from ..search_space import SearchSpaceError
from ..trial_store import TrialStore
from .common import (
    DeferredBench,
    add_common_arguments,
    build_oracle,
    load_run_config,
    open_store,
    report_error,
)


def _budget_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    if args.trials is None:
        return {}
    key = "search.stage1_budget" if args.stage == "1" else "search.stage2_budget"
    return {key: args.trials}


def _stored_stage1_config(config: SearchConfig, store: TrialStore) -> SearchConfig:
    """Stage-1 settings that replay the stored trials without measuring new ones."""
    stored = len(store.trials(stage=1))
    if stored < 2:
        raise SearchSpaceError(
            f"--stage 2 needs at least 2 stored stage-1 trials, found {stored}; "
            f"run 'prunestack search --stage 1' first"
        )
    return replace(config, stage1_budget=stored)


def search_command(args: argparse.Namespace) -> int:
    """
    Handle the search subcommand.

    Args:
        args: Parsed command line arguments

    Returns:
        Exit code (0 for success)
    """
    try:
        config = load_run_config(args, _budget_overrides(args))
        space = config.space.to_space()

        with open_store(config) as store:
            stage1_config = config.search
            if args.stage == "2":
                stage1_config = _stored_stage1_config(config.search, store)
            stage1 = run_stage1(space, stage1_config, DeferredBench(config), store)
            r2 = "undefined" if math.isnan(stage1.r2) else f"{stage1.r2:.3f}"
            print(f"Stage 1: {len(stage1.trials)} measured trials, latency GP CV R^2 = {r2}")
            if args.stage == "1":
                return 0

            oracle = build_oracle(config)
            stage2 = run_stage2(
                stage1.latency_gp, oracle, config.search, stage1.trials, space, store
            )

        header, rows = export_pareto(stage2.trials, config.search.ref)
        path = write_table(config.reports_dir / "pareto.csv", header, rows)
        hv = stage2.hypervolume(config.search.ref)
        print(
            f"Stage 2: {len(stage2.trials)} trials, {len(stage2.front)} on the front, HV {hv:.4f}"
        )
        for trial in stage2.front:
            marker = "~" if trial.latency_predicted else ""
            print(f"  {trial.point}  loss {trial.quality:.4f}  TTFT {marker}{trial.latency:.4f} s")
        print(f"Pareto table written to {path}")
        return 0

    except Exception as e:
        logging.debug("Search failed", exc_info=True)
        return report_error("running search", e)


def add_search_parser(subparsers: argparse._SubParsersAction) -> None:  # type: ignore
    """
    Add the search subcommand parser.

    Args:
        subparsers: Subparsers action from main parser
    """
    parser = subparsers.add_parser(
        "search",
        help="Run the two-stage architecture search",
        description="Measure latency, fit the latency surrogate and search the Pareto front",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  prunestack search --stage 1 --trials 16
  prunestack search --stage both --seed 3
  prunestack search --oracle nll

--stage 2 searches from the stored stage-1 trials without measuring new ones;
--stage both completes stage 1 first. --trials sets the budget of stage 1 for
--stage 1 and of stage 2 otherwise. Rerunning the same command
after an interruption resumes from the trial store.
        """.strip(),
    )
    add_common_arguments(parser)
    parser.add_argument(
        "--stage", choices=["1", "2", "both"], default="both", help="Stage to run (default: both)"
    )
    parser.add_argument("--trials", type=int, default=None, help="Trial budget override")
    parser.set_defaults(func=search_command)
