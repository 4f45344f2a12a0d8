"""
Report command module.

Turns the trial store into comma-separated tables under <output_dir>/reports.
Reports are pure functions of the store, so regenerating one from an
unchanged store gives identical bytes.
"""

import argparse
from typing import List

from ..analysis import (
    UndefinedCorrelationError,
    export_pareto,
    proxy_correlation,
    rank_stability,
    write_table,
)
from ..config import RunConfig
from ..oracles import synthetic_loss_curves
from ..search_space import scaled_base_config
from ..trial import Trial
from .common import add_common_arguments, load_run_config, open_store, report_error

RANK_STEPS = (250, 500, 1000, 2000, 4000)
RANK_COLUMNS = ("early_step", "late_step", "tau", "n")


def _pareto(config: RunConfig, trials: List[Trial]) -> None:
    header, rows = export_pareto([t for t in trials if t.stage == 2], config.search.ref)
    path = write_table(config.reports_dir / "pareto.csv", header, rows)
    print(f"Pareto table: {len(rows)} rows, {sum(r[-1] for r in rows)} on the front -> {path}")


def _correlation(config: RunConfig, trials: List[Trial]) -> None:
    measured = [t for t in trials if t.stage == 1]
    if config.latency_bench == "host":
        template = config.model.base_config(config.space.to_space())
        divisor = config.model.width_divisor
    else:
        template, divisor = scaled_base_config(1, config.model.vocab_size), 1
    report = proxy_correlation(measured, template, divisor, config.model.swa_window)

    header, rows = report.table()
    path = write_table(config.reports_dir / "correlation.csv", header, rows)
    if report.rows:
        columns = list(report.rows[0])
        write_table(
            config.reports_dir / "correlation_rows.csv",
            columns,
            [[row[c] for c in columns] for row in report.rows],
        )
    print(f"Proxy correlations over {len(measured)} architectures -> {path}")
    for pair in report.pairs:
        print(f"  {pair.context:>5}  {pair.proxy:<14} vs {pair.target:<19} tau = {pair.tau:.3f}")


def _rank(config: RunConfig, trials: List[Trial]) -> None:
    stage2 = [t for t in trials if t.stage == 2]
    points = [t.point for t in (stage2 or trials)]
    curves = synthetic_loss_curves(points, RANK_STEPS, seed=config.seed)
    rows = []
    late = RANK_STEPS[-1]
    for early in RANK_STEPS[:-1]:
        try:
            tau = rank_stability(curves, early, late)
        except UndefinedCorrelationError:
            tau = float("nan")
        rows.append([early, late, tau, len(curves)])
    path = write_table(config.reports_dir / "rank.csv", RANK_COLUMNS, rows)
    print(f"Rank stability of {len(curves)} candidates against step {late} -> {path}")
    for early, _, tau, _ in rows:
        print(f"  step {early:>5}: tau = {tau:.3f}")


REPORTS = {"pareto": _pareto, "correlation": _correlation, "rank": _rank}


def report_command(args: argparse.Namespace) -> int:
    """
    Handle the report subcommand.

    Args:
        args: Parsed command line arguments

    Returns:
        Exit code (0 for success)
    """
    try:
        config = load_run_config(args)
        with open_store(config) as store:
            trials = store.trials()
        if not trials:
            print(f"No trials in {config.output_dir}; run 'prunestack search' first")
            return 1
        REPORTS[args.kind](config, trials)
        return 0

    except Exception as e:
        return report_error("writing report", e)


def add_report_parser(subparsers: argparse._SubParsersAction) -> None:  # type: ignore
    """
    Add the report subcommand parser.

    Args:
        subparsers: Subparsers action from main parser
    """
    parser = subparsers.add_parser(
        "report",
        help="Export analysis tables from the trial store",
        description="Write Pareto, proxy-correlation or rank-stability tables",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  prunestack report --kind pareto
  prunestack report --kind correlation
  prunestack report --kind rank

Tables are written to <output_dir>/reports/ with one header line.
        """.strip(),
    )
    add_common_arguments(parser)
    parser.add_argument(
        "--kind", choices=sorted(REPORTS), default="pareto", help="Report to write"
    )
    parser.set_defaults(func=report_command)
