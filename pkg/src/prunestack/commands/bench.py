"""
Bench command module.

Measures one encoded search point at every configured context length and
appends the samples to the trial store.
"""

import argparse

from ..search_space import InfeasiblePointError, is_feasible, parse_point
from .common import DeferredBench, add_common_arguments, load_run_config, open_store, report_error


def bench_command(args: argparse.Namespace) -> int:
    """
    Handle the bench subcommand.

    Args:
        args: Parsed command line arguments

    Returns:
        Exit code (0 for success, 3 for an infeasible point)
    """
    try:
        config = load_run_config(args)
        point = parse_point(args.point)
        limit = config.search.feasibility_max_consecutive

        if not args.allow_infeasible:
            if not is_feasible(point, limit):
                raise InfeasiblePointError(
                    f"{point} violates the feasibility constraint: at most {limit} consecutive "
                    f"SWA/skip layers (use --allow-infeasible to measure it anyway)"
                )
            if not config.space.to_space().contains(point):
                raise InfeasiblePointError(f"{point} lies outside the configured search space")

        samples = DeferredBench(config, decode=True).measure(point)
        with open_store(config) as store:
            for sample in samples:
                store.append_sample(sample)

        print(f"Latency of {point} on {samples[0].host_fingerprint}:")
        for sample in samples:
            flag = "" if sample.stable else "  (unstable)"
            print(
                f"  context {sample.context:>5}: TTFT {sample.ttft_seconds * 1000:9.2f} ms  "
                f"decode {sample.decode_tok_per_s:8.1f} tok/s  "
                f"spread {sample.run_spread:.1%}{flag}"
            )
        return 0

    except Exception as e:
        return report_error("benchmarking", e)


def add_bench_parser(subparsers: argparse._SubParsersAction) -> None:  # type: ignore
    """
    Add the bench subcommand parser.

    Args:
        subparsers: Subparsers action from main parser
    """
    parser = subparsers.add_parser(
        "bench",
        help="Measure TTFT and decode rate of one architecture",
        description="Prune the base model to one search point and time it on this host",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  prunestack bench --point L13-F6144-M1280-P=F.S.K.F.F.S.F.F.K.F.F.S.F
  PRUNESTACK_THREADS=1 prunestack bench --point L10-F2048-M1024-P=F.F.F.F.F.F.F.F.F.F

Points are written L<layers>-F<ffn>-M<model>-P=<kinds>, kinds F (full),
S (sliding window) and K (skip), one per layer.
        """.strip(),
    )
    add_common_arguments(parser)
    parser.add_argument("--point", required=True, help="Encoded search point")
    parser.add_argument(
        "--allow-infeasible",
        action="store_true",
        help="Measure points that break the consecutive-efficient-layer constraint",
    )
    parser.set_defaults(func=bench_command)
