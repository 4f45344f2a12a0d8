"""
Init-base command module.

Synthesizes the seeded base model and writes it as a checkpoint.
"""

import argparse
import logging

from ..checkpoint import save_checkpoint
from ..model_core import init_model
from .common import add_common_arguments, load_run_config, report_error


def init_base_command(args: argparse.Namespace) -> int:
    """
    Handle the init-base subcommand.

    Args:
        args: Parsed command line arguments

    Returns:
        Exit code (0 for success)
    """
    try:
        config = load_run_config(args)
        model_config = config.model.base_config(config.space.to_space())
        logging.info(
            f"Initialising base model ({model_config.n_layers} layers, "
            f"d_model {model_config.d_model}, d_ffn {model_config.d_ffn}, "
            f"seed {config.model.init_seed})"
        )
        bundle = init_model(model_config, config.model.init_seed)
        path = save_checkpoint(bundle, config.base_dir)

        print(f"Base checkpoint written to {path}")
        print(f"  Layers: {model_config.n_layers}")
        print(f"  d_model: {model_config.d_model}  d_ffn: {model_config.d_ffn}")
        print(f"  Heads: {model_config.n_heads} (KV {model_config.n_kv_heads})")
        print(f"  Parameters: {bundle.parameter_count():,}")
        print(f"  Checksum: {bundle.checksum()[:16]}")
        return 0

    except Exception as e:
        return report_error("initialising base model", e)


def add_init_base_parser(subparsers: argparse._SubParsersAction) -> None:  # type: ignore
    """
    Add the init-base subcommand parser.

    Args:
        subparsers: Subparsers action from main parser
    """
    parser = subparsers.add_parser(
        "init-base",
        help="Synthesize the base model checkpoint",
        description="Write a seeded, all-full-attention base model at the configured scale",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  prunestack init-base
  prunestack init-base --config runs/desk.json

The same seed always produces byte-identical checkpoint files.
        """.strip(),
    )
    add_common_arguments(parser)
    parser.set_defaults(func=init_base_command)
