"""
Configuration management commands.

This module provides the ``config`` subcommands for creating, inspecting,
changing and validating a run configuration file.
"""

import argparse
import json
import logging
from typing import Any

from ..config import RunConfigManager, config_hash, config_to_dict
from .common import EXIT_CONFIG, report_error


def _parse_value(value: str) -> Any:
    """Interpret a command-line value as JSON, falling back to a plain string."""
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def config_show(args: argparse.Namespace) -> int:
    """Show the current configuration."""
    try:
        manager = RunConfigManager(args.config)
        config = manager.get_config()

        if args.format == "json":
            print(json.dumps(config_to_dict(config), indent=2))
            return 0

        print("Current Configuration:")
        print(f"  Config File: {manager.get_config_path()}")
        print(f"  Config Hash: {config_hash(config)}")
        print(f"  Last Updated: {config.last_updated}")
        print()
        print("Model:")
        print(f"  Width Divisor: {config.model.width_divisor}")
        print(f"  SWA Window: {config.model.swa_window}")
        print(f"  Init Seed: {config.model.init_seed}")
        print()
        print("Benchmark:")
        print(f"  Contexts: {', '.join(str(c) for c in config.bench.context_lengths)}")
        print(f"  Chunk Size: {config.bench.chunk_size}")
        print(f"  Threads: {config.bench.threads}")
        print(f"  Runs: {config.bench.warmup_runs} warmup + {config.bench.measured_runs}")
        print()
        print("Search:")
        print(f"  Seed: {config.search.seed}")
        print(f"  Budgets: {config.search.stage1_budget} + {config.search.stage2_budget}")
        print(f"  Batch Size: {config.search.batch_size}")
        print(f"  Reference Point: {tuple(config.search.reference_point)}")
        print(f"  Oracle: {config.oracle}  Latency: {config.latency_bench}")
        print()
        print("Paths:")
        print(f"  Output: {config.output_dir}")
        print(f"  Base Checkpoint: {config.base_dir}")
        print(f"  Corpus: {config.corpus_path or 'bundled'}")
        return 0

    except Exception as e:
        return report_error("showing configuration", e)


def config_set(args: argparse.Namespace) -> int:
    """Set one configuration value by dotted key."""
    try:
        manager = RunConfigManager(args.config)
        value = _parse_value(args.value)
        manager.update_config(**{args.key: value})
        print(f"Set {args.key} = {value!r}")
        is_valid, issues = manager.validate_config()
        if not is_valid:
            for issue in issues:
                print(f"  Warning: {issue}")
        return 0

    except Exception as e:
        return report_error("setting configuration", e)


def config_validate(args: argparse.Namespace) -> int:
    """Validate the configuration file."""
    try:
        manager = RunConfigManager(args.config)
        is_valid, issues = manager.validate_config()
        if is_valid:
            print(f"✓ Configuration {manager.get_config_path()} is valid")
            return 0
        print(f"✗ Configuration {manager.get_config_path()} has issues:")
        for issue in issues:
            print(f"  - {issue}")
        return EXIT_CONFIG

    except Exception as e:
        return report_error("validating configuration", e)


def config_init(args: argparse.Namespace) -> int:
    """Write a default configuration file."""
    try:
        manager = RunConfigManager(args.config)
        if args.force:
            manager.reset_config()
        elif manager.get_config_path().exists():
            logging.info(f"Keeping existing configuration at {manager.get_config_path()}")
        print(f"Configuration at {manager.get_config_path()}")
        return 0

    except Exception as e:
        return report_error("initialising configuration", e)


def add_config_parser(subparsers: argparse._SubParsersAction) -> None:  # type: ignore
    """Add configuration management subparser."""
    config_parser = subparsers.add_parser(
        "config",
        help="Configuration management commands",
        description="Create, inspect and validate a prunestack run configuration",
    )
    config_parser.add_argument(
        "--config", "-c", default=None, help="Configuration file (default: ./prunestack.json)"
    )

    config_subparsers = config_parser.add_subparsers(
        dest="config_command", help="Configuration commands", required=True
    )

    show_parser = config_subparsers.add_parser("show", help="Show current configuration")
    show_parser.add_argument(
        "--format", choices=["json", "table"], default="table", help="Output format"
    )
    show_parser.set_defaults(func=config_show)

    set_parser = config_subparsers.add_parser("set", help="Set a configuration value")
    set_parser.add_argument("key", help="Configuration key (e.g., search.stage1_budget)")
    set_parser.add_argument("value", help="Value, parsed as JSON when possible")
    set_parser.set_defaults(func=config_set)

    validate_parser = config_subparsers.add_parser("validate", help="Validate configuration")
    validate_parser.set_defaults(func=config_validate)

    init_parser = config_subparsers.add_parser("init", help="Write a default configuration")
    init_parser.add_argument(
        "--force", action="store_true", help="Overwrite an existing file with defaults"
    )
    init_parser.set_defaults(func=config_init)
