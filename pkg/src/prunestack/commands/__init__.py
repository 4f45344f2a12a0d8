"""
Command modules for prunestack CLI subcommands.
"""

from .bench import add_bench_parser
from .calibrate import add_calibrate_parser
from .config_command import add_config_parser
from .init_base import add_init_base_parser
from .report import add_report_parser
from .search import add_search_parser

__all__ = [
    "add_init_base_parser",
    "add_calibrate_parser",
    "add_search_parser",
    "add_bench_parser",
    "add_report_parser",
    "add_config_parser",
]
