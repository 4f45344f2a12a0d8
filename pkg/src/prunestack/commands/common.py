"""
Helpers shared by the prunestack subcommands.
"""

import argparse
import functools
import logging
from typing import Any, Dict, List, Optional, Tuple

from ..calibration import CalibrationStats, load_corpus, load_stats
from ..checkpoint import CheckpointError, load_checkpoint
from ..config import (
    ORACLES,
    ConfigError,
    RunConfig,
    RunConfigManager,
    apply_overrides,
    config_hash,
    validate_run_config,
)
from ..latency_bench import LatencySample
from ..model_core import ModelBundle
from ..oracles import (
    AnalyticLatencyStub,
    FlopsLatencyStub,
    HostLatencyBench,
    LatencyBench,
    QualityOracle,
    nll_quality_oracle,
    synthetic_quality_oracle,
)
from ..search_space import InfeasiblePointError, SearchPoint, SearchSpaceError
from ..trial_store import StoreConflictError, TrialStore

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_CONFLICT = 4


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    """Options every run command accepts; unset options leave the config untouched."""
    parser.add_argument(
        "--config",
        "-c",
        default=None,
        help="Run configuration file (default: ./prunestack.json, created if missing)",
    )
    parser.add_argument(
        "--seed", type=int, default=argparse.SUPPRESS, help="Override search.seed"
    )
    parser.add_argument(
        "--threads", type=int, default=argparse.SUPPRESS, help="Override bench.threads"
    )
    parser.add_argument(
        "--oracle", choices=ORACLES, default=argparse.SUPPRESS, help="Override the quality oracle"
    )


def load_run_config(
    args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    Load the run configuration named by ``--config`` and apply CLI overrides.

    Raises:
        ConfigError: the file is unreadable or the result fails validation
    """
    config = RunConfigManager(getattr(args, "config", None)).get_config()
    overrides: Dict[str, Any] = dict(extra or {})
    if hasattr(args, "seed"):
        overrides["search.seed"] = args.seed
    if hasattr(args, "threads"):
        overrides["bench.threads"] = args.threads
    if hasattr(args, "oracle"):
        overrides["oracle"] = args.oracle
    if overrides:
        config = apply_overrides(config, overrides)

    is_valid, issues = validate_run_config(config)
    if not is_valid:
        raise ConfigError("; ".join(issues))
    return config


def load_base(config: RunConfig) -> ModelBundle:
    if not config.base_dir.exists():
        raise ConfigError(f"No base checkpoint at {config.base_dir}; run 'prunestack init-base'")
    return load_checkpoint(config.base_dir)


def load_calibration(config: RunConfig, base: ModelBundle) -> CalibrationStats:
    if not (config.stats_dir / "stats.json").exists():
        raise ConfigError(
            f"No calibration stats at {config.stats_dir}; run 'prunestack calibrate'"
        )
    stats = load_stats(config.stats_dir)
    if stats.metadata.get("base_checksum") not in (None, base.checksum()):
        raise ConfigError("Calibration stats belong to another base model; rerun with --force")
    return stats


def _base_and_stats(config: RunConfig) -> Tuple[ModelBundle, CalibrationStats]:
    base = load_base(config)
    return base, load_calibration(config, base)


def build_bench(config: RunConfig, decode: bool = False) -> LatencyBench:
    """Latency bench selected by ``latency_bench``."""
    contexts = list(config.bench.context_lengths)
    if config.latency_bench == "analytic":
        return AnalyticLatencyStub(
            contexts=contexts,
            chunk_size=config.bench.chunk_size,
            swa_window=config.model.swa_window,
        )
    if config.latency_bench == "flops":
        return FlopsLatencyStub(contexts=contexts, swa_window=config.model.swa_window)
    base, stats = _base_and_stats(config)
    return HostLatencyBench(
        base,
        stats,
        config.bench,
        width_divisor=config.model.width_divisor,
        swa_window=config.model.swa_window,
        decode=decode,
    )


def build_oracle(config: RunConfig) -> QualityOracle:
    """Quality oracle selected by ``oracle``."""
    if config.oracle == "synthetic":
        return functools.partial(synthetic_quality_oracle, seed=config.seed)
    base, stats = _base_and_stats(config)
    heldout = load_corpus(
        config.corpus_path,
        config.calibration.heldout_positions,
        config.calibration.heldout_seq_len,
    )

    def oracle(point: SearchPoint) -> float:
        return nll_quality_oracle(
            base, stats, point, heldout, config.model.width_divisor, config.model.swa_window
        )

    return oracle


def open_store(config: RunConfig) -> TrialStore:
    """Trial store of the run's output directory; use as a context manager."""
    return TrialStore(config.output_dir, config_hash(config))


def report_error(action: str, e: Exception) -> int:
    """Log and print ``e`` and map it to an exit code."""
    logging.error(f"Error {action}: {e}")
    print(f"Error: {e}")
    if isinstance(e, (ConfigError, CheckpointError)):
        return EXIT_CONFIG
    if isinstance(e, (InfeasiblePointError, SearchSpaceError)):
        return EXIT_INFEASIBLE
    if isinstance(e, StoreConflictError):
        return EXIT_CONFLICT
    return EXIT_ERROR


class DeferredBench:
    """Builds the configured bench on first use, so resumed runs need no base model."""

    def __init__(self, config: RunConfig, decode: bool = False):
        self.config = config
        self.decode = decode
        self._bench: Optional[LatencyBench] = None

    def measure(self, point: SearchPoint) -> List[LatencySample]:
        if self._bench is None:
            self._bench = build_bench(self.config, self.decode)
        return self._bench.measure(point)
