"""
Run configuration for prunestack.

A run is described by one JSON file holding the model scale, the search
space, the benchmark protocol, the search settings and the artifact paths.
The file is created with defaults on first use and edited either by hand or
through dotted-key updates (``search.seed``).
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .calibration import DEFAULT_CALIBRATION_POSITIONS, DEFAULT_SEQUENCE_LENGTH
from .latency_bench import BenchProtocol
from .model_core import ModelConfig
from .search import SearchConfig
from .search_space import DEFAULT_SPACE, SearchSpace, scaled_base_config

DEFAULT_CONFIG_FILENAME = "prunestack.json"
ORACLES = ("synthetic", "nll")
LATENCY_BENCHES = ("host", "analytic", "flops")

# Choice-list bounds of the published search space.
LAYER_BOUNDS = (10, 16)
FFN_BOUNDS = (2048, 8192, 256)
MODEL_BOUNDS = (1024, 2048, 128)

# Fields that do not change which trials a run produces.
_HASH_EXCLUDED = {
    "paths": None,
    "version": None,
    "last_updated": None,
    "search": ("stage1_budget", "stage2_budget", "oracle_workers"),
    "calibration": ("workers",),
}


def _package_version() -> str:
    try:
        return version("prunestack")
    except PackageNotFoundError:
        return "0.1.0"


class ConfigError(Exception):
    """Raised when a run configuration cannot be loaded or is invalid."""

    pass


@dataclass
class ModelSection:
    """Scale of the synthetic base model."""

    width_divisor: int = 8
    vocab_size: int = 256
    swa_window: int = 1024
    max_context: int = 8192
    init_seed: int = 0

    def base_config(self, space: SearchSpace = DEFAULT_SPACE) -> ModelConfig:
        """All-full base model covering the largest point of ``space``."""
        return scaled_base_config(self.width_divisor, self.vocab_size, self.max_context, space)


@dataclass
class SpaceSection:
    """Search-space choice lists; overrides must stay inside the published bounds."""

    layer_choices: List[int] = field(default_factory=lambda: list(range(10, 17)))
    ffn_choices: List[int] = field(default_factory=lambda: list(range(2048, 8193, 256)))
    model_choices: List[int] = field(default_factory=lambda: list(range(1024, 2049, 128)))
    allow_out_of_bounds: bool = False

    def to_space(self) -> SearchSpace:
        return SearchSpace(
            layer_choices=tuple(self.layer_choices),
            ffn_choices=tuple(self.ffn_choices),
            model_choices=tuple(self.model_choices),
        )


@dataclass
class CalibrationSection:
    n_positions: int = DEFAULT_CALIBRATION_POSITIONS
    seq_len: int = DEFAULT_SEQUENCE_LENGTH
    workers: int = 1
    heldout_positions: int = 2048  # tokens scored by the nll oracle
    heldout_seq_len: int = 256


@dataclass
class PathsSection:
    """Artifact locations; relative paths resolve against the working directory."""

    output_dir: str = "runs/desk"
    base_checkpoint: Optional[str] = None  # defaults to <output_dir>/base
    calibration_corpus: Optional[str] = None  # defaults to the bundled corpus


def _desk_search() -> SearchConfig:
    return SearchConfig(stage1_budget=64, stage2_budget=48, mc_samples=64)


@dataclass
class RunConfig:
    """Main run configuration."""

    model: ModelSection = field(default_factory=ModelSection)
    space: SpaceSection = field(default_factory=SpaceSection)
    bench: BenchProtocol = field(default_factory=BenchProtocol)
    search: SearchConfig = field(default_factory=_desk_search)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    paths: PathsSection = field(default_factory=PathsSection)
    oracle: str = "synthetic"
    latency_bench: str = "host"
    version: str = field(default_factory=_package_version)
    last_updated: str = ""

    def __post_init__(self) -> None:
        if not self.last_updated:
            self.last_updated = datetime.now().isoformat()

    @property
    def seed(self) -> int:
        return self.search.seed

    @property
    def output_dir(self) -> Path:
        return Path(self.paths.output_dir)

    @property
    def base_dir(self) -> Path:
        if self.paths.base_checkpoint:
            return Path(self.paths.base_checkpoint)
        return self.output_dir / "base"

    @property
    def stats_dir(self) -> Path:
        return self.base_dir / "calibration"

    @property
    def reports_dir(self) -> Path:
        return self.output_dir / "reports"

    @property
    def corpus_path(self) -> Optional[Path]:
        return Path(self.paths.calibration_corpus) if self.paths.calibration_corpus else None


def dict_to_config(data: Dict[str, Any]) -> RunConfig:
    """Convert a dictionary to a RunConfig; unknown keys raise ConfigError."""
    try:
        return RunConfig(
            model=ModelSection(**data.get("model", {})),
            space=SpaceSection(**data.get("space", {})),
            bench=BenchProtocol(**data.get("bench", {})),
            search=SearchConfig(**{**asdict(_desk_search()), **data.get("search", {})}),
            calibration=CalibrationSection(**data.get("calibration", {})),
            paths=PathsSection(**data.get("paths", {})),
            oracle=data.get("oracle", "synthetic"),
            latency_bench=data.get("latency_bench", "host"),
            version=data.get("version", _package_version()),
            last_updated=data.get("last_updated", ""),
        )
    except TypeError as e:
        raise ConfigError(f"Invalid configuration: {e}")


def config_to_dict(config: RunConfig) -> Dict[str, Any]:
    return asdict(config)


def config_hash(config: RunConfig) -> str:
    """SHA-256 over every field that affects which trials a run produces."""
    data = config_to_dict(config)
    for section, keys in _HASH_EXCLUDED.items():
        if keys is None:
            data.pop(section, None)
        else:
            for key in keys:
                data[section].pop(key, None)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _check_choices(
    name: str, values: List[int], bounds: Tuple[int, ...], issues: List[str]
) -> None:
    lo, hi = bounds[0], bounds[1]
    if any(v < lo or v > hi for v in values):
        issues.append(f"Invalid space.{name}: values must lie in [{lo}, {hi}]")
    if len(bounds) == 3 and any(v % bounds[2] for v in values):
        issues.append(f"Invalid space.{name}: values must be multiples of {bounds[2]}")


def validate_run_config(config: RunConfig) -> Tuple[bool, List[str]]:
    """
    Validate a run configuration.

    Returns:
        Tuple of (is_valid, list_of_issues)
    """
    issues: List[str] = []
    model = config.model

    if model.width_divisor < 1 or 128 % model.width_divisor:
        issues.append("Invalid model.width_divisor: must divide 128")
    if model.vocab_size < 2:
        issues.append("Invalid model.vocab_size: must be >= 2")
    if model.swa_window < 1:
        issues.append("Invalid model.swa_window: must be >= 1")

    space = config.space
    for name in ("layer_choices", "ffn_choices", "model_choices"):
        if not getattr(space, name):
            issues.append(f"Invalid space.{name}: must not be empty")
    if not space.allow_out_of_bounds:
        _check_choices("layer_choices", space.layer_choices, LAYER_BOUNDS, issues)
        _check_choices("ffn_choices", space.ffn_choices, FFN_BOUNDS, issues)
        _check_choices("model_choices", space.model_choices, MODEL_BOUNDS, issues)
    for name in ("ffn_choices", "model_choices"):
        if any(v % 128 for v in getattr(space, name)):
            issues.append(f"Invalid space.{name}: values must be multiples of 128")

    bench = config.bench
    _, bench_issues = bench.validate()
    issues.extend(f"Invalid bench: {issue}" for issue in bench_issues)
    if bench.chunk_size > model.swa_window:
        issues.append("Invalid bench.chunk_size: must not exceed model.swa_window")
    longest = max(bench.context_lengths, default=0)
    if longest + bench.decode_tokens > model.max_context:
        issues.append("Invalid bench.context_lengths: context plus decode exceeds max_context")

    _, search_issues = config.search.validate()
    issues.extend(f"Invalid search: {issue}" for issue in search_issues)

    cal = config.calibration
    if cal.seq_len < 1 or cal.n_positions < cal.seq_len:
        issues.append("Invalid calibration: need n_positions >= seq_len >= 1")
    if cal.heldout_seq_len < 2 or cal.heldout_positions < cal.heldout_seq_len:
        issues.append("Invalid calibration: need heldout_positions >= heldout_seq_len >= 2")
    if cal.workers < 1:
        issues.append("Invalid calibration.workers: must be >= 1")

    if config.oracle not in ORACLES:
        issues.append(f"Invalid oracle: must be one of {', '.join(ORACLES)}")
    if config.latency_bench not in LATENCY_BENCHES:
        issues.append(f"Invalid latency_bench: must be one of {', '.join(LATENCY_BENCHES)}")
    if config.corpus_path is not None and not config.corpus_path.exists():
        issues.append(f"Invalid paths.calibration_corpus: {config.corpus_path} does not exist")

    return len(issues) == 0, issues


class RunConfigManager:
    """Loads, updates and saves one run configuration file."""

    def __init__(self, config_path: Optional[Union[str, Path]] = None):
        """
        Initialize the configuration manager.

        Args:
            config_path: JSON file to use (defaults to ./prunestack.json); created if missing
        """
        self.config_file = Path(config_path or DEFAULT_CONFIG_FILENAME)
        self._config = self._load_or_create_config()

    def _load_or_create_config(self) -> RunConfig:
        if self.config_file.exists():
            try:
                with open(self.config_file, "r") as f:
                    data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"Invalid configuration file {self.config_file}: {e}")
            if not isinstance(data, dict):
                raise ConfigError(f"Invalid configuration file {self.config_file}: not an object")
            return dict_to_config(data)

        logging.info(f"Creating default configuration at {self.config_file}")
        default_config = RunConfig()
        self.save_config(default_config)
        return default_config

    def get_config(self) -> RunConfig:
        return self._config

    def save_config(self, config: Optional[RunConfig] = None) -> None:
        """
        Save configuration to file.

        Args:
            config: Configuration to save (uses current config if None)
        """
        if config is None:
            config = self._config

        config.last_updated = datetime.now().isoformat()

        try:
            self.config_file.parent.mkdir(parents=True, exist_ok=True)
            with open(self.config_file, "w") as f:
                json.dump(config_to_dict(config), f, indent=2)
        except OSError as e:
            raise ConfigError(f"Cannot write {self.config_file}: {e}")

        self._config = config

    def update_config(self, **kwargs: Any) -> None:
        """
        Update configuration with new values.

        Args:
            **kwargs: Configuration updates; nested keys use dots ('search.seed')
        """
        self._config = apply_overrides(self._config, kwargs)
        self.save_config()

    def reset_config(self) -> None:
        """Reset configuration to defaults."""
        self.save_config(RunConfig())

    def validate_config(self) -> Tuple[bool, List[str]]:
        return validate_run_config(self._config)

    def get_config_path(self) -> Path:
        return self.config_file


def apply_overrides(config: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """Return a copy of ``config`` with dotted-key overrides applied."""
    config_dict = config_to_dict(config)

    for key, value in overrides.items():
        parts = key.split(".")
        current = config_dict
        for part in parts[:-1]:
            if not isinstance(current.get(part), dict):
                raise ConfigError(f"Unknown configuration section: {key}")
            current = current[part]
        if parts[-1] not in current:
            raise ConfigError(f"Unknown configuration key: {key}")
        current[parts[-1]] = value

    return dict_to_config(config_dict)
