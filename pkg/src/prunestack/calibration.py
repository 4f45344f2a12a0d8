"""
Activation-energy importance metrics and their persisted form.

Three metrics drive structured pruning:

- FFN channel energy: root-mean-square of each post-gate FFN hidden channel
  over all calibration positions.
- Model-dim channel energy: root-mean-square of each residual channel after
  parameter-free RMS normalisation of the layer input, summed over layers.
- Layer score: one minus the mean cosine similarity between a layer's input
  and its output (after the residual addition); 0 for an identity layer,
  2 for a negation.

The scalar forms ``(1/N) sum ||x_i||`` are available as well.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import numpy.typing as npt

from .activations import ActivationTrace, Float64Array, capture_activations
from .model_core import ModelBundle

DEFAULT_CALIBRATION_POSITIONS = 65536
DEFAULT_SEQUENCE_LENGTH = 512
STATS_FORMAT_VERSION = 1
CORPUS_FILENAME = "corpus.txt"


class CalibrationError(Exception):
    """Raised when calibration statistics cannot be computed, read or written."""

    pass


def _require_positions(trace: ActivationTrace) -> int:
    n = trace.n_positions
    if n == 0:
        raise CalibrationError("activation trace is empty (N = 0)")
    return n


def ffn_metric(trace: ActivationTrace) -> Float64Array:
    """Per-layer, per-channel FFN energy ``sqrt((1/N) sum_i x_ij^2)``, shape (L, d_ffn)."""
    n = _require_positions(trace)
    return np.sqrt(trace.ffn_sq_sum / n)


def ffn_metric_scalar(trace: ActivationTrace) -> Float64Array:
    """Per-layer ``(1/N) sum_i ||x_i||`` over FFN hidden activations, shape (L,)."""
    n = _require_positions(trace)
    return trace.ffn_norm_sum / n


def modeldim_metric(trace: ActivationTrace) -> Float64Array:
    """Per-residual-channel energy of normalised layer inputs summed over layers, (d_model,)."""
    n = _require_positions(trace)
    return np.sqrt(trace.resid_sq_sum / n).sum(axis=0)


def modeldim_metric_scalar(trace: ActivationTrace) -> Float64Array:
    """Per-layer ``(1/N) sum_i ||LN(x_i)||``, shape (L,)."""
    n = _require_positions(trace)
    return trace.resid_norm_sum / n


def layer_metric(trace: ActivationTrace) -> Float64Array:
    """Per-layer ``1 - mean cos(input, output)``, clipped to [0, 2]."""
    n = _require_positions(trace)
    degenerate = int(trace.degenerate.sum())
    if degenerate:
        logging.warning(f"{degenerate} zero-norm residual positions scored as similarity 0")
    return np.clip(1.0 - trace.cos_sum / n, 0.0, 2.0)


@dataclass
class CalibrationStats:
    """Importance scores computed from one calibration pass over the base model."""

    ffn_channel_energy: Float64Array
    modeldim_channel_energy: Float64Array
    layer_score: Float64Array
    n_positions: int
    degenerate_positions: npt.NDArray[np.int64]
    ffn_scalar: Float64Array
    modeldim_scalar: Float64Array
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return int(self.layer_score.shape[0])

    def validate(self) -> None:
        if self.n_positions < 1:
            raise CalibrationError("statistics cover no positions")
        for name in ("ffn_channel_energy", "modeldim_channel_energy"):
            if np.any(getattr(self, name) < 0):
                raise CalibrationError(f"{name} has negative entries")
        if np.any(self.layer_score < 0) or np.any(self.layer_score > 2):
            raise CalibrationError("layer_score outside [0, 2]")
        if self.ffn_channel_energy.shape[0] != self.n_layers:
            raise CalibrationError("FFN energy layer count does not match layer scores")


def compute_stats(
    trace: ActivationTrace, metadata: Optional[Dict[str, Any]] = None
) -> CalibrationStats:
    """Turn a trace into CalibrationStats."""
    stats = CalibrationStats(
        ffn_channel_energy=ffn_metric(trace),
        modeldim_channel_energy=modeldim_metric(trace),
        layer_score=layer_metric(trace),
        n_positions=trace.n_positions,
        degenerate_positions=trace.degenerate.copy(),
        ffn_scalar=ffn_metric_scalar(trace),
        modeldim_scalar=modeldim_metric_scalar(trace),
        metadata=dict(metadata or {}),
    )
    stats.validate()
    return stats


# ---------- Calibration corpus ----------


def project_root() -> Path:
    """Repository root (parent of src/)."""
    return Path(__file__).resolve().parent.parent.parent


def find_assets_dir() -> Path:
    """Find the assets directory, whether in development or installed package."""
    dev_assets = project_root() / "assets"
    if dev_assets.exists():
        return dev_assets

    installed_assets = Path(__file__).parent / "assets"
    if installed_assets.exists():
        return installed_assets

    return dev_assets


def default_corpus_path() -> Path:
    return find_assets_dir() / "calibration" / CORPUS_FILENAME


def load_corpus(
    path: Optional[Union[str, Path]] = None,
    n_positions: int = DEFAULT_CALIBRATION_POSITIONS,
    seq_len: int = DEFAULT_SEQUENCE_LENGTH,
) -> npt.NDArray[np.int64]:
    """
    Read a text file as byte tokens and shape it into calibration batches.

    The byte stream is cycled when shorter than ``n_positions``.

    Args:
        path: corpus file (defaults to the bundled corpus)
        n_positions: total positions N; rounded down to a multiple of seq_len
        seq_len: positions per sequence

    Returns:
        Token array of shape (n_positions // seq_len, seq_len)
    """
    corpus_path = Path(path) if path is not None else default_corpus_path()
    if not corpus_path.exists():
        raise CalibrationError(f"Calibration corpus not found: {corpus_path}")
    data = np.frombuffer(corpus_path.read_bytes(), dtype=np.uint8)
    if data.size == 0:
        raise CalibrationError(f"Calibration corpus is empty: {corpus_path}")
    if seq_len < 1 or n_positions < seq_len:
        raise CalibrationError(f"need n_positions >= seq_len >= 1, got {n_positions}, {seq_len}")

    n_sequences = n_positions // seq_len
    total = n_sequences * seq_len
    repeats = -(-total // data.size)
    stream = np.tile(data, repeats)[:total].astype(np.int64)
    logging.debug(f"Loaded {data.size} corpus bytes from {corpus_path} ({repeats}x cycled)")
    return stream.reshape(n_sequences, seq_len)


def calibrate(
    model: ModelBundle,
    corpus: Optional[Union[str, Path]] = None,
    n_positions: int = DEFAULT_CALIBRATION_POSITIONS,
    seq_len: int = DEFAULT_SEQUENCE_LENGTH,
    workers: int = 1,
) -> CalibrationStats:
    """Run one calibration pass over ``model`` and return its statistics."""
    tokens = load_corpus(corpus, n_positions, seq_len)
    trace = capture_activations(model, [tokens], workers=workers)
    metadata = {
        "base_checksum": model.checksum(),
        "seq_len": seq_len,
        "corpus": str(corpus) if corpus is not None else CORPUS_FILENAME,
    }
    stats = compute_stats(trace, metadata)
    logging.info(
        f"Calibrated {stats.n_layers} layers over {stats.n_positions} positions "
        f"({int(stats.degenerate_positions.sum())} degenerate)"
    )
    return stats


# ---------- Persistence ----------


def save_stats(stats: CalibrationStats, directory: Union[str, Path]) -> Path:
    """
    Persist stats as ``stats.json`` (scalars and metadata) plus ``stats.npz`` (arrays).

    Args:
        stats: statistics to save
        directory: target directory, created if missing

    Returns:
        Path to the directory
    """
    path = Path(directory)
    arrays = {
        "ffn_channel_energy": stats.ffn_channel_energy,
        "modeldim_channel_energy": stats.modeldim_channel_energy,
        "layer_score": stats.layer_score,
        "degenerate_positions": stats.degenerate_positions,
        "ffn_scalar": stats.ffn_scalar,
        "modeldim_scalar": stats.modeldim_scalar,
    }
    header = {
        "format_version": STATS_FORMAT_VERSION,
        "n_positions": stats.n_positions,
        "n_layers": stats.n_layers,
        "d_ffn": int(stats.ffn_channel_energy.shape[1]),
        "d_model": int(stats.modeldim_channel_energy.shape[0]),
        "metadata": stats.metadata,
    }
    try:
        path.mkdir(parents=True, exist_ok=True)
        with open(path / "stats.npz", "wb") as f:
            np.savez(f, **arrays)
        with open(path / "stats.json", "w") as f:
            json.dump(header, f, indent=2, sort_keys=True)
    except OSError as e:
        raise CalibrationError(f"Failed to write calibration stats to {path}: {e}")
    return path


def load_stats(directory: Union[str, Path]) -> CalibrationStats:
    """Read stats written by save_stats."""
    path = Path(directory)
    try:
        with open(path / "stats.json", "r") as f:
            header = json.load(f)
        with np.load(path / "stats.npz") as arrays:
            loaded = {name: arrays[name].copy() for name in arrays.files}
    except (OSError, json.JSONDecodeError, ValueError) as e:
        raise CalibrationError(f"Failed to read calibration stats from {path}: {e}")

    if header.get("format_version") != STATS_FORMAT_VERSION:
        raise CalibrationError(f"Unsupported stats format: {header.get('format_version')}")
    try:
        stats = CalibrationStats(
            ffn_channel_energy=loaded["ffn_channel_energy"],
            modeldim_channel_energy=loaded["modeldim_channel_energy"],
            layer_score=loaded["layer_score"],
            n_positions=int(header["n_positions"]),
            degenerate_positions=loaded["degenerate_positions"],
            ffn_scalar=loaded["ffn_scalar"],
            modeldim_scalar=loaded["modeldim_scalar"],
            metadata=header.get("metadata", {}),
        )
    except KeyError as e:
        raise CalibrationError(f"Calibration stats missing field {e}")
    stats.validate()
    return stats
