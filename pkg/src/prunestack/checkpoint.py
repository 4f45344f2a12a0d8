"""
On-disk checkpoint format for model bundles.

A checkpoint is a directory holding ``manifest.txt`` (UTF-8 ``key=value``
lines describing the config and tensor list) and one ``<tensor name>.bin``
file per tensor containing raw little-endian float32 data in C order. The
manifest carries no timestamps, so saving the same bundle twice yields
identical bytes.
"""

import hashlib
import logging
from dataclasses import fields
from pathlib import Path
from typing import Dict, Union

import numpy as np

from .model_core import AttentionKind, FloatArray, ModelBundle, ModelConfig, weight_shapes

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.txt"


class CheckpointError(Exception):
    """Raised when a checkpoint cannot be written or read back."""

    pass


def _config_lines(config: ModelConfig) -> Dict[str, str]:
    lines: Dict[str, str] = {}
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name == "attn_pattern":
            lines[f.name] = ",".join(kind.encode() for kind in value)
        elif isinstance(value, bool):
            lines[f.name] = "true" if value else "false"
        else:
            lines[f.name] = repr(value) if isinstance(value, float) else str(value)
    return lines


def _parse_config(entries: Dict[str, str]) -> ModelConfig:
    try:
        return ModelConfig(
            n_layers=int(entries["n_layers"]),
            d_model=int(entries["d_model"]),
            d_ffn=int(entries["d_ffn"]),
            n_heads=int(entries["n_heads"]),
            n_kv_heads=int(entries["n_kv_heads"]),
            head_dim=int(entries["head_dim"]),
            vocab_size=int(entries["vocab_size"]),
            attn_pattern=tuple(
                AttentionKind.decode(code) for code in entries["attn_pattern"].split(",")
            ),
            block_unit=int(entries["block_unit"]),
            norm_eps=float(entries["norm_eps"]),
            tied_embeddings=entries["tied_embeddings"] == "true",
            rope_base=float(entries["rope_base"]),
            max_context=int(entries["max_context"]),
        )
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"Malformed manifest: {e}")


def save_checkpoint(bundle: ModelBundle, directory: Union[str, Path]) -> Path:
    """
    Write ``bundle`` to ``directory``.

    Args:
        bundle: model to save
        directory: target directory, created if missing

    Returns:
        Path to the checkpoint directory
    """
    path = Path(directory)
    try:
        path.mkdir(parents=True, exist_ok=True)
        lines = [f"format_version={FORMAT_VERSION}"]
        lines += [f"{key}={value}" for key, value in _config_lines(bundle.config).items()]
        for name, shape in weight_shapes(bundle.config).items():
            data = np.ascontiguousarray(bundle.weights[name], dtype="<f4").tobytes()
            (path / f"{name}.bin").write_bytes(data)
            dims = "x".join(str(d) for d in shape)
            lines.append(f"tensor.{name}={dims}:{hashlib.sha256(data).hexdigest()}")
        (path / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise CheckpointError(f"Failed to write checkpoint to {path}: {e}")
    logging.info(f"Saved checkpoint ({bundle.parameter_count():,} parameters) to {path}")
    return path


def load_checkpoint(directory: Union[str, Path]) -> ModelBundle:
    """Read a checkpoint written by save_checkpoint, verifying shapes and checksums."""
    path = Path(directory)
    manifest = path / MANIFEST_NAME
    if not manifest.exists():
        raise CheckpointError(f"No checkpoint manifest at {manifest}")

    entries: Dict[str, str] = {}
    for raw in manifest.read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        key, sep, value = raw.partition("=")
        if not sep:
            raise CheckpointError(f"Malformed manifest line: {raw!r}")
        entries[key.strip()] = value.strip()

    if entries.get("format_version") != str(FORMAT_VERSION):
        raise CheckpointError(f"Unsupported checkpoint format: {entries.get('format_version')}")
    config = _parse_config(entries)

    weights: Dict[str, FloatArray] = {}
    for name, shape in weight_shapes(config).items():
        record = entries.get(f"tensor.{name}")
        if record is None:
            raise CheckpointError(f"Manifest does not list tensor {name}")
        dims, _, digest = record.partition(":")
        if dims != "x".join(str(d) for d in shape):
            raise CheckpointError(f"{name}: manifest shape {dims} does not match config")
        tensor_path = path / f"{name}.bin"
        try:
            data = tensor_path.read_bytes()
        except OSError as e:
            raise CheckpointError(f"Failed to read {tensor_path}: {e}")
        if hashlib.sha256(data).hexdigest() != digest:
            raise CheckpointError(f"{name}: checksum mismatch")
        weights[name] = np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(shape)

    return ModelBundle(config, weights)
