"""
Small models and search points shared by the test suite.

The tiny configurations keep every forward pass well under a millisecond so
property checks can run over many random architectures.
"""

from typing import Optional, Sequence

import numpy as np

from prunestack.activations import capture_activations
from prunestack.calibration import CalibrationStats, compute_stats
from prunestack.model_core import AttentionTag, ModelBundle, ModelConfig, init_model
from prunestack.search_space import SearchPoint, pattern_kinds


def tags(pattern: str) -> Sequence[AttentionTag]:
    """Turn ``"F.S.K"`` into attention tags."""
    return tuple(AttentionTag(c) for c in pattern.split("."))


def tiny_config(
    pattern: str = "F.S.K.F",
    window: int = 16,
    d_model: int = 32,
    d_ffn: int = 64,
    n_heads: int = 4,
    n_kv_heads: int = 2,
    head_dim: int = 8,
    vocab_size: int = 64,
    block_unit: int = 8,
    max_context: int = 256,
) -> ModelConfig:
    kinds = pattern_kinds(tags(pattern), window)
    return ModelConfig(
        n_layers=len(kinds),
        d_model=d_model,
        d_ffn=d_ffn,
        n_heads=n_heads,
        n_kv_heads=n_kv_heads,
        head_dim=head_dim,
        vocab_size=vocab_size,
        attn_pattern=kinds,
        block_unit=block_unit,
        max_context=max_context,
    )


def tiny_model(pattern: str = "F.S.K.F", seed: int = 0, **kwargs: int) -> ModelBundle:
    return init_model(tiny_config(pattern, **kwargs), seed)


def tiny_stats(model: ModelBundle, n_sequences: int = 3, seq_len: int = 16) -> CalibrationStats:
    """Calibration statistics from random tokens."""
    rng = np.random.default_rng(7)
    tokens = rng.integers(0, model.config.vocab_size, size=(n_sequences, seq_len))
    return compute_stats(capture_activations(model, [tokens]))


def point(
    d_l: int = 12,
    d_ffn: int = 4096,
    d_model: int = 1536,
    pattern: Optional[str] = None,
) -> SearchPoint:
    """Search point in the full-scale space; all-full attention unless given."""
    kinds = tags(pattern) if pattern is not None else (AttentionTag.FULL,) * d_l
    return SearchPoint(d_l, d_ffn, d_model, tuple(kinds))
