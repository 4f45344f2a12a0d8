"""
Structured pruning of the base model to a search point.

Pruning is block-structured: layers are dropped whole (lowest layer score
first), FFN hidden channels and residual channels are kept in blocks of
``block_unit`` ranked by summed channel energy. The residual selection is
global, so every tensor that touches the residual stream is sliced with the
same index set. The target attention pattern is applied afterwards: skip
layers lose their attention weights, SWA layers keep them.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List

import numpy as np
import numpy.typing as npt

from .calibration import CalibrationStats
from .model_core import AttentionTag, FloatArray, ModelBundle, ModelConfig
from .search_space import SearchPoint, pattern_kinds

IndexArray = npt.NDArray[np.int64]


class PruneError(Exception):
    """Raised when a prune request is incompatible with the base model."""

    pass


@dataclass(frozen=True)
class PruneSpec:
    """Target architecture plus the scale at which it is realised."""

    target: SearchPoint
    block_unit: int
    width_divisor: int = 1
    swa_window: int = 1024

    @property
    def d_ffn(self) -> int:
        return self.target.d_ffn // self.width_divisor

    @property
    def d_model(self) -> int:
        return self.target.d_model // self.width_divisor

    def validate_against(self, base: ModelConfig) -> None:
        """Raise PruneError unless this spec can be cut from ``base``."""
        t = self.target
        if len(t.attn_pattern) != t.d_l:
            raise PruneError(f"pattern length {len(t.attn_pattern)} != d_L {t.d_l}")
        if self.width_divisor < 1:
            raise PruneError("width_divisor must be >= 1")
        if t.d_ffn % self.width_divisor or t.d_model % self.width_divisor:
            raise PruneError(f"width_divisor {self.width_divisor} does not divide {t}")
        if self.block_unit < 1:
            raise PruneError("block_unit must be >= 1")
        if self.block_unit != base.block_unit:
            raise PruneError(
                f"block_unit {self.block_unit} differs from the base's {base.block_unit}"
            )
        if t.d_l > base.n_layers:
            raise PruneError(f"d_L {t.d_l} exceeds base depth {base.n_layers}")
        if self.d_ffn > base.d_ffn or self.d_model > base.d_model:
            raise PruneError(
                f"target widths ({self.d_ffn}, {self.d_model}) exceed base "
                f"({base.d_ffn}, {base.d_model})"
            )
        if self.d_ffn < 1 or self.d_model < 1:
            raise PruneError("target widths must be positive")
        if self.d_ffn % self.block_unit or self.d_model % self.block_unit:
            raise PruneError(
                f"target widths ({self.d_ffn}, {self.d_model}) are not multiples of "
                f"block_unit {self.block_unit}"
            )
        if self.swa_window < 1:
            raise PruneError("swa_window must be >= 1")


def select_layers(layer_score: npt.ArrayLike, keep: int) -> List[int]:
    """Indices of the ``keep`` highest-scoring layers in original order; ties keep the lower one."""
    scores = np.asarray(layer_score, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    return sorted(int(i) for i in order[:keep])


def select_blocks(energy: npt.ArrayLike, block_unit: int, keep_blocks: int) -> IndexArray:
    """
    Channel indices of the ``keep_blocks`` most energetic blocks, ascending.

    Block energy is the sum of member channel energies; ties keep the lower
    block index, so the kept set grows monotonically with ``keep_blocks``.
    """
    channel = np.asarray(energy, dtype=np.float64)
    if channel.shape[0] % block_unit:
        raise PruneError(f"{channel.shape[0]} channels do not split into blocks of {block_unit}")
    block_energy = channel.reshape(-1, block_unit).sum(axis=1)
    order = np.argsort(-block_energy, kind="stable")
    blocks = np.sort(order[:keep_blocks])
    return (blocks[:, None] * block_unit + np.arange(block_unit)[None, :]).reshape(-1)


def _check_stats(base: ModelConfig, stats: CalibrationStats) -> None:
    if stats.layer_score.shape != (base.n_layers,):
        raise PruneError(
            f"stats cover {stats.layer_score.shape[0]} layers, base has {base.n_layers}"
        )
    if stats.ffn_channel_energy.shape != (base.n_layers, base.d_ffn):
        raise PruneError("FFN energy shape does not match the base model")
    if stats.modeldim_channel_energy.shape != (base.d_model,):
        raise PruneError("model-dim energy shape does not match the base model")


def prune(base: ModelBundle, stats: CalibrationStats, spec: PruneSpec) -> ModelBundle:
    """
    Cut a dense model for ``spec.target`` out of ``base``.

    Args:
        base: base model the statistics were computed on
        stats: calibration statistics of ``base``
        spec: target point and scale

    Returns:
        Dense pruned ModelBundle
    """
    cfg = base.config
    spec.validate_against(cfg)
    _check_stats(cfg, stats)
    w = base.weights
    bu = spec.block_unit

    layers = select_layers(stats.layer_score, spec.target.d_l)
    kinds = pattern_kinds(spec.target.attn_pattern, spec.swa_window)
    for new_i, old_i in enumerate(layers):
        base_skip = cfg.attn_pattern[old_i].tag is AttentionTag.SKIP
        if base_skip and kinds[new_i].tag is not AttentionTag.SKIP:
            raise PruneError(f"base layer {old_i} has no attention weights to keep")

    res = select_blocks(stats.modeldim_channel_energy, bu, spec.d_model // bu)
    weights: Dict[str, FloatArray] = {
        "tok_embeddings": np.ascontiguousarray(w["tok_embeddings"][:, res]),
        "final_norm": np.ascontiguousarray(w["final_norm"][res]),
    }
    if not cfg.tied_embeddings:
        weights["output"] = np.ascontiguousarray(w["output"][res, :])

    for new_i, old_i in enumerate(layers):
        src, dst = f"layer.{old_i}", f"layer.{new_i}"
        ffn = select_blocks(stats.ffn_channel_energy[old_i], bu, spec.d_ffn // bu)
        weights[f"{dst}.ffn_norm"] = np.ascontiguousarray(w[f"{src}.ffn_norm"][res])
        for proj, rows, cols in (("w_gate", res, ffn), ("w_up", res, ffn), ("w_down", ffn, res)):
            weights[f"{dst}.ffn.{proj}"] = np.ascontiguousarray(
                w[f"{src}.ffn.{proj}"][np.ix_(rows, cols)]
            )
        if kinds[new_i].tag is AttentionTag.SKIP:
            continue
        weights[f"{dst}.attn_norm"] = np.ascontiguousarray(w[f"{src}.attn_norm"][res])
        for proj in ("wq", "wk", "wv"):
            weights[f"{dst}.attn.{proj}"] = np.ascontiguousarray(w[f"{src}.attn.{proj}"][res, :])
        weights[f"{dst}.attn.wo"] = np.ascontiguousarray(w[f"{src}.attn.wo"][:, res])
        weights[f"{dst}.attn.q_norm"] = w[f"{src}.attn.q_norm"].copy()
        weights[f"{dst}.attn.k_norm"] = w[f"{src}.attn.k_norm"].copy()

    config = replace(
        cfg,
        n_layers=spec.target.d_l,
        d_model=spec.d_model,
        d_ffn=spec.d_ffn,
        attn_pattern=kinds,
    )
    pruned = ModelBundle(config, weights)
    logging.debug(
        f"Pruned {spec.target} -> {pruned.parameter_count():,} params (layers kept: {layers})"
    )
    return pruned
