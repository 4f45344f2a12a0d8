"""
Streaming activation statistics collected from forward passes.

An ActivationTrace keeps float64 running sums only, so memory is independent
of how many positions are observed. Traces from separate workers merge
exactly.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np
import numpy.typing as npt

from .model_core import FloatArray, ModelBundle, PrefillError, TokenInput, prefill

Float64Array = npt.NDArray[np.float64]


@dataclass
class ActivationTrace:
    """Per-layer running sums of FFN and residual activation statistics."""

    norm_eps: float
    ffn_sq_sum: Float64Array  # (n_layers, d_ffn) sum of squared hidden activations
    ffn_norm_sum: Float64Array  # (n_layers,) sum of per-position hidden L2 norms
    resid_sq_sum: Float64Array  # (n_layers, d_model) sum of squared normalised inputs
    resid_norm_sum: Float64Array  # (n_layers,) sum of per-position normalised input norms
    cos_sum: Float64Array  # (n_layers,) sum of cos(residual_in, residual_out)
    degenerate: npt.NDArray[np.int64]  # (n_layers,) zero-norm positions
    layer_positions: npt.NDArray[np.int64]  # (n_layers,) positions observed per layer

    @classmethod
    def empty(
        cls, n_layers: int, d_model: int, d_ffn: int, norm_eps: float = 1e-5
    ) -> "ActivationTrace":
        return cls(
            norm_eps=norm_eps,
            ffn_sq_sum=np.zeros((n_layers, d_ffn)),
            ffn_norm_sum=np.zeros(n_layers),
            resid_sq_sum=np.zeros((n_layers, d_model)),
            resid_norm_sum=np.zeros(n_layers),
            cos_sum=np.zeros(n_layers),
            degenerate=np.zeros(n_layers, dtype=np.int64),
            layer_positions=np.zeros(n_layers, dtype=np.int64),
        )

    @classmethod
    def for_model(cls, model: ModelBundle) -> "ActivationTrace":
        cfg = model.config
        return cls.empty(cfg.n_layers, cfg.d_model, cfg.d_ffn, cfg.norm_eps)

    @property
    def n_layers(self) -> int:
        return int(self.ffn_sq_sum.shape[0])

    @property
    def n_positions(self) -> int:
        """Positions observed (batch x sequence); equal for every layer."""
        return int(self.layer_positions.max()) if self.layer_positions.size else 0

    def observe(
        self,
        layer: int,
        resid_in: FloatArray,
        ffn_hidden: FloatArray,
        resid_out: FloatArray,
    ) -> None:
        """Accumulate one layer's activations for a chunk of positions."""
        hidden = np.asarray(ffn_hidden, dtype=np.float64)
        sq = hidden * hidden
        self.ffn_sq_sum[layer] += sq.sum(axis=0)
        self.ffn_norm_sum[layer] += np.sqrt(sq.sum(axis=1)).sum()

        x_in = np.asarray(resid_in, dtype=np.float64)
        rms = np.sqrt(np.mean(x_in * x_in, axis=1, keepdims=True) + self.norm_eps)
        normalised = x_in / rms
        self.resid_sq_sum[layer] += (normalised * normalised).sum(axis=0)
        self.resid_norm_sum[layer] += np.linalg.norm(normalised, axis=1).sum()

        x_out = np.asarray(resid_out, dtype=np.float64)
        norm_in = np.linalg.norm(x_in, axis=1)
        norm_out = np.linalg.norm(x_out, axis=1)
        zero = (norm_in == 0.0) | (norm_out == 0.0)
        dots = np.einsum("ij,ij->i", x_in, x_out)
        # Zero-norm positions count as similarity 0.
        cos = np.where(zero, 0.0, dots / np.where(zero, 1.0, norm_in * norm_out))
        self.cos_sum[layer] += cos.sum()
        self.degenerate[layer] += int(zero.sum())
        self.layer_positions[layer] += x_in.shape[0]

    def merge(self, other: "ActivationTrace") -> "ActivationTrace":
        """Return the exact sum of two traces over the same architecture."""
        if self.ffn_sq_sum.shape != other.ffn_sq_sum.shape or (
            self.resid_sq_sum.shape != other.resid_sq_sum.shape
        ):
            raise ValueError("cannot merge traces from different architectures")
        return ActivationTrace(
            norm_eps=self.norm_eps,
            ffn_sq_sum=self.ffn_sq_sum + other.ffn_sq_sum,
            ffn_norm_sum=self.ffn_norm_sum + other.ffn_norm_sum,
            resid_sq_sum=self.resid_sq_sum + other.resid_sq_sum,
            resid_norm_sum=self.resid_norm_sum + other.resid_norm_sum,
            cos_sum=self.cos_sum + other.cos_sum,
            degenerate=self.degenerate + other.degenerate,
            layer_positions=self.layer_positions + other.layer_positions,
        )


def _sequences(batches: Iterable[TokenInput]) -> List[npt.NDArray[np.int64]]:
    sequences: List[npt.NDArray[np.int64]] = []
    for batch in batches:
        arr = np.asarray(batch, dtype=np.int64)
        if arr.ndim == 1:
            sequences.append(arr)
        elif arr.ndim == 2:
            sequences.extend(row for row in arr)
        else:
            raise PrefillError(f"token batch must be 1-D or 2-D, got {arr.ndim}-D")
    return sequences


def _trace_sequence(model: ModelBundle, tokens: npt.NDArray[np.int64]) -> ActivationTrace:
    trace = ActivationTrace.for_model(model)
    windows = [k.window for k in model.config.attn_pattern if k.window is not None]
    chunk = min(windows + [int(tokens.shape[0])])
    prefill(model, tokens, chunk, observer=trace.observe)
    return trace


def capture_activations(
    model: ModelBundle, batches: Sequence[TokenInput], workers: int = 1
) -> ActivationTrace:
    """
    Run forward passes over token batches and accumulate activation statistics.

    Args:
        model: model to observe
        batches: token sequences; 2-D arrays are split into rows
        workers: number of threads; partial traces are merged in input order so
            the result does not depend on scheduling

    Returns:
        Merged ActivationTrace covering every position of every batch
    """
    sequences = _sequences(batches)
    if not sequences:
        raise PrefillError("no calibration batches supplied")

    logging.info(f"Capturing activations over {len(sequences)} sequences ({workers} workers)")
    if workers <= 1:
        partials = [_trace_sequence(model, seq) for seq in sequences]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(lambda seq: _trace_sequence(model, seq), sequences))

    trace = ActivationTrace.for_model(model)
    for partial in partials:
        trace = trace.merge(partial)
    return trace
