"""
Quality oracles and latency benches the search can be driven by.

Quality oracles map a search point to a loss (lower is better); latency
benches map a point to one LatencySample per context length. The analytic
and FLOP-based benches and the synthetic quality oracle are deterministic
test doubles: their numbers are shaped like the real measurements but are
not measurements.
"""

import logging
import zlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence

import numpy as np
import numpy.typing as npt

from .calibration import CalibrationStats
from .latency_bench import (
    BenchProtocol,
    LatencySample,
    count_flops,
    count_runtime_prefill_flops,
    measure_decode,
    measure_ttft,
)
from .model_core import AttentionTag, ModelBundle, ModelConfig, forward_logits
from .pruning import PruneSpec, prune
from .search_space import SearchPoint, config_for_point, scaled_base_config

QualityOracle = Callable[[SearchPoint], float]

# Full-scale attention projection width (32 heads x 64) and KV width (8 x 64).
_ATTN_WIDTH = 2048
_KV_WIDTH = 512


class LatencyBench(Protocol):
    def measure(self, point: SearchPoint) -> List[LatencySample]: ...


def _point_seed(point: SearchPoint, seed: int) -> List[int]:
    return [seed, zlib.crc32(point.encode().encode())]


# ---------- Quality ----------


def non_embedding_params(point: SearchPoint) -> int:
    """Full-scale parameters outside the embeddings (FFN plus attention projections)."""
    attn_layers = point.d_l - point.n_skip
    attn = point.d_model * (2 * _ATTN_WIDTH + 2 * _KV_WIDTH)
    return point.d_l * 3 * point.d_model * point.d_ffn + attn_layers * attn


def efficient_runs(pattern: Sequence[AttentionTag]) -> List[int]:
    runs, current = [], 0
    for tag in pattern:
        if tag.is_efficient:
            current += 1
        elif current:
            runs.append(current)
            current = 0
    if current:
        runs.append(current)
    return runs


def synthetic_quality_mean(point: SearchPoint) -> float:
    """
    Noiseless synthetic loss.

    0.40 + 0.30 * exp(-params / 6e8) with params the non-embedding count,
    minus a depth bonus of 0.02 * (d_L - 10) / 6, plus 0.008 per skip layer,
    0.005 per SWA layer and 0.02 * (r - 2) for every efficient run of length
    r >= 3.
    """
    loss = 0.40 + 0.30 * float(np.exp(-non_embedding_params(point) / 6e8))
    loss -= 0.02 * (point.d_l - 10) / 6
    loss += 0.008 * point.n_skip + 0.005 * point.n_swa
    loss += sum(0.02 * (r - 2) for r in efficient_runs(point.attn_pattern) if r >= 3)
    return loss


def synthetic_quality_oracle(point: SearchPoint, seed: int = 0, noise_std: float = 0.003) -> float:
    """Synthetic loss with seeded Gaussian noise; test double, not a trained loss."""
    noise = np.random.default_rng(_point_seed(point, seed)).normal(0.0, noise_std)
    return synthetic_quality_mean(point) + float(noise)


def mean_nll(model: ModelBundle, tokens: npt.ArrayLike) -> float:
    """Mean next-token negative log-likelihood in nats over one or more sequences."""
    arr = np.asarray(tokens, dtype=np.int64)
    rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
    total, count = 0.0, 0
    for row in rows:
        if row.shape[0] < 2:
            raise ValueError("held-out sequences need at least 2 tokens")
        logits = forward_logits(model, row[:-1]).astype(np.float64)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        total -= float(log_probs[np.arange(row.shape[0] - 1), row[1:]].sum())
        count += row.shape[0] - 1
    return total / count


def nll_quality_oracle(
    base: ModelBundle,
    stats: CalibrationStats,
    point: SearchPoint,
    heldout: npt.ArrayLike,
    width_divisor: int = 1,
    swa_window: int = 1024,
) -> float:
    """
    Prune ``base`` to ``point`` and return its held-out NLL.

    Only meaningful when ``base`` carries trained weights; on a synthetic base
    it measures damage relative to that base, not language-model quality.
    """
    spec = PruneSpec(point, base.config.block_unit, width_divisor, swa_window)
    return mean_nll(prune(base, stats, spec), heldout)


# ---------- Latency ----------


@dataclass
class AnalyticLatencyStub:
    """
    Deterministic latency model that prices what chunked prefill executes.

    TTFT = runtime prefill FLOPs / flops_per_second + a fixed cost per layer
    and per attention layer, including the ring-buffer full-matrix work of
    SWA layers. Decode time is the ideal decode FLOPs priced the same way.
    """

    contexts: List[int] = field(default_factory=lambda: [1024, 2048, 4096])
    chunk_size: int = 1024
    swa_window: int = 1024
    flops_per_second: float = 1.5e12
    layer_overhead: float = 1e-3
    attention_overhead: float = 5e-4
    template: ModelConfig = field(default_factory=lambda: scaled_base_config(1))
    host: str = "analytic-stub"

    def config(self, point: SearchPoint) -> ModelConfig:
        return config_for_point(point, self.template, 1, self.swa_window)

    def _overhead(self, point: SearchPoint) -> float:
        attention_layers = point.d_l - point.n_skip
        return self.layer_overhead * point.d_l + self.attention_overhead * attention_layers

    def ttft(self, point: SearchPoint, context: int) -> float:
        cfg = self.config(point)
        flops = count_runtime_prefill_flops(cfg, context, self.chunk_size)
        return flops / self.flops_per_second + self._overhead(point)

    def measure(self, point: SearchPoint) -> List[LatencySample]:
        cfg = self.config(point)
        samples = []
        for context in self.contexts:
            step = count_flops(cfg, context).decode_per_token / self.flops_per_second
            samples.append(
                LatencySample(
                    point=point,
                    context=context,
                    ttft_seconds=self.ttft(point, context),
                    decode_tok_per_s=1.0 / (step + self._overhead(point)),
                    run_spread=0.0,
                    host_fingerprint=self.host,
                )
            )
        return samples


@dataclass
class FlopsLatencyStub:
    """Latency as a pure function of ideal FLOPs (a perfect FLOPs proxy)."""

    contexts: List[int] = field(default_factory=lambda: [1024, 2048, 4096])
    swa_window: int = 1024
    flops_per_second: float = 1e12
    template: ModelConfig = field(default_factory=lambda: scaled_base_config(1))
    host: str = "flops-stub"

    def measure(self, point: SearchPoint) -> List[LatencySample]:
        cfg = config_for_point(point, self.template, 1, self.swa_window)
        samples = []
        for context in self.contexts:
            flops = count_flops(cfg, context)
            samples.append(
                LatencySample(
                    point=point,
                    context=context,
                    ttft_seconds=flops.prefill / self.flops_per_second,
                    decode_tok_per_s=self.flops_per_second / flops.decode_per_token,
                    run_spread=0.0,
                    host_fingerprint=self.host,
                )
            )
        return samples


@dataclass
class HostLatencyBench:
    """Prune the base model to each point and time it on this host."""

    base: ModelBundle
    stats: CalibrationStats
    protocol: BenchProtocol
    width_divisor: int = 8
    swa_window: int = 1024
    contexts: Optional[List[int]] = None
    decode: bool = False  # time the full decode run instead of the first step

    def model_for(self, point: SearchPoint) -> ModelBundle:
        spec = PruneSpec(point, self.base.config.block_unit, self.width_divisor, self.swa_window)
        return prune(self.base, self.stats, spec)

    def measure(self, point: SearchPoint) -> List[LatencySample]:
        model = self.model_for(point)
        samples = []
        for context in self.contexts or self.protocol.context_lengths:
            measure = measure_decode if self.decode else measure_ttft
            sample = measure(model, self.protocol, context, point=point)
            logging.info(f"{point} @{context}: TTFT {sample.ttft_seconds * 1000:.1f} ms")
            samples.append(sample)
        return samples


def objective_latency(samples: Sequence[LatencySample], context: int) -> float:
    """TTFT at ``context``, or at the closest measured context."""
    if not samples:
        raise ValueError("no latency samples")
    best = min(samples, key=lambda s: (abs(s.context - context), s.context))
    return best.ttft_seconds


def synthetic_loss_curves(
    points: Sequence[SearchPoint],
    steps: Sequence[int],
    seed: int = 0,
) -> Dict[str, Dict[int, float]]:
    """
    Per-candidate loss curves for rank-stability checks.

    Each curve decays as ``q + c * sqrt(1000 / step)`` towards the candidate's
    synthetic loss ``q``, with a per-candidate amplitude ``c`` and noise that
    shrinks with the step count.
    """
    curves: Dict[str, Dict[int, float]] = {}
    for point in points:
        rng = np.random.default_rng(_point_seed(point, seed))
        amplitude = 0.5 * (1.0 + 0.2 * rng.uniform(-1.0, 1.0))
        final = synthetic_quality_mean(point)
        curve = {}
        for step in steps:
            decay = np.sqrt(1000.0 / max(step, 1))
            curve[int(step)] = final + amplitude * decay + float(rng.normal(0.0, 0.002 * decay))
        curves[point.encode()] = curve
    return curves
