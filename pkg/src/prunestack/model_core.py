"""
Dense transformer inference engine for hybrid attention patterns.

This module provides a small float32 decoder that supports three per-layer
attention kinds (full/global attention, sliding-window attention backed by a
ring buffer, and skip attention), grouped-query attention with QK-Norm, a KV
cache and chunked prefill. The engine is both the latency benchmark subject
and the activation source for calibration.

Weight layout (all matrices stored as ``(in_features, out_features)``):

    tok_embeddings          (vocab_size, d_model)
    output                  (d_model, vocab_size)       untied models only
    final_norm              (d_model,)
    layer.{i}.attn_norm     (d_model,)                  non-skip layers only
    layer.{i}.attn.wq       (d_model, n_heads * head_dim)
    layer.{i}.attn.wk       (d_model, n_kv_heads * head_dim)
    layer.{i}.attn.wv       (d_model, n_kv_heads * head_dim)
    layer.{i}.attn.wo       (n_heads * head_dim, d_model)
    layer.{i}.attn.q_norm   (head_dim,)
    layer.{i}.attn.k_norm   (head_dim,)
    layer.{i}.ffn_norm      (d_model,)
    layer.{i}.ffn.w_gate    (d_model, d_ffn)
    layer.{i}.ffn.w_up      (d_model, d_ffn)
    layer.{i}.ffn.w_down    (d_ffn, d_model)
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float32]
IntArray = npt.NDArray[np.int64]

# Query sub-block used by full attention so only the causal lower triangle of
# each chunk is computed.
FULL_ATTENTION_BLOCK = 256

# observer(layer_index, residual_in, ffn_hidden, residual_out)
LayerObserver = Callable[[int, FloatArray, FloatArray, FloatArray], None]
TokenInput = Union[Sequence[int], npt.NDArray[np.integer]]


class ModelConfigError(Exception):
    """Raised when a model configuration or weight set violates its invariants."""

    pass


class AttentionShapeError(Exception):
    """Raised when attention inputs have incompatible shapes."""

    pass


class AttentionPositionError(Exception):
    """Raised when attention position indices are non-monotone or leave a query blind."""

    pass


class PrefillError(Exception):
    """Raised when a prefill request cannot be served by the model."""

    pass


class CacheMismatchError(Exception):
    """Raised when a KV cache is used with a model it was not built for."""

    pass


class AttentionTag(str, Enum):
    """Per-layer attention type; values are the one-letter codes used in encodings."""

    FULL = "F"
    SWA = "S"
    SKIP = "K"

    @property
    def is_efficient(self) -> bool:
        """SWA and skip both count as efficient attention."""
        return self is not AttentionTag.FULL


@dataclass(frozen=True)
class AttentionKind:
    """Attention type of one layer; ``window`` is present only for SWA."""

    tag: AttentionTag
    window: Optional[int] = None

    def __post_init__(self) -> None:
        if self.tag is AttentionTag.SWA:
            if self.window is None or self.window < 1:
                raise ModelConfigError(f"SWA requires a window >= 1, got {self.window}")
        elif self.window is not None:
            raise ModelConfigError(f"{self.tag.name} attention takes no window")

    @classmethod
    def full(cls) -> "AttentionKind":
        return cls(AttentionTag.FULL)

    @classmethod
    def swa(cls, window: int) -> "AttentionKind":
        return cls(AttentionTag.SWA, window)

    @classmethod
    def skip(cls) -> "AttentionKind":
        return cls(AttentionTag.SKIP)

    def encode(self) -> str:
        if self.tag is AttentionTag.SWA:
            return f"S{self.window}"
        return self.tag.value

    @classmethod
    def decode(cls, text: str) -> "AttentionKind":
        text = text.strip()
        if text == "F":
            return cls.full()
        if text == "K":
            return cls.skip()
        if text.startswith("S") and text[1:].isdigit():
            return cls.swa(int(text[1:]))
        raise ModelConfigError(f"Unknown attention kind code: {text!r}")


@dataclass(frozen=True)
class ModelConfig:
    """Concrete architecture dimensions of a model."""

    n_layers: int
    d_model: int
    d_ffn: int
    n_heads: int
    n_kv_heads: int
    head_dim: int
    vocab_size: int
    attn_pattern: Tuple[AttentionKind, ...]
    block_unit: int = 128
    norm_eps: float = 1e-5
    tied_embeddings: bool = True
    rope_base: float = 10000.0
    max_context: int = 8192

    @property
    def attn_width(self) -> int:
        return self.n_heads * self.head_dim

    @property
    def kv_width(self) -> int:
        return self.n_kv_heads * self.head_dim

    def validate(self) -> None:
        """Raise ModelConfigError if any invariant is violated."""
        if self.n_layers < 1:
            raise ModelConfigError("n_layers must be >= 1")
        if len(self.attn_pattern) != self.n_layers:
            raise ModelConfigError(
                f"attn_pattern has {len(self.attn_pattern)} entries for {self.n_layers} layers"
            )
        for name in ("d_model", "d_ffn", "n_heads", "n_kv_heads", "head_dim", "vocab_size"):
            if getattr(self, name) < 1:
                raise ModelConfigError(f"{name} must be >= 1")
        if self.n_heads % self.n_kv_heads != 0:
            raise ModelConfigError(
                f"n_heads ({self.n_heads}) must be divisible by n_kv_heads ({self.n_kv_heads})"
            )
        if self.head_dim % 2 != 0:
            raise ModelConfigError("head_dim must be even for rotary embeddings")
        if self.block_unit < 1:
            raise ModelConfigError("block_unit must be >= 1")
        if self.d_ffn % self.block_unit != 0:
            raise ModelConfigError(
                f"d_ffn ({self.d_ffn}) is not divisible by block_unit ({self.block_unit})"
            )
        if self.d_model % self.block_unit != 0:
            raise ModelConfigError(
                f"d_model ({self.d_model}) is not divisible by block_unit ({self.block_unit})"
            )
        if self.norm_eps <= 0:
            raise ModelConfigError("norm_eps must be positive")
        if self.max_context < 1:
            raise ModelConfigError("max_context must be >= 1")

    def with_pattern(self, pattern: Sequence[AttentionKind]) -> "ModelConfig":
        return replace(self, attn_pattern=tuple(pattern), n_layers=len(pattern))


def weight_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Return the name -> shape map of every tensor a bundle for ``config`` carries."""
    d, f, v = config.d_model, config.d_ffn, config.vocab_size
    shapes: Dict[str, Tuple[int, ...]] = {"tok_embeddings": (v, d)}
    for i, kind in enumerate(config.attn_pattern):
        if kind.tag is not AttentionTag.SKIP:
            shapes[f"layer.{i}.attn_norm"] = (d,)
            shapes[f"layer.{i}.attn.wq"] = (d, config.attn_width)
            shapes[f"layer.{i}.attn.wk"] = (d, config.kv_width)
            shapes[f"layer.{i}.attn.wv"] = (d, config.kv_width)
            shapes[f"layer.{i}.attn.wo"] = (config.attn_width, d)
            shapes[f"layer.{i}.attn.q_norm"] = (config.head_dim,)
            shapes[f"layer.{i}.attn.k_norm"] = (config.head_dim,)
        shapes[f"layer.{i}.ffn_norm"] = (d,)
        shapes[f"layer.{i}.ffn.w_gate"] = (d, f)
        shapes[f"layer.{i}.ffn.w_up"] = (d, f)
        shapes[f"layer.{i}.ffn.w_down"] = (f, d)
    shapes["final_norm"] = (d,)
    if not config.tied_embeddings:
        shapes["output"] = (d, v)
    return shapes


@dataclass(frozen=True)
class ModelBundle:
    """Architecture plus dense float32 weights. Immutable once constructed."""

    config: ModelConfig
    weights: Mapping[str, FloatArray]

    def __post_init__(self) -> None:
        self.config.validate()
        expected = weight_shapes(self.config)
        missing = set(expected) - set(self.weights)
        extra = set(self.weights) - set(expected)
        if missing or extra:
            raise ModelConfigError(
                f"weight set does not match config (missing={sorted(missing)[:4]}, "
                f"extra={sorted(extra)[:4]})"
            )
        frozen: Dict[str, FloatArray] = {}
        for name, shape in expected.items():
            tensor = self.weights[name]
            if tensor.shape != shape:
                raise ModelConfigError(f"{name}: shape {tensor.shape}, expected {shape}")
            if tensor.dtype != np.float32:
                raise ModelConfigError(f"{name}: dtype {tensor.dtype}, expected float32")
            view = tensor.view()
            view.flags.writeable = False
            frozen[name] = view
        object.__setattr__(self, "weights", frozen)

    @property
    def dtype(self) -> np.dtype[np.float32]:
        return np.dtype(np.float32)

    @property
    def output_matrix(self) -> FloatArray:
        if self.config.tied_embeddings:
            return self.weights["tok_embeddings"].T
        return self.weights["output"]

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.weights.values()))

    def checksum(self) -> str:
        """SHA-256 over tensor names and raw bytes in layout order."""
        digest = hashlib.sha256()
        for name in weight_shapes(self.config):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.weights[name]).tobytes())
        return digest.hexdigest()

    def replace_weights(self, updates: Mapping[str, npt.ArrayLike]) -> "ModelBundle":
        """Return a new bundle with some tensors replaced."""
        weights = dict(self.weights)
        for name, value in updates.items():
            if name not in weights:
                raise ModelConfigError(f"unknown tensor {name!r}")
            weights[name] = np.array(value, dtype=np.float32)
        return ModelBundle(self.config, weights)


def init_model(config: ModelConfig, seed: int) -> ModelBundle:
    """Create deterministic synthetic weights for ``config``."""
    config.validate()
    rng = np.random.default_rng(seed)
    residual_std = 0.02 / np.sqrt(2.0 * config.n_layers)
    weights: Dict[str, FloatArray] = {}
    for name, shape in weight_shapes(config).items():
        if len(shape) == 1:
            weights[name] = np.ones(shape, dtype=np.float32)
            continue
        std = residual_std if name.endswith((".wo", ".w_down")) else 0.02
        weights[name] = (rng.standard_normal(shape, dtype=np.float32) * np.float32(std)).astype(
            np.float32
        )
    return ModelBundle(config, weights)


# ---------- Numerical building blocks ----------


def rms_norm(x: FloatArray, weight: Optional[FloatArray], eps: float) -> FloatArray:
    """RMS normalisation over the last axis, optionally scaled by ``weight``."""
    scale = np.float32(1.0) / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + np.float32(eps))
    out = x * scale
    if weight is not None:
        out = out * weight
    return out.astype(np.float32, copy=False)


def silu(x: FloatArray) -> FloatArray:
    # sigmoid(x) == 0.5 * (1 + tanh(x / 2)); avoids exp overflow
    return (x * (np.float32(0.5) * (np.float32(1.0) + np.tanh(x * np.float32(0.5))))).astype(
        np.float32, copy=False
    )


def apply_rope(x: FloatArray, positions: IntArray, base: float) -> FloatArray:
    """Rotary embedding (half-split layout) on ``x`` of shape (heads, tokens, head_dim)."""
    half = x.shape[-1] // 2
    inv_freq = base ** (-np.arange(0, half, dtype=np.float64) * 2.0 / x.shape[-1])
    angles = positions.astype(np.float64)[:, None] * inv_freq[None, :]
    cos = np.cos(angles).astype(np.float32)
    sin = np.sin(angles).astype(np.float32)
    x1, x2 = x[..., :half], x[..., half:]
    return np.concatenate([x1 * cos - x2 * sin, x2 * cos + x1 * sin], axis=-1).astype(
        np.float32, copy=False
    )


def attend(
    q: FloatArray,
    k: FloatArray,
    v: FloatArray,
    kind: AttentionKind,
    positions: IntArray,
    key_positions: Optional[IntArray] = None,
) -> FloatArray:
    """
    Causal scaled-dot-product attention with grouped-query heads.

    Args:
        q: queries, shape (n_heads, n_queries, head_dim), already QK-normalised
        k: keys, shape (n_kv_heads, n_keys, head_dim), already QK-normalised
        v: values, same shape as ``k``
        kind: FULL or SWA; skip layers never reach attention
        positions: absolute token index of each query, strictly increasing
        key_positions: absolute token index of each key slot (-1 marks an empty
            slot); defaults to ``positions`` for self-attention over the same tokens

    Returns:
        Attention output of shape (n_heads, n_queries, head_dim)
    """
    if kind.tag is AttentionTag.SKIP:
        raise AttentionShapeError("skip layers bypass attention entirely")
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise AttentionShapeError("q, k and v must be head-major 3-D tensors")
    if k.shape != v.shape:
        raise AttentionShapeError(f"key shape {k.shape} != value shape {v.shape}")
    n_heads, n_queries, head_dim = q.shape
    n_kv_heads, n_keys, _ = k.shape
    if k.shape[2] != head_dim:
        raise AttentionShapeError(f"head_dim mismatch: {head_dim} vs {k.shape[2]}")
    if n_heads % n_kv_heads != 0:
        raise AttentionShapeError(f"{n_kv_heads} kv heads do not divide {n_heads} query heads")

    q_pos = np.asarray(positions, dtype=np.int64)
    k_pos = q_pos if key_positions is None else np.asarray(key_positions, dtype=np.int64)
    if q_pos.shape != (n_queries,):
        raise AttentionShapeError(f"{q_pos.shape[0]} positions for {n_queries} queries")
    if k_pos.shape != (n_keys,):
        raise AttentionShapeError(f"{k_pos.shape[0]} key positions for {n_keys} keys")
    if n_queries > 1 and np.any(np.diff(q_pos) <= 0):
        raise AttentionPositionError("query positions must be strictly increasing")

    mask = (k_pos[None, :] <= q_pos[:, None]) & (k_pos[None, :] >= 0)
    if kind.tag is AttentionTag.SWA:
        assert kind.window is not None
        mask &= (q_pos[:, None] - k_pos[None, :]) < kind.window
    if not np.all(mask.any(axis=1)):
        raise AttentionPositionError("a query has no visible key")

    group = n_heads // n_kv_heads
    qg = q.reshape(n_kv_heads, group, n_queries, head_dim)
    scale = np.float32(1.0 / np.sqrt(head_dim))
    scores = np.matmul(qg, k.transpose(0, 2, 1)[:, None, :, :]) * scale
    scores = np.where(mask, scores, np.float32(-np.inf))
    scores = scores - scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    out = np.matmul(probs, v[:, None, :, :])
    return out.reshape(n_heads, n_queries, head_dim).astype(np.float32, copy=False)


# ---------- KV cache ----------


@dataclass
class LayerCache:
    """Key/value storage for one layer: linear for FULL, ring buffer for SWA, empty for SKIP."""

    kind: AttentionKind
    keys: Optional[FloatArray] = None
    values: Optional[FloatArray] = None
    positions: Optional[IntArray] = None
    cursor: int = 0

    @property
    def capacity(self) -> int:
        return 0 if self.positions is None else int(self.positions.shape[0])

    @property
    def occupancy(self) -> int:
        """Number of valid entries currently stored."""
        if self.positions is None:
            return 0
        return int(np.count_nonzero(self.positions >= 0))


@dataclass
class KVCache:
    """Per-layer KV buffers plus the number of tokens processed so far."""

    config: ModelConfig
    layers: List[LayerCache] = field(default_factory=list)
    length: int = 0

    @classmethod
    def allocate(cls, config: ModelConfig) -> "KVCache":
        layers: List[LayerCache] = []
        for kind in config.attn_pattern:
            if kind.tag is AttentionTag.SKIP:
                layers.append(LayerCache(kind))
                continue
            capacity = config.max_context if kind.tag is AttentionTag.FULL else kind.window
            assert capacity is not None
            shape = (config.n_kv_heads, capacity, config.head_dim)
            layers.append(
                LayerCache(
                    kind,
                    keys=np.zeros(shape, dtype=np.float32),
                    values=np.zeros(shape, dtype=np.float32),
                    positions=np.full(capacity, -1, dtype=np.int64),
                )
            )
        return cls(config, layers)


def _full_attention(
    cache: LayerCache, q: FloatArray, k: FloatArray, v: FloatArray, positions: IntArray
) -> FloatArray:
    assert cache.keys is not None and cache.values is not None and cache.positions is not None
    start, end = int(positions[0]), int(positions[-1]) + 1
    if end > cache.capacity:
        raise PrefillError(f"context {end} exceeds max_context {cache.capacity}")
    cache.keys[:, start:end] = k
    cache.values[:, start:end] = v
    cache.positions[start:end] = positions
    cache.cursor = end

    out = np.empty_like(q)
    n_queries = q.shape[1]
    for s in range(0, n_queries, FULL_ATTENTION_BLOCK):
        e = min(n_queries, s + FULL_ATTENTION_BLOCK)
        key_end = start + e
        out[:, s:e] = attend(
            q[:, s:e],
            cache.keys[:, :key_end],
            cache.values[:, :key_end],
            cache.kind,
            positions[s:e],
            cache.positions[:key_end],
        )
    return out


def _ring_attention(
    cache: LayerCache, q: FloatArray, k: FloatArray, v: FloatArray, positions: IntArray
) -> FloatArray:
    # The chunk attends to the whole ring plus itself as one dense rectangle.
    assert cache.keys is not None and cache.values is not None and cache.positions is not None
    keys = np.concatenate([cache.keys, k], axis=1)
    values = np.concatenate([cache.values, v], axis=1)
    key_positions = np.concatenate([cache.positions, positions])
    out = attend(q, keys, values, cache.kind, positions, key_positions)

    slots = positions % cache.capacity
    cache.keys[:, slots] = k
    cache.values[:, slots] = v
    cache.positions[slots] = positions
    cache.cursor = int(positions[-1]) + 1
    return out


def _attention_block(
    model: ModelBundle, cache: LayerCache, layer: int, x: FloatArray, positions: IntArray
) -> FloatArray:
    cfg = model.config
    w = model.weights
    prefix = f"layer.{layer}"
    n_tokens = x.shape[0]
    h = rms_norm(x, w[f"{prefix}.attn_norm"], cfg.norm_eps)
    q = (h @ w[f"{prefix}.attn.wq"]).reshape(n_tokens, cfg.n_heads, cfg.head_dim)
    k = (h @ w[f"{prefix}.attn.wk"]).reshape(n_tokens, cfg.n_kv_heads, cfg.head_dim)
    v = (h @ w[f"{prefix}.attn.wv"]).reshape(n_tokens, cfg.n_kv_heads, cfg.head_dim)
    q = rms_norm(q.transpose(1, 0, 2), w[f"{prefix}.attn.q_norm"], cfg.norm_eps)
    k = rms_norm(k.transpose(1, 0, 2), w[f"{prefix}.attn.k_norm"], cfg.norm_eps)
    v = np.ascontiguousarray(v.transpose(1, 0, 2))
    q = apply_rope(q, positions, cfg.rope_base)
    k = apply_rope(k, positions, cfg.rope_base)

    if cache.kind.tag is AttentionTag.FULL:
        out = _full_attention(cache, q, k, v, positions)
    else:
        out = _ring_attention(cache, q, k, v, positions)
    merged = out.transpose(1, 0, 2).reshape(n_tokens, cfg.attn_width)
    return (merged @ w[f"{prefix}.attn.wo"]).astype(np.float32, copy=False)


def _forward_chunk(
    model: ModelBundle,
    cache: KVCache,
    tokens: IntArray,
    observer: Optional[LayerObserver] = None,
) -> FloatArray:
    """Run one chunk through every layer, updating ``cache``; returns the residual stream."""
    cfg = model.config
    w = model.weights
    positions = np.arange(cache.length, cache.length + tokens.shape[0], dtype=np.int64)
    x = w["tok_embeddings"][tokens].astype(np.float32)
    for i, kind in enumerate(cfg.attn_pattern):
        residual_in = x
        if kind.tag is not AttentionTag.SKIP:
            x = x + _attention_block(model, cache.layers[i], i, x, positions)
        h = rms_norm(x, w[f"layer.{i}.ffn_norm"], cfg.norm_eps)
        hidden = silu(h @ w[f"layer.{i}.ffn.w_gate"]) * (h @ w[f"layer.{i}.ffn.w_up"])
        x = (x + hidden @ w[f"layer.{i}.ffn.w_down"]).astype(np.float32, copy=False)
        if observer is not None:
            observer(i, residual_in, hidden, x)
    cache.length += int(tokens.shape[0])
    return x


def _logits(model: ModelBundle, hidden: FloatArray) -> FloatArray:
    h = rms_norm(hidden, model.weights["final_norm"], model.config.norm_eps)
    return (h @ model.output_matrix).astype(np.float32, copy=False)


def _as_tokens(model: ModelBundle, tokens: TokenInput) -> IntArray:
    arr = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if arr.size == 0:
        raise PrefillError("token list is empty")
    if arr.min() < 0 or arr.max() >= model.config.vocab_size:
        raise PrefillError(f"token ids must lie in [0, {model.config.vocab_size})")
    return arr


def check_chunking(config: ModelConfig, chunk_size: int, n_tokens: int) -> int:
    """Validate the chunk size against SWA windows; returns the effective chunk size."""
    if chunk_size < 1:
        raise PrefillError("chunk_size must be >= 1")
    effective = min(chunk_size, n_tokens)
    for i, kind in enumerate(config.attn_pattern):
        if kind.tag is AttentionTag.SWA and kind.window is not None and kind.window < effective:
            raise PrefillError(
                f"layer {i}: SWA window {kind.window} is smaller than chunk size {effective}"
            )
    return effective


def prefill(
    model: ModelBundle,
    tokens: TokenInput,
    chunk_size: int,
    observer: Optional[LayerObserver] = None,
) -> Tuple[FloatArray, KVCache]:
    """
    Process a prompt in consecutive chunks.

    Args:
        model: model to run
        tokens: prompt token ids
        chunk_size: tokens per chunk; every SWA window must be at least this large
        observer: optional per-layer activation hook

    Returns:
        Tuple of (logits at the last position, populated KV cache)
    """
    ids = _as_tokens(model, tokens)
    chunk = check_chunking(model.config, chunk_size, ids.shape[0])
    cache = KVCache.allocate(model.config)
    hidden = None
    for start in range(0, ids.shape[0], chunk):
        hidden = _forward_chunk(model, cache, ids[start : start + chunk], observer)
    assert hidden is not None
    return _logits(model, hidden[-1:])[0], cache


def decode_step(model: ModelBundle, cache: KVCache, token: int) -> FloatArray:
    """Advance the cache by one token and return the next-token logits."""
    if cache.config != model.config:
        raise CacheMismatchError("KV cache was built for a different model configuration")
    ids = _as_tokens(model, [token])
    hidden = _forward_chunk(model, cache, ids)
    return _logits(model, hidden)[0]


def forward_logits(
    model: ModelBundle, tokens: TokenInput, chunk_size: Optional[int] = None
) -> FloatArray:
    """
    Logits at every position of ``tokens``, shape (n_tokens, vocab_size).

    Without an explicit ``chunk_size`` the prompt is processed in chunks of the
    smallest SWA window (or in one chunk if the model has no SWA layer).
    """
    ids = _as_tokens(model, tokens)
    if chunk_size is None:
        windows = [k.window for k in model.config.attn_pattern if k.window is not None]
        chunk_size = min(windows + [int(ids.shape[0])])
    chunk = check_chunking(model.config, chunk_size, ids.shape[0])
    cache = KVCache.allocate(model.config)
    hidden = [_forward_chunk(model, cache, ids[s : s + chunk]) for s in range(0, ids.size, chunk)]
    return _logits(model, np.concatenate(hidden, axis=0))
