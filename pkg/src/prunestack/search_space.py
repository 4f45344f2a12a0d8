"""
Search space encoding: search points, Sobol sampling, decoding, feasibility
and GP features.

A search point is expressed in full-scale units (layers 10-16, FFN width
2048-8192 in steps of 256, model width 1024-2048 in steps of 128, one
attention kind per layer). Concrete desk-size models divide the widths by a
``width_divisor``.

Text encoding used for flags and logs::

    L13-F6144-M1280-P=F.S.K.F.F.S.F.F.K.F.F.F.F

``F`` = full attention, ``S`` = sliding window, ``K`` = skip.

GP feature layout (FEATURE_VERSION 1), all scaled to [0, 1]:

    0  d_L        (d_L - min) / (max - min)
    1  d_ffn      (d_ffn - min) / (max - min)
    2  d_model    (d_model - min) / (max - min)
    3  full layer count / max_layers
    4  SWA layer count / max_layers
    5  skip layer count / max_layers
    6  adjacent efficient-efficient pairs / (max_layers - 1)
    7  index of first full layer / (max_layers - 1), 1.0 if none
    8  index of last full layer / (max_layers - 1), 1.0 if none
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from scipy.stats import qmc

from .model_core import AttentionKind, AttentionTag, ModelConfig

FEATURE_VERSION = 1
FEATURE_NAMES = (
    "d_l",
    "d_ffn",
    "d_model",
    "frac_full",
    "frac_swa",
    "frac_skip",
    "efficient_adjacency",
    "first_full",
    "last_full",
)

KIND_ORDER: Tuple[AttentionTag, ...] = (AttentionTag.FULL, AttentionTag.SWA, AttentionTag.SKIP)
DEFAULT_MAX_CONSECUTIVE = 2

_ENCODING = re.compile(r"^L(\d+)-F(\d+)-M(\d+)-P=([FSK](?:\.[FSK])*)$")


class SearchSpaceError(Exception):
    """Raised for malformed search points, encodings or unit vectors."""

    pass


class InfeasiblePointError(Exception):
    """Raised when a point violates the consecutive-efficient-attention constraint."""

    pass


@dataclass(frozen=True)
class SearchSpace:
    """Discrete choice lists for every search dimension."""

    layer_choices: Tuple[int, ...] = tuple(range(10, 17))
    ffn_choices: Tuple[int, ...] = tuple(range(2048, 8193, 256))
    model_choices: Tuple[int, ...] = tuple(range(1024, 2049, 128))
    kind_choices: Tuple[AttentionTag, ...] = KIND_ORDER

    def __post_init__(self) -> None:
        for name in ("layer_choices", "ffn_choices", "model_choices", "kind_choices"):
            values = getattr(self, name)
            if len(values) == 0:
                raise SearchSpaceError(f"{name} is empty")
            object.__setattr__(self, name, tuple(values))
        if min(self.layer_choices) < 1:
            raise SearchSpaceError("layer choices must be positive")

    @property
    def max_layers(self) -> int:
        return max(self.layer_choices)

    @property
    def dims(self) -> int:
        """Unit-cube dimensionality: three size coordinates plus one per layer slot."""
        return 3 + self.max_layers

    def contains(self, point: "SearchPoint") -> bool:
        return (
            point.d_l in self.layer_choices
            and point.d_ffn in self.ffn_choices
            and point.d_model in self.model_choices
            and all(tag in self.kind_choices for tag in point.attn_pattern)
        )


DEFAULT_SPACE = SearchSpace()


@dataclass(frozen=True)
class SearchPoint:
    """One architecture in the search space."""

    d_l: int
    d_ffn: int
    d_model: int
    attn_pattern: Tuple[AttentionTag, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "attn_pattern", tuple(AttentionTag(tag) for tag in self.attn_pattern)
        )
        if len(self.attn_pattern) != self.d_l:
            raise SearchSpaceError(
                f"attention pattern has {len(self.attn_pattern)} entries for d_L={self.d_l}"
            )

    @property
    def n_full(self) -> int:
        return sum(1 for tag in self.attn_pattern if tag is AttentionTag.FULL)

    @property
    def n_swa(self) -> int:
        return sum(1 for tag in self.attn_pattern if tag is AttentionTag.SWA)

    @property
    def n_skip(self) -> int:
        return sum(1 for tag in self.attn_pattern if tag is AttentionTag.SKIP)

    def encode(self) -> str:
        pattern = ".".join(tag.value for tag in self.attn_pattern)
        return f"L{self.d_l}-F{self.d_ffn}-M{self.d_model}-P={pattern}"

    def __str__(self) -> str:
        return self.encode()


def encode_point(point: SearchPoint) -> str:
    return point.encode()


def parse_point(text: str) -> SearchPoint:
    """Parse the ``L13-F6144-M1280-P=F.S.K...`` encoding."""
    match = _ENCODING.match(text.strip())
    if match is None:
        raise SearchSpaceError(f"Cannot parse search point: {text!r}")
    d_l, d_ffn, d_model, pattern = match.groups()
    return SearchPoint(
        int(d_l), int(d_ffn), int(d_model), tuple(AttentionTag(c) for c in pattern.split("."))
    )


# ---------- Sampling and decoding ----------


def sobol_engine(dims: int, seed: Optional[int] = None) -> qmc.Sobol:
    """
    Sobol engine positioned at the first point to emit.

    Without a seed the sequence is unscrambled and starts at index 1, i.e.
    ``(0.5, 0.5, ...)``; the origin is skipped. With a seed the sequence is
    Owen-scrambled and starts at index 0.
    """
    if dims < 1:
        raise SearchSpaceError("Sobol dimension must be >= 1")
    if dims > qmc.Sobol.MAXDIM:
        raise SearchSpaceError(f"Sobol supports at most {qmc.Sobol.MAXDIM} dimensions")
    if seed is None:
        engine = qmc.Sobol(d=dims, scramble=False)
        engine.fast_forward(1)
    else:
        engine = qmc.Sobol(d=dims, scramble=True, rng=np.random.default_rng(seed))
    return engine


def _draw(engine: qmc.Sobol, n: int) -> npt.NDArray[np.float64]:
    with warnings.catch_warnings():
        # balance warnings for non-power-of-two draws
        warnings.simplefilter("ignore", UserWarning)
        return engine.random(n)


def sobol(n: int, dims: int, seed: Optional[int] = None) -> npt.NDArray[np.float64]:
    """Return ``n`` Sobol points in [0, 1)^dims."""
    if n < 0:
        raise SearchSpaceError("n must be >= 0")
    if n == 0:
        return np.zeros((0, dims))
    return _draw(sobol_engine(dims, seed), n)


def _bin(u: float, choices: Sequence[object]) -> int:
    n = len(choices)
    return min(int(np.floor(u * n)), n - 1)


def decode_point(u: npt.ArrayLike, space: SearchSpace = DEFAULT_SPACE) -> SearchPoint:
    """Map a unit vector to a search point by equal-width binning of each coordinate."""
    coords = np.clip(np.asarray(u, dtype=np.float64).reshape(-1), 0.0, np.nextafter(1.0, 0.0))
    if coords.shape[0] < space.dims:
        raise SearchSpaceError(f"unit vector has {coords.shape[0]} coords, need {space.dims}")
    d_l = space.layer_choices[_bin(coords[0], space.layer_choices)]
    d_ffn = space.ffn_choices[_bin(coords[1], space.ffn_choices)]
    d_model = space.model_choices[_bin(coords[2], space.model_choices)]
    pattern = tuple(space.kind_choices[_bin(c, space.kind_choices)] for c in coords[3 : 3 + d_l])
    return SearchPoint(d_l, d_ffn, d_model, pattern)


# ---------- Feasibility ----------


def longest_efficient_run(pattern: Sequence[AttentionTag]) -> int:
    longest = current = 0
    for tag in pattern:
        current = current + 1 if AttentionTag(tag).is_efficient else 0
        longest = max(longest, current)
    return longest


def is_feasible(point: SearchPoint, max_consecutive: int = DEFAULT_MAX_CONSECUTIVE) -> bool:
    """False iff more than ``max_consecutive`` consecutive layers are SWA or skip."""
    return longest_efficient_run(point.attn_pattern) <= max_consecutive


def repair_pattern(
    pattern: Sequence[AttentionTag], max_consecutive: int = DEFAULT_MAX_CONSECUTIVE
) -> Tuple[AttentionTag, ...]:
    """Turn the layer that would extend an over-long efficient run into full attention."""
    repaired: List[AttentionTag] = []
    run = 0
    for tag in pattern:
        tag = AttentionTag(tag)
        if tag.is_efficient and run >= max_consecutive:
            tag = AttentionTag.FULL
        run = run + 1 if tag.is_efficient else 0
        repaired.append(tag)
    return tuple(repaired)


def feasible_sobol_points(
    space: SearchSpace = DEFAULT_SPACE,
    seed: Optional[int] = None,
    max_consecutive: int = DEFAULT_MAX_CONSECUTIVE,
    unique: bool = True,
    batch: int = 256,
) -> Iterator[SearchPoint]:
    """
    Endless stream of feasible points decoded from one Sobol sequence.

    Infeasible decodes are skipped (the next Sobol point is used instead), as
    are repeats when ``unique`` is set. The stream is deterministic per seed.
    """
    engine = sobol_engine(space.dims, seed)
    seen = set()
    while True:
        for u in _draw(engine, batch):
            point = decode_point(u, space)
            if not is_feasible(point, max_consecutive):
                continue
            if unique:
                key = point.encode()
                if key in seen:
                    continue
                seen.add(key)
            yield point


# ---------- Features ----------


def featurize(point: SearchPoint, space: SearchSpace = DEFAULT_SPACE) -> npt.NDArray[np.float64]:
    """Fixed-length GP feature vector; see FEATURE_NAMES."""

    def scaled(value: int, choices: Sequence[int]) -> float:
        lo, hi = min(choices), max(choices)
        return 0.0 if hi == lo else (value - lo) / (hi - lo)

    slots = max(space.max_layers, point.d_l)
    span = max(slots - 1, 1)
    pattern = point.attn_pattern
    adjacency = sum(
        1 for a, b in zip(pattern, pattern[1:]) if a.is_efficient and b.is_efficient
    )
    full_idx = [i for i, tag in enumerate(pattern) if tag is AttentionTag.FULL]
    first_full = full_idx[0] / span if full_idx else 1.0
    last_full = full_idx[-1] / span if full_idx else 1.0
    return np.array(
        [
            scaled(point.d_l, space.layer_choices),
            scaled(point.d_ffn, space.ffn_choices),
            scaled(point.d_model, space.model_choices),
            point.n_full / slots,
            point.n_swa / slots,
            point.n_skip / slots,
            adjacency / span,
            first_full,
            last_full,
        ],
        dtype=np.float64,
    )


def featurize_all(
    points: Sequence[SearchPoint], space: SearchSpace = DEFAULT_SPACE
) -> npt.NDArray[np.float64]:
    if not points:
        return np.zeros((0, len(FEATURE_NAMES)))
    return np.vstack([featurize(p, space) for p in points])


# ---------- Neighbourhood moves ----------


def _step(value: int, choices: Sequence[int], rng: np.random.Generator) -> int:
    idx = list(choices).index(value) if value in choices else 0
    idx = int(np.clip(idx + rng.choice([-2, -1, 1, 2]), 0, len(choices) - 1))
    return int(choices[idx])


def perturb_point(
    point: SearchPoint,
    rng: np.random.Generator,
    space: SearchSpace = DEFAULT_SPACE,
    max_consecutive: int = DEFAULT_MAX_CONSECUTIVE,
) -> SearchPoint:
    """
    Random neighbour of ``point`` that is always feasible.

    One move is drawn: change depth by one layer, step the FFN or model width
    by one or two choices, or change the attention kind of one or two layers.
    Runs of efficient layers that become too long are repaired to full
    attention.
    """
    d_l, d_ffn, d_model = point.d_l, point.d_ffn, point.d_model
    pattern = list(point.attn_pattern)
    move = int(rng.integers(4))
    if move == 0:
        layers = list(space.layer_choices)
        idx = layers.index(d_l) if d_l in layers else 0
        new_idx = int(np.clip(idx + rng.choice([-1, 1]), 0, len(layers) - 1))
        target = layers[new_idx]
        while len(pattern) > target:
            pattern.pop(int(rng.integers(len(pattern))))
        while len(pattern) < target:
            pattern.insert(int(rng.integers(len(pattern) + 1)), AttentionTag.FULL)
        d_l = target
    elif move == 1:
        d_ffn = _step(d_ffn, space.ffn_choices, rng)
    elif move == 2:
        d_model = _step(d_model, space.model_choices, rng)
    else:
        for _ in range(int(rng.integers(1, 3))):
            i = int(rng.integers(len(pattern)))
            options = [k for k in space.kind_choices if k is not pattern[i]]
            if len(options) > 1:
                pattern[i] = options[int(rng.integers(len(options)))]
            elif options:
                pattern[i] = options[0]
    return SearchPoint(d_l, d_ffn, d_model, repair_pattern(pattern, max_consecutive))


# ---------- Concrete models ----------


def scaled_base_config(
    width_divisor: int = 8,
    vocab_size: int = 256,
    max_context: int = 8192,
    space: SearchSpace = DEFAULT_SPACE,
) -> ModelConfig:
    """All-full base config at the maxima of ``space``, widths divided by ``width_divisor``."""
    if width_divisor < 1 or 128 % width_divisor != 0:
        raise SearchSpaceError(f"width_divisor must divide 128, got {width_divisor}")
    n_layers = space.max_layers
    return ModelConfig(
        n_layers=n_layers,
        d_model=max(space.model_choices) // width_divisor,
        d_ffn=max(space.ffn_choices) // width_divisor,
        n_heads=max(1, 32 // width_divisor),
        n_kv_heads=max(1, 8 // width_divisor),
        head_dim=64,
        vocab_size=vocab_size,
        attn_pattern=tuple(AttentionKind.full() for _ in range(n_layers)),
        block_unit=128 // width_divisor,
        max_context=max_context,
    )


def pattern_kinds(
    pattern: Sequence[AttentionTag], swa_window: int
) -> Tuple[AttentionKind, ...]:
    kinds = []
    for tag in pattern:
        if tag is AttentionTag.SWA:
            kinds.append(AttentionKind.swa(swa_window))
        elif tag is AttentionTag.SKIP:
            kinds.append(AttentionKind.skip())
        else:
            kinds.append(AttentionKind.full())
    return tuple(kinds)


def config_for_point(
    point: SearchPoint, template: ModelConfig, width_divisor: int = 1, swa_window: int = 1024
) -> ModelConfig:
    """Concrete model config of ``point`` sharing heads, vocab and norms with ``template``."""
    if point.d_ffn % width_divisor or point.d_model % width_divisor:
        raise SearchSpaceError(f"width_divisor {width_divisor} does not divide {point}")
    config = ModelConfig(
        n_layers=point.d_l,
        d_model=point.d_model // width_divisor,
        d_ffn=point.d_ffn // width_divisor,
        n_heads=template.n_heads,
        n_kv_heads=template.n_kv_heads,
        head_dim=template.head_dim,
        vocab_size=template.vocab_size,
        attn_pattern=pattern_kinds(point.attn_pattern, swa_window),
        block_unit=template.block_unit,
        norm_eps=template.norm_eps,
        tied_embeddings=template.tied_embeddings,
        rope_base=template.rope_base,
        max_context=template.max_context,
    )
    config.validate()
    return config
