"""
Two-objective Pareto primitives (both objectives minimised).

Points are (quality, latency) pairs: the first column is the loss proxy, the
second the TTFT in seconds.
"""

from typing import Sequence, Tuple

import numpy as np
import numpy.typing as npt

Array = npt.NDArray[np.float64]


def _as_points(points: npt.ArrayLike) -> Array:
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 2))
    arr = arr.reshape(-1, 2)
    return arr


def pareto_mask(points: npt.ArrayLike) -> npt.NDArray[np.bool_]:
    """
    Boolean mask of non-dominated points.

    A point is dominated when another is no worse in both objectives and
    strictly better in one; exact duplicates do not dominate each other.
    """
    arr = _as_points(points)
    n = arr.shape[0]
    mask = np.zeros(n, dtype=bool)
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    best_latency = np.inf  # over points with strictly smaller quality
    i = 0
    while i < n:
        j = i
        quality = arr[order[i], 0]
        while j < n and arr[order[j], 0] == quality:
            j += 1
        group = order[i:j]
        group_min = arr[group[0], 1]
        for idx in group:
            latency = arr[idx, 1]
            mask[idx] = latency < best_latency and latency == group_min
        best_latency = min(best_latency, group_min)
        i = j
    return mask


def pareto_indices(points: npt.ArrayLike) -> npt.NDArray[np.int64]:
    """Indices of the non-dominated points, ordered by latency (ties by original index)."""
    arr = _as_points(points)
    idx = np.flatnonzero(pareto_mask(arr))
    return idx[np.argsort(arr[idx, 1], kind="stable")]


def pareto_front(points: npt.ArrayLike) -> Array:
    """Non-dominated subset of ``points``, ordered by latency."""
    arr = _as_points(points)
    return arr[pareto_indices(arr)]


def _staircase(front: npt.ArrayLike, ref: Tuple[float, float]) -> Array:
    """Non-dominated points strictly inside the reference box, sorted by quality."""
    arr = _as_points(front)
    inside = arr[(arr[:, 0] < ref[0]) & (arr[:, 1] < ref[1])]
    if inside.shape[0] == 0:
        return inside
    nd = pareto_front(inside)
    nd = np.unique(nd, axis=0)
    return nd[np.argsort(nd[:, 0], kind="stable")]


def hypervolume_2d(front: npt.ArrayLike, ref: Sequence[float]) -> float:
    """
    Exact dominated area between ``front`` and the reference point.

    Points outside the reference box are ignored. Sweep over the first
    objective, adding one horizontal slab per staircase step.
    """
    r = (float(ref[0]), float(ref[1]))
    stairs = _staircase(front, r)
    volume = 0.0
    level = r[1]
    for x, y in stairs:
        if y < level:
            volume += (r[0] - x) * (level - y)
            level = y
    return float(volume)


def hypervolume_improvement(
    front: npt.ArrayLike, ref: Sequence[float], candidates: npt.ArrayLike
) -> Array:
    """
    Exclusive hypervolume gain of adding each candidate on its own to ``front``.

    Uses the staircase height h(x) of the current front: the gain of a point
    (px, py) is the integral over x in [px, ref_x] of max(h(x) - py, 0).

    Args:
        front: current points, shape (m, 2)
        ref: reference point
        candidates: shape (c, 2)

    Returns:
        Gains, shape (c,)
    """
    r = (float(ref[0]), float(ref[1]))
    cand = _as_points(candidates)
    stairs = _staircase(front, r)
    # Segment k spans [left_k, right_k) with height heights_k.
    left = np.concatenate([[-np.inf], stairs[:, 0]])
    right = np.concatenate([stairs[:, 0], [r[0]]])
    heights = np.concatenate([[r[1]], stairs[:, 1]])

    px = cand[:, 0:1]
    py = cand[:, 1:2]
    widths = np.clip(right[None, :] - np.maximum(left[None, :], px), 0.0, None)
    gains = np.clip(heights[None, :] - py, 0.0, None)
    return (widths * gains).sum(axis=1)
