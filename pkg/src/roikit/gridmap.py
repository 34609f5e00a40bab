"""Macroblock-grid views of dense importance maps.

A grid cell covers a 16x16 pixel macroblock of the target video; a video of
height H and width W yields ceil(H/16) x ceil(W/16) cells (29 x 50 for
450x800). Grids are plain 2-D ndarrays throughout the package.

Real-to-8-bit conversions everywhere in this package round half away from
zero; `round_half_from_zero` is the single implementation of that rule.
"""

from __future__ import annotations

import math

import numpy as np

MB_SIZE = 16

#: class centers for the three importance levels
CLASS_IMPORTANCE = np.array([0, 128, 255], dtype=np.uint8)

# nearest-center boundaries between {0, 128, 255}, ties resolved upward
_CLASS_EDGE_LOW = 64.0
_CLASS_EDGE_HIGH = 191.5


def round_half_from_zero(x: np.ndarray) -> np.ndarray:
    """Round to the nearest integer with halves going away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


def grid_shape(video_width: int, video_height: int) -> tuple[int, int]:
    """(rows, cols) of the macroblock grid for a video of the given size."""
    if video_width <= 0 or video_height <= 0:
        raise ValueError("video dimensions must be positive")
    return (math.ceil(video_height / MB_SIZE), math.ceil(video_width / MB_SIZE))


def _axis_weights(n_cells: int, video_len: int, map_len: int) -> np.ndarray:
    """(n_cells, map_len) overlap lengths between cell spans and map pixels.

    Cell r spans video pixels [16r, min(16(r+1), video_len)), scaled into map
    coordinates; entry (r, i) is the length of its overlap with map pixel
    [i, i+1). Boundary cells keep their actual (shorter) extent.
    """
    scale = map_len / video_len
    edges = np.minimum(np.arange(n_cells + 1) * MB_SIZE, video_len) * scale
    px = np.arange(map_len, dtype=np.float64)
    lo = np.maximum(edges[:-1, None], px[None, :])
    hi = np.minimum(edges[1:, None], px[None, :] + 1.0)
    return np.clip(hi - lo, 0.0, None)


def pool_mean(dense: np.ndarray, video_width: int, video_height: int) -> np.ndarray:
    """Area-weighted mean of a dense 2-D map over each macroblock's footprint.

    The map may be at any resolution proportional to the video (e.g. 270x480
    for a 450x800 video, or the video resolution itself); each cell averages
    the map region its macroblock geometrically covers.
    """
    m = np.asarray(dense, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("map must be a nonempty 2-D array")
    rows, cols = grid_shape(video_width, video_height)
    wy = _axis_weights(rows, video_height, m.shape[0])
    wx = _axis_weights(cols, video_width, m.shape[1])
    total = wy @ m @ wx.T
    area = np.outer(wy.sum(axis=1), wx.sum(axis=1))
    return total / area


def pool_to_grid(map_values: np.ndarray, video_width: int, video_height: int) -> np.ndarray:
    """pool_mean for 0-255 importance maps, guarding the range against fp dust."""
    return np.clip(pool_mean(map_values, video_width, video_height), 0.0, 255.0)


def quantize_classes(grid: np.ndarray) -> np.ndarray:
    """Nearest-center class labels {0,1,2} for importance centers {0,128,255}."""
    g = np.asarray(grid, dtype=np.float64)
    if g.min() < 0 or g.max() > 255:
        raise ValueError("importance values must lie in [0, 255]")
    return np.where(g < _CLASS_EDGE_LOW, 0, np.where(g < _CLASS_EDGE_HIGH, 1, 2)).astype(
        np.uint8
    )


def classes_to_importance(class_grid: np.ndarray) -> np.ndarray:
    """Exact lookup class -> importance: {0: 0, 1: 128, 2: 255}."""
    cg = np.asarray(class_grid)
    if cg.min() < 0 or cg.max() > 2:
        raise ValueError("class labels must be 0, 1 or 2")
    return CLASS_IMPORTANCE[cg.astype(np.intp)]


def average_maps(maps: list[np.ndarray]) -> np.ndarray:
    """Per-pixel mean of several equally sized 8-bit maps, rounded to uint8."""
    if not maps:
        raise ValueError("need at least one map")
    first = np.asarray(maps[0])
    acc = np.zeros(first.shape, dtype=np.float64)
    for m in maps:
        m = np.asarray(m)
        if m.shape != first.shape:
            raise ValueError(f"dimension mismatch: {m.shape} vs {first.shape}")
        acc += m
    mean = acc / len(maps)
    return round_half_from_zero(mean).astype(np.uint8)
