"""Per-frame feature stacks feeding the importance model.

Internally computed features are the raw color channels, spatial/temporal
high-pass responses and block-matching motion vectors; saliency maps,
segmentation one-hots and backbone embeddings arrive precomputed as FT01
tensors. Everything is pooled to the macroblock grid and concatenated in a
fixed, versioned channel order (see CHANNEL_ORDER).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .gridmap import grid_shape, MB_SIZE, pool_mean
from .media import CHROMA_420, Frame

SEGMENTATION_CHANNELS = 21
DEFAULT_EMBED_CHANNELS = 25
DEFAULT_FLOW_RADIUS = 8

#: concatenation order of the feature families and their channel counts
#: (embeddings count is configured; None marks it)
CHANNEL_ORDER = (
    ("frame", 3),
    ("saliency", 1),
    ("segmentation", SEGMENTATION_CHANNELS),
    ("flow", 2),
    ("psnr", 1),
    ("ssim", 1),
    ("vif", 1),
    ("spatial_hp", 3),
    ("temporal_hp", 3),
    ("embeddings", None),
)


class MissingFeatureError(ValueError):
    """An enabled feature family has no data available."""


@dataclass(frozen=True)
class FeatureSelection:
    frame: bool = True
    saliency: bool = True
    segmentation: bool = True
    flow: bool = True
    quality_metrics: bool = True
    highpass: bool = True
    embeddings: bool = True

    def __post_init__(self):
        if not any(getattr(self, f.name) for f in fields(self)):
            raise ValueError("at least one feature family must be enabled")

    @classmethod
    def only(cls, *names: str) -> "FeatureSelection":
        return cls(**{f.name: f.name in names for f in fields(cls)})


@dataclass(frozen=True)
class FeatureStack:
    """A (rows, cols, C) tensor plus the named channel layout it was built with."""

    data: np.ndarray
    channels: tuple[tuple[str, int], ...]

    def __post_init__(self):
        counted = sum(n for _, n in self.channels)
        if self.data.ndim != 3 or self.data.shape[2] != counted:
            raise ValueError(
                f"stack shape {self.data.shape} inconsistent with channel list "
                f"({counted} channels)"
            )
        self.data.flags.writeable = False

    @property
    def channel_count(self) -> int:
        return self.data.shape[2]


def full_res_channels(frame: Frame) -> np.ndarray:
    """(H, W, 3) float64 color channels; 4:2:0 chroma upsampled nearest-neighbor."""
    h, w = frame.height, frame.width
    if frame.subsampling == CHROMA_420:
        u = frame.u.repeat(2, axis=0).repeat(2, axis=1)[:h, :w]
        v = frame.v.repeat(2, axis=0).repeat(2, axis=1)[:h, :w]
    else:
        u, v = frame.u, frame.v
    return np.stack([frame.y, u, v], axis=2).astype(np.float64)


def _neighbor_mean(plane: np.ndarray) -> np.ndarray:
    """Mean over the 8-neighborhood; border pixels use their existing neighbors."""
    h, w = plane.shape[:2]
    total = np.zeros_like(plane)
    count = np.zeros(plane.shape[:2])
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            ys = slice(max(0, dy), h + min(0, dy))
            yd = slice(max(0, -dy), h + min(0, -dy))
            xs = slice(max(0, dx), w + min(0, dx))
            xd = slice(max(0, -dx), w + min(0, -dx))
            total[yd, xd] += plane[ys, xs]
            count[yd, xd] += 1
    if plane.ndim == 3:
        count = count[:, :, None]
    return total / count


def spatial_highpass(frame: Frame) -> np.ndarray:
    """(H, W, 3) difference between each pixel and its 8-neighborhood mean."""
    chans = full_res_channels(frame)
    return chans - _neighbor_mean(chans)


def temporal_highpass(prev: Frame, cur: Frame, nxt: Frame) -> np.ndarray:
    """(H, W, 3) difference between a frame and the mean of its two neighbors.

    At sequence ends, pass the single existing neighbor as both prev and nxt.
    """
    for other in (prev, nxt):
        if (other.width, other.height) != (cur.width, cur.height):
            raise ValueError("dimension mismatch between frames")
    return full_res_channels(cur) - 0.5 * (
        full_res_channels(prev) + full_res_channels(nxt)
    )


def block_flow(prev: Frame, cur: Frame, radius: int = DEFAULT_FLOW_RADIUS) -> np.ndarray:
    """(rows, cols, 2) integer motion (dx, dy) per macroblock, exhaustive SAD.

    Each 16x16 luma block of `cur` is matched against `prev` displaced by
    minus the motion vector (content that moved right reports positive dx),
    over all integer displacements in [-radius, radius]^2 whose source
    footprint stays inside the frame; ties prefer the smallest |dx|+|dy|,
    then the smallest dy, then dx.
    """
    if (prev.width, prev.height) != (cur.width, cur.height):
        raise ValueError("dimension mismatch between frames")
    h, w = cur.height, cur.width
    rows, cols = grid_shape(w, h)
    cur_y = cur.y.astype(np.float64)
    padded = np.full((h + 2 * radius, w + 2 * radius), np.inf)
    padded[radius : radius + h, radius : radius + w] = prev.y

    rs = np.arange(0, h, MB_SIZE)
    cs = np.arange(0, w, MB_SIZE)
    best = np.full((rows, cols), np.inf)
    flow = np.zeros((rows, cols, 2), dtype=np.int32)
    candidates = sorted(
        ((dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)),
        key=lambda t: (abs(t[0]) + abs(t[1]), t[1], t[0]),
    )
    for dx, dy in candidates:
        shifted = padded[radius - dy : radius - dy + h, radius - dx : radius - dx + w]
        sad = np.add.reduceat(np.add.reduceat(np.abs(cur_y - shifted), rs, 0), cs, 1)
        better = sad < best
        best[better] = sad[better]
        flow[better] = (dx, dy)
    return flow


def to_grid_channel(dense: np.ndarray, video_width: int, video_height: int) -> np.ndarray:
    """Pool a dense (H, W) or (H, W, k) feature map to the macroblock grid."""
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim == 2:
        return pool_mean(dense, video_width, video_height)
    return np.stack(
        [pool_mean(dense[:, :, k], video_width, video_height) for k in range(dense.shape[2])],
        axis=2,
    )


def _as_grid(name, data, rows, cols, want_channels, video_width, video_height):
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"{name}: expected 2-D or 3-D array")
    if a.shape[2] != want_channels:
        raise ValueError(
            f"{name}: channel-count mismatch (got {a.shape[2]}, want {want_channels})"
        )
    if a.shape[:2] != (rows, cols):
        a = to_grid_channel(a, video_width, video_height)
    if not np.isfinite(a).all():
        raise ValueError(f"{name}: non-finite value")
    return a


def assemble(
    rows: int,
    cols: int,
    sel: FeatureSelection,
    *,
    frame=None,
    saliency=None,
    segmentation=None,
    flow=None,
    psnr=None,
    ssim=None,
    vif=None,
    spatial_hp=None,
    temporal_hp=None,
    embeddings=None,
    embed_channels: int = DEFAULT_EMBED_CHANNELS,
    video_width: int | None = None,
    video_height: int | None = None,
) -> FeatureStack:
    """Concatenate enabled feature families into one stack in CHANNEL_ORDER.

    Each input is either already at grid resolution (rows, cols[, k]) or a
    dense map to be pooled; pooling requires video_width/video_height.
    """
    video_width = video_width if video_width is not None else cols * MB_SIZE
    video_height = video_height if video_height is not None else rows * MB_SIZE
    provided = {
        "frame": frame,
        "saliency": saliency,
        "segmentation": segmentation,
        "flow": flow,
        "psnr": psnr,
        "ssim": ssim,
        "vif": vif,
        "spatial_hp": spatial_hp,
        "temporal_hp": temporal_hp,
        "embeddings": embeddings,
    }
    family_of = {
        "frame": "frame",
        "saliency": "saliency",
        "segmentation": "segmentation",
        "flow": "flow",
        "psnr": "quality_metrics",
        "ssim": "quality_metrics",
        "vif": "quality_metrics",
        "spatial_hp": "highpass",
        "temporal_hp": "highpass",
        "embeddings": "embeddings",
    }
    parts = []
    layout = []
    for name, count in CHANNEL_ORDER:
        if not getattr(sel, family_of[name]):
            continue
        if provided[name] is None:
            raise MissingFeatureError(f"missing required tensor: {name}")
        want = embed_channels if count is None else count
        grid = _as_grid(name, provided[name], rows, cols, want, video_width, video_height)
        parts.append(grid)
        layout.append((name, want))
    data = np.concatenate(parts, axis=2)
    return FeatureStack(data=data, channels=tuple(layout))
