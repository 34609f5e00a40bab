#!/usr/bin/env python3
"""Generate a self-contained demo workspace: a synthetic clip, a distorted
companion, precomputed feature tensors and a hand-shaped importance map.

Usage: python scripts/make_demo_assets.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from roikit import gridmap, media  # noqa: E402
from roikit.media import Frame, VideoSequence  # noqa: E402


def moving_square_clip(h=96, w=160, n=12, fps=25.0):
    frames = []
    rng = np.random.default_rng(42)
    texture = rng.integers(0, 80, (h, w), dtype=np.uint8)
    for i in range(n):
        y = texture.copy()
        yy, xx = np.mgrid[0:h, 0:w]
        y = (y + (xx + yy) // 4).astype(np.uint8)
        cx = 20 + i * (w - 60) // max(1, n - 1)
        y[28:60, cx : cx + 28] = 220
        gray = np.full(((h + 1) // 2, (w + 1) // 2), 128, np.uint8)
        frames.append(Frame(y=y, u=gray.copy(), v=gray.copy()))
    return VideoSequence(tuple(frames), fps)


def quantize_luma(video, step=24):
    frames = []
    for f in video.frames:
        y = ((f.y.astype(np.int32) // step) * step + step // 2).clip(0, 255)
        frames.append(Frame(y=y.astype(np.uint8), u=f.u.copy(), v=f.v.copy()))
    return VideoSequence(tuple(frames), video.fps)


def main(out_dir="demo"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    video = moving_square_clip()
    with open(out / "original.y4m", "wb") as f:
        media.save_y4m(video, f)
    with open(out / "encoded.y4m", "wb") as f:
        media.save_y4m(quantize_luma(video), f)

    rows, cols = gridmap.grid_shape(video.width, video.height)
    rng = np.random.default_rng(7)
    for family, channels in (("saliency", 1), ("segmentation", 21), ("embeddings", 25)):
        fam_dir = out / family
        fam_dir.mkdir(exist_ok=True)
        for i, frame in enumerate(video.frames):
            if family == "saliency":
                t = (gridmap.pool_mean(frame.y.astype(np.float64), video.width, video.height) / 255.0)[
                    :, :, None
                ]
            elif family == "segmentation":
                labels = (
                    gridmap.pool_mean(frame.y.astype(np.float64), video.width, video.height) > 128
                ).astype(int) * 15
                t = np.zeros((rows, cols, channels))
                t[np.arange(rows)[:, None], np.arange(cols)[None, :], labels] = 1.0
            else:
                t = rng.normal(size=(rows, cols, channels))
            with open(fam_dir / f"{i:05d}.ft01", "wb") as f:
                media.write_ft(t.astype(np.float32), f)

    # an annotator-style map: bright square painted important
    mh, mw = round(video.height * 0.6), round(video.width * 0.6)
    m = np.zeros((mh, mw), np.uint8)
    m[18:36, 12 : mw - 12] = 128
    m[22:32, 30:60] = 255
    with open(out / "painted.pgm", "wb") as f:
        media.save_pgm(m, f)
    print(f"demo assets written to {out}/ "
          f"({len(video)} frames {video.width}x{video.height}, grid {rows}x{cols})")


if __name__ == "__main__":
    main(*sys.argv[1:])
