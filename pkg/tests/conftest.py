import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from roikit.media import CHROMA_420, Frame, VideoSequence  # noqa: E402


def make_frame(y: np.ndarray, subsampling: str = CHROMA_420) -> Frame:
    """Frame with the given luma and mid-gray chroma."""
    y = np.asarray(y, np.uint8)
    h, w = y.shape
    if subsampling == CHROMA_420:
        ch, cw = (h + 1) // 2, (w + 1) // 2
    else:
        ch, cw = h, w
    gray = np.full((ch, cw), 128, np.uint8)
    return Frame(y=y.copy(), u=gray.copy(), v=gray.copy(), subsampling=subsampling)


def make_video(lumas, fps: float = 25.0) -> VideoSequence:
    return VideoSequence(tuple(make_frame(y) for y in lumas), fps)


def random_frame(rng: np.random.Generator, h: int, w: int) -> Frame:
    return make_frame(rng.integers(0, 256, (h, w), dtype=np.uint8))


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
