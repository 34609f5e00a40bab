"""Bit-exact I/O for raw video and the sidecar formats used across the toolkit.

Formats handled here:

* YUV4MPEG2 (``.y4m``) -- 8-bit planar video, ``C420`` (default) or ``C444``.
* Binary PGM (``P5``, maxval 255) -- dense 0-255 importance maps.
* ``FT01`` -- little-endian float32 feature tensors, 16-byte header
  (magic ``FT01`` + rows/cols/channels as u32), payload row-major with the
  channel index fastest.
* ``DQP1`` -- per-macroblock signed QP offsets, 16-byte header (magic
  ``DQP1`` + frames/rows/cols as u32), int8 payload, every value in [-10, 10].

All loaders validate payload sizes before reading and never read past the
declared extent. Returned arrays are marked read-only so decoded data can be
shared freely across threads.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

CHROMA_420 = "420"
CHROMA_444 = "444"

DQP_MIN = -10
DQP_MAX = 10

_FT_MAGIC = b"FT01"
_DQP_MAGIC = b"DQP1"

# y4m C-tag spellings that share the 4:2:0 plane layout
_C420_TAGS = {"420", "420jpeg", "420mpeg2", "420paldv"}


class FormatError(ValueError):
    """Raised when a stream does not conform to one of the formats above."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _chroma_shape(width: int, height: int, subsampling: str) -> tuple[int, int]:
    if subsampling == CHROMA_420:
        return ((height + 1) // 2, (width + 1) // 2)
    return (height, width)


@dataclass(frozen=True)
class Frame:
    """One decoded frame: luma plane plus two chroma planes, all uint8."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    subsampling: str = CHROMA_420

    def __post_init__(self):
        if self.subsampling not in (CHROMA_420, CHROMA_444):
            raise ValueError(f"unknown subsampling {self.subsampling!r}")
        for plane in (self.y, self.u, self.v):
            if plane.dtype != np.uint8 or plane.ndim != 2:
                raise ValueError("planes must be 2-D uint8 arrays")
        expect = _chroma_shape(self.width, self.height, self.subsampling)
        if self.u.shape != expect or self.v.shape != expect:
            raise ValueError(
                f"chroma shape {self.u.shape} inconsistent with "
                f"{self.height}x{self.width} {self.subsampling}"
            )
        for plane in (self.y, self.u, self.v):
            _freeze(plane)

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class VideoSequence:
    """An ordered run of frames sharing geometry, plus the playback rate."""

    frames: tuple[Frame, ...]
    fps: float

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise ValueError("video must contain at least one frame")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        first = self.frames[0]
        for f in self.frames:
            if (f.width, f.height, f.subsampling) != (
                first.width,
                first.height,
                first.subsampling,
            ):
                raise ValueError("all frames must share dimensions and subsampling")

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def __len__(self) -> int:
        return len(self.frames)


def _as_stream(source) -> io.BufferedIOBase:
    if isinstance(source, (bytes, bytearray)):
        return io.BytesIO(source)
    return source


def _read_line(stream, what: str, limit: int = 4096) -> bytes:
    out = bytearray()
    while True:
        b = stream.read(1)
        if not b:
            raise FormatError(f"malformed header: unterminated {what}")
        if b == b"\n":
            return bytes(out)
        out += b
        if len(out) > limit:
            raise FormatError(f"malformed header: {what} too long")


def _read_exact(stream, n: int, what: str) -> bytes:
    data = stream.read(n)
    if data is None or len(data) != n:
        raise FormatError(f"truncated {what}: wanted {n} bytes, got {len(data or b'')}")
    return data


def load_y4m(source) -> VideoSequence:
    """Decode a YUV4MPEG2 stream (bytes or binary file object)."""
    stream = _as_stream(source)
    header = _read_line(stream, "header")
    fields = header.split(b" ")
    if fields[0] != b"YUV4MPEG2":
        raise FormatError("malformed header: missing YUV4MPEG2 signature")

    width = height = None
    fps_num = fps_den = None
    subsampling = CHROMA_420
    for tag in fields[1:]:
        if not tag:
            continue
        key, val = tag[:1], tag[1:].decode("ascii", "replace")
        if key == b"W":
            width = int(val)
        elif key == b"H":
            height = int(val)
        elif key == b"F":
            num, _, den = val.partition(":")
            fps_num, fps_den = int(num), int(den or "1")
        elif key == b"C":
            if val in _C420_TAGS:
                subsampling = CHROMA_420
            elif val == "444":
                subsampling = CHROMA_444
            else:
                raise FormatError(f"unsupported color space tag C{val}")
        # Ip/A/X tags carry no information we use

    if not width or not height or width <= 0 or height <= 0:
        raise FormatError("malformed header: missing or invalid W/H tags")
    if fps_num is None or fps_num <= 0 or fps_den <= 0:
        raise FormatError("malformed header: missing or invalid F tag")

    ch, cw = _chroma_shape(width, height, subsampling)
    y_len, c_len = width * height, ch * cw

    frames = []
    while True:
        marker = stream.read(5)
        if not marker:
            break
        if marker != b"FRAME":
            raise FormatError("malformed frame marker")
        # optional frame parameters up to newline
        rest = _read_line(stream, "frame marker")
        if rest and not rest.startswith(b" "):
            raise FormatError("malformed frame marker")
        y = np.frombuffer(_read_exact(stream, y_len, "frame payload"), np.uint8)
        u = np.frombuffer(_read_exact(stream, c_len, "frame payload"), np.uint8)
        v = np.frombuffer(_read_exact(stream, c_len, "frame payload"), np.uint8)
        frames.append(
            Frame(
                y.reshape(height, width).copy(),
                u.reshape(ch, cw).copy(),
                v.reshape(ch, cw).copy(),
                subsampling,
            )
        )
    if not frames:
        raise FormatError("stream contains no frames")
    return VideoSequence(tuple(frames), fps_num / fps_den)


def save_y4m(video: VideoSequence, stream) -> None:
    """Write a sequence back out as YUV4MPEG2."""
    fps = Fraction(video.fps).limit_denominator(65536)
    tag = "C420" if video.frames[0].subsampling == CHROMA_420 else "C444"
    stream.write(
        f"YUV4MPEG2 W{video.width} H{video.height} "
        f"F{fps.numerator}:{fps.denominator} Ip A1:1 {tag}\n".encode("ascii")
    )
    for f in video.frames:
        stream.write(b"FRAME\n")
        stream.write(f.y.tobytes())
        stream.write(f.u.tobytes())
        stream.write(f.v.tobytes())


def load_pgm(source) -> np.ndarray:
    """Read a binary (P5) PGM with maxval 255 into a read-only (H, W) uint8 array."""
    stream = _as_stream(source)

    def tokens():
        while True:
            tok = bytearray()
            while True:
                b = stream.read(1)
                if not b:
                    raise FormatError("malformed header: unexpected end of stream")
                if b == b"#":  # comment to end of line
                    while b and b != b"\n":
                        b = stream.read(1)
                    continue
                if b.isspace():
                    if tok:
                        break
                    continue
                tok += b
            yield bytes(tok)

    it = tokens()
    magic = next(it)
    if magic != b"P5":
        raise FormatError(f"not a P5 PGM (magic {magic!r})")
    try:
        width, height, maxval = int(next(it)), int(next(it)), int(next(it))
    except ValueError as e:
        raise FormatError(f"malformed header: {e}") from None
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval}")
    if width <= 0 or height <= 0:
        raise FormatError("dimensions must be positive")
    payload = _read_exact(stream, width * height, "PGM payload")
    return _freeze(np.frombuffer(payload, np.uint8).reshape(height, width).copy())


def save_pgm(values: np.ndarray, stream) -> None:
    """Write an (H, W) uint8 array as binary PGM; exact inverse of load_pgm."""
    if values.ndim != 2 or values.dtype != np.uint8:
        raise ValueError("expected a 2-D uint8 array")
    h, w = values.shape
    stream.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
    stream.write(np.ascontiguousarray(values).tobytes())


def read_ft(source) -> np.ndarray:
    """Read an FT01 tensor into a read-only (rows, cols, channels) float32 array."""
    stream = _as_stream(source)
    header = _read_exact(stream, 16, "FT01 header")
    if header[:4] != _FT_MAGIC:
        raise FormatError(f"bad magic {header[:4]!r}, expected {_FT_MAGIC!r}")
    rows, cols, channels = struct.unpack("<III", header[4:])
    if rows == 0 or cols == 0 or channels == 0:
        raise FormatError("zero dimension in FT01 header")
    payload = _read_exact(stream, rows * cols * channels * 4, "FT01 payload")
    data = np.frombuffer(payload, "<f4").reshape(rows, cols, channels)
    if not np.isfinite(data).all():
        raise FormatError("non-finite value in FT01 payload")
    return _freeze(data.copy())


def write_ft(data: np.ndarray, stream) -> None:
    """Write a (rows, cols, channels) array as FT01 (float32, little-endian)."""
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3:
        raise ValueError("expected a (rows, cols, channels) array")
    if not np.isfinite(data).all():
        raise ValueError("non-finite value in tensor")
    rows, cols, channels = data.shape
    stream.write(_FT_MAGIC + struct.pack("<III", rows, cols, channels))
    stream.write(np.ascontiguousarray(data, "<f4").tobytes())


def read_dqp(source) -> np.ndarray:
    """Read a DQP1 sidecar into a read-only (frames, rows, cols) int8 array."""
    stream = _as_stream(source)
    header = _read_exact(stream, 16, "DQP1 header")
    if header[:4] != _DQP_MAGIC:
        raise FormatError(f"bad magic {header[:4]!r}, expected {_DQP_MAGIC!r}")
    frames, rows, cols = struct.unpack("<III", header[4:])
    if frames == 0 or rows == 0 or cols == 0:
        raise FormatError("zero dimension in DQP1 header")
    payload = _read_exact(stream, frames * rows * cols, "DQP1 payload")
    values = np.frombuffer(payload, np.int8).reshape(frames, rows, cols)
    if values.min() < DQP_MIN or values.max() > DQP_MAX:
        raise FormatError(f"QP offset out of range [{DQP_MIN}, {DQP_MAX}]")
    return _freeze(values.copy())


def write_dqp(values: np.ndarray, stream) -> None:
    """Write a (frames, rows, cols) integer array as a DQP1 sidecar."""
    values = np.asarray(values)
    if values.ndim == 2:
        values = values[None, :, :]
    if values.ndim != 3:
        raise ValueError("expected a (frames, rows, cols) array")
    if values.size == 0:
        raise ValueError("empty offset grid")
    if values.min() < DQP_MIN or values.max() > DQP_MAX:
        raise ValueError(f"QP offset out of range [{DQP_MIN}, {DQP_MAX}]")
    frames, rows, cols = values.shape
    stream.write(_DQP_MAGIC + struct.pack("<III", frames, rows, cols))
    stream.write(np.ascontiguousarray(values, np.int8).tobytes())
