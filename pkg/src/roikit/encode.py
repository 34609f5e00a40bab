"""Turning QP offset grids into encoder actions.

Two paths: a deterministic mock encoder that prices each macroblock at
base_bits * 2^(-offset/3) for closed-loop tests, and a process-level driver
for a real encoder invoked through a user-supplied command template with
{input}, {dqp}, {output} and {bitrate} placeholders. The DQP1 sidecar is the
stable contract between the two.
"""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gridmap import grid_shape
from .media import VideoSequence, save_y4m, write_dqp
from .qpsolver import rate_weight

QP_MIN = 0
QP_MAX = 51

_PLACEHOLDERS = ("{input}", "{dqp}", "{output}", "{bitrate}")


class EncodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class EncodeJob:
    video: VideoSequence
    dqp: np.ndarray  # (frames, rows, cols) signed offsets
    target_bitrate_kbps: float = 300.0
    qp_base: int = 26
    template: str | None = None

    def __post_init__(self):
        if not QP_MIN <= self.qp_base <= QP_MAX:
            raise ValueError(f"qp_base must lie in [{QP_MIN}, {QP_MAX}]")
        if not self.target_bitrate_kbps > 0:
            raise ValueError("target bitrate must be positive")
        rows, cols = grid_shape(self.video.width, self.video.height)
        dqp = np.asarray(self.dqp)
        if dqp.shape != (len(self.video), rows, cols):
            raise ValueError(
                f"sidecar shape {dqp.shape} does not match video "
                f"({len(self.video)} frames, {rows}x{cols} grid)"
            )


@dataclass(frozen=True)
class EncodeReport:
    frame_bits: tuple[float, ...]
    total_bits: float
    ratio: float  # achieved / flat-encode bits
    effective_qp: np.ndarray  # (frames, rows, cols) int
    clamp_count: int


def default_base_bits(job: EncodeJob) -> float:
    """Flat per-macroblock bit budget implied by the target bitrate."""
    rows, cols = grid_shape(job.video.width, job.video.height)
    return job.target_bitrate_kbps * 1000.0 / job.video.fps / (rows * cols)


def effective_qp(qp_base: int, dqp: np.ndarray) -> tuple[np.ndarray, int]:
    """Per-cell qp_base + offset clamped to [0, 51], plus the clamp count."""
    raw = qp_base + np.asarray(dqp, dtype=np.int64)
    clamped = np.clip(raw, QP_MIN, QP_MAX)
    return clamped.astype(np.int32), int(np.count_nonzero(raw != clamped))


def mock_encode(job: EncodeJob, base_bits_per_mb: float | None = None) -> EncodeReport:
    """Simulate the encode under the exponential rate model; no pixels touched."""
    if base_bits_per_mb is None:
        base_bits_per_mb = default_base_bits(job)
    dqp = np.asarray(job.dqp, dtype=np.float64)
    bits = base_bits_per_mb * rate_weight(dqp)
    qp, clamps = effective_qp(job.qp_base, job.dqp)
    frame_bits = bits.sum(axis=(1, 2))
    total = float(frame_bits.sum())
    flat = base_bits_per_mb * dqp.size
    return EncodeReport(
        frame_bits=tuple(float(b) for b in frame_bits),
        total_bits=total,
        ratio=total / flat,
        effective_qp=qp,
        clamp_count=clamps,
    )


def drive_encoder(job: EncodeJob, workdir: Path | str) -> Path:
    """Run the configured external encoder; returns the output file path.

    Writes the input video and DQP1 sidecar into `workdir`, substitutes the
    template placeholders, and runs the command without a shell. Raises
    EncodeError on a nonzero exit (carrying stderr) or a missing output file.
    """
    if not job.template:
        raise EncodeError("no encoder command template configured")
    missing = [p for p in _PLACEHOLDERS if p not in job.template]
    if missing:
        raise EncodeError(f"template missing placeholders: {', '.join(missing)}")

    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    input_path = workdir / "input.y4m"
    dqp_path = workdir / "offsets.dqp"
    output_path = workdir / "output.bin"
    with open(input_path, "wb") as f:
        save_y4m(job.video, f)
    with open(dqp_path, "wb") as f:
        write_dqp(job.dqp, f)

    cmd = job.template.format(
        input=str(input_path),
        dqp=str(dqp_path),
        output=str(output_path),
        bitrate=f"{job.target_bitrate_kbps:g}",
    )
    proc = subprocess.run(shlex.split(cmd), capture_output=True, text=True)
    if proc.returncode != 0:
        raise EncodeError(
            f"encoder exited with {proc.returncode}: {proc.stderr.strip()}"
        )
    if not output_path.exists():
        raise EncodeError("encoder reported success but produced no output file")
    return output_path
