"""Bitrate-neutral QP offset grids from importance grids.

A macroblock encoded at offset d is assumed to spend 2^(-d/3) times the bits
of the same block at offset 0 (one octave of bitrate per 3 QP, with negative
offsets buying quality). Offsets follow the linear map

    dq(v; c) = clamp(c + R * (0.5 - v/255), -C, +C)

with fixed span R and clamp C, and the scalar c chosen so the mean rate
multiplier over the grid is exactly 1. The mean is continuous and
non-increasing in c, so c is found by bisection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridmap import round_half_from_zero


class SolveError(RuntimeError):
    """Raised when the neutrality equation cannot be solved."""


@dataclass(frozen=True)
class SolverConfig:
    span: float = 20.0
    clamp: float = 10.0
    tolerance: float = 1e-6
    search_lo: float = -40.0
    search_hi: float = 40.0
    max_iterations: int = 200

    def __post_init__(self):
        if not self.span > 0:
            raise ValueError("span must be positive")
        if not 0 < self.clamp <= 10:
            raise ValueError("clamp must lie in (0, 10]")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not self.search_lo < self.search_hi:
            raise ValueError("search interval is empty")


@dataclass(frozen=True)
class SolveReport:
    offset: float
    real_ratio: float
    rounded_ratio: float
    iterations: int


def rate_weight(dqp) -> np.ndarray | float:
    """Bitrate multiplier of a block at QP offset `dqp` relative to offset 0."""
    return 2.0 ** (-np.asarray(dqp, dtype=np.float64) / 3.0)


def offsets_for(values: np.ndarray, c: float, cfg: SolverConfig) -> np.ndarray:
    """Continuous (unrounded) QP offsets for importance values at offset c."""
    raw = c + cfg.span * (0.5 - np.asarray(values, np.float64) / 255.0)
    return np.clip(raw, -cfg.clamp, cfg.clamp)


def estimate_ratio(dqp_grid: np.ndarray) -> float:
    """Mean rate multiplier of an offset grid (1.0 means bitrate-neutral)."""
    g = np.asarray(dqp_grid, dtype=np.float64)
    if g.size == 0:
        raise ValueError("empty grid")
    return float(np.mean(rate_weight(g)))


def solve_dqp(
    importance: np.ndarray, cfg: SolverConfig = SolverConfig()
) -> tuple[np.ndarray, SolveReport]:
    """Integer QP offset grid for an importance grid, neutral in estimated rate.

    Returns the rounded int8 grid and a report carrying the solved offset,
    the pre-rounding mean rate multiplier (within cfg.tolerance of 1) and the
    post-rounding multiplier.
    """
    v = np.asarray(importance, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty importance grid")
    if not np.isfinite(v).all():
        raise ValueError("non-finite importance value")
    if v.min() < 0 or v.max() > 255:
        raise ValueError("importance values must lie in [0, 255]")

    def residual(c: float) -> float:
        return float(np.mean(rate_weight(offsets_for(v, c, cfg)))) - 1.0

    lo, hi = cfg.search_lo, cfg.search_hi
    f_lo, f_hi = residual(lo), residual(hi)
    iterations = 0
    if abs(f_lo) <= cfg.tolerance:
        c = lo
    elif abs(f_hi) <= cfg.tolerance:
        c = hi
    elif f_lo < 0 or f_hi > 0:
        raise SolveError(
            f"no sign change of the rate residual over [{lo}, {hi}] "
            f"(f(lo)={f_lo:.3g}, f(hi)={f_hi:.3g})"
        )
    else:
        c = 0.5 * (lo + hi)
        for iterations in range(1, cfg.max_iterations + 1):
            c = 0.5 * (lo + hi)
            f = residual(c)
            if abs(f) <= cfg.tolerance:
                break
            if f > 0:
                lo = c
            else:
                hi = c
        else:
            raise SolveError(f"no convergence after {cfg.max_iterations} iterations")

    continuous = offsets_for(v, c, cfg)
    grid = round_half_from_zero(continuous).astype(np.int8)
    report = SolveReport(
        offset=c,
        real_ratio=float(np.mean(rate_weight(continuous))),
        rounded_ratio=float(np.mean(rate_weight(grid))),
        iterations=iterations,
    )
    return grid, report
