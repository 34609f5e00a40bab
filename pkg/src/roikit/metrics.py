"""Full-reference quality metrics at macroblock granularity.

PSNR and SSIM are computed on luma over each 16x16 macroblock (boundary
blocks use their actual extent, never padded). SSIM uses a single window per
block with population moments and the usual stabilizers C1=(0.01*255)^2,
C2=(0.03*255)^2.

VIF is the pixel-domain scalar-GSM form, evaluated per macroblock over the
256x256 luma window centered on it (cropped at frame boundaries). Constants:

* 4 scales; each level is a 5-tap binomial blur ([1,4,6,4,1]/16, separable,
  renormalized where the kernel overhangs the frame) decimated by 2, with the
  sample grid anchored at the frame origin;
* local moments over 3x3 neighborhoods, taken only where the full
  neighborhood exists;
* additive-noise variance 2.0 and guard epsilon 1e-10.

Per-position information terms are computed once on the whole frame and
aggregated per window through summed-area tables, so the 16-pixel-stride
windows share all of the underlying filtering work. A window whose reference
content carries no information (zero denominator) scores 1.0.

All kernels use fixed summation orders, so repeated runs are bit-identical.
"""

from __future__ import annotations

import numpy as np

from .gridmap import MB_SIZE, grid_shape
from .media import Frame

PSNR_CAP_DB = 100.0
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2

VIF_SCALES = 4
VIF_WINDOW = 256
VIF_NOISE_VAR = 2.0
VIF_EPS = 1e-10
VIF_PYR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _luma_pair(ref: Frame, dist: Frame) -> tuple[np.ndarray, np.ndarray]:
    if (ref.width, ref.height) != (dist.width, dist.height):
        raise ValueError(
            f"dimension mismatch: {ref.height}x{ref.width} vs {dist.height}x{dist.width}"
        )
    return ref.y.astype(np.float64), dist.y.astype(np.float64)


def _block_sums(a: np.ndarray) -> np.ndarray:
    rs = np.arange(0, a.shape[0], MB_SIZE)
    cs = np.arange(0, a.shape[1], MB_SIZE)
    return np.add.reduceat(np.add.reduceat(a, rs, axis=0), cs, axis=1)


def _block_counts(h: int, w: int) -> np.ndarray:
    ry = np.minimum(np.arange(0, h, MB_SIZE) + MB_SIZE, h) - np.arange(0, h, MB_SIZE)
    rx = np.minimum(np.arange(0, w, MB_SIZE) + MB_SIZE, w) - np.arange(0, w, MB_SIZE)
    return np.outer(ry, rx).astype(np.float64)


def mb_psnr(ref: Frame, dist: Frame) -> np.ndarray:
    """Per-macroblock luma PSNR in dB; identical blocks score PSNR_CAP_DB."""
    r, d = _luma_pair(ref, dist)
    mse = _block_sums((r - d) ** 2) / _block_counts(*r.shape)
    with np.errstate(divide="ignore"):
        psnr = 10.0 * np.log10(255.0**2 / mse)
    return np.where(mse == 0.0, PSNR_CAP_DB, psnr)


def mb_ssim(ref: Frame, dist: Frame) -> np.ndarray:
    """Per-macroblock single-window SSIM on luma with population moments."""
    r, d = _luma_pair(ref, dist)
    n = _block_counts(*r.shape)
    mu_x = _block_sums(r) / n
    mu_y = _block_sums(d) / n
    var_x = _block_sums(r * r) / n - mu_x**2
    var_y = _block_sums(d * d) / n - mu_y**2
    cov = _block_sums(r * d) / n - mu_x * mu_y
    return ((2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    )


def _tap_filter(a: np.ndarray, axis: int) -> np.ndarray:
    """5-tap binomial filter along one axis, renormalized at the borders."""
    out = np.zeros_like(a)
    norm = np.zeros(a.shape[axis])
    n = a.shape[axis]
    for k, w in enumerate(VIF_PYR_KERNEL):
        off = k - 2
        src = slice(max(0, off), n + min(0, off))
        dst = slice(max(0, -off), n + min(0, -off))
        idx_src = [slice(None)] * a.ndim
        idx_dst = [slice(None)] * a.ndim
        idx_src[axis] = src
        idx_dst[axis] = dst
        out[tuple(idx_dst)] += w * a[tuple(idx_src)]
        norm[dst] += w
    shape = [1] * a.ndim
    shape[axis] = n
    return out / norm.reshape(shape)


def _pyr_down(a: np.ndarray) -> np.ndarray:
    return _tap_filter(_tap_filter(a, 0), 1)[::2, ::2]


def _box3_valid(a: np.ndarray) -> np.ndarray:
    """Sum over all 3x3 neighborhoods that fit fully inside the array."""
    out = np.zeros((a.shape[0] - 2, a.shape[1] - 2))
    for dy in range(3):
        for dx in range(3):
            out += a[dy : dy + out.shape[0], dx : dx + out.shape[1]]
    return out


def _info_maps(r: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-position numerator/denominator information terms at one scale."""
    mu1 = _box3_valid(r) / 9.0
    mu2 = _box3_valid(d) / 9.0
    s1 = np.maximum(_box3_valid(r * r) / 9.0 - mu1 * mu1, 0.0)
    s2 = np.maximum(_box3_valid(d * d) / 9.0 - mu2 * mu2, 0.0)
    s12 = _box3_valid(r * d) / 9.0 - mu1 * mu2

    g = s12 / (s1 + VIF_EPS)
    sv = s2 - g * s12
    small1 = s1 < VIF_EPS
    g[small1] = 0.0
    sv[small1] = s2[small1]
    s1 = np.where(small1, 0.0, s1)
    small2 = s2 < VIF_EPS
    g[small2] = 0.0
    sv[small2] = 0.0
    neg = g < 0.0
    sv[neg] = s2[neg]
    g[neg] = 0.0
    sv[sv < VIF_EPS] = VIF_EPS

    num = np.log2(1.0 + g * g * s1 / (sv + VIF_NOISE_VAR))
    den = np.log2(1.0 + s1 / VIF_NOISE_VAR)
    return num, den


def _integral(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    np.cumsum(np.cumsum(a, axis=0), axis=1, out=out[1:, 1:])
    return out


def _rect_sum(integral: np.ndarray, r0: int, r1: int, c0: int, c1: int) -> float:
    # half-open [r0, r1) x [c0, c1) over the underlying map
    return float(
        integral[r1, c1] - integral[r0, c1] - integral[r1, c0] + integral[r0, c0]
    )


def block_vif(ref: Frame, dist: Frame) -> np.ndarray:
    """Per-macroblock pixel-domain VIF over 256x256 centered windows."""
    r, d = _luma_pair(ref, dist)
    h, w = r.shape
    rows, cols = grid_shape(w, h)

    # per-scale integral tables of the information terms, plus the frame
    # coordinate of each map position (map index a <-> center a+1 at that
    # scale <-> frame coordinate (a+1) * 2^scale)
    tables = []
    for scale in range(VIF_SCALES):
        if scale > 0:
            r, d = _pyr_down(r), _pyr_down(d)
        if r.shape[0] < 3 or r.shape[1] < 3:
            break
        num, den = _info_maps(r, d)
        tables.append((_integral(num), _integral(den), 1 << scale))

    half = VIF_WINDOW // 2
    out = np.ones((rows, cols))
    for gr in range(rows):
        cy = gr * MB_SIZE + MB_SIZE // 2
        y0, y1 = max(0, cy - half), min(h, cy + half)
        for gc in range(cols):
            cx = gc * MB_SIZE + MB_SIZE // 2
            x0, x1 = max(0, cx - half), min(w, cx + half)
            num_total = den_total = 0.0
            for inum, iden, step in tables:
                # centers q with y0 <= q*step < y1, clipped to valid map rows
                q0 = max(-(-y0 // step), 1)
                q1 = min(-(-y1 // step), inum.shape[0])
                p0 = max(-(-x0 // step), 1)
                p1 = min(-(-x1 // step), inum.shape[1])
                if q0 >= q1 or p0 >= p1:
                    continue
                num_total += _rect_sum(inum, q0 - 1, q1 - 1, p0 - 1, p1 - 1)
                den_total += _rect_sum(iden, q0 - 1, q1 - 1, p0 - 1, p1 - 1)
            if den_total > 0.0:
                out[gr, gc] = num_total / den_total
    return out
