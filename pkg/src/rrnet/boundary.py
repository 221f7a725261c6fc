"""Boundary supervision bands and Sobel soft-edge maps.

The band is built in two steps: mark foreground pixels that touch the
background (4-neighborhood, in-bounds neighbors only, so a frame covered
entirely by foreground has no contour), then grow the marked set by a
Chebyshev radius so the band covers both sides of the contour.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tg


@dataclass
class BoundaryConfig:
    width: int = 5
    strategy: str = "expand"  # "expand" | "grad"

    def __post_init__(self):
        if self.width < 0:
            raise ValueError(f"width must be >= 0, got {self.width}")
        if self.strategy not in ("expand", "grad"):
            raise ValueError(f"unknown boundary strategy {self.strategy!r}")


def _check_binary(gt: np.ndarray) -> np.ndarray:
    gt = np.asarray(gt)
    if gt.ndim != 2:
        raise ValueError(f"ground truth must be 2-D, got shape {gt.shape}")
    if not np.isin(gt, (0, 1)).all():
        raise ValueError("ground truth must be binary (values in {0, 1})")
    return gt.astype(np.uint8)


def extract_boundary(gt: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one in-bounds background 4-neighbor.

    The image frame itself never creates contour: an all-foreground map has
    an empty boundary, so the band always straddles a real fg/bg edge.
    """
    gt = _check_binary(gt)
    padded = np.pad(gt, 1, mode="edge")  # replicate: the frame is not an edge
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return (gt & ~interior).astype(np.uint8)


def dilate(mask: np.ndarray, width: int) -> np.ndarray:
    """Grow the set by Chebyshev distance <= width (square element)."""
    if width < 0:
        raise ValueError(f"width must be >= 0, got {width}")
    mask = np.asarray(mask).astype(np.uint8)
    if width == 0:
        return mask.copy()
    padded = np.pad(mask, width)
    out = np.zeros_like(mask)
    H, W = mask.shape
    for dy in range(2 * width + 1):
        for dx in range(2 * width + 1):
            out |= padded[dy:dy + H, dx:dx + W]
    return out


def boundary_mask(gt: np.ndarray, config: BoundaryConfig) -> np.ndarray:
    """The supervision band: raw contour dilated by config.width."""
    if config.strategy != "expand":
        raise ValueError("boundary_mask applies to the expand strategy only")
    return dilate(extract_boundary(gt), config.width)


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


def _correlate3(data: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 correlation with replicate-padded borders, per channel."""
    p = np.pad(data, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    H, W = data.shape[2:]
    out = np.zeros_like(data)
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * p[:, :, dy:dy + H, dx:dx + W]
    return out


def sobel_magnitude(x: tg.Tensor, tape: tg.Tape = None) -> tg.Tensor:
    """Normalized Sobel gradient magnitude, min(1, sqrt(gx^2+gy^2)/4).

    Differentiable; used by the gradient-based edge supervision variant.
    """
    kx = _SOBEL_X.astype(x.dtype)
    ky = _SOBEL_Y.astype(x.dtype)
    gx = _correlate3(x.data, kx)
    gy = _correlate3(x.data, ky)
    mag = np.sqrt(gx * gx + gy * gy) / 4
    out = np.minimum(mag, 1.0)

    def back(go):
        # zero slope where clamped at 1 or at the sqrt kink (mag == 0)
        live = (mag < 1.0) & (mag > 0.0)
        safe = np.where(mag > 0, mag, 1.0)
        d_gx = go * live * gx / (16 * safe)
        d_gy = go * live * gy / (16 * safe)
        # transpose of replicate-pad + correlate: correlate the flipped
        # kernel, then fold the pad ring back onto the edge pixels
        gpad = np.zeros((x.shape[0], x.shape[1], x.shape[2] + 2, x.shape[3] + 2),
                        dtype=go.dtype)
        H, W = x.shape[2:]
        for dy in range(3):
            for dx in range(3):
                gpad[:, :, dy:dy + H, dx:dx + W] += kx[dy, dx] * d_gx
                gpad[:, :, dy:dy + H, dx:dx + W] += ky[dy, dx] * d_gy
        gin = gpad[:, :, 1:-1, 1:-1].copy()
        gin[:, :, 0, :] += gpad[:, :, 0, 1:-1]
        gin[:, :, -1, :] += gpad[:, :, -1, 1:-1]
        gin[:, :, :, 0] += gpad[:, :, 1:-1, 0]
        gin[:, :, :, -1] += gpad[:, :, 1:-1, -1]
        gin[:, :, 0, 0] += gpad[:, :, 0, 0]
        gin[:, :, 0, -1] += gpad[:, :, 0, -1]
        gin[:, :, -1, 0] += gpad[:, :, -1, 0]
        gin[:, :, -1, -1] += gpad[:, :, -1, -1]
        return [gin]

    return tg.apply_op("sobel_magnitude", [x], out, back, tape)
