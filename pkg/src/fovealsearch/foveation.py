"""Space-variant acuity simulation.

Two complementary paths: pixel-space foveated rendering (full acuity inside
a fovea disk, Gaussian-blurred periphery, linear cross-fade at the seam)
and feature-space belief-map composition through binary fixation masks on
the discretized grid, optionally accumulating past fixations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fovealsearch.tensor import Tensor

Cell = tuple[int, int]


@dataclass(frozen=True)
class FoveationConfig:
    """Acuity settings shared by rendering and mask composition.

    ``fovea_px`` is the full-acuity radius in pixels; ``blur_sigma`` the
    Gaussian radius of the low-acuity layer; ``mask_radius`` the grid-cell
    radius of the fixation mask (cells strictly closer than the radius are
    high-acuity); ``cumulative`` keeps every past fixation's cells active.
    """

    fovea_px: float = 75.0
    blur_sigma: float = 2.0
    mask_radius: float = 2.0
    cumulative: bool = False

    def __post_init__(self):
        if self.fovea_px <= 0:
            raise ValueError("fovea_px must be positive")
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be positive")
        if self.mask_radius < 1:
            raise ValueError("mask_radius must be >= 1")


def mask_radius_for_fovea(fovea_px: float, cell_px: float) -> int:
    """Grid mask radius emulating a pixel fovea size (50/75/100 -> 1/2/3 at 32px cells)."""
    return max(1, int(fovea_px // cell_px))


@dataclass
class FixationMask:
    """Binary high-acuity mask over the grid."""

    values: np.ndarray
    cells: tuple[Cell, ...]
    cumulative: bool = False

    @property
    def active_count(self) -> int:
        return int(self.values.sum())


def make_mask(fixations: Sequence[Cell], rows: int, cols: int, cfg: FoveationConfig) -> FixationMask:
    """Mask of cells strictly within ``mask_radius`` of the fixation cell.

    Plain mode uses only the most recent fixation; cumulative mode is the
    elementwise OR over every fixation seen so far.
    """
    if not fixations:
        raise ValueError("make_mask needs at least one fixation")
    for r, c in fixations:
        if not (0 <= r < rows and 0 <= c < cols):
            raise ValueError(f"fixation cell ({r}, {c}) outside {rows}x{cols} grid")
    sources = tuple(fixations) if cfg.cumulative else (tuple(fixations[-1]),)
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    mask = np.zeros((rows, cols), dtype=np.float32)
    for r, c in sources:
        dist = np.sqrt((rr - r) ** 2 + (cc - c) ** 2)
        mask[dist < cfg.mask_radius] = 1.0
    return FixationMask(values=mask, cells=tuple(tuple(f) for f in fixations), cumulative=cfg.cumulative)


def compose_belief(high, low, mask: FixationMask | np.ndarray):
    """Blend high/low acuity maps through a fixation mask:

        B = M . H + (1 - M) . L

    with the mask broadcast over the channel axis.  Accepts arrays or
    Tensors and returns the same kind.
    """
    tensor_in = isinstance(high, Tensor)
    h = high.data if isinstance(high, Tensor) else np.asarray(high)
    l = low.data if isinstance(low, Tensor) else np.asarray(low)
    m = mask.values if isinstance(mask, FixationMask) else np.asarray(mask)
    if h.shape != l.shape:
        raise ValueError(f"belief map shapes differ: {h.shape} vs {l.shape}")
    if m.shape != h.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match grid {h.shape[:2]}")
    m3 = m[..., None].astype(h.dtype) if h.ndim == 3 else m.astype(h.dtype)
    blended = m3 * h + (1.0 - m3) * l
    return Tensor(blended) if tensor_in else blended


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * sigma**2))
    return k / k.sum()


def _correlate_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    width = [(0, 0)] * arr.ndim
    width[axis] = (radius, radius)
    padded = np.pad(arr, width, mode="constant")
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=axis)
    return np.tensordot(windows, kernel, axes=([-1], [0]))


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, renormalized at the edges.

    Zero-padded convolution divided by the blurred all-ones mask, so edge
    pixels average only in-bounds neighbors: uniform images are exact
    fixed points and no energy is mirrored in from outside.
    """
    arr = np.asarray(image, dtype=np.float64)
    kernel = gaussian_kernel1d(sigma)
    weights = np.ones(arr.shape[:2], dtype=np.float64)
    out = _correlate_axis(arr, kernel, 0)
    out = _correlate_axis(out, kernel, 1)
    weights = _correlate_axis(weights, kernel, 0)
    weights = _correlate_axis(weights, kernel, 1)
    if arr.ndim == 3:
        weights = weights[..., None]
    out = out / weights
    src_dtype = np.asarray(image).dtype
    return out.astype(src_dtype) if np.issubdtype(src_dtype, np.floating) else out


def foveate_image(image: np.ndarray, fixation_xy: tuple[float, float], cfg: FoveationConfig) -> np.ndarray:
    """Render a pixel image as seen while fixating at (x, y).

    Pixels inside the fovea keep full acuity, the periphery uses the
    Gaussian-blurred image, and a linear cross-fade over a band of
    0.2 * radius straddling the boundary avoids a hard seam.
    """
    arr = np.asarray(image)
    height, width = arr.shape[:2]
    fx, fy = fixation_xy
    if not (0 <= fx < width and 0 <= fy < height):
        raise ValueError(f"fixation ({fx}, {fy}) outside {width}x{height} image")
    blurred = gaussian_blur(arr.astype(np.float64), cfg.blur_sigma)
    ys, xs = np.mgrid[0:height, 0:width]
    dist = np.sqrt((xs - fx) ** 2 + (ys - fy) ** 2)
    inner = cfg.fovea_px * 0.9
    outer = cfg.fovea_px * 1.1
    alpha = np.clip((outer - dist) / (outer - inner), 0.0, 1.0)
    if arr.ndim == 3:
        alpha = alpha[..., None]
    out = alpha * arr.astype(np.float64) + (1.0 - alpha) * blurred
    if np.issubdtype(arr.dtype, np.integer):
        return np.clip(np.rint(out), 0, 255).astype(arr.dtype)
    return out.astype(arr.dtype)
