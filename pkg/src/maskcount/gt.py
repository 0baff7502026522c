"""Ground-truth pipeline: dot annotations to density maps and foreground masks.

A dot-annotated image is converted to a density map by dropping one
truncated Gaussian kernel per head. Each kernel lives on a square
(2*radius+1)^2 window, is clipped to the image bounds, and is then
renormalised to sum to exactly 1, so the map integral equals the head
count even for heads near the border. The foreground mask is the strict
positive support of the density map.

Kernel shape and size are fixed across datasets; sigma=4 px with a
31x31 window is the default and both are configurable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import (
    as_points,
    check_binary,
    check_density,
    check_points_in_bounds,
    check_roi,
    check_same_shape,
)

DEFAULT_SIGMA = 4.0
DEFAULT_RADIUS = 15


@dataclass
class PointAnnotation:
    """Per-image head annotations: (x, y) pixel coordinates plus image size."""

    width: int
    height: int
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        self.points = as_points(self.points)
        check_points_in_bounds(self.points, self.width, self.height)

    @property
    def count(self) -> int:
        return len(self.points)


@dataclass
class GtConfig:
    """Kernel parameters for density-map generation."""

    sigma: float = DEFAULT_SIGMA
    radius: int = DEFAULT_RADIUS
    downsample: int = 4  # backbone output stride

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.radius < 2 * self.sigma:
            raise ValueError("radius must be at least 2*sigma")
        if self.downsample < 1:
            raise ValueError("downsample factor must be >= 1")


def generate_density_map(
    ann: PointAnnotation, sigma: float = DEFAULT_SIGMA, radius: int = DEFAULT_RADIUS
) -> np.ndarray:
    """Render the annotation as an (H, W) float64 density map.

    Each point adds a Gaussian evaluated at pixel centres on a square
    window around the point's nearest pixel, clipped to the image and
    renormalised to unit mass. Kernels superpose additively, so the map
    sums to the point count.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if radius < 2 * sigma:
        raise ValueError(f"radius must be at least 2*sigma ({2 * sigma})")
    h, w = ann.height, ann.width
    density = np.zeros((h, w), dtype=np.float64)
    inv_two_var = 1.0 / (2.0 * sigma * sigma)
    for x, y in ann.points:
        cx = min(int(round(x)), w - 1)
        cy = min(int(round(y)), h - 1)
        x0, x1 = max(0, cx - radius), min(w, cx + radius + 1)
        y0, y1 = max(0, cy - radius), min(h, cy + radius + 1)
        ys = np.arange(y0, y1, dtype=np.float64)
        xs = np.arange(x0, x1, dtype=np.float64)
        sq = (ys[:, None] - y) ** 2 + (xs[None, :] - x) ** 2
        kernel = np.exp(-sq * inv_two_var)
        density[y0:y1, x0:x1] += kernel / kernel.sum()
    return density


def derive_mask(density: np.ndarray) -> np.ndarray:
    """Foreground mask: 1 exactly where density is strictly positive."""
    density = check_density(density)
    return (density > 0.0).astype(np.uint8)


def _pad_to_multiple(arr: np.ndarray, factor: int) -> np.ndarray:
    h, w = arr.shape
    ph = (-h) % factor
    pw = (-w) % factor
    if ph == 0 and pw == 0:
        return arr
    return np.pad(arr, ((0, ph), (0, pw)))


def downsample_density(density: np.ndarray, factor: int) -> np.ndarray:
    """Sum-pool a density map by an integer factor (count preserving).

    The map is zero-padded up to a multiple of the factor, so the output
    shape is (ceil(H/f), ceil(W/f)) and the total sum is unchanged.
    """
    if factor <= 0:
        raise ValueError("downsample factor must be positive")
    density = np.asarray(density, dtype=np.float64)
    if factor == 1:
        return density.copy()
    padded = _pad_to_multiple(density, factor)
    h, w = padded.shape
    return padded.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))


def downsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Any-nonzero-pool a mask by an integer factor.

    A block maps to 1 iff any pixel in it is foreground, which keeps the
    mask equal to the positive support of the sum-pooled density.
    """
    if factor <= 0:
        raise ValueError("downsample factor must be positive")
    mask = check_binary(mask)
    if factor == 1:
        return mask.copy()
    padded = _pad_to_multiple(mask, factor)
    h, w = padded.shape
    blocks = padded.reshape(h // factor, factor, w // factor, factor)
    return (blocks.max(axis=(1, 3)) > 0).astype(np.uint8)


def apply_roi(values: np.ndarray, roi: np.ndarray) -> np.ndarray:
    """Zero everything outside the region of interest; keep the inside as-is."""
    values = np.asarray(values)
    roi = check_roi(roi)
    check_same_shape(values, roi, what="values and roi")
    return values * roi.astype(values.dtype)
