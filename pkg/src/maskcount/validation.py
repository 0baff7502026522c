"""Input validation helpers for arrays moving through the pipeline.

All map-like data is carried as plain numpy arrays: density maps are
non-negative float grids of shape (H, W), masks and ROIs are {0,1} grids
of the same layout. These helpers normalise dtypes and fail loudly on
violated invariants so the failures surface at the API boundary instead
of deep inside the training loop.
"""

from __future__ import annotations

import numpy as np


def as_image(arr) -> np.ndarray:
    """Coerce a 2-D grayscale image to float64 in [0, 1].

    uint8 input is rescaled by 1/255; float input must already be in [0, 1].
    """
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    arr = arr.astype(np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("float image values must lie in [0, 1]")
    return arr


def as_points(points) -> np.ndarray:
    """Coerce a point list to an (N, 2) float64 array of (x, y) coordinates."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, 2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points must have shape (N, 2), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("points contain non-finite coordinates")
    return pts


def check_points_in_bounds(points: np.ndarray, width: int, height: int) -> None:
    """Every point must lie inside [0, width) x [0, height)."""
    for i, (x, y) in enumerate(points):
        if not (0.0 <= x < width and 0.0 <= y < height):
            raise ValueError(
                f"point {i} at ({x}, {y}) outside image bounds {width}x{height}"
            )


def check_density(d: np.ndarray) -> np.ndarray:
    """Validate a density map: 2-D, finite, all values >= 0."""
    d = np.asarray(d)
    if d.ndim != 2:
        raise ValueError(f"density map must be 2-D, got shape {d.shape}")
    if not np.isfinite(d).all():
        raise ValueError("density map contains non-finite values")
    if d.size and d.min() < 0.0:
        raise ValueError("density map contains negative values")
    return d


def check_binary(m: np.ndarray, name: str = "mask") -> np.ndarray:
    """Validate a {0,1}-valued 2-D grid and return it as uint8."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    vals = np.unique(m)
    if not np.isin(vals, (0, 1)).all():
        raise ValueError(f"{name} values must be in {{0, 1}}, found {vals[:8]}")
    return m.astype(np.uint8)


def check_roi(roi: np.ndarray) -> np.ndarray:
    """Validate an ROI mask: binary and non-empty (at least one inside pixel)."""
    roi = check_binary(roi, name="roi")
    if roi.sum() == 0:
        raise ValueError("roi mask selects no pixels")
    return roi


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} have mismatched shapes {a.shape} vs {b.shape}")
