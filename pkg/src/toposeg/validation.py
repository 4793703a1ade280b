"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .voxel import VoxelGrid


def as_voxel_grid(data, spacing=None, origin=None) -> VoxelGrid:
    """Coerce raw arrays (or pass through a VoxelGrid) with validation."""
    if isinstance(data, VoxelGrid):
        return data
    arr = np.asarray(data)
    if arr.ndim not in (2, 3):
        raise ValueError(f"expected a 2D or 3D array, got ndim={arr.ndim}")
    if not np.issubdtype(arr.dtype, np.number) and arr.dtype != bool:
        raise ValueError("voxel values must be numeric")
    if arr.dtype == np.uint8:
        return VoxelGrid.from_uint8(arr, spacing, origin)
    return VoxelGrid.from_values(arr.astype(float), spacing, origin)


def check_points(points, ndim: int) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.ndim != 2 or points.shape[1] != ndim:
        raise ValueError(f"points must have shape (n, {ndim})")
    if not np.isfinite(points).all():
        raise ValueError("points must be finite")
    return points


def check_in_range(name: str, value, low=None, high=None):
    if low is not None and value < low:
        raise ValueError(f"{name} must be >= {low}, got {value}")
    if high is not None and value > high:
        raise ValueError(f"{name} must be <= {high}, got {value}")
    return value
