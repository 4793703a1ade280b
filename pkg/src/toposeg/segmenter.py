"""Estimator-style front end for the topology-preserving segmentation."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .detection import preserve_topology
from .validation import as_voxel_grid, check_points


class TopologyPreservingSegmenter(BaseEstimator):
    """Smooth a voxel image into a spline level set without topology loss.

    Fitting runs the detect-and-refine loop: the grayscale data is
    convolved with a (TH)B-spline basis, the segmented result is compared
    window by window against the direct voxel segmentation, and the basis
    is locally refined where the comparison fails.

    Parameters
    ----------
    degree : int
        B-spline degree of the level set basis.
    threshold : float
        Segmentation threshold g_crit on the grayscale range.
    window_radius : int
        Neighborhood radius r of the moving window.
    n_sub : int
        Subdivision factor used to voxelize the smooth segmentation.
    max_passes : int
        Refinement passes allowed; 0 disables the correction entirely.
    connectivity : str
        "vertex" or "face" region connectivity.

    Attributes
    ----------
    field_ : LevelSetField
        The fitted smooth level set.
    mesh_ : HierarchicalMesh
        Refinement regions produced by the correction loop.
    indicator_history_ : list of IndicatorField
        Anomaly flags per pass (last entry is the final state).
    n_passes_ : int
        Refinement passes actually performed.
    converged_ : bool
        Whether the final indicator is empty.
    """

    def __init__(self, degree: int = 2, threshold: float = 0.5,
                 window_radius: int = 1, n_sub: int = 2, max_passes: int = 1,
                 connectivity: str = "vertex"):
        self.degree = degree
        self.threshold = threshold
        self.window_radius = window_radius
        self.n_sub = n_sub
        self.max_passes = max_passes
        self.connectivity = connectivity

    def fit(self, grid, y=None):
        grid = as_voxel_grid(grid)
        result = preserve_topology(
            grid,
            degree=self.degree,
            g_crit=self.threshold,
            r=self.window_radius,
            n_sub=self.n_sub,
            max_passes=self.max_passes,
            connectivity=self.connectivity,
        )
        self.grid_ = grid
        self.field_ = result.field
        self.mesh_ = result.mesh
        self.indicator_history_ = result.history
        self.n_passes_ = result.passes_used
        self.converged_ = result.converged
        return self

    def _check_fitted(self):
        if not hasattr(self, "field_"):
            raise NotFittedError("call fit before using the segmenter")

    def transform(self, points) -> np.ndarray:
        """Level set values at physical points inside the image box."""
        self._check_fitted()
        return self.field_.values(check_points(points, self.grid_.ndim))

    def predict(self, points) -> np.ndarray:
        """Inside/outside classification of points (f > threshold)."""
        return self.transform(points) > self.threshold

    def fit_transform(self, grid, points):
        return self.fit(grid).transform(points)
