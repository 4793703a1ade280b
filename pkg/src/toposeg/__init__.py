"""Topology-preserving B-spline segmentation of voxel scans.

Grayscale voxel data is smoothed into a spline level set; a moving-window
Euler-characteristic comparison detects where smoothing changed the
topology, and truncated hierarchical B-spline refinement repairs it. A 2D
immersed Galerkin solver (linear elasticity and Stokes flow) demonstrates
the downstream effect on computed quantities of interest.
"""

from .bspline import BSplineBasis1D, TensorBSplineBasis
from .convolution import (
    ConvolutionCoefficients,
    KernelOracle,
    LevelSetField,
    convolve,
    evaluate_field,
    feature_peak,
    frequency_response,
    gaussian_kernel_width,
    smooth_grid,
    smoothed_feature,
)
from .detection import (
    ComparisonReport,
    IndicatorField,
    Window,
    apply_mask,
    boundary_mask,
    compare_window,
    mark_refinement,
    masked_compare,
    preserve_topology,
    scan,
    voxelize_smooth,
)
from .hierarchy import HierarchicalMesh, THBBasis, build_thb, convolve_thb, refine, thb_field
from .segmenter import TopologyPreservingSegmenter
from .voxel import (
    BinaryImage,
    EulerSummary,
    RegionLabeling,
    VoxelGrid,
    complement,
    euler_characteristic,
    intersection,
    label_components,
    symmetric_difference,
    threshold,
    union,
    upsample,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
