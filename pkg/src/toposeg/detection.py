"""Moving-window topological anomaly detection and the correction loop.

Every voxel gets a window (its r-neighborhood, clipped at the image
border). Within the window the directly segmented image V and the
voxelized smooth segmentation S are compared by counting connected regions
per Euler characteristic, in the images and in their complements. Region
changes confined to the window's outer ring are first reverted by a
masking operation so that boundary movement is not mistaken for a
topological change. Flagged voxels drive support-based mesh refinement of
the level set basis.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import voxel as vx
from .convolution import LevelSetField
from .hierarchy import HierarchicalMesh, build_thb, convolve_thb, refine, thb_field
from .voxel import BinaryImage, VoxelGrid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Window:
    """The r-neighborhood of a voxel, clipped to the image."""

    center: tuple
    radius: int
    extent: tuple  # per-axis (lo, hi) in base voxels, hi exclusive

    @classmethod
    def at(cls, center, radius: int, dims) -> "Window":
        center = tuple(int(c) for c in center)
        extent = tuple((max(0, c - radius), min(n, c + radius + 1))
                       for c, n in zip(center, dims))
        return cls(center, radius, extent)

    @property
    def base_shape(self) -> tuple:
        return tuple(hi - lo for lo, hi in self.extent)

    def base_slices(self) -> tuple:
        return tuple(slice(lo, hi) for lo, hi in self.extent)

    def fine_slices(self, n_sub: int) -> tuple:
        return tuple(slice(lo * n_sub, hi * n_sub) for lo, hi in self.extent)


@dataclass(frozen=True)
class IndicatorField:
    """Anomaly flags on the base voxel grid."""

    flags: np.ndarray

    def __post_init__(self):
        flags = np.ascontiguousarray(np.asarray(self.flags, dtype=bool))
        flags.flags.writeable = False
        object.__setattr__(self, "flags", flags)

    def any(self) -> bool:
        return bool(self.flags.any())

    def count(self) -> int:
        return int(self.flags.sum())

    def flagged(self) -> np.ndarray:
        return np.argwhere(self.flags)


@dataclass(frozen=True)
class ComparisonReport:
    """Outcome of one window comparison."""

    verdict: bool
    chi_v: dict
    chi_s: dict
    chi_v_compl: dict
    chi_s_compl: dict
    mask_region_count: int = 0


def voxelize_smooth(field: LevelSetField, n_sub: int, g_crit: float,
                    base_dims=None) -> BinaryImage:
    """Segment the level set on an n_sub-times refined voxel grid."""
    if n_sub < 1:
        raise ValueError("n_sub must be >= 1")
    if base_dims is None:
        base_dims = field.bases[0].cell_shape
    dims = tuple(n * n_sub for n in base_dims)
    axes = [field.origin[d] + (np.arange(dims[d]) + 0.5) * field.lengths[d] / dims[d]
            for d in range(field.ndim)]
    grids = np.meshgrid(*axes, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    bits = (field.values(points) > g_crit).reshape(dims)
    return BinaryImage(bits, n_sub)


def compare_window(V: BinaryImage, S: BinaryImage,
                   connectivity: str = vx.VERTEX) -> ComparisonReport:
    """Topology comparison: region counts per Euler characteristic must
    coincide for the images and for their complements."""
    if V.dims != S.dims or V.subdivision != S.subdivision:
        raise ValueError("window images must share one grid")
    sv = vx.euler_characteristic(V, connectivity)
    ss = vx.euler_characteristic(S, connectivity)
    svc = vx.euler_characteristic(V.complement(), connectivity)
    ssc = vx.euler_characteristic(S.complement(), connectivity)
    verdict = (sv.chi_multiset == ss.chi_multiset
               and svc.chi_multiset == ssc.chi_multiset)
    return ComparisonReport(verdict, sv.chi_multiset, ss.chi_multiset,
                            svc.chi_multiset, ssc.chi_multiset)


def boundary_mask(V: BinaryImage, S: BinaryImage,
                  connectivity: str = vx.VERTEX) -> BinaryImage:
    """Regions of the symmetric difference confined to the window's outer
    voxel ring and free of holes; these are boundary movements, not
    topological changes."""
    diff = vx.symmetric_difference(V, S)
    labeling = vx.label_components(diff, connectivity)
    summary = vx.euler_characteristic(diff, connectivity)
    mask_bits = np.zeros(diff.dims, dtype=bool)
    if labeling.region_count:
        sub = V.subdivision
        base_shape = tuple(n // sub for n in V.dims)
        inner = np.zeros(base_shape, dtype=bool)
        inner[tuple(slice(1, n - 1) for n in base_shape)] = True
        for axis in range(inner.ndim):
            inner = np.repeat(inner, sub, axis=axis)
        keep = [r + 1 for r in range(labeling.region_count)
                if summary.per_region_chi[r] == 1
                and not np.any(inner[labeling.labels == r + 1])]
        if keep:
            mask_bits = np.isin(labeling.labels, keep)
    return BinaryImage(mask_bits, V.subdivision)


def apply_mask(V: BinaryImage, S: BinaryImage, M: BinaryImage) -> BinaryImage:
    """Masked image F = (M & V) | (~M & S)."""
    return vx.union(vx.intersection(M, V),
                    vx.intersection(M.complement(), S))


def masked_compare(V: BinaryImage, S: BinaryImage,
                   connectivity: str = vx.VERTEX) -> ComparisonReport:
    """Comparison with the boundary mask applied first (V against F)."""
    M = boundary_mask(V, S, connectivity)
    F = apply_mask(V, S, M)
    rep = compare_window(V, F, connectivity)
    n_mask = vx.label_components(M, connectivity).region_count if M.count() else 0
    return ComparisonReport(rep.verdict, rep.chi_v, rep.chi_s,
                            rep.chi_v_compl, rep.chi_s_compl, n_mask)


def scan(voxels: BinaryImage, smooth: BinaryImage, r: int = 1,
         connectivity: str = vx.VERTEX) -> IndicatorField:
    """Run the moving-window comparison around every voxel.

    `voxels` is the direct segmentation at subdivision 1, `smooth` the
    voxelized smooth segmentation at subdivision n_sub on the same box.
    """
    if voxels.subdivision != 1:
        raise ValueError("direct segmentation must be at subdivision 1")
    n_sub = smooth.subdivision
    dims = voxels.dims
    if smooth.dims != tuple(n * n_sub for n in dims):
        raise ValueError("smooth image does not refine the voxel image")
    if r < 1:
        raise ValueError("window radius must be >= 1")
    flags = np.zeros(dims, dtype=bool)
    for center in np.ndindex(dims):
        win = Window.at(center, r, dims)
        v_bits = voxels.bits[win.base_slices()]
        for axis in range(v_bits.ndim):
            v_bits = np.repeat(v_bits, n_sub, axis=axis)
        s_bits = smooth.bits[win.fine_slices(n_sub)]
        if np.array_equal(v_bits, s_bits):
            continue
        Vw = BinaryImage(v_bits, n_sub)
        Sw = BinaryImage(s_bits, n_sub)
        flags[center] = not masked_compare(Vw, Sw, connectivity).verdict
    return IndicatorField(flags)


def mark_refinement(indicator: IndicatorField, mesh: HierarchicalMesh):
    """Active cells overlapping flagged voxels, as (level, cell) pairs."""
    marks = []
    if not indicator.any():
        return marks
    for lvl in range(mesh.max_level + 1):
        up = indicator.flags
        for axis in range(up.ndim):
            up = np.repeat(up, 2 ** lvl, axis=axis)
        hits = up & mesh.active_mask(lvl)
        marks.extend((lvl, tuple(c)) for c in np.argwhere(hits))
    return marks


@dataclass
class PipelineResult:
    """Outcome of the topology-preserving segmentation loop."""

    mesh: HierarchicalMesh
    field: LevelSetField
    history: list = field(default_factory=list)
    voxel_segmentation: BinaryImage | None = None
    converged: bool = True

    @property
    def passes_used(self) -> int:
        return len(self.history) - 1

    @property
    def final_indicator(self) -> IndicatorField:
        return self.history[-1]


def preserve_topology(grid: VoxelGrid, degree: int = 2, g_crit: float = 0.5,
                      r: int = 1, n_sub: int = 2, max_passes: int = 1,
                      connectivity: str = vx.VERTEX) -> PipelineResult:
    """Iterate smoothing, window detection, and support-based refinement
    until the smooth segmentation is window-wise topologically faithful or
    the pass budget is exhausted."""
    V = vx.threshold(grid, g_crit)
    mesh = HierarchicalMesh.base(grid)
    history = []
    level_set = None
    converged = False
    for pass_idx in range(max_passes + 1):
        basis = build_thb(mesh, degree)
        level_set = thb_field(basis, convolve_thb(grid, basis))
        smooth = voxelize_smooth(level_set, n_sub, g_crit, grid.dims)
        indicator = scan(V, smooth, r, connectivity)
        history.append(indicator)
        if not indicator.any():
            converged = True
            break
        if pass_idx == max_passes:
            logger.warning("indicator not empty after %d pass(es): %d voxels flagged",
                           max_passes, indicator.count())
            break
        _warn_on_ring_indicator(indicator)
        mesh = refine(mesh, mark_refinement(indicator, mesh), degree)
    return PipelineResult(mesh, level_set, history, V, converged)


def _warn_on_ring_indicator(indicator: IndicatorField):
    summary = vx.euler_characteristic(BinaryImage(indicator.flags, 1))
    if any(chi < 1 for chi in summary.per_region_chi):
        logger.warning("ring-shaped indicator region: its interior is not "
                       "auto-filled for refinement")
