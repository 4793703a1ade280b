"""Voxel grid containers, thresholding, labeling, and Euler characteristics.

Axis 0 of every array is the x direction. Foreground regions are labeled
with a configurable connectivity ("vertex": cells sharing any vertex are
connected, "face": only cells sharing a facet). Hole counting inside a
region always uses the dual connectivity of the foreground.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations, product

import numpy as np
from scipy import ndimage

VERTEX = "vertex"
FACE = "face"


def _structure(ndim: int, connectivity: str) -> np.ndarray:
    if connectivity == VERTEX:
        return np.ones((3,) * ndim, dtype=bool)
    if connectivity == FACE:
        return ndimage.generate_binary_structure(ndim, 1)
    raise ValueError(f"unknown connectivity {connectivity!r}")


def _dual(connectivity: str) -> str:
    return FACE if connectivity == VERTEX else VERTEX


@dataclass(frozen=True)
class VoxelGrid:
    """Axis-aligned grayscale voxel data.

    values : float array of shape dims with entries in the grayscale range
    spacing : voxel edge length per axis
    origin : coordinate of the low corner of the box
    """

    values: np.ndarray
    spacing: tuple
    origin: tuple

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if values.ndim not in (2, 3):
            raise ValueError("voxel grids must be 2D or 3D")
        if len(self.spacing) != values.ndim or len(self.origin) != values.ndim:
            raise ValueError("spacing/origin length must match dimensionality")
        if any(s <= 0.0 for s in self.spacing):
            raise ValueError("spacings must be strictly positive")
        if any(n < 1 for n in values.shape):
            raise ValueError("dims must be positive")

    @classmethod
    def from_values(cls, values, spacing=None, origin=None) -> "VoxelGrid":
        values = np.asarray(values, dtype=float)
        nd = values.ndim
        spacing = (1.0,) * nd if spacing is None else tuple(spacing)
        origin = (0.0,) * nd if origin is None else tuple(origin)
        return cls(values, spacing, origin)

    @classmethod
    def from_uint8(cls, values, spacing=None, origin=None) -> "VoxelGrid":
        """Ingest 8-bit data; values are normalized to [0, 1] by /255."""
        return cls.from_values(np.asarray(values, dtype=float) / 255.0, spacing, origin)

    @property
    def dims(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def lengths(self) -> tuple:
        return tuple(n * s for n, s in zip(self.dims, self.spacing))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def integral(self) -> float:
        """Integral of the piecewise-constant grayscale function."""
        return float(self.values.sum() * self.cell_volume)


@dataclass(frozen=True)
class BinaryImage:
    """Boolean voxelization at some subdivision level of a base grid."""

    bits: np.ndarray
    subdivision: int = 1

    def __post_init__(self):
        bits = np.ascontiguousarray(np.asarray(self.bits, dtype=bool))
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "subdivision", int(self.subdivision))
        if self.subdivision < 1:
            raise ValueError("subdivision must be >= 1")

    @property
    def dims(self) -> tuple:
        return self.bits.shape

    @property
    def ndim(self) -> int:
        return self.bits.ndim

    def count(self) -> int:
        return int(self.bits.sum())

    def complement(self) -> "BinaryImage":
        return BinaryImage(~self.bits, self.subdivision)

    def __eq__(self, other) -> bool:
        return (isinstance(other, BinaryImage)
                and self.subdivision == other.subdivision
                and self.dims == other.dims
                and bool(np.array_equal(self.bits, other.bits)))

    def __hash__(self):
        return hash((self.dims, self.subdivision, self.bits.tobytes()))


def _check_compatible(a: BinaryImage, b: BinaryImage):
    if a.dims != b.dims or a.subdivision != b.subdivision:
        raise ValueError(f"image mismatch: {a.dims}@{a.subdivision} vs {b.dims}@{b.subdivision}")


def union(a: BinaryImage, b: BinaryImage) -> BinaryImage:
    _check_compatible(a, b)
    return BinaryImage(a.bits | b.bits, a.subdivision)


def intersection(a: BinaryImage, b: BinaryImage) -> BinaryImage:
    _check_compatible(a, b)
    return BinaryImage(a.bits & b.bits, a.subdivision)


def complement(a: BinaryImage) -> BinaryImage:
    return a.complement()


def symmetric_difference(a: BinaryImage, b: BinaryImage) -> BinaryImage:
    _check_compatible(a, b)
    return BinaryImage(a.bits ^ b.bits, a.subdivision)


def upsample(img: BinaryImage, factor: int) -> BinaryImage:
    """Replicate each cell factor^nd times; topology is unchanged."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return img
    bits = img.bits
    for axis in range(bits.ndim):
        bits = np.repeat(bits, factor, axis=axis)
    return BinaryImage(bits, img.subdivision * factor)


def threshold(grid: VoxelGrid, g_crit: float) -> BinaryImage:
    """Direct segmentation: cell is foreground iff its value exceeds g_crit."""
    return BinaryImage(grid.values > g_crit, 1)


@dataclass(frozen=True)
class RegionLabeling:
    """Connected-component labeling; label 0 is background."""

    labels: np.ndarray
    region_count: int
    connectivity: str

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)


def label_components(img: BinaryImage, connectivity: str = VERTEX) -> RegionLabeling:
    labels, n = ndimage.label(img.bits, structure=_structure(img.ndim, connectivity))
    return RegionLabeling(labels, int(n), connectivity)


@dataclass(frozen=True)
class EulerSummary:
    """Per-region Euler characteristics of a binary image."""

    per_region_chi: tuple
    chi_multiset: dict = field(compare=False)
    region_count: int = 0

    @property
    def total_chi(self) -> int:
        return int(sum(self.per_region_chi))

    def multiset_key(self) -> tuple:
        return tuple(sorted(self.chi_multiset.items()))


def _border_labels(labels: np.ndarray) -> set:
    out = set()
    for axis in range(labels.ndim):
        for idx in (0, -1):
            sl = [slice(None)] * labels.ndim
            sl[axis] = idx
            out.update(np.unique(labels[tuple(sl)]).tolist())
    out.discard(0)
    return out


def _holes_per_region(bits: np.ndarray, labels: np.ndarray, n_regions: int,
                      connectivity: str) -> np.ndarray:
    """Count enclosed background components per 2D region.

    A background component (labeled with the dual connectivity) is a hole of
    the region whose cell sits immediately below it along axis 0 at its
    minimal-index cell; components touching the image border are not holes.
    """
    holes = np.zeros(n_regions + 1, dtype=int)
    bg_labels, n_bg = ndimage.label(~bits, structure=_structure(2, _dual(connectivity)))
    if n_bg == 0:
        return holes
    touching = _border_labels(bg_labels)
    slices = ndimage.find_objects(bg_labels)
    for b in range(1, n_bg + 1):
        if b in touching:
            continue
        sl = slices[b - 1]
        local = np.argwhere(bg_labels[sl] == b)
        i0, i1 = local[0]
        owner = labels[sl[0].start + i0 - 1, sl[1].start + i1]
        holes[owner] += 1
    return holes


def _complex_euler(mask: np.ndarray) -> int:
    """Euler characteristic of the closed cubical complex spanned by the
    true cells (alternating count of vertices, edges, faces, cells)."""
    nd = mask.ndim
    chi = 0
    for k in range(nd + 1):
        for axes in combinations(range(nd), k):
            free = [d for d in range(nd) if d not in axes]
            shape = [mask.shape[d] if d in axes else mask.shape[d] + 1 for d in range(nd)]
            cov = np.zeros(shape, dtype=bool)
            for offs in product((0, 1), repeat=len(free)):
                sl = [slice(None)] * nd
                for d, o in zip(free, offs):
                    sl[d] = slice(o, mask.shape[d] + o)
                cov[tuple(sl)] |= mask
            chi += (-1) ** k * int(cov.sum())
    return chi


def _euler_summary(bits: np.ndarray, connectivity: str) -> EulerSummary:
    labels, n = ndimage.label(bits, structure=_structure(bits.ndim, connectivity))
    if n == 0:
        return EulerSummary((), {}, 0)
    if bits.ndim == 2:
        holes = _holes_per_region(bits, labels, n, connectivity)
        per_region = tuple(int(1 - holes[r]) for r in range(1, n + 1))
    else:
        slices = ndimage.find_objects(labels)
        per_region = tuple(_complex_euler(labels[slices[r - 1]] == r)
                           for r in range(1, n + 1))
    multiset: dict = {}
    for chi in per_region:
        multiset[chi] = multiset.get(chi, 0) + 1
    return EulerSummary(per_region, multiset, n)


@lru_cache(maxsize=262144)
def _euler_summary_cached(shape: tuple, payload: bytes, connectivity: str) -> EulerSummary:
    bits = np.frombuffer(payload, dtype=bool).reshape(shape)
    return _euler_summary(bits, connectivity)


def euler_characteristic(img: BinaryImage, connectivity: str = VERTEX) -> EulerSummary:
    """Per-region and total Euler characteristic.

    In 2D the characteristic of a region is one minus the number of enclosed
    holes; in 3D it is the alternating vertex/edge/face/cell count of the
    cubical complex restricted to the region.
    """
    return _euler_summary_cached(img.dims, img.bits.tobytes(), connectivity)
