"""Nested refinement regions and truncated hierarchical B-splines.

Levels are dyadic refinements of the base mesh. Level-l functions whose
support lies inside the level-l region but not inside the level-(l+1)
region are selected; selected coarse functions are truncated by expressing
them on the next finer level and discarding the contributions of functions
living entirely inside the finer region. Each basis function is stored as
one sparse coefficient row per level, valid on that level's active cells,
which makes evaluation, integration, and field collapse uniform-basis
operations.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.sparse as sp

from .bspline import TensorBSplineBasis
from .convolution import ConvolutionCoefficients, LevelSetField, accumulate_moments
from .voxel import VoxelGrid


def _parent_cover(region: np.ndarray) -> np.ndarray:
    """Coarse-level mask of cells with at least one refined child."""
    out = region
    for axis in range(region.ndim):
        shape = out.shape[:axis] + (out.shape[axis] // 2, 2) + out.shape[axis + 1:]
        out = out.reshape(shape).any(axis=axis + 1)
    return out


def _upsample2(region: np.ndarray) -> np.ndarray:
    out = region
    for axis in range(region.ndim):
        out = np.repeat(out, 2, axis=axis)
    return out


def _box_sums(region: np.ndarray, lo_list, hi_list) -> np.ndarray:
    """Sums of `region` over the tensor boxes lo x hi (exclusive upper)."""
    padded = np.zeros(tuple(s + 1 for s in region.shape), dtype=np.int64)
    padded[tuple(slice(1, None) for _ in region.shape)] = region
    for axis in range(region.ndim):
        np.cumsum(padded, axis=axis, out=padded)
    nd = region.ndim
    total = np.zeros(tuple(len(lo) for lo in lo_list), dtype=np.int64)
    for picks in product((0, 1), repeat=nd):
        idx = [hi_list[d] if picks[d] else lo_list[d] for d in range(nd)]
        sign = (-1) ** (nd - sum(picks))
        total += sign * padded[np.ix_(*idx)]
    return total


@dataclass(frozen=True)
class HierarchicalMesh:
    """Nested dyadic refinement regions over the image box.

    regions[l] is a boolean cell mask at level-l resolution (level 0 is the
    base mesh and is always fully covered). Nestedness means every refined
    level-l cell lies inside the level-(l-1) region.
    """

    base_dims: tuple
    lengths: tuple
    origin: tuple
    regions: tuple

    def __post_init__(self):
        object.__setattr__(self, "base_dims", tuple(int(n) for n in self.base_dims))
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        regions = []
        for lvl, r in enumerate(self.regions):
            r = np.ascontiguousarray(np.asarray(r, dtype=bool))
            if r.shape != self.level_dims(lvl):
                raise ValueError(f"region {lvl} has wrong resolution {r.shape}")
            r.flags.writeable = False
            regions.append(r)
        object.__setattr__(self, "regions", tuple(regions))
        if not self.regions or not self.regions[0].all():
            raise ValueError("level 0 must cover the whole box")
        for lvl in range(1, len(self.regions)):
            if np.any(self.regions[lvl] & ~_upsample2(self.regions[lvl - 1])):
                raise ValueError("refinement regions are not nested")

    @classmethod
    def base(cls, grid_or_dims, lengths=None, origin=None) -> "HierarchicalMesh":
        if isinstance(grid_or_dims, VoxelGrid):
            dims = grid_or_dims.dims
            lengths = grid_or_dims.lengths
            origin = grid_or_dims.origin
        else:
            dims = tuple(grid_or_dims)
            lengths = tuple(lengths) if lengths is not None else tuple(float(n) for n in dims)
            origin = tuple(origin) if origin is not None else (0.0,) * len(dims)
        return cls(dims, lengths, origin, (np.ones(dims, dtype=bool),))

    @property
    def ndim(self) -> int:
        return len(self.base_dims)

    @property
    def max_level(self) -> int:
        return len(self.regions) - 1

    def level_dims(self, level: int) -> tuple:
        return tuple(n * 2 ** level for n in self.base_dims)

    def level_spacing(self, level: int) -> tuple:
        dims = self.level_dims(level)
        return tuple(ln / n for ln, n in zip(self.lengths, dims))

    def active_mask(self, level: int) -> np.ndarray:
        mask = self.regions[level].copy()
        if level < self.max_level:
            mask &= ~_parent_cover(self.regions[level + 1])
        return mask

    def active_cells(self, level: int) -> np.ndarray:
        return np.argwhere(self.active_mask(level))

    def is_active(self, level: int, cell) -> bool:
        return bool(self.active_mask(level)[tuple(cell)])


def refine(mesh: HierarchicalMesh, marked_cells, degree: int) -> HierarchicalMesh:
    """Extend the refinement regions by the supports of all functions that
    touch a marked cell.

    `marked_cells` is an iterable of (level, cell index) pairs of active
    cells. Around each marked level-l cell the level-(l+1) region grows by
    the union of supports of the level-l functions covering it, which is the
    (2p+1)-cell box clipped to the image.
    """
    marked = list(marked_cells)
    if not marked:
        return mesh
    by_level: dict = {}
    for level, cell in marked:
        cell = tuple(int(c) for c in cell)
        if not mesh.is_active(level, cell):
            raise ValueError(f"cell {cell} at level {level} is not active")
        by_level.setdefault(level, []).append(cell)

    regions = [r.copy() for r in mesh.regions]
    p = degree
    for level, cells in sorted(by_level.items()):
        ext = np.zeros(mesh.level_dims(level), dtype=bool)
        for cell in cells:
            sl = tuple(slice(max(0, c - p), min(n, c + p + 1))
                       for c, n in zip(cell, ext.shape))
            ext[sl] = True
        if level + 1 > len(regions) - 1:
            regions.append(np.zeros(mesh.level_dims(level + 1), dtype=bool))
        regions[level + 1] |= _upsample2(ext)
    # close under coarser levels: nestedness, with every region kept a union
    # of next-coarser cells so the active cells tile the box exactly once
    for level in range(len(regions) - 1, 1, -1):
        need = _parent_cover(regions[level])
        regions[level - 1] |= _upsample2(_parent_cover(need))
    return HierarchicalMesh(mesh.base_dims, mesh.lengths, mesh.origin, tuple(regions))


def _function_support_ranges(basis: TensorBSplineBasis, scale: int):
    """Per-axis support cell ranges [lo, hi) of every function, in units of
    cells that are `scale` times finer than the basis mesh."""
    los, his = [], []
    for ax in basis.axes:
        i = np.arange(ax.n)
        los.append(np.maximum(0, i - ax.degree) * scale)
        his.append(np.minimum(ax.n_cells, i + 1) * scale)
    return los, his


def _functions_inside(basis: TensorBSplineBasis, region: np.ndarray, scale: int) -> np.ndarray:
    """Flat boolean mask of functions whose (clipped) support lies inside
    the region, given at a resolution `scale` times the basis mesh."""
    los, his = _function_support_ranges(basis, scale)
    sums = _box_sums(region, los, his)
    vol = np.ones_like(sums)
    for d in range(basis.ndim):
        shape = (1,) * d + (-1,) + (1,) * (basis.ndim - d - 1)
        vol = vol * (his[d] - los[d]).reshape(shape)
    return (sums == vol).ravel()


class THBBasis:
    """Truncated hierarchical B-spline basis over a hierarchical mesh."""

    def __init__(self, mesh: HierarchicalMesh, degree: int):
        self.mesh = mesh
        self.degree = degree
        self.level_bases = [
            TensorBSplineBasis.uniform(degree, mesh.level_dims(lvl), mesh.lengths, mesh.origin)
            for lvl in range(mesh.max_level + 1)
        ]
        self.selected = self._select()
        self.functions = [(lvl, int(i))
                          for lvl, sel in enumerate(self.selected)
                          for i in np.nonzero(sel)[0]]
        self.n = len(self.functions)
        self._level_offsets = np.cumsum([0] + [int(s.sum()) for s in self.selected])
        self.reps = self._build_reps()

    @property
    def regularity(self) -> int:
        return self.degree - 1

    @property
    def max_level(self) -> int:
        return self.mesh.max_level

    def _select(self):
        mesh = self.mesh
        selected = []
        for lvl, basis in enumerate(self.level_bases):
            inside_own = _functions_inside(basis, mesh.regions[lvl], scale=1)
            if lvl < mesh.max_level:
                inside_next = _functions_inside(basis, mesh.regions[lvl + 1], scale=2)
                selected.append(inside_own & ~inside_next)
            else:
                selected.append(inside_own)
        return selected

    def _refinement_operator(self, level: int) -> sp.csr_matrix:
        mats = [ax.refinement_matrix() for ax in self.level_bases[level].axes]
        op = mats[0]
        for m in mats[1:]:
            op = sp.kron(op, m, format="csr")
        return op

    def _build_reps(self):
        reps = []
        rows = np.nonzero(self.selected[0])[0]
        rep0 = sp.csr_matrix(
            (np.ones(len(rows)), (np.arange(len(rows)), rows)),
            shape=(self.n, self.level_bases[0].n),
        )
        reps.append(rep0)
        for lvl in range(self.max_level):
            two_scale = self._refinement_operator(lvl)
            nxt = (reps[lvl] @ two_scale.T).tolil()
            # truncation: drop contributions representable inside the finer region
            fine_basis = self.level_bases[lvl + 1]
            inside_fine = _functions_inside(fine_basis, self.mesh.regions[lvl + 1], scale=1)
            nxt = nxt.tocsr() @ sp.diags((~inside_fine).astype(float))
            sel = np.nonzero(self.selected[lvl + 1])[0]
            off = self._level_offsets[lvl + 1]
            own = sp.csr_matrix(
                (np.ones(len(sel)), (off + np.arange(len(sel)), sel)),
                shape=(self.n, fine_basis.n),
            )
            nxt = (nxt + own).tocsr()
            nxt.eliminate_zeros()
            reps.append(nxt)
        return reps

    def function_integrals(self) -> np.ndarray:
        total = np.zeros(self.n)
        for lvl, basis in enumerate(self.level_bases):
            active = self.mesh.active_mask(lvl)
            cells = np.argwhere(active)
            if len(cells) == 0:
                continue
            offsets = basis._local_layout()
            w = np.ones((cells.shape[0], offsets.shape[0]))
            for d, ax in enumerate(basis.axes):
                ci = ax.cell_integrals()
                w *= ci[cells[:, d][:, None], offsets[:, d][None, :]]
            flat = basis.local_functions(cells)
            per_level = np.zeros(basis.n)
            np.add.at(per_level, flat.ravel(), w.ravel())
            total += self.reps[lvl] @ per_level
        return total


def build_thb(mesh: HierarchicalMesh, degree: int) -> THBBasis:
    return THBBasis(mesh, degree)


def convolve_thb(grid: VoxelGrid, basis: THBBasis) -> ConvolutionCoefficients:
    """Level set coefficients a_i = int(T(N_i) g) / int(T(N_i))."""
    mesh = basis.mesh
    if grid.dims != mesh.base_dims:
        raise ValueError("grid does not match the base mesh")
    numer = np.zeros(basis.n)
    vol = np.zeros(basis.n)
    for lvl, level_basis in enumerate(basis.level_bases):
        cells = mesh.active_cells(lvl)
        n_lvl, v_lvl = accumulate_moments(level_basis, cells, grid, 2 ** lvl)
        numer += basis.reps[lvl] @ n_lvl
        vol += basis.reps[lvl] @ v_lvl
    if np.any(vol <= 0.0):
        raise AssertionError("truncated basis function with non-positive volume")
    return ConvolutionCoefficients(numer / vol, vol)


def thb_field(basis: THBBasis, coeffs: ConvolutionCoefficients) -> LevelSetField:
    """Collapse THB coefficients into per-level tensor coefficient arrays."""
    arrays = []
    for lvl, level_basis in enumerate(basis.level_bases):
        c = basis.reps[lvl].T @ coeffs.a
        arrays.append(c.reshape(level_basis.shape))
    return LevelSetField(basis.level_bases, arrays, list(basis.mesh.regions))


def smooth_grid_thb(grid: VoxelGrid, mesh: HierarchicalMesh, degree: int) -> LevelSetField:
    basis = build_thb(mesh, degree)
    return thb_field(basis, convolve_thb(grid, basis))
