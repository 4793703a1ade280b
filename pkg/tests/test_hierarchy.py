import numpy as np
import pytest

from toposeg.bspline import TensorBSplineBasis
from toposeg.convolution import ConvolutionCoefficients, convolve, uniform_field
from toposeg.hierarchy import (
    HierarchicalMesh,
    build_thb,
    convolve_thb,
    refine,
    thb_field,
)
from toposeg.voxel import VoxelGrid


@pytest.fixture
def grid():
    rng = np.random.default_rng(11)
    return VoxelGrid.from_values(rng.random((9, 7)))


def three_level_mesh(grid, degree=2):
    mesh = HierarchicalMesh.base(grid)
    mesh = refine(mesh, [(0, (4, 3)), (0, (2, 2))], degree)
    mesh = refine(mesh, [(1, tuple(mesh.active_cells(1)[3]))], degree)
    return mesh


class TestMesh:
    def test_base_tiles_box(self, grid):
        mesh = HierarchicalMesh.base(grid)
        assert mesh.max_level == 0
        assert mesh.active_mask(0).all()

    def test_refine_empty_marking_is_identity(self, grid):
        mesh = HierarchicalMesh.base(grid)
        assert refine(mesh, [], 2) is mesh

    def test_support_union_extent(self, grid):
        # a single marked interior cell refines the (2p+1)-cell support box
        mesh = refine(HierarchicalMesh.base(grid), [(0, (4, 3))], 2)
        region = mesh.regions[1]
        assert region.sum() == (2 * (2 * 2 + 1)) ** 2
        cover = np.argwhere(region)
        assert cover[:, 0].min() == 2 * (4 - 2) and cover[:, 0].max() == 2 * (4 + 2) + 1
        assert cover[:, 1].min() == 2 * (3 - 2) and cover[:, 1].max() == 2 * (3 + 2) + 1

    def test_boundary_clipping(self, grid):
        mesh = refine(HierarchicalMesh.base(grid), [(0, (0, 0))], 2)
        assert mesh.regions[1].sum() == (2 * 3) ** 2

    def test_marking_inactive_cell_raises(self, grid):
        mesh = three_level_mesh(grid)
        # cell (4, 3) at level 0 is covered by level 1 now
        with pytest.raises(ValueError):
            refine(mesh, [(0, (4, 3))], 2)

    def test_nestedness_and_tiling(self, grid):
        mesh = three_level_mesh(grid)
        assert mesh.max_level == 2
        for lvl in range(1, mesh.max_level + 1):
            coarse_up = np.repeat(np.repeat(mesh.regions[lvl - 1], 2, 0), 2, 1)
            assert not np.any(mesh.regions[lvl] & ~coarse_up)
        area = sum(mesh.active_mask(l).sum() * np.prod(mesh.level_spacing(l))
                   for l in range(mesh.max_level + 1))
        assert area == pytest.approx(np.prod(grid.lengths), rel=1e-12)

    def test_max_level_grows_by_one(self, grid):
        mesh = HierarchicalMesh.base(grid)
        mesh = refine(mesh, [(0, (4, 3))], 2)
        assert mesh.max_level == 1


class TestTHB:
    def test_level0_equals_uniform(self, grid):
        mesh = HierarchicalMesh.base(grid)
        basis = build_thb(mesh, 2)
        uni = TensorBSplineBasis.uniform(2, grid.dims, grid.lengths, grid.origin)
        assert basis.n == uni.n
        thb_coeffs = convolve_thb(grid, basis)
        uni_coeffs = convolve(grid, uni)
        assert np.array_equal(thb_coeffs.a, uni_coeffs.a)

    @pytest.mark.parametrize("degree", [2, 3])
    def test_partition_of_unity(self, grid, degree):
        mesh = three_level_mesh(grid, degree)
        basis = build_thb(mesh, degree)
        ones = ConvolutionCoefficients(np.ones(basis.n), np.ones(basis.n))
        field = thb_field(basis, ones)
        rng = np.random.default_rng(12)
        pts = rng.uniform(0, 1, (1000, 2)) * [9.0, 7.0]
        assert np.abs(field.values(pts) - 1.0).max() < 1e-12

    def test_conservation_on_refined_hierarchy(self, grid):
        mesh = three_level_mesh(grid)
        basis = build_thb(mesh, 2)
        field = thb_field(basis, convolve_thb(grid, basis))
        assert abs(field.integral() - grid.integral()) / abs(grid.integral()) < 1e-10

    def test_selection_rules(self, grid):
        mesh = three_level_mesh(grid)
        basis = build_thb(mesh, 2)
        for lvl, sel in enumerate(basis.selected):
            level_basis = basis.level_bases[lvl]
            from toposeg.hierarchy import _functions_inside
            inside_own = _functions_inside(level_basis, mesh.regions[lvl], 1)
            assert not np.any(sel & ~inside_own)
            if lvl < mesh.max_level:
                inside_next = _functions_inside(level_basis, mesh.regions[lvl + 1], 2)
                assert not np.any(sel & inside_next)

    def test_truncation_matches_two_scale_oracle(self, grid):
        """A truncated coarse function equals the coarse function minus its
        children supported inside the refined region, with children weights
        obtained independently by least squares on dense samples."""
        mesh = refine(HierarchicalMesh.base(grid), [(0, (4, 3))], 2)
        basis = build_thb(mesh, 2)
        fine = basis.level_bases[1]
        region_fine = mesh.regions[1]
        # pick a truncated coarse function: selected at level 0 with support
        # overlapping the refined region
        from toposeg.hierarchy import _functions_inside
        lvl0 = basis.level_bases[0]
        overlaps = ~_functions_inside(lvl0, ~mesh.regions[1], 1)  # support meets region
        cand = [i for i in np.nonzero(basis.selected[0])[0] if overlaps[i]]
        idx = cand[0]
        rng = np.random.default_rng(13)
        pts = rng.uniform(0, 1, (4000, 2)) * [9.0, 7.0]
        # dense evaluation of the coarse function
        flat0, vals0, _ = lvl0.evaluate(pts, nderiv=0)
        coarse_vals = np.sum(vals0 * (flat0 == idx), axis=1)
        # least-squares two-scale weights on the full fine basis
        flat1, vals1, _ = fine.evaluate(pts, nderiv=0)
        design = np.zeros((len(pts), fine.n))
        np.put_along_axis(design, flat1, vals1, axis=1)
        w, *_ = np.linalg.lstsq(design, coarse_vals, rcond=None)
        inside_fine = _functions_inside(fine, region_fine, 1)
        w_trunc = w * inside_fine
        oracle = coarse_vals - design @ w_trunc
        # the production truncated function
        row = np.where(np.array(basis.functions, dtype=object)[:, 0] == 0)[0]
        fn_row = [r for r, (lv, i) in enumerate(basis.functions) if lv == 0 and i == idx][0]
        a = np.zeros(basis.n)
        a[fn_row] = 1.0
        produced = thb_field(basis, ConvolutionCoefficients(a, np.ones(basis.n))).values(pts)
        assert np.abs(produced - oracle).max() < 1e-8

    def test_truncated_functions_nonnegative(self, grid):
        mesh = three_level_mesh(grid)
        basis = build_thb(mesh, 2)
        rng = np.random.default_rng(14)
        pts = rng.uniform(0, 1, (600, 2)) * [9.0, 7.0]
        for fn_row in range(0, basis.n, max(1, basis.n // 60)):
            a = np.zeros(basis.n)
            a[fn_row] = 1.0
            vals = thb_field(basis, ConvolutionCoefficients(a, np.ones(basis.n))).values(pts)
            assert vals.min() > -1e-12

    def test_uniform_refinement_equals_fine_uniform(self, grid):
        mesh = HierarchicalMesh.base(grid)
        all_cells = [(0, tuple(c)) for c in np.argwhere(np.ones(grid.dims, bool))]
        mesh = refine(mesh, all_cells, 2)
        assert mesh.regions[1].all()
        basis = build_thb(mesh, 2)
        field = thb_field(basis, convolve_thb(grid, basis))
        fine_uni = TensorBSplineBasis.uniform(2, (18, 14), grid.lengths, grid.origin)
        ref = uniform_field(fine_uni, convolve(grid, fine_uni))
        rng = np.random.default_rng(15)
        pts = rng.uniform(0, 1, (400, 2)) * [9.0, 7.0]
        assert np.abs(field.values(pts) - ref.values(pts)).max() < 1e-12

    def test_field_smooth_across_level_interface(self, grid):
        """One-sided values and gradients agree at a refinement interface."""
        mesh = refine(HierarchicalMesh.base(grid), [(0, (4, 3))], 2)
        basis = build_thb(mesh, 2)
        field = thb_field(basis, convolve_thb(grid, basis))
        # interface line: left edge of the refined box at x = 2.0
        x0 = 2.0
        ys = np.linspace(2.2, 4.8, 17)
        pts = np.stack([np.full_like(ys, x0), ys], axis=1)
        coarse_basis, fine_basis = field.bases[0], field.bases[1]
        # coarse side: pin the cell left of the interface at level 0
        cells_c = np.stack([np.full(len(ys), 1, int),
                            np.clip((ys / coarse_basis.axes[1].h).astype(int), 0, 6)], 1)
        flat_c, vals_c, grads_c = coarse_basis.evaluate(pts, nderiv=1, cells=cells_c)
        fc = np.sum(vals_c * field.coeffs[0].ravel()[flat_c], axis=1)
        gc = np.einsum("nl,nld->nd", field.coeffs[0].ravel()[flat_c], grads_c)
        # fine side: pin the cell right of the interface at level 1
        hy = fine_basis.axes[1].h
        cells_f = np.stack([np.full(len(ys), 4, int),
                            np.clip((ys / hy).astype(int), 0, 13)], 1)
        flat_f, vals_f, grads_f = fine_basis.evaluate(pts, nderiv=1, cells=cells_f)
        ff = np.sum(vals_f * field.coeffs[1].ravel()[flat_f], axis=1)
        gf = np.einsum("nl,nld->nd", field.coeffs[1].ravel()[flat_f], grads_f)
        assert np.abs(fc - ff).max() < 1e-10
        assert np.abs(gc - gf).max() < 1e-10

    def test_volumes_positive(self, grid):
        mesh = three_level_mesh(grid)
        basis = build_thb(mesh, 2)
        coeffs = convolve_thb(grid, basis)
        assert np.all(coeffs.volumes > 0)
        assert coeffs.volumes.sum() == pytest.approx(np.prod(grid.lengths), rel=1e-12)
        assert coeffs.a.min() >= grid.values.min() - 1e-12
        assert coeffs.a.max() <= grid.values.max() + 1e-12
