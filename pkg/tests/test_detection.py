import numpy as np
import pytest

import toposeg.detection as dt
import toposeg.voxel as vx
from toposeg import phantoms
from toposeg.convolution import smooth_grid
from toposeg.voxel import BinaryImage, VoxelGrid


def upsample_bits(bits, k):
    out = np.asarray(bits, bool)
    for axis in range(out.ndim):
        out = np.repeat(out, k, axis=axis)
    return out


@pytest.fixture(scope="module")
def window_cases():
    """7x7-voxel window with a blob (chi 1) and a ring (chi 0), voxelized at
    n_sub=3, plus smooth counterparts: topologically equivalent, hole lost,
    and boundary spillover."""
    n_sub = 3
    v_base = np.zeros((7, 7), bool)
    v_base[1:3, 1:3] = True          # blob
    v_base[4:7, 4:7] = True          # ring
    v_base[5, 5] = False
    V = BinaryImage(upsample_bits(v_base, n_sub), n_sub)

    s_equiv = upsample_bits(v_base, n_sub)
    s_equiv[3:10, 3:10] = True       # blob dilated by one fine cell
    s_equiv[12, 12] = False          # nick one ring corner cell
    S_equiv = BinaryImage(s_equiv, n_sub)

    s_filled = s_equiv.copy()
    s_filled[15:18, 15:18] = True    # ring hole vanishes
    S_filled = BinaryImage(s_filled, n_sub)

    s_spill = s_equiv.copy()
    s_spill[18:21, 0:9] = True       # slab confined to the outer voxel ring
    S_spill = BinaryImage(s_spill, n_sub)
    return V, S_equiv, S_filled, S_spill


class TestComparisonOperator:
    def test_region_sets_of_window_image(self, window_cases):
        V, *_ = window_cases
        s = vx.euler_characteristic(V)
        assert s.chi_multiset == {1: 1, 0: 1}

    def test_truth_table(self, window_cases):
        V, S_equiv, S_filled, S_spill = window_cases
        assert dt.compare_window(V, S_equiv).verdict is True
        assert dt.compare_window(V, S_filled).verdict is False
        assert dt.compare_window(V, S_spill).verdict is False

    def test_spillover_true_after_masking(self, window_cases):
        V, _, _, S_spill = window_cases
        rep = dt.masked_compare(V, S_spill)
        assert rep.verdict is True
        assert rep.mask_region_count == 1

    def test_verdict_equals_manual_multiset_comparison(self):
        rng = np.random.default_rng(20)
        for _ in range(60):
            V = BinaryImage(rng.random((6, 6)) > 0.5, 2)
            S = BinaryImage(rng.random((6, 6)) > 0.5, 2)
            rep = dt.compare_window(V, S)
            manual = (rep.chi_v == rep.chi_s and rep.chi_v_compl == rep.chi_s_compl)
            assert rep.verdict == manual

    def test_complement_objectivity_sampled(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            V = BinaryImage(rng.random((4, 4)) > 0.5)
            S = BinaryImage(rng.random((4, 4)) > 0.5)
            assert dt.compare_window(V, S).verdict == \
                dt.compare_window(V.complement(), S.complement()).verdict

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            dt.compare_window(BinaryImage(np.zeros((3, 3), bool), 1),
                              BinaryImage(np.zeros((6, 6), bool), 2))


class TestMask:
    def test_identical_images_empty_mask(self):
        rng = np.random.default_rng(22)
        V = BinaryImage(rng.random((9, 9)) > 0.5, 3)
        assert dt.boundary_mask(V, V).count() == 0

    def test_spill_masked_fringe_not(self, window_cases):
        V, S_equiv, _, S_spill = window_cases
        M = dt.boundary_mask(V, S_spill)
        # the slab cells are masked
        assert M.bits[18:21, 0:9].all()
        # the blob fringe (touching interior voxels) is not
        diff = vx.symmetric_difference(V, S_equiv)
        fringe = diff.bits & ~M.bits
        assert fringe.sum() == diff.count()

    def test_mask_complement_invariance(self):
        rng = np.random.default_rng(23)
        for _ in range(80):
            V = BinaryImage(rng.random((8, 8)) > 0.5, 2)
            S = BinaryImage(rng.random((8, 8)) > 0.5, 2)
            assert dt.boundary_mask(V, S) == dt.boundary_mask(V.complement(), S.complement())

    def test_interior_region_excluded(self):
        # a difference region crossing into the window interior is kept out
        v = np.zeros((9, 9), bool)
        V = BinaryImage(v, 3)
        s = np.zeros((9, 9), bool)
        s[0:5, 3:5] = True  # crosses from the ring into the interior
        S = BinaryImage(s, 3)
        assert dt.boundary_mask(V, S).count() == 0


class TestApplyMask:
    def test_empty_mask_returns_smooth(self):
        rng = np.random.default_rng(24)
        V = BinaryImage(rng.random((6, 6)) > 0.5, 2)
        S = BinaryImage(rng.random((6, 6)) > 0.5, 2)
        M = BinaryImage(np.zeros((6, 6), bool), 2)
        assert dt.apply_mask(V, S, M) == S

    def test_complement_identity_exhaustive_small(self):
        # F(V,S)' == F(V',S') bitwise, all masks on 2x2 with random 4x4 sweep
        rng = np.random.default_rng(25)
        for _ in range(400):
            V = BinaryImage(rng.random((4, 4)) > 0.5)
            S = BinaryImage(rng.random((4, 4)) > 0.5)
            M = BinaryImage(rng.random((4, 4)) > 0.5)
            lhs = dt.apply_mask(V, S, M).complement()
            rhs = dt.apply_mask(V.complement(), S.complement(), M)
            assert lhs == rhs


class TestWindow:
    def test_zero_neighborhood(self):
        w = dt.Window.at((3, 4), 0, (10, 10))
        assert w.base_shape == (1, 1)

    def test_interior_window_size(self):
        w = dt.Window.at((5, 5), 2, (11, 11))
        assert np.prod(w.base_shape) == 5 ** 2

    def test_clipping(self):
        w = dt.Window.at((0, 10), 1, (11, 11))
        assert w.extent == ((0, 2), (9, 11))


class TestScan:
    def test_identical_images_no_flags(self):
        rng = np.random.default_rng(26)
        v = rng.random((10, 10)) > 0.5
        V = BinaryImage(v, 1)
        S = BinaryImage(upsample_bits(v, 2), 2)
        indicator = dt.scan(V, S, r=1)
        assert not indicator.any()

    def test_deterministic(self):
        g = phantoms.bridge_and_channel(35)
        V = vx.threshold(g, 0.5)
        S = dt.voxelize_smooth(smooth_grid(g, 2), 2, 0.5, g.dims)
        a = dt.scan(V, S, r=1)
        b = dt.scan(V, S, r=1)
        assert np.array_equal(a.flags, b.flags)

    def test_flags_cover_both_anomaly_zones(self):
        g = phantoms.bridge_and_channel(35)
        V = vx.threshold(g, 0.5)
        S = dt.voxelize_smooth(smooth_grid(g, 2), 2, 0.5, g.dims)
        ind = dt.scan(V, S, r=1)
        zones = vx.label_components(BinaryImage(ind.flags)).region_count
        assert zones >= 2

    def test_growth_with_window_radius(self):
        g = phantoms.demo_face(35)
        V = vx.threshold(g, 0.5)
        S = dt.voxelize_smooth(smooth_grid(g, 2), 3, 0.5, g.dims)
        counts = [dt.scan(V, S, r=r).count() for r in (1, 2, 3)]
        assert counts[0] <= counts[1] <= counts[2]
        assert counts[0] > 0


class TestVoxelizeSmooth:
    def test_constant_field(self):
        g = VoxelGrid.from_values(np.ones((6, 6)))
        f = smooth_grid(g, 2)
        for n_sub in (1, 2, 3):
            img = dt.voxelize_smooth(f, n_sub, 0.5, g.dims)
            assert img.count() == 36 * n_sub ** 2

    def test_chi_stable_once_converged(self):
        g = phantoms.circle_grid(24, r=0.31)
        f = smooth_grid(g, 2)
        keys = []
        for n_sub in (2, 3, 4):
            s = vx.euler_characteristic(dt.voxelize_smooth(f, n_sub, 0.5, g.dims))
            keys.append((s.region_count, s.multiset_key()))
        assert keys[0] == keys[1] == keys[2]


class TestPreserveTopology:
    def test_faithful_image_needs_no_refinement(self):
        g = phantoms.circle_grid(24, r=0.31)
        res = dt.preserve_topology(g, max_passes=2)
        assert res.converged and res.passes_used == 0
        assert res.mesh.max_level == 0

    def test_bridge_image_repaired_in_one_pass(self):
        g = phantoms.bridge_and_channel(35)
        V = vx.threshold(g, 0.5)
        sv = vx.euler_characteristic(V)

        broken = dt.preserve_topology(g, max_passes=0)
        s0 = vx.euler_characteristic(dt.voxelize_smooth(broken.field, 2, 0.5, g.dims))
        assert not broken.converged
        assert (s0.region_count, s0.multiset_key()) != (sv.region_count, sv.multiset_key())

        fixed = dt.preserve_topology(g, max_passes=1)
        s1 = vx.euler_characteristic(dt.voxelize_smooth(fixed.field, 2, 0.5, g.dims))
        assert fixed.converged and fixed.passes_used == 1
        assert s1.region_count == sv.region_count
        assert s1.multiset_key() == sv.multiset_key()

    def test_refinement_never_changes_direct_segmentation(self):
        g = phantoms.bridge_and_channel(35)
        res = dt.preserve_topology(g, max_passes=1)
        assert res.voxel_segmentation == vx.threshold(g, 0.5)

    def test_marks_on_flagged_voxels_only(self):
        g = phantoms.bridge_and_channel(35)
        V = vx.threshold(g, 0.5)
        S = dt.voxelize_smooth(smooth_grid(g, 2), 2, 0.5, g.dims)
        ind = dt.scan(V, S, r=1)
        from toposeg.hierarchy import HierarchicalMesh
        mesh = HierarchicalMesh.base(g)
        marks = dt.mark_refinement(ind, mesh)
        assert len(marks) == ind.count()
        assert all(lvl == 0 for lvl, _ in marks)
        flagged = {tuple(c) for c in ind.flagged()}
        assert {cell for _, cell in marks} == flagged

    def test_empty_indicator_no_marks(self):
        from toposeg.hierarchy import HierarchicalMesh
        ind = dt.IndicatorField(np.zeros((5, 5), bool))
        mesh = HierarchicalMesh.base(VoxelGrid.from_values(np.zeros((5, 5))))
        assert dt.mark_refinement(ind, mesh) == []
