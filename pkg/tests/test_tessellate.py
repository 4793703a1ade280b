import numpy as np
import pytest

from toposeg.convolution import smooth_grid
from toposeg.phantoms import circle_grid
from toposeg.tessellate import (
    AnalyticLevelSet,
    BackgroundMesh,
    QuadratureSchedule,
    build_quadrature,
    classify_cells,
    exterior_edge_quadrature,
    tessellate_domain,
)

R = 0.3


def circle_field(r=R, c=(0.5, 0.5)):
    return AnalyticLevelSet(
        lambda p: r ** 2 - (p[:, 0] - c[0]) ** 2 - (p[:, 1] - c[1]) ** 2,
        grad=lambda p: np.stack([-2 * (p[:, 0] - c[0]), -2 * (p[:, 1] - c[1])], 1))


def sphere_field(r=0.32):
    return AnalyticLevelSet(
        lambda p: r ** 2 - np.sum((p - 0.5) ** 2, axis=1),
        grad=lambda p: -2 * (p - 0.5),
        origin=(0, 0, 0), lengths=(1, 1, 1))


class TestClassification:
    def test_constant_inside(self):
        f = AnalyticLevelSet(lambda p: np.ones(len(p)))
        mesh = BackgroundMesh((4, 4), (1.0, 1.0), (0.0, 0.0))
        inside, outside, cut = classify_cells(f, mesh, 0.5)
        assert len(inside) == 16 and len(cut) == 0 and len(outside) == 0

    def test_mesh_aligned_halfplane_has_no_cut_cells(self):
        f = AnalyticLevelSet(lambda p: 0.5 - p[:, 0])
        mesh = BackgroundMesh((4, 4), (1.0, 1.0), (0.0, 0.0))
        inside, outside, cut = classify_cells(f, mesh, 0.0)
        assert len(cut) == 0
        assert len(inside) == 8 and len(outside) == 8

    def test_circle_against_dense_sampling_oracle(self):
        f = circle_field()
        mesh = BackgroundMesh((8, 8), (1.0, 1.0), (0.0, 0.0))
        _, _, cut = classify_cells(f, mesh, 0.0)
        # brute force: 33x33 samples per cell
        t = np.linspace(0, 1, 33)
        offs = np.stack(np.meshgrid(t, t, indexing="ij"), -1).reshape(-1, 2)
        expected = set()
        for cell in mesh.all_cells():
            lo, hi = mesh.cell_box(cell)
            phi = f.values(lo + offs * (hi - lo))
            if (phi > 0).any() and (phi <= 0).any():
                expected.add(tuple(cell))
        assert {tuple(c) for c in cut} == expected


class TestTessellation:
    def test_linear_cut_is_exact(self):
        f = AnalyticLevelSet(lambda p: 0.53 - p[:, 0],
                             grad=lambda p: np.tile([-1.0, 0.0], (len(p), 1)))
        mesh = BackgroundMesh((4, 4), (1.0, 1.0), (0.0, 0.0))
        dom = tessellate_domain(f, mesh, 2, 0.0)
        assert dom.volume() == pytest.approx(0.53, abs=1e-12)
        assert dom.boundary_measure() == pytest.approx(1.0, abs=1e-12)
        for _, verts, normal in dom.all_facets():
            assert np.allclose(verts[:, 0], 0.53, atol=1e-12)
            assert np.allclose(normal, [1.0, 0.0], atol=1e-12)

    def test_fully_inside_subcell_kept_whole(self):
        f = circle_field()
        mesh = BackgroundMesh((8, 8), (1.0, 1.0), (0.0, 0.0))
        dom = tessellate_domain(f, mesh, 3, 0.0)
        assert any(len(t.boxes) > 0 for t in dom.cut_cells.values())

    def test_circle_area_and_perimeter(self):
        f = circle_field()
        mesh = BackgroundMesh((16, 16), (1.0, 1.0), (0.0, 0.0))
        dom = tessellate_domain(f, mesh, 3, 0.0)
        assert dom.volume() == pytest.approx(np.pi * R ** 2, rel=0.01)
        assert dom.boundary_measure() == pytest.approx(2 * np.pi * R, rel=0.01)

    def test_volume_self_convergence(self):
        f = circle_field()
        mesh = BackgroundMesh((16, 16), (1.0, 1.0), (0.0, 0.0))
        v3 = tessellate_domain(f, mesh, 3, 0.0).volume()
        v4 = tessellate_domain(f, mesh, 4, 0.0).volume()
        assert abs(v3 - v4) / v4 < 0.01

    def test_facets_watertight(self):
        f = circle_field()
        mesh = BackgroundMesh((16, 16), (1.0, 1.0), (0.0, 0.0))
        dom = tessellate_domain(f, mesh, 3, 0.0)
        ends = []
        for _, verts, _ in dom.all_facets():
            ends.append(tuple(np.round(verts[0], 11)))
            ends.append(tuple(np.round(verts[1], 11)))
        # a closed polyline visits every vertex an even number of times
        from collections import Counter
        counts = Counter(ends)
        odd = [p for p, c in counts.items() if c % 2]
        assert odd == []

    def test_spline_level_set_geometry(self):
        grid = circle_grid(32, r=0.3)
        field = smooth_grid(grid, 2)
        mesh = BackgroundMesh((16, 16), (1.0, 1.0), (0.0, 0.0))
        dom = tessellate_domain(field, mesh, 3, 0.5)
        # smoothing slightly erodes the disk; stay within a few percent
        assert dom.volume() == pytest.approx(np.pi * 0.09, rel=0.03)

    def test_sphere_volume_and_area(self):
        f = sphere_field()
        mesh = BackgroundMesh((6, 6, 6), (1, 1, 1), (0, 0, 0))
        dom = tessellate_domain(f, mesh, 2, 0.0)
        assert dom.volume() == pytest.approx(4 / 3 * np.pi * 0.32 ** 3, rel=0.01)
        assert dom.boundary_measure() == pytest.approx(4 * np.pi * 0.32 ** 2, rel=0.01)


class TestQuadrature:
    def test_schedule_orders(self):
        s = QuadratureSchedule(3, 3)
        assert [s.order_at(r) for r in (1, 2, 3, 5)] == [3, 2, 0, 0]
        with pytest.raises(ValueError):
            QuadratureSchedule(3, 3, decay="bogus").order_at(1)

    def test_interior_cell_rule_exactness(self):
        f = AnalyticLevelSet(lambda p: np.ones(len(p)))
        mesh = BackgroundMesh((2, 2), (1.0, 1.0), (0.0, 0.0))
        dom = build_quadrature(tessellate_domain(f, mesh, 2, 0.0), 5)
        total = 0.0
        for q in dom.volume_quadrature.values():
            x, y = q.points[:, 0], q.points[:, 1]
            total += np.sum(q.weights * (x ** 5 + y ** 5 + x ** 3 * y ** 2))
        # exact integral over the unit square
        assert total == pytest.approx(1 / 6 + 1 / 6 + 1 / 12, abs=1e-13)

    def test_circle_area_via_quadrature(self):
        f = circle_field()
        mesh = BackgroundMesh((16, 16), (1.0, 1.0), (0.0, 0.0))
        dom = build_quadrature(tessellate_domain(f, mesh, 3, 0.0),
                               QuadratureSchedule(3, 3))
        area = sum(q.weights.sum() for q in dom.volume_quadrature.values())
        assert area == pytest.approx(np.pi * R ** 2, rel=0.01)

    def test_gauss_divergence_identity(self):
        f = circle_field()
        mesh = BackgroundMesh((16, 16), (1.0, 1.0), (0.0, 0.0))
        dom = build_quadrature(tessellate_domain(f, mesh, 3, 0.0), 5)
        vol_int = 0.0
        for q in dom.volume_quadrature.values():
            x, y = q.points[:, 0], q.points[:, 1]
            vol_int += np.sum(q.weights * (4 * x * y))
        surf_int = 0.0
        for q in dom.facet_quadrature.values():
            x, y = q.points[:, 0], q.points[:, 1]
            v = np.stack([x ** 2 * y, x * y ** 2], 1)
            surf_int += np.sum(q.weights * np.einsum("nd,nd->n", v, q.normals))
        assert abs(vol_int - surf_int) / abs(vol_int) < 1e-6

    def test_decayed_orders_stay_accurate(self):
        f = circle_field()
        mesh = BackgroundMesh((16, 16), (1.0, 1.0), (0.0, 0.0))
        sched = QuadratureSchedule(4, 3)
        vals = []
        for s in (sched, sched.halved()):
            dom = build_quadrature(tessellate_domain(f, mesh, 3, 0.0), s)
            acc = 0.0
            for q in dom.volume_quadrature.values():
                x, y = q.points[:, 0], q.points[:, 1]
                acc += np.sum(q.weights * (1.0 + x * x + y * y))
            vals.append(acc)
        assert abs(vals[0] - vals[1]) / abs(vals[0]) < 0.005


class TestExteriorEdges:
    def test_channel_bottom_edge(self):
        # vertical channel 0.3 < x < 0.7
        f = AnalyticLevelSet(lambda p: (0.2 ** 2) - (p[:, 0] - 0.5) ** 2)
        mesh = BackgroundMesh((8, 8), (1.0, 1.0), (0.0, 0.0))
        pts, wts, normals = exterior_edge_quadrature(f, mesh, axis=1, side=0,
                                                     g_crit=0.0, order=4)
        assert wts.sum() == pytest.approx(0.4, abs=1e-10)
        assert np.allclose(pts[:, 1], 0.0)
        assert np.allclose(normals, [0.0, -1.0])
        assert pts[:, 0].min() > 0.3 - 1e-9 and pts[:, 0].max() < 0.7 + 1e-9

    def test_full_side(self):
        f = AnalyticLevelSet(lambda p: np.ones(len(p)))
        mesh = BackgroundMesh((4, 4), (1.0, 1.0), (0.0, 0.0))
        pts, wts, normals = exterior_edge_quadrature(f, mesh, axis=0, side=1,
                                                     g_crit=0.5, order=3)
        assert wts.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(pts[:, 0], 1.0)
        assert np.allclose(normals, [1.0, 0.0])
