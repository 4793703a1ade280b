"""Cut-cell geometry: classification, recursive bisection with midpoint
tessellation of the implicit boundary, and quadrature rules.

Cells crossed by the level set are bisected recursively; sub-boxes that end
up fully inside are kept whole, and at the maximum depth the remaining
leaves are triangulated against edge zero-crossings. The extra boundary
vertex per crossing chain (the "midpoint") is projected onto the level set,
so each leaf contributes a two-segment approximation of the trimmed
boundary. Quadrature orders may decay with bisection depth down to a single
point on the finest leaves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .bspline import gauss_rule

logger = logging.getLogger(__name__)

_LATTICE = 5          # per-axis classification samples
_LATTICE_FINE = 17    # used when the coarse lattice is ambiguous
_BISECT_ITERS = 44  # edge-parameter resolution ~6e-14


@dataclass(frozen=True)
class BackgroundMesh:
    """Uniform axis-aligned analysis mesh over a box."""

    cells: tuple
    lengths: tuple
    origin: tuple

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(int(n) for n in self.cells))
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    @property
    def ndim(self) -> int:
        return len(self.cells)

    @property
    def spacing(self) -> tuple:
        return tuple(ln / n for ln, n in zip(self.lengths, self.cells))

    def cell_box(self, cell):
        h = np.asarray(self.spacing)
        lo = np.asarray(self.origin) + np.asarray(cell, float) * h
        return lo, lo + h

    def all_cells(self) -> np.ndarray:
        grids = np.meshgrid(*[np.arange(n) for n in self.cells], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


class AnalyticLevelSet:
    """Adapter giving closed-form geometries the level-set field interface."""

    def __init__(self, fn, grad=None, origin=(0.0, 0.0), lengths=(1.0, 1.0)):
        self._fn = fn
        self._grad = grad
        self.origin = tuple(origin)
        self.lengths = tuple(lengths)
        self.ndim = len(self.origin)

    def values(self, points):
        return np.asarray(self._fn(np.atleast_2d(np.asarray(points, float))))

    def gradients(self, points):
        points = np.atleast_2d(np.asarray(points, float))
        if self._grad is not None:
            return np.asarray(self._grad(points))
        eps = 1e-7 * max(self.lengths)
        out = np.empty_like(points)
        for d in range(points.shape[1]):
            shift = np.zeros(points.shape[1])
            shift[d] = eps
            out[:, d] = (self.values(points + shift) - self.values(points - shift)) / (2 * eps)
        return out


def _lattice_offsets(ndim: int, n: int) -> np.ndarray:
    axes = [np.linspace(0.0, 1.0, n)] * ndim
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _classify_boxes(field_, los, his, g_crit, n_lattice=_LATTICE, nudge_zeros=False):
    """Classify boxes as +1 inside, -1 outside, 0 cut by sign sampling.

    With nudge_zeros, samples sitting exactly on the level set count as
    inside; sub-cell bisection uses this so that a boundary aligned with a
    sub-cell face still produces a cut leaf (and hence boundary facets) on
    the outside neighbor.
    """
    los = np.atleast_2d(np.asarray(los, float))
    his = np.atleast_2d(np.asarray(his, float))
    nd = los.shape[1]
    offs = _lattice_offsets(nd, n_lattice)
    pts = los[:, None, :] + offs[None, :, :] * (his - los)[:, None, :]
    phi = field_.values(pts.reshape(-1, nd)).reshape(len(los), -1) - g_crit
    if nudge_zeros:
        phi = np.where(np.abs(phi) < 1e-14, 1e-14, phi)
    has_pos = (phi > 0).any(axis=1)
    has_neg = (phi < 0).any(axis=1)
    out = np.zeros(len(los), dtype=int)
    out[has_pos & ~has_neg] = 1
    out[~has_pos] = -1
    # re-inspect boxes whose coarse lattice skims the level set
    span = np.abs(phi).max(axis=1)
    close = (out != 0) & (np.abs(phi).min(axis=1) < 0.05 * np.maximum(span, 1e-30))
    if np.any(close) and n_lattice < _LATTICE_FINE:
        sub = _classify_boxes(field_, los[close], his[close], g_crit,
                              _LATTICE_FINE, nudge_zeros)
        out[np.nonzero(close)[0]] = sub
    return out


def classify_cells(field_, mesh: BackgroundMesh, g_crit: float):
    """Split the background mesh into (inside, outside, cut) cell sets."""
    cells = mesh.all_cells()
    h = np.asarray(mesh.spacing)
    los = np.asarray(mesh.origin) + cells * h
    status = _classify_boxes(field_, los, los + h, g_crit)
    return cells[status == 1], cells[status == -1], cells[status == 0]


def _bisect_crossings(field_, a_pts, b_pts, g_crit):
    """Zero crossings of f - g_crit on segments a->b with a sign change."""
    a = np.atleast_2d(np.array(a_pts, dtype=float))
    b = np.atleast_2d(np.array(b_pts, dtype=float))
    fa = field_.values(a) - g_crit
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (a + b)
        fm = field_.values(mid) - g_crit
        left = (fa > 0) == (fm > 0)
        a[left] = mid[left]
        fa[left] = fm[left]
        b[~left] = mid[~left]
    return 0.5 * (a + b)


def _project_midpoint(field_, m, direction, scale, g_crit):
    """Slide a chain midpoint onto the level set along +-direction."""
    nrm = np.linalg.norm(direction)
    if nrm == 0.0:
        return m
    d = direction / nrm
    lo, hi = m - scale * d, m + scale * d
    f_lo, f_m, f_hi = field_.values(np.array([lo, m, hi])) - g_crit
    if (f_lo > 0) != (f_m > 0):
        return _bisect_crossings(field_, [lo], [m], g_crit)[0]
    if (f_m > 0) != (f_hi > 0):
        return _bisect_crossings(field_, [m], [hi], g_crit)[0]
    return m


def _simplex_measure(verts) -> float:
    v = np.asarray(verts, float)
    mat = v[1:] - v[0]
    det = np.linalg.det(mat)
    return float(det / 2.0) if v.shape[1] == 2 else float(det / 6.0)


def _facet_measure(verts) -> float:
    v = np.asarray(verts, float)
    if len(v) == 2:
        return float(np.linalg.norm(v[1] - v[0]))
    return float(0.5 * np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0])))


def _orient_against_gradient(raw_normal, grad):
    n = raw_normal / np.linalg.norm(raw_normal)
    # inside is f > g_crit, so the outward normal points against grad f
    return -n if float(np.dot(n, grad)) > 0.0 else n


@dataclass
class CutCellTessellation:
    """Sub-cells and boundary facets of one cut background cell."""

    boxes: list = field(default_factory=list)       # (lo, hi, depth)
    simplices: list = field(default_factory=list)   # (vertices, depth)
    facets: list = field(default_factory=list)      # (vertices, unit normal)

    def volume(self) -> float:
        vol = sum(float(np.prod(hi - lo)) for lo, hi, _ in self.boxes)
        vol += sum(_simplex_measure(v) for v, _ in self.simplices)
        return vol

    def boundary_measure(self) -> float:
        return float(sum(_facet_measure(v) for v, _ in self.facets))


def _walk_cell_boundary(inside, crossings):
    """Split the cyclic corner/crossing sequence of a quad into polygon runs.

    `inside` are the four corner states in cyclic order; `crossings` maps an
    edge index to True when that edge carries a zero crossing. Returns a
    list of runs; each run is a list of items ('v', corner) / ('x', edge)
    starting and ending with a crossing, enclosing the inside vertices.
    """
    items = []
    for e in range(4):
        if inside[e]:
            items.append(("v", e))
        if crossings[e]:
            items.append(("x", e))
    xpos = [k for k, it in enumerate(items) if it[0] == "x"]
    if not xpos:
        return []
    rot = items[xpos[-1] + 1:] + items[:xpos[-1] + 1]
    runs, current, x_in = [], [], ("x", items[xpos[-1]][1])
    for it in rot:
        if it[0] == "x":
            if current:
                runs.append([x_in] + current + [it])
            x_in = it
        else:
            current.append(it)
        if it[0] == "x":
            current = []
    return runs


def _polygons_2d(corner_pts, phi, crossings, center_inside):
    """Inside polygons of one quad as vertex/crossing item lists."""
    inside = phi > 0
    runs = _walk_cell_boundary(inside, {e: e in crossings for e in range(4)})
    if len(runs) == 2 and center_inside:
        runs = [runs[0] + runs[1]]
    return runs


def _resolve_items(items, corner_pts, crossings):
    verts, is_cross = [], []
    for kind, val in items:
        if kind == "v":
            verts.append(np.asarray(corner_pts[val], float))
            is_cross.append(False)
        else:
            verts.append(np.asarray(crossings[val], float))
            is_cross.append(True)
    return verts, is_cross


def _chain_pairs(verts, is_cross):
    """Indices (k, k+1 cyclic) where consecutive crossings form a chain."""
    n = len(verts)
    return [(k, (k + 1) % n) for k in range(n)
            if is_cross[k] and is_cross[(k + 1) % n]]


def _batched_project(field_, mids, dirs, scales, g_crit):
    """Batched level-set projection of chain midpoints along +-direction."""
    mids = np.asarray(mids, float)
    if len(mids) == 0:
        return mids
    dirs = np.asarray(dirs, float)
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    ok = norms[:, 0] > 0
    unit = np.where(ok[:, None], dirs / np.where(norms > 0, norms, 1.0), 0.0)
    lo = mids - scales[:, None] * unit
    hi = mids + scales[:, None] * unit
    f_lo = field_.values(lo) - g_crit
    f_m = field_.values(mids) - g_crit
    f_hi = field_.values(hi) - g_crit
    a = mids.copy()
    b = mids.copy()
    low_side = (f_lo > 0) != (f_m > 0)
    hi_side = ~low_side & ((f_m > 0) != (f_hi > 0))
    a[low_side] = lo[low_side]
    b[hi_side] = hi[hi_side]
    has = (low_side | hi_side) & ok
    out = mids.copy()
    if has.any():
        out[has] = _bisect_crossings(field_, a[has], b[has], g_crit)
    return out


def _process_leaves_2d(field_, leaves, g_crit, out: CutCellTessellation, depth: int):
    """Midpoint-tessellate a batch of leaf boxes with pooled field calls."""
    if not leaves:
        return
    los = np.array([b[0] for b in leaves])
    his = np.array([b[1] for b in leaves])
    nlv = len(leaves)
    corners = np.empty((nlv, 4, 2))
    corners[:, 0] = los
    corners[:, 1] = np.stack([his[:, 0], los[:, 1]], 1)
    corners[:, 2] = his
    corners[:, 3] = np.stack([los[:, 0], his[:, 1]], 1)
    phi = field_.values(corners.reshape(-1, 2)).reshape(nlv, 4) - g_crit
    bad = np.abs(phi) < 1e-14
    if bad.any():
        logger.debug("degenerate vertex crossings perturbed (%d)", int(bad.sum()))
        phi = np.where(bad, 1e-14, phi)
    inside = phi > 0
    full = inside.all(axis=1)
    empty = ~inside.any(axis=1)
    for k in np.nonzero(full)[0]:
        out.boxes.append((los[k], his[k], depth))
    todo = np.nonzero(~full & ~empty)[0]
    if len(todo) == 0:
        return

    # pooled crossing bisection over every cut leaf edge
    seg_a, seg_b, owner = [], [], []
    for k in todo:
        for e in range(4):
            if inside[k, e] != inside[k, (e + 1) % 4]:
                seg_a.append(corners[k, e])
                seg_b.append(corners[k, (e + 1) % 4])
                owner.append((k, e))
    located = _bisect_crossings(field_, seg_a, seg_b, g_crit)
    crossings = {key: pt for key, pt in zip(owner, located)}
    centers_in = field_.values(0.5 * (los[todo] + his[todo])) - g_crit > 0
    center_map = dict(zip(todo.tolist(), centers_in.tolist()))

    # build polygons, pool the chain midpoints for batched projection
    polys = []       # (leaf, verts, is_cross)
    chain_refs = []  # (poly index, position k)
    mids, dirs, scales = [], [], []
    for k in todo:
        cr = {e: crossings[(k, e)] for e in range(4) if (k, e) in crossings}
        for items in _polygons_2d(corners[k], phi[k], cr, center_map[k]):
            verts, is_cross = _resolve_items(items, corners[k], cr)
            pidx = len(polys)
            polys.append((k, verts, is_cross))
            nv = len(verts)
            for j in range(nv):
                if is_cross[j] and is_cross[(j + 1) % nv]:
                    a, b = verts[j], verts[(j + 1) % nv]
                    chord = b - a
                    chain_refs.append((pidx, j))
                    mids.append(0.5 * (a + b))
                    dirs.append(np.array([chord[1], -chord[0]]))
                    scales.append(0.5 * float(np.linalg.norm(his[k] - los[k])))
    if mids:
        projected = _batched_project(field_, np.array(mids), np.array(dirs),
                                     np.array(scales), g_crit)
        grads = field_.gradients(projected)
    else:
        projected = np.empty((0, 2))
        grads = np.empty((0, 2))
    mid_of = {}
    for (pidx, j), m, g in zip(chain_refs, projected, grads):
        mid_of[(pidx, j)] = (m, g)

    for pidx, (k, verts, is_cross) in enumerate(polys):
        diag = float(np.linalg.norm(his[k] - los[k]))
        poly = []
        nv = len(verts)
        for j in range(nv):
            poly.append(verts[j])
            if (pidx, j) in mid_of:
                a, b = verts[j], verts[(j + 1) % nv]
                m, grad = mid_of[(pidx, j)]
                for seg in ((a, m), (m, b)):
                    sv = np.asarray(seg)
                    t = sv[1] - sv[0]
                    if np.linalg.norm(t) < 1e-14 * diag:
                        continue
                    nrm = _orient_against_gradient(np.array([t[1], -t[0]]), grad)
                    out.facets.append((sv, nrm))
                poly.append(m)
        poly = np.asarray(poly)
        if len(poly) < 3:
            continue
        centroid = poly.mean(axis=0)
        for j in range(len(poly)):
            tri = np.array([centroid, poly[j], poly[(j + 1) % len(poly)]])
            area = _simplex_measure(tri)
            if area < 0:
                tri = tri[[0, 2, 1]]
            if abs(area) > 1e-15 * diag ** 2:
                out.simplices.append((tri, depth))


_CUBE_CORNERS = np.array(list(product((0, 1), repeat=3)))


def _cube_edges():
    edges = []
    for axis in range(3):
        others = [d for d in range(3) if d != axis]
        for fixed in product((0, 1), repeat=2):
            lo = np.zeros(3, int)
            lo[others[0]], lo[others[1]] = fixed
            hi = lo.copy()
            hi[axis] = 1
            edges.append((axis, fixed, tuple(lo), tuple(hi)))
    return edges


_EDGES_3D = _cube_edges()


def _face_frames():
    """(axis, side, u-axis, v-axis) per face with outward u x v = normal."""
    cyclic = {0: (1, 2), 1: (2, 0), 2: (0, 1)}  # e_u x e_v = +e_axis
    frames = []
    for axis in range(3):
        u, v = cyclic[axis]
        for side in (0, 1):
            if side == 1:
                frames.append((axis, side, u, v))
            else:
                frames.append((axis, side, v, u))
    return frames


_FACES_3D = _face_frames()


def _tessellate_leaf_3d(field_, lo, hi, g_crit, out: CutCellTessellation, depth: int):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    size = hi - lo
    corner_pts = lo + _CUBE_CORNERS * size
    phi = field_.values(corner_pts) - g_crit
    phi = np.where(np.abs(phi) < 1e-14, 1e-14, phi)
    inside = phi > 0
    corner_index = {tuple(c): k for k, c in enumerate(_CUBE_CORNERS)}
    if inside.all():
        out.boxes.append((lo, hi, depth))
        return
    if not inside.any():
        return

    # crossings on the 12 cube edges
    seg_a, seg_b, keys = [], [], []
    for axis, fixed, a, b in _EDGES_3D:
        ia, ib = corner_index[a], corner_index[b]
        if inside[ia] != inside[ib]:
            seg_a.append(corner_pts[ia])
            seg_b.append(corner_pts[ib])
            keys.append((a, b))
    crossing_pts = {}
    if keys:
        located = _bisect_crossings(field_, seg_a, seg_b, g_crit)
        crossing_pts = {k: p for k, p in zip(keys, located)}

    diag = float(np.linalg.norm(size))
    all_cross = list(crossing_pts.values())
    if all_cross:
        M = np.mean(all_cross, axis=0)
        M = _project_midpoint(field_, M, field_.gradients([M])[0], 0.5 * diag, g_crit)
    else:
        M = 0.5 * (lo + hi)

    boundary_tris = []   # (triangle, outward unit normal), faces + trimmed surface
    surface_tris = []

    for axis, side, ua, va in _FACES_3D:
        normal = np.zeros(3)
        normal[axis] = 1.0 if side == 1 else -1.0
        # face corner lattice coordinates in cyclic (u, v) order
        cyc = [(0, 0), (1, 0), (1, 1), (0, 1)]
        face_corners = []
        for cu, cv in cyc:
            c = np.zeros(3, int)
            c[axis] = side
            c[ua], c[va] = cu, cv
            face_corners.append(tuple(c))
        f_idx = [corner_index[c] for c in face_corners]
        f_inside = inside[f_idx]
        f_pts = corner_pts[f_idx]
        if not f_inside.any():
            continue
        f_cross = {}
        for e in range(4):
            a, b = face_corners[e], face_corners[(e + 1) % 4]
            key = (a, b) if (a, b) in crossing_pts else (b, a)
            if key in crossing_pts:
                f_cross[e] = crossing_pts[key]
        if f_inside.all() and not f_cross:
            for tri in (f_pts[[0, 1, 2]], f_pts[[0, 2, 3]]):
                if np.dot(np.cross(tri[1] - tri[0], tri[2] - tri[0]), normal) < 0:
                    tri = tri[[0, 2, 1]]
                boundary_tris.append((tri, normal))
            continue
        center = f_pts.mean(axis=0)
        center_inside = bool(field_.values([center])[0] - g_crit > 0)
        for items in _polygons_2d(f_pts, phi[f_idx], f_cross, center_inside):
            verts, is_cross = _resolve_items(items, f_pts, f_cross)
            poly = []
            for k, v in enumerate(verts):
                poly.append(v)
                nxt = (k + 1) % len(verts)
                if is_cross[k] and is_cross[nxt]:
                    a, b = verts[k], verts[nxt]
                    chord = b - a
                    in_plane = np.cross(normal, chord)
                    m = _project_midpoint(field_, 0.5 * (a + b), in_plane,
                                          0.5 * diag, g_crit)
                    poly.append(m)
                    for p, q in ((a, m), (m, b)):
                        if np.linalg.norm(q - p) > 1e-14 * diag:
                            surface_tris.append((p, q))
            poly = np.asarray(poly)
            if len(poly) < 3:
                continue
            centroid = poly.mean(axis=0)
            for k in range(len(poly)):
                tri = np.array([centroid, poly[k], poly[(k + 1) % len(poly)]])
                n_raw = np.cross(tri[1] - tri[0], tri[2] - tri[0])
                area = 0.5 * np.linalg.norm(n_raw)
                if area < 1e-15 * diag ** 2:
                    continue
                if np.dot(n_raw, normal) < 0:
                    tri = tri[[0, 2, 1]]
                boundary_tris.append((tri, normal))

    for p, q in surface_tris:
        tri = np.array([M, p, q])
        n_raw = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        area = 0.5 * np.linalg.norm(n_raw)
        if area < 1e-15 * diag ** 2:
            continue
        grad = field_.gradients([tri.mean(axis=0)])[0]
        nrm = _orient_against_gradient(n_raw, grad)
        if np.dot(np.cross(tri[1] - tri[0], tri[2] - tri[0]), nrm) < 0:
            tri = tri[[0, 2, 1]]
        out.facets.append((tri, nrm))
        boundary_tris.append((tri, nrm))

    # signed tet fan from M over the closed oriented boundary
    for tri, _n in boundary_tris:
        tet = np.vstack([M[None, :], tri])
        vol = _simplex_measure(tet)
        if abs(vol) > 1e-18 * diag ** 3:
            out.simplices.append((tet, depth))


def tessellate_cell(field_, mesh: BackgroundMesh, cell, rho_max: int,
                    g_crit: float) -> CutCellTessellation:
    """Recursively bisect one cut cell and tessellate its leaves."""
    lo, hi = mesh.cell_box(cell)
    out = CutCellTessellation()
    frontier = [(lo, hi)]
    leaves = []
    for depth in range(1, rho_max + 1):
        if not frontier:
            break
        los, his = [], []
        for blo, bhi in frontier:
            mid = 0.5 * (blo + bhi)
            for picks in product((0, 1), repeat=mesh.ndim):
                clo = np.where(np.array(picks) == 0, blo, mid)
                chi = np.where(np.array(picks) == 0, mid, bhi)
                los.append(clo)
                his.append(chi)
        los, his = np.array(los), np.array(his)
        status = _classify_boxes(field_, los, his, g_crit, nudge_zeros=True)
        next_frontier = []
        for k in range(len(los)):
            if status[k] == 1:
                out.boxes.append((los[k], his[k], depth))
            elif status[k] == 0:
                if depth == rho_max:
                    leaves.append((los[k], his[k]))
                else:
                    next_frontier.append((los[k], his[k]))
        frontier = next_frontier
    if mesh.ndim == 2:
        _process_leaves_2d(field_, leaves, g_crit, out, rho_max)
    else:
        for blo, bhi in leaves:
            _tessellate_leaf_3d(field_, blo, bhi, g_crit, out, rho_max)
    return out


@dataclass(frozen=True)
class QuadratureSchedule:
    """Bisection-depth dependent Gauss orders: k_max at depth 1, decaying
    to a single point at the maximum depth."""

    k_max: int
    rho_max: int
    decay: str = "linear"

    def __post_init__(self):
        orders = [self.order_at(r) for r in range(1, self.rho_max + 1)]
        if any(b > a for a, b in zip(orders, orders[1:])):
            raise ValueError("orders must be non-increasing in depth")
        if orders and orders[-1] != 0:
            raise ValueError("the deepest level must use a single point")

    def order_at(self, rho: int) -> int:
        if rho >= self.rho_max:
            return 0
        if self.rho_max == 1:
            return 0
        if self.decay == "linear":
            frac = (self.rho_max - rho) / (self.rho_max - 1)
            return int(round(self.k_max * frac))
        raise ValueError(f"unknown decay {self.decay!r}")

    def halved(self) -> "QuadratureSchedule":
        return QuadratureSchedule(max(self.k_max // 2, 0), self.rho_max, self.decay)


# positive-weight symmetric triangle rules, barycentric (l1, l2) + weights
_TRI_RULES = {
    0: (np.array([[1 / 3, 1 / 3]]), np.array([1.0])),
    2: (np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]),
        np.array([1 / 3, 1 / 3, 1 / 3])),
    4: (np.array([
        [0.445948490915965, 0.445948490915965],
        [0.108103018168070, 0.445948490915965],
        [0.445948490915965, 0.108103018168070],
        [0.091576213509771, 0.091576213509771],
        [0.816847572980459, 0.091576213509771],
        [0.091576213509771, 0.816847572980459]]),
        np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)),
    5: (np.array([
        [1 / 3, 1 / 3],
        [0.470142064105115, 0.470142064105115],
        [0.059715871789770, 0.470142064105115],
        [0.470142064105115, 0.059715871789770],
        [0.101286507323456, 0.101286507323456],
        [0.797426985353087, 0.101286507323456],
        [0.101286507323456, 0.797426985353087]]),
        np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)),
}

_TET_RULES = {
    0: (np.array([[0.25, 0.25, 0.25]]), np.array([1.0])),
    2: (np.array([
        [0.585410196624969, 0.138196601125011, 0.138196601125011],
        [0.138196601125011, 0.585410196624969, 0.138196601125011],
        [0.138196601125011, 0.138196601125011, 0.585410196624969],
        [0.138196601125011, 0.138196601125011, 0.138196601125011]]),
        np.array([0.25] * 4)),
}


def _simplex_rule(ndim: int, order: int):
    table = _TRI_RULES if ndim == 2 else _TET_RULES
    for key in sorted(table):
        if key >= order:
            return table[key]
    return table[max(table)]


def _box_rule(lo, hi, order: int):
    x, w = gauss_rule(order)
    nd = len(lo)
    pts_1d = [lo[d] + x * (hi[d] - lo[d]) for d in range(nd)]
    wts_1d = [w * (hi[d] - lo[d]) for d in range(nd)]
    grids = np.meshgrid(*pts_1d, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*wts_1d, indexing="ij")
    wts = np.ones(pts.shape[0])
    for g in wgrids:
        wts = wts * g.ravel()
    return pts, wts


def _simplex_quad(verts, order: int):
    verts = np.asarray(verts, float)
    nd = verts.shape[1]
    bary, w = _simplex_rule(nd, order)
    pts = verts[0] + bary @ (verts[1:] - verts[0])
    measure = _simplex_measure(verts)
    return pts, w * measure


def _facet_quad(verts, order: int, normal):
    verts = np.asarray(verts, float)
    if len(verts) == 2:
        x, w = gauss_rule(order)
        pts = verts[0] + x[:, None] * (verts[1] - verts[0])
        wts = w * np.linalg.norm(verts[1] - verts[0])
    else:
        bary, w = _TRI_RULES[_nearest_tri_order(order)]
        pts = verts[0] + bary @ (verts[1:] - verts[0])
        wts = w * _facet_measure(verts)
    normals = np.repeat(normal[None, :], len(pts), axis=0)
    return pts, wts, normals


def _nearest_tri_order(order: int) -> int:
    for key in sorted(_TRI_RULES):
        if key >= order:
            return key
    return max(_TRI_RULES)


@dataclass
class CellQuadrature:
    points: np.ndarray
    weights: np.ndarray


@dataclass
class FacetQuadrature:
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray


class TessellatedDomain:
    """Interior cells, tessellated cut cells, and boundary facets."""

    def __init__(self, mesh: BackgroundMesh, inside_cells, outside_cells, cut):
        self.mesh = mesh
        self.inside_cells = np.asarray(inside_cells, int).reshape(-1, mesh.ndim)
        self.outside_cells = np.asarray(outside_cells, int).reshape(-1, mesh.ndim)
        self.cut_cells = dict(cut)  # cell tuple -> CutCellTessellation
        self.volume_quadrature = None
        self.facet_quadrature = None

    @property
    def active_cells(self):
        cut = np.array(sorted(self.cut_cells), int).reshape(-1, self.mesh.ndim)
        if len(self.inside_cells) == 0:
            return cut
        if len(cut) == 0:
            return self.inside_cells
        return np.vstack([self.inside_cells, cut])

    def volume(self) -> float:
        cell_vol = float(np.prod(self.mesh.spacing))
        return cell_vol * len(self.inside_cells) + sum(
            t.volume() for t in self.cut_cells.values())

    def boundary_measure(self) -> float:
        return sum(t.boundary_measure() for t in self.cut_cells.values())

    def all_facets(self):
        for cell, tess in sorted(self.cut_cells.items()):
            for verts, normal in tess.facets:
                yield cell, verts, normal


def tessellate_domain(field_, mesh: BackgroundMesh, rho_max: int,
                      g_crit: float) -> TessellatedDomain:
    inside, outside, cut = classify_cells(field_, mesh, g_crit)
    tess = {}
    for cell in cut:
        tess[tuple(cell)] = tessellate_cell(field_, mesh, cell, rho_max, g_crit)
    return TessellatedDomain(mesh, inside, outside, tess)


def build_quadrature(domain: TessellatedDomain, schedule, k_max: int | None = None):
    """Attach volume and facet quadrature to a tessellated domain.

    `schedule` is a QuadratureSchedule (orders decay with depth) or a plain
    integer for a uniform order on all sub-cells. Interior cells and facets
    always use the full order k_max.
    """
    if isinstance(schedule, QuadratureSchedule):
        order_at = schedule.order_at
        k_full = schedule.k_max if k_max is None else k_max
    else:
        k_full = int(schedule) if k_max is None else k_max
        order_at = lambda rho: int(schedule)  # noqa: E731
    vol = {}
    for cell in domain.inside_cells:
        lo, hi = domain.mesh.cell_box(cell)
        pts, wts = _box_rule(lo, hi, k_full)
        vol[tuple(cell)] = CellQuadrature(pts, wts)
    facets = {}
    for cell, tess in domain.cut_cells.items():
        pts_list, wts_list = [], []
        for lo, hi, depth in tess.boxes:
            p, w = _box_rule(lo, hi, order_at(depth))
            pts_list.append(p)
            wts_list.append(w)
        for verts, depth in tess.simplices:
            p, w = _simplex_quad(verts, order_at(depth))
            pts_list.append(p)
            wts_list.append(w)
        if pts_list:
            vol[cell] = CellQuadrature(np.vstack(pts_list), np.concatenate(wts_list))
        fp, fw, fn = [], [], []
        for verts, normal in tess.facets:
            p, w, nrm = _facet_quad(verts, k_full, normal)
            fp.append(p)
            fw.append(w)
            fn.append(nrm)
        if fp:
            facets[cell] = FacetQuadrature(np.vstack(fp), np.concatenate(fw), np.vstack(fn))
    domain.volume_quadrature = vol
    domain.facet_quadrature = facets
    return domain


def exterior_edge_quadrature(field_, mesh: BackgroundMesh, axis: int, side: int,
                             g_crit: float, order: int, n_scan: int = 33):
    """1D rules on the part of one box side lying inside the domain (2D).

    Returns (points, weights, outward normals). Each background edge on the
    side is scanned for sign changes; inside intervals get mapped Gauss
    rules.
    """
    if mesh.ndim != 2:
        raise NotImplementedError("exterior quadrature is 2D only")
    other = 1 - axis
    fixed = mesh.origin[axis] + (mesh.lengths[axis] if side == 1 else 0.0)
    normal = np.zeros(2)
    normal[axis] = 1.0 if side == 1 else -1.0
    gx, gw = gauss_rule(order)
    pts_out, wts_out = [], []
    h = mesh.spacing[other]
    for c in range(mesh.cells[other]):
        t0 = mesh.origin[other] + c * h
        ts = t0 + np.linspace(0.0, h, n_scan)
        pts = np.empty((n_scan, 2))
        pts[:, axis] = fixed
        pts[:, other] = ts
        phi = field_.values(pts) - g_crit
        sign = phi > 0
        # crossing brackets
        cuts = [t0]
        for k in range(n_scan - 1):
            if sign[k] != sign[k + 1]:
                a = pts[k].copy()
                b = pts[k + 1].copy()
                cut = _bisect_crossings(field_, [a], [b], g_crit)[0]
                cuts.append(float(cut[other]))
        cuts.append(t0 + h)
        for a, b in zip(cuts[:-1], cuts[1:]):
            if b - a < 1e-14 * h:
                continue
            mid = np.empty(2)
            mid[axis] = fixed
            mid[other] = 0.5 * (a + b)
            if field_.values([mid])[0] - g_crit > 0:
                seg_pts = np.empty((len(gx), 2))
                seg_pts[:, axis] = fixed
                seg_pts[:, other] = a + gx * (b - a)
                pts_out.append(seg_pts)
                wts_out.append(gw * (b - a))
    if not pts_out:
        return np.empty((0, 2)), np.empty(0), np.empty((0, 2))
    pts = np.vstack(pts_out)
    wts = np.concatenate(wts_out)
    normals = np.repeat(normal[None, :], len(pts), axis=0)
    return pts, wts, normals
