"""Synthetic volume-fraction test images.

Shapes are inside/outside predicates on the unit box; rasterizing computes
per-voxel volume fractions by supersampling, which mimics how scanners and
the usual preprocessing produce grayscale data. Slender features are
snapped to voxel center lines so that the direct segmentation keeps them
while plain smoothing at mesh size equal to the voxel size loses them.
"""

from __future__ import annotations

import numpy as np

from .voxel import VoxelGrid


def disk(cx, cy, r):
    def inside(p):
        return (p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2 <= r * r
    return inside


def box(x0, y0, x1, y1):
    def inside(p):
        return ((p[:, 0] >= x0) & (p[:, 0] <= x1)
                & (p[:, 1] >= y0) & (p[:, 1] <= y1))
    return inside


def capsule(ax, ay, bx, by, width):
    """Segment from a to b thickened to the given full width."""
    a = np.array([ax, ay])
    d = np.array([bx - ax, by - ay])
    len2 = float(d @ d)
    r = 0.5 * width

    def inside(p):
        rel = p - a
        t = np.clip((rel @ d) / len2, 0.0, 1.0) if len2 > 0 else 0.0
        closest = np.outer(t, d) if len2 > 0 else np.zeros_like(rel)
        return np.sum((rel - closest) ** 2, axis=1) <= r * r
    return inside


def union(*shapes):
    def inside(p):
        out = np.zeros(p.shape[0], dtype=bool)
        for s in shapes:
            out |= s(p)
        return out
    return inside


def difference(base, *holes):
    def inside(p):
        out = base(p).copy()
        for h in holes:
            out &= ~h(p)
        return out
    return inside


def rasterize(shape, n: int, supersample: int = 16) -> VoxelGrid:
    """Volume fractions of `shape` on an n x n grid over the unit box."""
    fine = n * supersample
    c = (np.arange(fine) + 0.5) / fine
    xx, yy = np.meshgrid(c, c, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    hits = shape(pts).reshape(fine, fine).astype(float)
    frac = hits.reshape(n, supersample, n, supersample).mean(axis=(1, 3))
    return VoxelGrid.from_values(frac, spacing=(1.0 / n, 1.0 / n))


def _col(k: int, n: int) -> float:
    """x (or y) coordinate of the center line of voxel column k."""
    return (k + 0.5) / n


def bridge_and_channel(n: int = 35, feature_width: float = 0.82):
    """Blobs joined by a one-voxel bridge plus a bay sealed off by a
    one-voxel channel; both features vanish under plain smoothing.

    The bridge keeps the two blobs one region; the open channel keeps a
    chamber from turning into a hole. Feature widths are `feature_width`
    voxels, centered on voxel lines.
    """
    d = 1.0 / n
    w = feature_width * d
    yb = _col(n // 2, n)             # common blob/bridge row
    left = disk(0.26, yb, 0.15)
    right = disk(0.72, yb, 0.16)
    bridge = capsule(0.26, yb, 0.60, yb, w)
    chamber = disk(0.72, yb, 0.05)
    xc = _col(int(0.72 * n), n)      # channel column through the right blob
    channel = capsule(xc, yb, xc, yb - 0.16 - 2 * d, w)
    shape = difference(union(left, right, bridge), chamber, channel)
    return rasterize(shape, n)


def bridge_specimen(n: int = 32, link_width: float = 0.8):
    """Elasticity test piece: plates at top and bottom, a stout right
    column, and a left branch hanging from the top plate whose connection
    to the bottom stub is a one-voxel link."""
    d = 1.0 / n
    xl = _col(int(0.26 * n), n)      # left load path center line
    bottom = box(0.06, 0.0, 0.94, 0.20)
    top = box(0.06, 0.80, 0.94, 1.0)
    right_col = box(0.60, 0.10, 0.88, 0.90)
    left_hang = box(0.12, 0.42, 0.40, 0.90)
    left_stub = box(0.12, 0.10, 0.40, 0.33)
    link = capsule(xl, 0.30, xl, 0.45, link_width * d)
    shape = union(bottom, top, right_col, left_hang, left_stub, link)
    return rasterize(shape, n)


def branched_channel(n: int = 16, pinch_width: float = 0.85):
    """Stokes test piece: a trunk from the bottom inflow splitting into two
    branches that exit at the top; the left branch narrows to a one-voxel
    pinch.

    Wide-shape constants are deliberately non-round so smoothed walls do
    not land exactly on dyadic mesh lines; only the pinch is snapped to a
    voxel column.
    """
    d = 1.0 / n
    xp = _col(int(0.30 * n), n)      # pinch column center line
    trunk = capsule(0.5212, 0.0, 0.5212, 0.4031, 0.2443)
    right = capsule(0.5212, 0.3631, 0.7159, 1.0, 0.2027)
    left_lower = capsule(0.5212, 0.3631, xp, 0.4447, 0.1621)
    pinch = capsule(xp, 0.47, xp, 0.72, pinch_width * d)
    left_upper = capsule(xp, 0.7581, xp, 1.0, 0.1577)
    shape = union(trunk, right, left_lower, pinch, left_upper)
    return rasterize(shape, n)


def demo_face(n: int = 35):
    """Face-like demo object with two slender features that plain
    smoothing destroys: an antenna bridge and an eye drain channel."""
    d = 1.0 / n
    head = disk(0.5, 0.46, 0.34)
    eye_l = disk(0.38, 0.56, 0.05)
    eye_r = disk(0.62, 0.56, 0.05)
    mouth = capsule(0.40, 0.30, 0.60, 0.30, 0.06)
    ya = _col(int(0.86 * n), n)
    xa = _col(n // 2, n)
    antenna_tip = disk(xa, 0.93, 0.045)
    antenna = capsule(xa, 0.78, xa, 0.90, 0.85 * d)
    ye = _col(int(0.56 * n), n)
    drain = capsule(0.38, ye, 0.12, ye, 0.85 * d)
    shape = union(difference(head, eye_l, eye_r, mouth, drain),
                  antenna_tip, antenna)
    return rasterize(shape, n)


def circle_grid(n: int = 70, r: float = 0.3):
    """Plain disk, handy for geometry and quadrature checks."""
    return rasterize(disk(0.5, 0.5, r), n)
