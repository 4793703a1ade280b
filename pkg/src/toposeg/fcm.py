"""2D immersed Galerkin solvers on tensor B-spline spaces.

Linear elasticity (plane strain, strong Dirichlet data on mesh-conforming
exterior boundaries, traction-free immersed boundary) and Stokes flow
(no-slip immersed walls via symmetric Nitsche, pressure-driven in/outflow,
ghost penalties on velocity and skeleton penalties on pressure so that
equal-order spaces are stable). Cut-cell integration comes from the
tessellation module.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bspline import TensorBSplineBasis, gauss_rule
from .tessellate import (
    BackgroundMesh,
    TessellatedDomain,
    build_quadrature,
    exterior_edge_quadrature,
    tessellate_domain,
)

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ElasticityProblem:
    """Uniaxial extension driven by a prescribed top displacement."""

    lam: float = 0.5
    mu: float = 0.5
    u_bar: float = 0.2

    def __post_init__(self):
        if self.lam <= 0 or self.mu <= 0:
            raise ValueError("Lame parameters must be positive")


@dataclass(frozen=True)
class StokesProblem:
    """Pressure-driven Stokes flow with no-slip immersed walls."""

    mu: float = 1.0
    p_bar: float = 1.0
    beta: float = 100.0
    gamma: float = 0.05
    gamma_tilde: float = 0.0005
    inflow_side: tuple = (1, 0)    # (axis, side) of the ambient box
    outflow_side: tuple = (1, 1)

    def __post_init__(self):
        if self.mu <= 0 or self.beta <= 0:
            raise ValueError("viscosity and Nitsche penalty must be positive")
        if self.gamma < 0 or self.gamma_tilde < 0:
            raise ValueError("stabilization constants must be non-negative")


class BackgroundDiscretization:
    """Ambient mesh, spline space, cut-cell data, and face sets."""

    def __init__(self, field, n_cells, degree=2, rho_max=3, g_crit=0.5,
                 quad_order=None, lengths=None, origin=None):
        lengths = tuple(lengths) if lengths is not None else tuple(field.lengths)
        origin = tuple(origin) if origin is not None else tuple(field.origin)
        if isinstance(n_cells, int):
            n_cells = (n_cells,) * len(lengths)
        self.field = field
        self.degree = degree
        self.g_crit = g_crit
        self.mesh = BackgroundMesh(tuple(n_cells), lengths, origin)
        if self.mesh.ndim != 2:
            raise NotImplementedError("the immersed solver is 2D only")
        self.space = TensorBSplineBasis.uniform(degree, self.mesh.cells, lengths, origin)
        self.domain: TessellatedDomain = tessellate_domain(field, self.mesh, rho_max, g_crit)
        build_quadrature(self.domain, quad_order if quad_order is not None else 2 * degree + 1)
        self._build_activity()
        self._build_faces()

    def _build_activity(self):
        cells = self.mesh.cells
        self.cut_mask = np.zeros(cells, dtype=bool)
        for cell in self.domain.cut_cells:
            self.cut_mask[cell] = True
        self.active_mask = np.zeros(cells, dtype=bool)
        for cell in self.domain.inside_cells:
            self.active_mask[tuple(cell)] = True
        self.active_mask |= self.cut_mask
        # a function is active when its support touches an active cell
        active_fn = np.zeros(self.space.shape, dtype=bool)
        acc = np.zeros(tuple(n + self.degree for n in cells), dtype=bool)
        # accumulate: function (ix, iy) is supported on cells ix-p..ix, iy-p..iy
        p = self.degree
        for ox in range(p + 1):
            for oy in range(p + 1):
                acc[ox:ox + cells[0], oy:oy + cells[1]] |= self.active_mask
        self.active_fn = acc[:self.space.shape[0], :self.space.shape[1]]

    def _build_faces(self):
        self.skeleton_faces = []   # (axis, cell) with neighbor cell + e_axis
        self.ghost_faces = []
        act, cut = self.active_mask, self.cut_mask
        for axis in range(2):
            sl_l = [slice(None)] * 2
            sl_r = [slice(None)] * 2
            sl_l[axis] = slice(0, -1)
            sl_r[axis] = slice(1, None)
            both = act[tuple(sl_l)] & act[tuple(sl_r)]
            ghost = both & (cut[tuple(sl_l)] | cut[tuple(sl_r)])
            for c in np.argwhere(both):
                self.skeleton_faces.append((axis, tuple(c)))
            for c in np.argwhere(ghost):
                self.ghost_faces.append((axis, tuple(c)))

    @property
    def n_scalar(self) -> int:
        return self.space.n

    def cell_quadrature_items(self):
        for cell in self.domain.inside_cells:
            yield tuple(cell), self.domain.volume_quadrature[tuple(cell)]
        for cell in sorted(self.domain.cut_cells):
            q = self.domain.volume_quadrature.get(cell)
            if q is not None and len(q.weights):
                yield cell, q

    def basis_on_points(self, cell, points, nderiv=1):
        cells = np.tile(np.asarray(cell, int), (len(points), 1))
        return self.space.evaluate(points, nderiv=nderiv, cells=cells)

    def edge_function_indices(self, axis: int, side: int) -> np.ndarray:
        """Flat indices of functions that are nonzero on a box side."""
        idx = [np.arange(n) for n in self.space.shape]
        idx[axis] = np.array([0 if side == 0 else self.space.shape[axis] - 1])
        grids = np.meshgrid(*idx, indexing="ij")
        return np.ravel_multi_index([g.ravel() for g in grids], self.space.shape)


def _face_quadrature(disc: BackgroundDiscretization, axis: int, cell, order: int):
    """1D Gauss points on the face between `cell` and its +axis neighbor."""
    lo, hi = disc.mesh.cell_box(cell)
    other = 1 - axis
    x, w = gauss_rule(order)
    pts = np.empty((len(x), 2))
    pts[:, axis] = hi[axis]
    pts[:, other] = lo[other] + x * (hi[other] - lo[other])
    return pts, w * (hi[other] - lo[other])


def _derivative_jump(disc: BackgroundDiscretization, axis: int, cell, order: int):
    """Per-function jump of the order-th normal derivative across a face.

    Returns (indices, jump values) for the p+2 univariate functions along
    the face normal; the tangential factor is handled by the caller.
    """
    ax = disc.space.axes[axis]
    c = cell[axis]
    xf = ax.origin + (c + 1) * ax.h
    left = ax.evaluate(np.array([xf]), deriv=order, cells=np.array([c]))[1][0]
    right = ax.evaluate(np.array([xf]), deriv=order, cells=np.array([c + 1]))[1][0]
    idx = np.arange(c, c + ax.degree + 2)   # functions alive on either side
    jump = np.zeros(len(idx))
    jump[:ax.degree + 1] += left
    jump[1:] -= right
    return idx, jump


class _SystemBuilder:
    def __init__(self, ndof):
        self.rows, self.cols, self.vals = [], [], []
        self.rhs = np.zeros(ndof)
        self.ndof = ndof

    def add_block(self, rows, cols, block):
        r, c = np.meshgrid(rows, cols, indexing="ij")
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(np.asarray(block).ravel())

    def matrix(self) -> sp.csr_matrix:
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.ndof, self.ndof))


def _constrained_solve(K: sp.csr_matrix, rhs: np.ndarray, constraints: dict):
    """Eliminate Dirichlet constraints, factor, solve, and report health."""
    ndof = K.shape[0]
    fixed = np.zeros(ndof, dtype=bool)
    values = np.zeros(ndof)
    for dof, val in constraints.items():
        fixed[dof] = True
        values[dof] = val
    free = np.nonzero(~fixed)[0]
    x = values.copy()
    Kff = K[free][:, free].tocsc()
    b = rhs[free] - K[free][:, np.nonzero(fixed)[0]] @ values[fixed]
    try:
        lu = spla.splu(Kff)
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc
    xf = lu.solve(b)
    diag = np.abs(lu.U.diagonal())
    pivot_ratio = float(diag.min() / diag.max()) if len(diag) else 1.0
    x[free] = xf
    res = np.linalg.norm(Kff @ xf - b) / max(np.linalg.norm(b), 1e-300)
    if not np.isfinite(xf).all():
        raise SolverError("solution is not finite (singular system)")
    return x, pivot_ratio, res


@dataclass
class FieldSolution:
    """Solved coefficient vector with evaluation helpers."""

    disc: BackgroundDiscretization
    values: np.ndarray
    n_fields: int
    pivot_ratio: float
    residual: float

    def component(self, k: int) -> np.ndarray:
        n = self.disc.n_scalar
        return self.values[k * n:(k + 1) * n]

    def evaluate(self, points, k: int) -> np.ndarray:
        flat, vals, _ = self.disc.space.evaluate(np.atleast_2d(points), nderiv=0)
        return np.sum(vals * self.component(k)[flat], axis=1)

    def gradient(self, points, k: int) -> np.ndarray:
        flat, _, grads = self.disc.space.evaluate(np.atleast_2d(points), nderiv=1)
        return np.einsum("nl,nld->nd", self.component(k)[flat], grads)


def assemble_elasticity(disc: BackgroundDiscretization, problem: ElasticityProblem):
    """Stiffness and constraints for the uniaxial extension problem."""
    n = disc.n_scalar
    builder = _SystemBuilder(2 * n)
    lam, mu = problem.lam, problem.mu
    for cell, quad in disc.cell_quadrature_items():
        flat, _, grads = disc.basis_on_points(cell, quad.points)
        gx, gy = grads[:, :, 0], grads[:, :, 1]
        w = quad.weights
        axx = np.einsum("q,qi,qj->ij", w, gx, gx) * (lam + 2 * mu) \
            + np.einsum("q,qi,qj->ij", w, gy, gy) * mu
        ayy = np.einsum("q,qi,qj->ij", w, gy, gy) * (lam + 2 * mu) \
            + np.einsum("q,qi,qj->ij", w, gx, gx) * mu
        axy = np.einsum("q,qi,qj->ij", w, gx, gy) * lam \
            + np.einsum("q,qi,qj->ij", w, gy, gx) * mu
        dofs = flat[0]
        builder.add_block(dofs, dofs, axx)
        builder.add_block(dofs + n, dofs + n, ayy)
        builder.add_block(dofs, dofs + n, axy)
        builder.add_block(dofs + n, dofs, axy.T)
    K = builder.matrix()
    return K, builder.rhs, elasticity_constraints(disc, problem)


def dirichlet_on_side(disc: BackgroundDiscretization, axis: int, side: int,
                      component: int, fn, constraints: dict):
    """Constrain one displacement component on a conforming box side.

    `fn` maps the tangential coordinate to the prescribed value; spline
    boundary coefficients are set at the Greville abscissae, which
    reproduces affine data exactly.
    """
    n = disc.n_scalar
    other = 1 - axis
    greville = disc.space.axes[other].greville()
    edge = disc.edge_function_indices(axis, side)
    tang_index = np.unravel_index(edge, disc.space.shape)[other]
    for dof, t in zip(edge, greville[tang_index]):
        constraints[component * n + dof] = float(fn(t))
    return constraints


def elasticity_constraints(disc: BackgroundDiscretization,
                           problem: ElasticityProblem) -> dict:
    """Paper setup: clamped bottom, prescribed normal displacement on top,
    rollers on the vertical sides, inactive functions pinned."""
    n = disc.n_scalar
    constraints = {}
    for i in np.nonzero(~disc.active_fn.ravel())[0]:
        constraints[i] = 0.0
        constraints[i + n] = 0.0
    dirichlet_on_side(disc, 1, 0, 0, lambda t: 0.0, constraints)
    dirichlet_on_side(disc, 1, 0, 1, lambda t: 0.0, constraints)
    dirichlet_on_side(disc, 1, 1, 0, lambda t: 0.0, constraints)
    dirichlet_on_side(disc, 1, 1, 1, lambda t: problem.u_bar, constraints)
    for side in (0, 1):
        for i in disc.edge_function_indices(0, side):
            constraints.setdefault(i, 0.0)
    return constraints


def solve_elasticity(disc: BackgroundDiscretization, problem: ElasticityProblem,
                     constraints: dict | None = None) -> FieldSolution:
    K, rhs, default = assemble_elasticity(disc, problem)
    x, pivot, res = _constrained_solve(K, rhs, default if constraints is None else constraints)
    logger.debug("elasticity solve: pivot ratio %.2e residual %.2e", pivot, res)
    return FieldSolution(disc, x, 2, pivot, res)


def effective_modulus(solution: FieldSolution, problem: ElasticityProblem) -> float:
    """Volume-averaged vertical stress scaled to an effective modulus."""
    disc = solution.disc
    n = disc.n_scalar
    ax, ay = solution.values[:n], solution.values[n:]
    total = 0.0
    for cell, quad in disc.cell_quadrature_items():
        flat, _, grads = disc.basis_on_points(cell, quad.points)
        dux = np.einsum("ql,qld->qd", ax[flat], grads)
        duy = np.einsum("ql,qld->qd", ay[flat], grads)
        sigma22 = problem.lam * (dux[:, 0] + duy[:, 1]) + 2 * problem.mu * duy[:, 1]
        total += float(np.sum(quad.weights * sigma22))
    L = disc.mesh.lengths[1]
    v_img = float(np.prod(disc.mesh.lengths))
    return (L / problem.u_bar) * total / v_img


def assemble_stokes(disc: BackgroundDiscretization, problem: StokesProblem):
    """Mixed system with Nitsche walls, ghost and skeleton penalties."""
    n = disc.n_scalar
    ndof = 3 * n
    builder = _SystemBuilder(ndof)
    mu = problem.mu
    k = disc.degree
    h = max(disc.mesh.spacing)

    for cell, quad in disc.cell_quadrature_items():
        flat, vals, grads = disc.basis_on_points(cell, quad.points)
        gx, gy = grads[:, :, 0], grads[:, :, 1]
        w = quad.weights
        axx = 2 * mu * (np.einsum("q,qi,qj->ij", w, gx, gx)
                        + 0.5 * np.einsum("q,qi,qj->ij", w, gy, gy))
        ayy = 2 * mu * (np.einsum("q,qi,qj->ij", w, gy, gy)
                        + 0.5 * np.einsum("q,qi,qj->ij", w, gx, gx))
        axy = mu * np.einsum("q,qi,qj->ij", w, gy, gx)
        bx = -np.einsum("q,qi,qj->ij", w, vals, gx)
        by = -np.einsum("q,qi,qj->ij", w, vals, gy)
        dofs = flat[0]
        builder.add_block(dofs, dofs, axx)
        builder.add_block(dofs + n, dofs + n, ayy)
        builder.add_block(dofs, dofs + n, axy)
        builder.add_block(dofs + n, dofs, axy.T)
        builder.add_block(dofs + 2 * n, dofs, bx)          # continuity rows
        builder.add_block(dofs + 2 * n, dofs + n, by)
        builder.add_block(dofs, dofs + 2 * n, bx.T)        # momentum columns
        builder.add_block(dofs + n, dofs + 2 * n, by.T)

    # Nitsche terms on the immersed boundary
    for cell, quad in (disc.domain.facet_quadrature or {}).items():
        flat, vals, grads = disc.basis_on_points(cell, quad.points)
        gx, gy = grads[:, :, 0], grads[:, :, 1]
        w, nrm = quad.weights, quad.normals
        nx, ny = nrm[:, 0], nrm[:, 1]
        # rows: (sym grad of basis) . n, per component
        tx_x = gx * nx[:, None] + 0.5 * gy * ny[:, None]   # x comp of (grad^s phi e_x) n
        tx_y = 0.5 * gy * nx[:, None]
        ty_x = 0.5 * gx * ny[:, None]
        ty_y = 0.5 * gx * nx[:, None] + gy * ny[:, None]
        dofs = flat[0]
        blocks = {
            (0, 0): np.einsum("q,qi,qj->ij", w, vals, tx_x),
            (0, 1): np.einsum("q,qi,qj->ij", w, vals, ty_x),
            (1, 0): np.einsum("q,qi,qj->ij", w, vals, tx_y),
            (1, 1): np.einsum("q,qi,qj->ij", w, vals, ty_y),
        }
        for (ci, cj), consistency in blocks.items():
            both = -2 * mu * consistency
            builder.add_block(dofs + ci * n, dofs + cj * n, both)
            builder.add_block(dofs + cj * n, dofs + ci * n, both.T)
        mass = np.einsum("q,qi,qj->ij", w, vals, vals) * (mu * problem.beta / h)
        builder.add_block(dofs, dofs, mass)
        builder.add_block(dofs + n, dofs + n, mass)
        # pressure part of the boundary traction and its adjoint in the
        # continuity rows (full-traction Nitsche consistency)
        bgx = np.einsum("q,qi,qj->ij", w * nx, vals, vals)
        bgy = np.einsum("q,qi,qj->ij", w * ny, vals, vals)
        builder.add_block(dofs, dofs + 2 * n, bgx)
        builder.add_block(dofs + n, dofs + 2 * n, bgy)
        builder.add_block(dofs + 2 * n, dofs, bgx.T)
        builder.add_block(dofs + 2 * n, dofs + n, bgy.T)

    # ghost (velocity) and skeleton (pressure) face penalties
    w_ghost = problem.gamma_tilde * mu * h ** (2 * k - 1)
    w_skel = problem.gamma / mu * h ** (2 * k + 1)
    tang_order = 2 * k + 1
    ghost_set = set(disc.ghost_faces)
    for axis, cell in disc.skeleton_faces:
        is_ghost = (axis, cell) in ghost_set
        if w_skel == 0.0 and not (is_ghost and w_ghost > 0.0):
            continue
        nrm_idx, jump = _derivative_jump(disc, axis, cell, k)
        pts, wq = _face_quadrature(disc, axis, cell, tang_order)
        other = 1 - axis
        ax_t = disc.space.axes[other]
        tcells = np.full(len(pts), cell[other], dtype=int)
        _, tvals = ax_t.evaluate(pts[:, other], deriv=0, cells=tcells)
        tmass = np.einsum("q,qa,qb->ab", wq, tvals, tvals)
        t_idx = np.arange(cell[other], cell[other] + disc.degree + 1)
        # involved functions laid out normal-major as (a, c)
        if axis == 0:
            flat = np.ravel_multi_index((nrm_idx[:, None], t_idx[None, :]),
                                        disc.space.shape)
        else:
            flat = np.ravel_multi_index((t_idx[None, :], nrm_idx[:, None]),
                                        disc.space.shape)
        rows = flat.ravel()
        jj = np.outer(jump, jump)
        block = np.einsum("ab,cd->acbd", jj, tmass).reshape(len(rows), len(rows))
        if is_ghost and w_ghost > 0.0:
            builder.add_block(rows, rows, w_ghost * block)
            builder.add_block(rows + n, rows + n, w_ghost * block)
        if w_skel > 0.0:
            builder.add_block(rows + 2 * n, rows + 2 * n, -w_skel * block)

    # inflow traction on the ambient boundary
    axis, side = problem.inflow_side
    pts, wq, normals = exterior_edge_quadrature(disc.field, disc.mesh, axis, side,
                                                disc.g_crit, 2 * k + 1)
    if len(pts):
        flat, vals, _ = disc.space.evaluate(pts, nderiv=0)
        for comp in (0, 1):
            scale = -problem.p_bar * wq * normals[:, comp]
            np.add.at(builder.rhs, comp * n + flat, vals * scale[:, None])
    K = builder.matrix()

    constraints = {}
    inactive = np.nonzero(~disc.active_fn.ravel())[0]
    for i in inactive:
        constraints[i] = 0.0
        constraints[i + n] = 0.0
        constraints[i + 2 * n] = 0.0
    return K, builder.rhs, constraints


def solve_stokes(disc: BackgroundDiscretization, problem: StokesProblem) -> FieldSolution:
    K, rhs, constraints = assemble_stokes(disc, problem)
    try:
        x, pivot, res = _constrained_solve(K, rhs, constraints)
    except SolverError as exc:
        raise SolverError(f"{exc} (gamma={problem.gamma}, "
                          f"gamma_tilde={problem.gamma_tilde})") from exc
    logger.debug("stokes solve: pivot ratio %.2e residual %.2e", pivot, res)
    return FieldSolution(disc, x, 3, pivot, res)


def outflow_flux(solution: FieldSolution, axis: int, side: int,
                 span=None) -> float:
    """Boundary flux of the velocity through part of an ambient box side.

    `span` restricts the tangential coordinate (used to tag one branch of a
    multi-outlet domain).
    """
    disc = solution.disc
    pts, wq, normals = exterior_edge_quadrature(disc.field, disc.mesh, axis, side,
                                                disc.g_crit, 2 * disc.degree + 1)
    if len(pts) == 0:
        return 0.0
    if span is not None:
        other = 1 - axis
        keep = (pts[:, other] >= span[0]) & (pts[:, other] <= span[1])
        pts, wq, normals = pts[keep], wq[keep], normals[keep]
        if len(pts) == 0:
            return 0.0
    ux = solution.evaluate(pts, 0)
    uy = solution.evaluate(pts, 1)
    return float(np.sum(wq * (ux * normals[:, 0] + uy * normals[:, 1])))
