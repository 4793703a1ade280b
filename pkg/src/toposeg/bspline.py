"""Uniform B-spline bases on open knot vectors.

The bases are represented per knot span by polynomial coefficient tables in
the local cell coordinate, built once with the Cox-de Boor recursion. This
makes point evaluation a gather plus a Horner loop, gives exact integrals of
basis functions over cells, and allows one-sided evaluation at cell
interfaces (needed for derivative jumps across faces).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp


def gauss_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1] exact for polynomials of degree `order`."""
    npts = order // 2 + 1
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def open_uniform_knots(degree: int, n_cells: int, length: float, origin: float = 0.0) -> np.ndarray:
    """Open (clamped) uniform knot vector over [origin, origin + length]."""
    h = length / n_cells
    interior = origin + h * np.arange(1, n_cells)
    return np.concatenate([
        np.full(degree + 1, origin),
        interior,
        np.full(degree + 1, origin + length),
    ])


def _cell_poly_table(knots: np.ndarray, degree: int, n_cells: int, h: float) -> np.ndarray:
    """Per-cell polynomial coefficients of the nonzero basis functions.

    Returns an array of shape (n_cells, degree+1, degree+1); entry
    [s, a, k] is the coefficient of u**k of function s+a on cell s, with
    u in [0, 1] the local cell coordinate.
    """
    p = degree
    origin = knots[p]
    table = np.zeros((n_cells, p + 1, p + 1))
    for s in range(n_cells):
        x_s = origin + s * h
        span = p + s
        # degree-0 seed: indicator of the current span
        polys = {span: np.array([1.0])}
        for k in range(1, p + 1):
            new = {}
            for i in range(span - k, span + 1):
                c = np.zeros(k + 1)
                left = polys.get(i)
                if left is not None:
                    den = knots[i + k] - knots[i]
                    if den > 0.0:
                        # (x - t_i)/den with x = x_s + h*u
                        c[:k] += left * (x_s - knots[i]) / den
                        c[1:k + 1] += left * (h / den)
                right = polys.get(i + 1)
                if right is not None:
                    den = knots[i + k + 1] - knots[i + 1]
                    if den > 0.0:
                        c[:k] += right * (knots[i + k + 1] - x_s) / den
                        c[1:k + 1] -= right * (h / den)
                new[i] = c
            polys = new
        for i, c in polys.items():
            table[s, i - s, :] = c
    return table


def _poly_derivative(table: np.ndarray, h: float) -> np.ndarray:
    """Differentiate a per-cell coefficient table with respect to x."""
    out = np.zeros_like(table)
    deg = table.shape[-1] - 1
    for k in range(1, deg + 1):
        out[..., k - 1] = k * table[..., k]
    return out / h


def _horner(coeffs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Evaluate gathered coefficient blocks (n, p+1, p+1) at u (n,)."""
    deg = coeffs.shape[-1] - 1
    acc = coeffs[..., deg].copy()
    for k in range(deg - 1, -1, -1):
        acc = acc * u[:, None] + coeffs[..., k]
    return acc


class BSplineBasis1D:
    """Full-regularity univariate B-spline basis on a uniform open knot vector.

    Parameters
    ----------
    degree : int
        Polynomial degree p >= 1; regularity is C^{p-1}.
    n_cells : int
        Number of knot spans.
    length : float
        Length of the parameter interval.
    origin : float
        Left end of the interval.
    """

    def __init__(self, degree: int, n_cells: int, length: float, origin: float = 0.0):
        if degree < 1:
            raise ValueError("degree must be >= 1")
        if n_cells < 1:
            raise ValueError("n_cells must be >= 1")
        if length <= 0.0:
            raise ValueError("length must be positive")
        self.degree = degree
        self.n_cells = n_cells
        self.length = float(length)
        self.origin = float(origin)
        self.h = self.length / n_cells
        self.n = n_cells + degree
        self.knots = open_uniform_knots(degree, n_cells, length, origin)
        self._tables = [_cell_poly_table(self.knots, degree, n_cells, self.h)]

    @property
    def regularity(self) -> int:
        return self.degree - 1

    def _table(self, deriv: int) -> np.ndarray:
        while len(self._tables) <= deriv:
            self._tables.append(_poly_derivative(self._tables[-1], self.h))
        return self._tables[deriv]

    def locate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map points to (cell index, local coordinate in [0, 1])."""
        x = np.asarray(x, dtype=float)
        t = (x - self.origin) / self.h
        cells = np.clip(np.floor(t).astype(int), 0, self.n_cells - 1)
        return cells, t - cells

    def evaluate(self, x, deriv: int = 0, cells=None) -> tuple[np.ndarray, np.ndarray]:
        """Nonzero basis values (or derivatives) at points.

        Returns (cells, values) where values[i, a] belongs to function
        cells[i] + a. Passing `cells` pins the knot span, which yields the
        one-sided limit at a cell boundary.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if cells is None:
            cells, u = self.locate(x)
        else:
            cells = np.atleast_1d(np.asarray(cells, dtype=int))
            u = (x - self.origin) / self.h - cells
        vals = _horner(self._table(deriv)[cells], u)
        return cells, vals

    def evaluate_single(self, i: int, x: float, deriv: int = 0) -> float:
        """Value of basis function i at a point (zero outside its support)."""
        cells, vals = self.evaluate(np.array([x]), deriv=deriv)
        a = i - cells[0]
        if 0 <= a <= self.degree:
            return float(vals[0, a])
        return 0.0

    def cell_integrals(self) -> np.ndarray:
        """Exact integrals over each cell: entry [s, a] is the integral of
        function s+a over cell s."""
        c = self._table(0)
        k = np.arange(self.degree + 1)
        return self.h * np.sum(c / (k + 1.0), axis=-1)

    def function_integrals(self) -> np.ndarray:
        """Exact integral of every basis function over the full interval."""
        out = np.zeros(self.n)
        ci = self.cell_integrals()
        for a in range(self.degree + 1):
            out[a:a + self.n_cells] += ci[:, a]
        return out

    def support_cells(self, i: int) -> tuple[int, int]:
        """Half-open cell range [lo, hi) on which function i is nonzero."""
        return max(0, i - self.degree), min(self.n_cells, i + 1)

    def greville(self) -> np.ndarray:
        """Greville abscissae; coefficients sampled there reproduce linears."""
        p = self.degree
        return np.array([self.knots[i + 1:i + p + 1].mean() for i in range(self.n)])

    def refine(self) -> "BSplineBasis1D":
        """Basis on the dyadically refined mesh (same degree and interval)."""
        return BSplineBasis1D(self.degree, 2 * self.n_cells, self.length, self.origin)

    def refinement_matrix(self) -> sp.csr_matrix:
        """Two-scale matrix R with N_i = sum_j R[j, i] N^fine_j.

        Coefficient vectors map as a_fine = R @ a_coarse. Built by Boehm
        knot insertion of all cell midpoints.
        """
        knots = self.knots.copy()
        p = self.degree
        R = sp.identity(self.n, format="csr")
        midpoints = self.origin + self.h * (np.arange(self.n_cells) + 0.5)
        for xhat in midpoints:
            n_old = len(knots) - p - 1
            j = int(np.searchsorted(knots, xhat, side="right") - 1)
            rows, cols, vals = [], [], []
            for i in range(n_old + 1):
                if i <= j - p:
                    rows.append(i), cols.append(i), vals.append(1.0)
                elif i <= j:
                    alpha = (xhat - knots[i]) / (knots[i + p] - knots[i])
                    rows.append(i), cols.append(i), vals.append(alpha)
                    rows.append(i), cols.append(i - 1), vals.append(1.0 - alpha)
                else:
                    rows.append(i), cols.append(i - 1), vals.append(1.0)
            step = sp.csr_matrix((vals, (rows, cols)), shape=(n_old + 1, n_old))
            R = step @ R
            knots = np.insert(knots, j + 1, xhat)
        return R.tocsr()


class TensorBSplineBasis:
    """Tensor-product B-spline basis over an axis-aligned box."""

    def __init__(self, axes):
        self.axes = tuple(axes)
        self.ndim = len(self.axes)
        self.shape = tuple(ax.n for ax in self.axes)
        self.n = int(np.prod(self.shape))
        self.cell_shape = tuple(ax.n_cells for ax in self.axes)
        self.n_cells = int(np.prod(self.cell_shape))

    @classmethod
    def uniform(cls, degree: int, n_cells, lengths, origin=None) -> "TensorBSplineBasis":
        n_cells = tuple(int(m) for m in np.atleast_1d(n_cells))
        lengths = tuple(float(v) for v in np.atleast_1d(lengths))
        if origin is None:
            origin = (0.0,) * len(n_cells)
        axes = [BSplineBasis1D(degree, m, ln, og)
                for m, ln, og in zip(n_cells, lengths, origin)]
        return cls(axes)

    @property
    def degree(self) -> int:
        return self.axes[0].degree

    @property
    def mesh_size(self) -> tuple:
        return tuple(ax.h for ax in self.axes)

    @property
    def origin(self) -> tuple:
        return tuple(ax.origin for ax in self.axes)

    @property
    def lengths(self) -> tuple:
        return tuple(ax.length for ax in self.axes)

    def _local_layout(self):
        p = self.degree
        return _local_offsets(self.ndim, p)

    def flat_index(self, multi) -> np.ndarray:
        return np.ravel_multi_index(multi, self.shape)

    def local_functions(self, cells: np.ndarray) -> np.ndarray:
        """Flat indices of the (p+1)^nd functions supported on each cell.

        `cells` has shape (n, nd); the result has shape (n, (p+1)^nd).
        """
        offsets = self._local_layout()
        multi = [cells[:, d, None] + offsets[None, :, d] for d in range(self.ndim)]
        return np.ravel_multi_index(multi, self.shape)

    def evaluate(self, points: np.ndarray, nderiv: int = 1, cells=None):
        """Values and derivatives of the nonzero functions at points.

        Returns (flat_idx, values, grads) where flat_idx and values have
        shape (n, nloc) and grads has shape (n, nloc, nd). With nderiv=0
        grads is None.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        npts = points.shape[0]
        per_axis_vals, per_axis_ders, cell_idx = [], [], []
        for d, ax in enumerate(self.axes):
            pin = None if cells is None else cells[:, d]
            cd, vals = ax.evaluate(points[:, d], deriv=0, cells=pin)
            per_axis_vals.append(vals)
            cell_idx.append(cd)
            if nderiv >= 1:
                _, der = ax.evaluate(points[:, d], deriv=1, cells=cd)
                per_axis_ders.append(der)
        cell_arr = np.stack(cell_idx, axis=1)
        flat_idx = self.local_functions(cell_arr)
        nloc = flat_idx.shape[1]
        offsets = self._local_layout()
        values = np.ones((npts, nloc))
        for d in range(self.ndim):
            values *= per_axis_vals[d][:, offsets[:, d]]
        grads = None
        if nderiv >= 1:
            grads = np.empty((npts, nloc, self.ndim))
            for d in range(self.ndim):
                g = np.ones((npts, nloc))
                for e in range(self.ndim):
                    src = per_axis_ders[e] if e == d else per_axis_vals[e]
                    g *= src[:, offsets[:, e]]
                grads[:, :, d] = g
        return flat_idx, values, grads

    def function_integrals(self) -> np.ndarray:
        parts = [ax.function_integrals() for ax in self.axes]
        out = parts[0]
        for p_ in parts[1:]:
            out = np.multiply.outer(out, p_)
        return out.ravel()

    def refine(self) -> "TensorBSplineBasis":
        return TensorBSplineBasis([ax.refine() for ax in self.axes])


@lru_cache(maxsize=32)
def _local_offsets(ndim: int, degree: int) -> np.ndarray:
    ranges = [np.arange(degree + 1)] * ndim
    grids = np.meshgrid(*ranges, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)
