"""Grayscale convolution into a smooth B-spline level set, and the
closed-form filtering analysis used to reason about feature loss.

The level set is f(x) = sum_i N_i(x) a_i with coefficients
a_i = int(N_i g) / int(N_i). Because the grayscale function is constant on
each voxel and spline cells never straddle voxel boundaries here, all
integrals are evaluated exactly from per-cell polynomial integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bspline import BSplineBasis1D, TensorBSplineBasis
from .voxel import VoxelGrid


@dataclass(frozen=True)
class ConvolutionCoefficients:
    """Control point level set values and the basis function volumes."""

    a: np.ndarray
    volumes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "volumes", np.asarray(self.volumes, dtype=float))


def _check_domain(grid: VoxelGrid, basis: TensorBSplineBasis):
    if basis.ndim != grid.ndim:
        raise ValueError("basis/grid dimensionality mismatch")
    for d in range(grid.ndim):
        if not math.isclose(basis.axes[d].origin, grid.origin[d], abs_tol=1e-12):
            raise ValueError("basis domain does not match the grid box")
        if not math.isclose(basis.axes[d].length, grid.lengths[d], rel_tol=1e-12):
            raise ValueError("basis domain does not match the grid box")


def accumulate_moments(basis: TensorBSplineBasis, cells: np.ndarray,
                       grid: VoxelGrid, cells_per_voxel: int):
    """Accumulate int(N_j g) and int(N_j) over a set of basis-level cells.

    `cells` holds cell multi-indices on the basis mesh; `cells_per_voxel` is
    the per-axis number of basis cells inside one voxel, so that the voxel
    owning a cell is cell // cells_per_voxel.
    """
    numer = np.zeros(basis.n)
    vol = np.zeros(basis.n)
    if len(cells) == 0:
        return numer, vol
    offsets = basis._local_layout()
    w = np.ones((cells.shape[0], offsets.shape[0]))
    for d, ax in enumerate(basis.axes):
        ci = ax.cell_integrals()
        w *= ci[cells[:, d][:, None], offsets[:, d][None, :]]
    voxels = tuple(cells[:, d] // cells_per_voxel for d in range(basis.ndim))
    g = grid.values[voxels]
    flat = basis.local_functions(cells)
    np.add.at(numer, flat.ravel(), (w * g[:, None]).ravel())
    np.add.at(vol, flat.ravel(), w.ravel())
    return numer, vol


def _all_cells(basis: TensorBSplineBasis) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(m) for m in basis.cell_shape], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def convolve(grid: VoxelGrid, basis: TensorBSplineBasis) -> ConvolutionCoefficients:
    """Control point level set values for a uniform basis over the grid box.

    The basis mesh must subdivide the voxel mesh (equal or dyadically
    finer), so the quadrature-free cell integrals are exact.
    """
    _check_domain(grid, basis)
    ratios = {basis.cell_shape[d] // grid.dims[d] for d in range(grid.ndim)}
    if len(ratios) != 1 or any(basis.cell_shape[d] % grid.dims[d] for d in range(grid.ndim)):
        raise ValueError("basis mesh must refine every voxel by the same integer factor")
    cpv = ratios.pop()
    numer, vol = accumulate_moments(basis, _all_cells(basis), grid, cpv)
    return ConvolutionCoefficients(numer / vol, vol)


class LevelSetField:
    """Smooth scalar field over the image box, possibly level-structured.

    Stores one full tensor-product coefficient array per hierarchy level;
    the array of level ``l`` is valid on cells of level ``l`` and coarser
    lookups never see it. A single-level field is the uniform case.
    """

    def __init__(self, bases, coeff_arrays, regions=None):
        self.bases = list(bases)
        self.coeffs = [np.asarray(c, dtype=float) for c in coeff_arrays]
        self.regions = None if regions is None else [np.asarray(r, dtype=bool) for r in regions]
        if self.regions is not None and len(self.regions) != len(self.bases):
            raise ValueError("one region mask per level required")

    @property
    def ndim(self) -> int:
        return self.bases[0].ndim

    @property
    def origin(self) -> tuple:
        return self.bases[0].origin

    @property
    def lengths(self) -> tuple:
        return self.bases[0].lengths

    @property
    def max_level(self) -> int:
        return len(self.bases) - 1

    def _check_inside(self, points: np.ndarray):
        lo = np.asarray(self.origin)
        hi = lo + np.asarray(self.lengths)
        tol = 1e-10 * max(self.lengths)
        if np.any(points < lo - tol) or np.any(points > hi + tol):
            raise ValueError("point outside the field domain")

    def point_levels(self, points: np.ndarray) -> np.ndarray:
        levels = np.zeros(points.shape[0], dtype=int)
        if self.regions is None or len(self.bases) == 1:
            return levels
        for lvl in range(1, len(self.bases)):
            basis = self.bases[lvl]
            inside = np.ones(points.shape[0], dtype=bool)
            idx = []
            for d, ax in enumerate(basis.axes):
                c, _ = ax.locate(points[:, d])
                idx.append(c)
            inside = self.regions[lvl][tuple(idx)]
            levels[inside] = lvl
        return levels

    def _eval(self, points: np.ndarray, want_grad: bool):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        self._check_inside(points)
        levels = self.point_levels(points)
        vals = np.zeros(points.shape[0])
        grads = np.zeros((points.shape[0], self.ndim)) if want_grad else None
        for lvl in range(len(self.bases)):
            sel = np.nonzero(levels == lvl)[0]
            if sel.size == 0:
                continue
            flat, v, g = self.bases[lvl].evaluate(points[sel], nderiv=1 if want_grad else 0)
            c = self.coeffs[lvl].ravel()[flat]
            vals[sel] = np.sum(v * c, axis=1)
            if want_grad:
                grads[sel] = np.einsum("nl,nld->nd", c, g)
        return vals, grads

    def values(self, points) -> np.ndarray:
        return self._eval(points, want_grad=False)[0]

    def gradients(self, points) -> np.ndarray:
        return self._eval(points, want_grad=True)[1]

    def integral(self) -> float:
        """Exact integral of f over the box (uses basis function volumes)."""
        total = 0.0
        for lvl, basis in enumerate(self.bases):
            if self.regions is None or lvl == 0:
                active = np.ones(basis.cell_shape, dtype=bool)
            else:
                active = self.regions[lvl].copy()
            if lvl + 1 < len(self.bases) and self.regions is not None:
                finer = self.regions[lvl + 1]
                covered = finer.copy()
                for d in range(self.ndim):
                    covered = covered.reshape(covered.shape[:d] + (-1, 2) + covered.shape[d + 1:]).any(axis=d + 1)
                active &= ~covered
            cells = np.stack([g.ravel() for g in np.meshgrid(
                *[np.arange(m) for m in basis.cell_shape], indexing="ij")], axis=1)
            cells = cells[active.ravel()]
            if len(cells) == 0:
                continue
            offsets = basis._local_layout()
            w = np.ones((cells.shape[0], offsets.shape[0]))
            for d, ax in enumerate(basis.axes):
                ci = ax.cell_integrals()
                w *= ci[cells[:, d][:, None], offsets[:, d][None, :]]
            flat = basis.local_functions(cells)
            total += float(np.sum(w * self.coeffs[lvl].ravel()[flat]))
        return total


def evaluate_field(coeffs: ConvolutionCoefficients, basis: TensorBSplineBasis, points) -> np.ndarray:
    """Evaluate f(x) = sum N_i(x) a_i at points inside the basis domain."""
    field = uniform_field(basis, coeffs)
    return field.values(points)


def uniform_field(basis: TensorBSplineBasis, coeffs: ConvolutionCoefficients) -> LevelSetField:
    return LevelSetField([basis], [coeffs.a.reshape(basis.shape)])


def smooth_grid(grid: VoxelGrid, degree: int, mesh_divisor: int = 1) -> LevelSetField:
    """Convolve a grid with a uniform basis of mesh size spacing/mesh_divisor."""
    basis = TensorBSplineBasis.uniform(
        degree,
        tuple(n * mesh_divisor for n in grid.dims),
        grid.lengths,
        grid.origin,
    )
    return uniform_field(basis, convolve(grid, basis))


# ---------------------------------------------------------------------------
# Closed-form filtering analysis (1D)
# ---------------------------------------------------------------------------

def gaussian_kernel_width(h: float, degree: int) -> float:
    """Standard deviation of the Gaussian approximating the spline kernel:
    sigma = h * sqrt((p + 1) / 6)."""
    if h <= 0.0:
        raise ValueError("mesh size must be positive")
    if degree < 1:
        raise ValueError("degree must be >= 1")
    return h * math.sqrt((degree + 1) / 6.0)


@dataclass(frozen=True)
class KernelOracle:
    """Gaussian surrogate of the convolution kernel for one basis setup."""

    sigma: float
    degree: int
    mesh_size: float

    def __post_init__(self):
        expected = gaussian_kernel_width(self.mesh_size, self.degree)
        if not math.isclose(self.sigma, expected, rel_tol=1e-12):
            raise ValueError("sigma must equal h*sqrt((p+1)/6)")

    @classmethod
    def for_basis(cls, degree: int, mesh_size: float) -> "KernelOracle":
        return cls(gaussian_kernel_width(mesh_size, degree), degree, mesh_size)


def frequency_response(xi, sigma: float):
    """Fourier transform of the Gaussian kernel: exp(-2 pi^2 xi^2 sigma^2)."""
    xi = np.asarray(xi, dtype=float)
    return np.exp(-2.0 * np.pi ** 2 * xi ** 2 * sigma ** 2)


def gaussian_kernel(d, sigma: float):
    d = np.asarray(d, dtype=float)
    return np.exp(-d ** 2 / (2.0 * sigma ** 2)) / (sigma * math.sqrt(2.0 * math.pi))


def smoothed_feature(x_hat, ell_hat: float, degree: int, terms: int = 1):
    """Smoothed 1D top-hat feature of width ell_hat (in mesh units).

    Partial sum with `terms` cosine-expansion terms; one term is already an
    excellent approximation for moderate feature sizes. Coordinates are in
    units of the mesh size.
    """
    if ell_hat <= 0.0:
        raise ValueError("feature size must be positive")
    if terms < 1:
        raise ValueError("terms must be >= 1")
    x_hat = np.asarray(x_hat, dtype=float)
    sigma_hat = math.sqrt((degree + 1) / 6.0)
    n = np.arange(1, terms + 1)
    mu = (2.0 * n - 1.0) * ell_hat / (4.0 * terms)
    pref = ell_hat / (sigma_hat * math.sqrt(2.0 * math.pi) * 2.0 * terms)
    d1 = (x_hat[..., None] - mu) ** 2
    d2 = (x_hat[..., None] + mu) ** 2
    out = pref * np.sum(np.exp(-d1 / (2 * sigma_hat ** 2))
                        + np.exp(-d2 / (2 * sigma_hat ** 2)), axis=-1)
    return out if out.shape else float(out)


def feature_peak(ell_hat: float, degree: int, drop_exponential: bool = False) -> float:
    """Peak value of the one-term smoothed feature at its center.

    With drop_exponential=True the exponential factor is dropped, which is
    accurate for small ell_hat and gives the simple linear-in-ell_hat law.
    """
    base = ell_hat * math.sqrt(3.0 / (math.pi * (degree + 1)))
    if drop_exponential:
        return base
    return base * math.exp(-3.0 * ell_hat ** 2 / (16.0 * (degree + 1)))


def exact_kernel(basis: BSplineBasis1D, x, y: float) -> np.ndarray:
    """Integral-transform kernel K(x, y) = sum_i N_i(x) N_i(y) / V_i."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    vols = basis.function_integrals()
    cy, vy = basis.evaluate(np.array([y]))
    row = np.zeros(basis.n)
    row[cy[0]:cy[0] + basis.degree + 1] = vy[0] / vols[cy[0]:cy[0] + basis.degree + 1]
    cx, vx = basis.evaluate(x)
    out = np.zeros(x.shape[0])
    for a in range(basis.degree + 1):
        out += vx[:, a] * row[cx + a]
    return out


def fit_gaussian_width(basis: BSplineBasis1D, center: float | None = None,
                       n_samples: int = 201) -> float:
    """Least-squares Gaussian width of the numeric kernel K(x, center).

    Fits log K against a quadratic in the offset over |x - center| <= 2
    theoretical widths, so only the local bell shape matters.
    """
    if center is None:
        center = basis.origin + 0.5 * basis.length
    sigma0 = gaussian_kernel_width(basis.h, basis.degree)
    xs = np.linspace(center - 2 * sigma0, center + 2 * sigma0, n_samples)
    k = exact_kernel(basis, xs, center)
    good = k > 0.0
    d2 = (xs[good] - center) ** 2
    coeffs = np.polyfit(d2, np.log(k[good]), 1)
    slope = coeffs[0]
    if slope >= 0.0:
        raise ValueError("kernel is not bell shaped around the center")
    return math.sqrt(-1.0 / (2.0 * slope))


def kernel_vs_gaussian_error(basis: BSplineBasis1D, center: float | None = None,
                             n_samples: int = 801, n_anchors: int = 9) -> float:
    """Sup-norm distance between the transform kernel K(x, y) and the
    Gaussian surrogate kappa(x - y) near the domain center.

    Unlike the surrogate, K is not translation invariant: its shape depends
    on where y sits inside a cell, so the supremum is taken over anchor
    offsets spanning half a cell (the rest follows by symmetry). Passing an
    explicit `center` pins a single anchor instead.
    """
    sigma = gaussian_kernel_width(basis.h, basis.degree)
    if center is not None:
        anchors = [center]
    else:
        left = basis.origin + (basis.n_cells // 2) * basis.h
        anchors = list(left + basis.h * np.linspace(0.0, 0.5, n_anchors))
    worst = 0.0
    for y0 in anchors:
        xs = np.linspace(y0 - 5 * sigma, y0 + 5 * sigma, n_samples)
        xs = np.clip(xs, basis.origin, basis.origin + basis.length)
        err = exact_kernel(basis, xs, y0) - gaussian_kernel(xs - y0, sigma)
        worst = max(worst, float(np.max(np.abs(err))))
    return worst
