"""Galerkin matrices, boundary-column lifting, and Greville collocation.

The physical interval maps affinely onto the parameter interval, so every
inner product is computed in parameter space with a constant metric factor:

* mass      M_ij = (R_j, R_i)_xi            scaled by |Omega| / |Omega_xi|
* stiffness K_ij = (R_j', R_i')_xi          scaled by |Omega_xi| / |Omega|
* advection N_ij = (R_j, R_i')_xi           scale-free

with the derivative on the *test* function in N, matching the weak form
-Y1 (grad w, grad z) - Y2 (w, grad z) - Y3 (w, z).  The discrete operator of
a PDE with coefficients (Y1, Y2, Y3) is then A = Y1 K + Y2 N + Y3 M.

Row indices run over the n-2 interior test functions; the two columns that
couple interior rows to the boundary coefficients w_1, w_n are split off and
stored densely (they only have entries near the ends anyway).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import NurbsBasis, eval_nurbs_nonzero, greville_abscissae
from .linsolve import BandedLU, BandedMatrix
from .quadrature import QuadratureRule

__all__ = ["PhysicalMap", "GalerkinSystem", "assemble", "Collocation",
           "group_project", "lift_boundary", "dump_matrix_csv"]


@dataclass(frozen=True)
class PhysicalMap:
    """Affine map between the physical interval and the parameter interval."""

    x_min: float
    x_max: float
    xi_min: float = 0.0
    xi_max: float = 1.0

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.xi_max > self.xi_min):
            raise ValueError("intervals must have positive length")

    @property
    def dx_dxi(self) -> float:
        return (self.x_max - self.x_min) / (self.xi_max - self.xi_min)

    @property
    def dxi_dx(self) -> float:
        return 1.0 / self.dx_dxi

    def to_physical(self, xi):
        return self.x_min + (np.asarray(xi) - self.xi_min) * self.dx_dxi

    def to_parameter(self, x):
        return self.xi_min + (np.asarray(x) - self.x_min) * self.dxi_dx


@dataclass
class GalerkinSystem:
    """Interior Galerkin matrices plus boundary coupling columns.

    ``mass``/``stiffness``/``advection`` are (n-2) x (n-2) banded with
    bandwidth = degree; ``*_cols`` hold the two full columns (basis indices
    0 and n-1) restricted to interior rows, shape (n-2, 2).
    """

    n_full: int
    degree: int
    mass: BandedMatrix
    stiffness: BandedMatrix
    advection: BandedMatrix
    mass_cols: np.ndarray
    stiffness_cols: np.ndarray
    advection_cols: np.ndarray

    def operator(self, coeffs) -> tuple[BandedMatrix, np.ndarray]:
        """A = Y1 K + Y2 N + Y3 M and its boundary columns, per unknown."""
        y1, y2, y3 = coeffs
        a = self.stiffness.scaled(y1) + self.advection.scaled(y2) \
            + self.mass.scaled(y3)
        cols = y1 * self.stiffness_cols + y2 * self.advection_cols \
            + y3 * self.mass_cols
        return a, cols


def _split_full(full: BandedMatrix) -> tuple[BandedMatrix, np.ndarray]:
    """Drop boundary rows/columns; return interior band + boundary columns."""
    n, k = full.n, full.kband
    cols = np.zeros((n - 2, 2))
    for i in range(1, n - 1):
        cols[i - 1, 0] = full[i, 0]
        cols[i - 1, 1] = full[i, n - 1]
    inner = BandedMatrix(n - 2, k, full.data[:, 1:n - 1].copy())
    # zero band slots that referenced the dropped rows
    for r in range(2 * k + 1):
        d = r - k
        for j in range(n - 2):
            i = j + d
            if i < 0 or i >= n - 2:
                inner.data[r, j] = 0.0
    return inner, cols


def assemble(basis: NurbsBasis, pmap: PhysicalMap,
             rule: QuadratureRule) -> GalerkinSystem:
    """Span-wise Gauss assembly of mass, stiffness and advection matrices."""
    kv = basis.knots
    p = kv.degree
    n = basis.n_basis
    if n < 3:
        raise ValueError("need at least one interior basis function")
    mass_f = BandedMatrix(n, p)
    stiff_f = BandedMatrix(n, p)
    adv_f = BandedMatrix(n, p)
    breaks = kv.breakpoints
    jj, ii = np.meshgrid(np.arange(p + 1), np.arange(p + 1))
    band_rows = p + ii - jj
    for a, b in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        loc_m = np.zeros((p + 1, p + 1))
        loc_k = np.zeros((p + 1, p + 1))
        loc_n = np.zeros((p + 1, p + 1))
        first = None
        for z, wq in zip(rule.nodes, rule.weights):
            xi = mid + half * z
            first, R = eval_nurbs_nonzero(basis, xi, 1)
            w = wq * half
            loc_m += w * np.outer(R[0], R[0])
            loc_k += w * np.outer(R[1], R[1])
            loc_n += w * np.outer(R[1], R[0])  # derivative on the test (row) index
        cols = first + jj
        mass_f.data[band_rows, cols] += loc_m
        stiff_f.data[band_rows, cols] += loc_k
        adv_f.data[band_rows, cols] += loc_n
    mass_f.data *= pmap.dx_dxi
    stiff_f.data *= pmap.dxi_dx
    mass, mass_cols = _split_full(mass_f)
    stiff, stiff_cols = _split_full(stiff_f)
    adv, adv_cols = _split_full(adv_f)
    return GalerkinSystem(n, p, mass, stiff, adv, mass_cols, stiff_cols,
                          adv_cols)


class Collocation:
    """Square collocation system at given parameter points (default Greville).

    ``matrix`` maps coefficients to point values; ``project`` inverts it, so
    projecting function samples yields the coefficients of the spline that
    interpolates them.  The LU factor is computed once and reused.
    """

    def __init__(self, basis: NurbsBasis, points: np.ndarray | None = None):
        if points is None:
            points = greville_abscissae(basis.knots)
        points = np.asarray(points, dtype=float)
        n = basis.n_basis
        if points.shape != (n,):
            raise ValueError("need exactly one collocation point per basis function")
        p = basis.degree
        mat = BandedMatrix(n, p)
        for i, xi in enumerate(points):
            first, R = eval_nurbs_nonzero(basis, xi, 0)
            for j in range(p + 1):
                col = first + j
                if abs(i - col) > p:
                    if R[0, j] != 0.0:
                        raise ValueError("collocation point outside its own support band")
                    continue
                mat.data[p + i - col, col] = R[0, j]
        self.basis = basis
        self.points = points
        self.matrix = mat
        self._lu: BandedLU | None = None

    @property
    def lu(self) -> BandedLU:
        if self._lu is None:
            self._lu = self.matrix.lu_factor()
        return self._lu

    def evaluate(self, coeffs: np.ndarray) -> np.ndarray:
        return self.matrix.matvec(coeffs)

    def project(self, values: np.ndarray) -> np.ndarray:
        return self.lu.solve(np.asarray(values, dtype=float))

    def derivative_matrix(self, order: int) -> BandedMatrix:
        """Collocation of the ``order``-th parametric derivative at the points."""
        basis = self.basis
        p = basis.degree
        n = basis.n_basis
        mat = BandedMatrix(n, p)
        for i, xi in enumerate(self.points):
            first, R = eval_nurbs_nonzero(basis, xi, order)
            for j in range(p + 1):
                col = first + j
                if abs(i - col) <= p:
                    mat.data[p + i - col, col] = R[order, j]
        return mat


def group_project(values_at_greville: np.ndarray, basis: NurbsBasis) -> np.ndarray:
    """Coefficients of the spline interpolating values at Greville abscissae."""
    return Collocation(basis).project(values_at_greville)


def lift_boundary(system: GalerkinSystem, w1: float, wn: float):
    """Boundary contributions (b_M, b_K, b_N) to the interior equations."""
    wb = np.array([w1, wn])
    return (system.mass_cols @ wb, system.stiffness_cols @ wb,
            system.advection_cols @ wb)


def dump_matrix_csv(mat, path) -> None:
    """Write in-band entries as ``row,col,value`` lines (10 significant digits)."""
    if isinstance(mat, BandedMatrix):
        dense = mat.to_dense()
    else:
        dense = np.asarray(mat, dtype=float)
        if dense.ndim == 1:
            dense = dense[:, None]
    with open(path, "w") as fh:
        fh.write("row,col,value\n")
        for i in range(dense.shape[0]):
            for j in range(dense.shape[1]):
                v = dense[i, j]
                if v != 0.0:
                    fh.write(f"{i},{j},{v:.10g}\n")
