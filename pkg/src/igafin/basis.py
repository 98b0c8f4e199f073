"""Open-knot B-spline and NURBS bases on a 1-D parameter interval.

Provides knot-vector construction (uniform, and kink-refined with two-sided
geometric clustering), Cox-de Boor evaluation of B-spline values and
derivatives, rational (NURBS) evaluation up to second derivatives, Greville
abscissae, and weight-file loading.

Conventions
-----------
A knot vector ``Xi = {xi_1 <= ... <= xi_(n+p+1)}`` of degree ``p`` is *open*:
the first and last knots repeat exactly ``p + 1`` times.  The ``n`` basis
functions are indexed ``0 .. n-1`` in code.  Evaluation at the right endpoint
uses the closure of the last non-empty span, so partition of unity holds on
the closed interval.  Divisions ``0/0`` in the Cox-de Boor recursion are
taken as ``0`` (realised structurally by the triangular evaluation scheme,
which never forms them).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "KnotVector",
    "NurbsBasis",
    "make_uniform_open_knots",
    "make_refined_open_knots",
    "find_span",
    "eval_bspline_all",
    "eval_bspline_deriv_all",
    "eval_nurbs_all",
    "eval_nurbs_nonzero",
    "eval_spline_many",
    "greville_abscissae",
    "load_weights",
]


@dataclass(frozen=True)
class KnotVector:
    """Non-decreasing open knot vector with polynomial degree.

    Attributes
    ----------
    values : ndarray
        The knots, length ``n_basis + degree + 1``.
    degree : int
        Polynomial degree ``p >= 1``.
    """

    values: np.ndarray
    degree: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        p = self.degree
        if p < 1:
            raise ValueError(f"degree must be >= 1, got {p}")
        if vals.ndim != 1 or len(vals) < 2 * (p + 1):
            raise ValueError("knot vector too short for degree")
        if np.any(np.diff(vals) < 0):
            raise ValueError("knot vector must be non-decreasing")
        if not (np.all(vals[: p + 1] == vals[0]) and vals[p + 1] > vals[p]):
            raise ValueError("knot vector must be open: first knot repeated exactly degree+1 times")
        if not (np.all(vals[-(p + 1):] == vals[-1]) and vals[-(p + 2)] < vals[-1]):
            raise ValueError("knot vector must be open: last knot repeated exactly degree+1 times")
        # interior multiplicity at most p, else the basis loses continuity entirely
        interior = vals[p + 1: -(p + 1)]
        if interior.size:
            uniq, counts = np.unique(interior, return_counts=True)
            if np.any(counts > p):
                bad = uniq[counts > p][0]
                raise ValueError(f"interior knot {bad} has multiplicity > degree")

    @property
    def n_basis(self) -> int:
        return len(self.values) - self.degree - 1

    @property
    def xi_min(self) -> float:
        return float(self.values[0])

    @property
    def xi_max(self) -> float:
        return float(self.values[-1])

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knot values (span boundaries)."""
        return np.unique(self.values)


@dataclass(frozen=True)
class NurbsBasis:
    """A B-spline knot vector paired with positive rational weights."""

    knots: KnotVector
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.shape != (self.knots.n_basis,):
            raise ValueError(
                f"need {self.knots.n_basis} weights, got {w.shape}")
        if np.any(w <= 0.0):
            raise ValueError("weights must be strictly positive")

    @property
    def n_basis(self) -> int:
        return self.knots.n_basis

    @property
    def degree(self) -> int:
        return self.knots.degree


def make_uniform_open_knots(n_elements: int, degree: int) -> KnotVector:
    """Open knot vector with ``n_elements`` equal spans on [0, 1]."""
    if n_elements < 1:
        raise ValueError("n_elements must be >= 1")
    interior = np.linspace(0.0, 1.0, n_elements + 1)[1:-1]
    vals = np.concatenate([
        np.zeros(degree + 1), interior, np.ones(degree + 1)])
    return KnotVector(vals, degree)


def make_refined_open_knots(n_elements: int, degree: int, kink_xi: float,
                            cluster_ratio: float,
                            kink_multiplicity: int = 3) -> KnotVector:
    """Open knots on [0, 1] geometrically clustered toward an interior kink.

    Span widths form a two-sided geometric sequence shrinking toward
    ``kink_xi`` with ratio ``cluster_ratio`` (``1.0`` gives equal spans on
    each side).  The kink itself is inserted with multiplicity
    ``kink_multiplicity`` (default 3, dropping the basis to C^0 there when
    ``degree == 3``); pass 1 for a plain breakpoint.

    Parameters
    ----------
    n_elements : int
        Total span count before multiplicity insertion.
    kink_xi : float
        Clustering target, strictly inside (0, 1).
    cluster_ratio : float
        Successive span-width ratio approaching the kink, in (0, 1].
    """
    if not 0.0 < kink_xi < 1.0:
        raise ValueError("kink_xi must lie strictly inside (0, 1)")
    if not 0.0 < cluster_ratio <= 1.0:
        raise ValueError("cluster_ratio must lie in (0, 1]")
    if kink_multiplicity < 1 or kink_multiplicity > degree:
        raise ValueError("kink multiplicity must lie in 1..degree")
    n_left = int(round(n_elements * kink_xi))
    n_left = min(max(n_left, 1), n_elements - 1)
    n_right = n_elements - n_left

    def geometric_breaks(a: float, b: float, n: int, ratio: float) -> np.ndarray:
        # widths from a toward b shrink by `ratio`; breakpoints exclude a, include b
        if ratio == 1.0:
            return np.linspace(a, b, n + 1)[1:]
        w = np.full(n, ratio, dtype=float) ** np.arange(n)
        w *= (b - a) / w.sum()
        return a + np.cumsum(w)

    left = geometric_breaks(0.0, kink_xi, n_left, cluster_ratio)
    # mirrored construction: march from 1.0 toward the kink with the same ratio
    right = geometric_breaks(1.0, kink_xi, n_right, cluster_ratio)
    interior = np.concatenate([
        left[:-1],
        np.full(kink_multiplicity, kink_xi),
        right[:-1][::-1],
    ])
    vals = np.concatenate([
        np.zeros(degree + 1), interior, np.ones(degree + 1)])
    return KnotVector(vals, degree)


def find_span(knots: KnotVector, xi: float, side: str = "right") -> int:
    """Index ``i`` of the non-empty span ``[xi_i, xi_(i+1))`` containing xi.

    The last span is right-closed so ``xi == xi_max`` is valid.  With
    ``side='left'`` an evaluation point sitting exactly on an interior knot
    is assigned to the span *ending* there, which yields left one-sided
    derivative limits at reduced-continuity knots.
    """
    vals = knots.values
    p = knots.degree
    n = knots.n_basis
    if xi < vals[0] or xi > vals[-1]:
        raise ValueError(f"evaluation point {xi} outside [{vals[0]}, {vals[-1]}]")
    if xi >= vals[n]:  # right end: closure of the final non-empty span
        span = n - 1
        while vals[span] == vals[span + 1]:
            span -= 1
        return span
    if xi <= vals[p]:
        span = p
        while vals[span] == vals[span + 1]:
            span += 1
        return span
    if side == "left" and xi in vals:
        span = int(np.searchsorted(vals, xi, side="left")) - 1
        while vals[span] == vals[span + 1]:
            span -= 1
        return span
    span = int(np.searchsorted(vals, xi, side="right")) - 1
    while vals[span] == vals[span + 1]:
        span += 1
    return span


def _basis_funs(vals: np.ndarray, degree: int, span: int, xi: float) -> np.ndarray:
    """Values of the ``degree+1`` B-splines active on ``span`` at ``xi``."""
    p = degree
    N = np.empty(p + 1)
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    N[0] = 1.0
    for j in range(1, p + 1):
        left[j] = xi - vals[span + 1 - j]
        right[j] = vals[span + j] - xi
        saved = 0.0
        for r in range(j):
            tmp = N[r] / (right[r + 1] + left[j - r])
            N[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        N[j] = saved
    return N


def _ders_basis_funs(vals: np.ndarray, degree: int, span: int, xi: float,
                     nders: int) -> np.ndarray:
    """Rows 0..nders of derivatives of the active B-splines at ``xi``.

    Triangular-table scheme; derivatives above the degree come out zero.
    """
    p = degree
    nd = min(nders, p)
    ndu = np.empty((p + 1, p + 1))
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = xi - vals[span + 1 - j]
        right[j] = vals[span + j] - xi
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            tmp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        ndu[j, j] = saved
    ders = np.zeros((nders + 1, p + 1))
    ders[0, :] = ndu[:, p]
    a = np.empty((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, nd + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fact = float(p)
    for k in range(1, nd + 1):
        ders[k, :] *= fact
        fact *= p - k
    return ders


def eval_bspline_all(knots: KnotVector, xi: float, side: str = "right") -> np.ndarray:
    """Values ``N_i(xi)`` for all ``n_basis`` functions (dense vector)."""
    span = find_span(knots, xi, side)
    vals = _basis_funs(knots.values, knots.degree, span, xi)
    out = np.zeros(knots.n_basis)
    out[span - knots.degree: span + 1] = vals
    return out


def eval_bspline_deriv_all(knots: KnotVector, xi: float, order: int,
                           side: str = "right") -> np.ndarray:
    """``order``-th derivative of every basis function at ``xi``."""
    if order < 0:
        raise ValueError("order must be >= 0")
    span = find_span(knots, xi, side)
    ders = _ders_basis_funs(knots.values, knots.degree, span, xi, order)
    out = np.zeros(knots.n_basis)
    out[span - knots.degree: span + 1] = ders[order]
    return out


def _nurbs_from_table(basis: NurbsBasis, ders: np.ndarray, order: int) -> np.ndarray:
    """Rational derivatives from B-spline derivative rows via the quotient rule."""
    w = basis.weights
    W = ders @ w  # W[k] = sum_i w_i N_i^(k)(xi)
    R = np.empty_like(ders)
    R[0] = w * ders[0] / W[0]
    if order >= 1:
        R[1] = (w * ders[1] - R[0] * W[1]) / W[0]
    if order >= 2:
        R[2] = (w * ders[2] - 2.0 * R[1] * W[1] - R[0] * W[2]) / W[0]
    return R


def eval_nurbs_all(basis: NurbsBasis, xi: float, order: int = 0,
                   side: str = "right") -> np.ndarray:
    """``order``-th parametric derivative of every NURBS function at ``xi``.

    ``order`` may be 0, 1 or 2.  Equal weights reduce the rational basis to
    the underlying B-splines exactly.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    knots = basis.knots
    span = find_span(knots, xi, side)
    p = knots.degree
    nz = _ders_basis_funs(knots.values, p, span, xi, order)
    idx = slice(span - p, span + 1)
    w = basis.weights[idx]
    # the weight sums need *all* functions, but only the active ones are nonzero
    W = nz @ w
    R = np.empty_like(nz)
    R[0] = w * nz[0] / W[0]
    if order >= 1:
        R[1] = (w * nz[1] - R[0] * W[1]) / W[0]
    if order >= 2:
        R[2] = (w * nz[2] - 2.0 * R[1] * W[1] - R[0] * W[2]) / W[0]
    out = np.zeros(basis.n_basis)
    out[idx] = R[order]
    return out


def eval_nurbs_nonzero(basis: NurbsBasis, xi: float, order: int,
                       side: str = "right") -> tuple[int, np.ndarray]:
    """Active-function NURBS derivative table at ``xi``.

    Returns ``(first, R)`` where ``R[k, j]`` is the k-th derivative of
    function ``first + j`` for ``k = 0..order``.  This is the assembly/
    collocation kernel; it avoids materialising dense length-n vectors.
    """
    knots = basis.knots
    span = find_span(knots, xi, side)
    p = knots.degree
    nz = _ders_basis_funs(knots.values, p, span, xi, order)
    w = basis.weights[span - p: span + 1]
    W = nz @ w
    R = np.empty_like(nz)
    R[0] = w * nz[0] / W[0]
    if order >= 1:
        R[1] = (w * nz[1] - R[0] * W[1]) / W[0]
    if order >= 2:
        R[2] = (w * nz[2] - 2.0 * R[1] * W[1] - R[0] * W[2]) / W[0]
    return span - p, R


def greville_abscissae(knots: KnotVector) -> np.ndarray:
    """Greville points ``(xi_(i+1) + ... + xi_(i+p)) / p`` for each function.

    The first and last coincide with the interval endpoints, where the open
    basis is interpolatory.
    """
    p = knots.degree
    vals = knots.values
    n = knots.n_basis
    out = np.empty(n)
    for i in range(n):
        out[i] = vals[i + 1: i + p + 1].sum() / p
    return out


def load_weights(path, n_basis: int) -> np.ndarray:
    """Read one positive decimal weight per line; length must match the basis."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    try:
        w = np.array([float(ln) for ln in lines], dtype=float)
    except ValueError as exc:
        raise ValueError(f"weight file {path}: non-numeric line ({exc})") from None
    if len(w) != n_basis:
        raise ValueError(
            f"weight file {path}: expected {n_basis} weights, found {len(w)}")
    if np.any(w <= 0.0):
        raise ValueError(f"weight file {path}: weights must be strictly positive")
    return w


def eval_spline_many(basis: NurbsBasis, coeffs: np.ndarray, xis: np.ndarray,
                     order: int = 0, side: str = "right") -> np.ndarray:
    """Values (or a derivative) of a NURBS expansion at many parameter points."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.n_basis,):
        raise ValueError("coefficient vector length mismatch")
    out = np.empty(len(xis))
    p = basis.degree
    for m, xi in enumerate(np.asarray(xis, dtype=float)):
        first, R = eval_nurbs_nonzero(basis, xi, order, side)
        out[m] = R[order] @ coeffs[first: first + p + 1]
    return out
