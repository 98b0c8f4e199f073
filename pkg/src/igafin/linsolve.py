"""Banded linear algebra: storage, matvec, and LU with partial pivoting.

Matrices are n x n with equal lower/upper bandwidth ``kband`` and are stored
diagonal-wise, ``data[kband + i - j, j] = A[i, j]`` (the classic banded
layout, 2*kband + 1 rows).  Factorisation is LAPACK ``gbtrf``/``gbtrs``
behind a factor-once solve-many interface; partial pivoting widens the fill
to 3*kband + 1 rows inside the factor object only.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack

__all__ = ["BandedMatrix", "BandedLU", "SingularMatrixError"]


class SingularMatrixError(RuntimeError):
    """Raised when elimination meets an exactly zero pivot."""

    def __init__(self, pivot_index: int):
        self.pivot_index = pivot_index
        super().__init__(f"singular system: zero pivot at index {pivot_index}")


class BandedMatrix:
    """Square banded matrix with symmetric bandwidth."""

    def __init__(self, n: int, kband: int, data: np.ndarray | None = None):
        if n < 1 or kband < 0:
            raise ValueError("need n >= 1 and kband >= 0")
        self.n = n
        self.kband = kband
        if data is None:
            self.data = np.zeros((2 * kband + 1, n))
        else:
            data = np.asarray(data, dtype=float)
            if data.shape != (2 * kband + 1, n):
                raise ValueError(f"band data must have shape {(2 * kband + 1, n)}")
            self.data = data

    def __getitem__(self, ij: tuple[int, int]) -> float:
        i, j = ij
        if abs(i - j) > self.kband:
            return 0.0
        return float(self.data[self.kband + i - j, j])

    def set(self, i: int, j: int, value: float) -> None:
        if abs(i - j) > self.kband:
            raise IndexError("entry outside the band")
        self.data[self.kband + i - j, j] = value

    def add(self, i: int, j: int, value: float) -> None:
        self.data[self.kband + i - j, j] += value

    def copy(self) -> "BandedMatrix":
        return BandedMatrix(self.n, self.kband, self.data.copy())

    def __add__(self, other: "BandedMatrix") -> "BandedMatrix":
        if (other.n, other.kband) != (self.n, self.kband):
            raise ValueError("shape/bandwidth mismatch")
        return BandedMatrix(self.n, self.kband, self.data + other.data)

    def __sub__(self, other: "BandedMatrix") -> "BandedMatrix":
        if (other.n, other.kband) != (self.n, self.kband):
            raise ValueError("shape/bandwidth mismatch")
        return BandedMatrix(self.n, self.kband, self.data - other.data)

    def scaled(self, c: float) -> "BandedMatrix":
        return BandedMatrix(self.n, self.kband, c * self.data)

    def scale_columns(self, s: np.ndarray) -> "BandedMatrix":
        """A @ diag(s) -- used for penalty terms M @ P with diagonal P."""
        return BandedMatrix(self.n, self.kband, self.data * np.asarray(s))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n, k = self.n, self.kband
        y = np.zeros(n)
        for r in range(2 * k + 1):
            d = r - k  # row index i = j + d
            jlo = max(0, -d)
            jhi = min(n, n - d)
            if jlo < jhi:
                y[jlo + d: jhi + d] += self.data[r, jlo:jhi] * x[jlo:jhi]
        return y

    def to_dense(self) -> np.ndarray:
        n, k = self.n, self.kband
        out = np.zeros((n, n))
        for r in range(2 * k + 1):
            d = r - k
            jlo = max(0, -d)
            jhi = min(n, n - d)
            for j in range(jlo, jhi):
                out[j + d, j] = self.data[r, j]
        return out

    @classmethod
    def from_dense(cls, a: np.ndarray, kband: int) -> "BandedMatrix":
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError("matrix must be square")
        out = cls(n, kband)
        for i in range(n):
            for j in range(max(0, i - kband), min(n, i + kband + 1)):
                out.data[kband + i - j, j] = a[i, j]
        # refuse silent truncation
        if not np.allclose(out.to_dense(), a, rtol=0.0, atol=0.0):
            raise ValueError("matrix has entries outside the requested band")
        return out

    def lu_factor(self) -> "BandedLU":
        return BandedLU(self)


class BandedLU:
    """LU factors of a BandedMatrix; reusable for many right-hand sides."""

    def __init__(self, mat: BandedMatrix):
        n, k = mat.n, mat.kband
        ab = np.zeros((3 * k + 1, n), order="F")
        ab[k:, :] = mat.data
        lu, ipiv, info = lapack.dgbtrf(ab, k, k)
        if info > 0:
            raise SingularMatrixError(info - 1)
        if info < 0:
            raise ValueError(f"illegal argument {-info} to banded factorisation")
        self.n = n
        self.kband = k
        self._lu = lu
        self._ipiv = ipiv

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError("right-hand side length mismatch")
        x, info = lapack.dgbtrs(self._lu, self.kband, self.kband, b, self._ipiv)
        if info != 0:
            raise ValueError(f"banded back-substitution failed (info={info})")
        return x
