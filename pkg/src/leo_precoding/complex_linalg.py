"""Dense complex linear algebra shared by the rest of the package.

Vectors and matrices are plain ``complex128`` numpy arrays.  The helpers in
this module validate shapes and finiteness at the boundary and keep the
Hermitian positive-definite solve on a Cholesky path, which is the only
factorization the precoders need.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack

__all__ = [
    "ShapeError",
    "NotPositiveDefiniteError",
    "as_cvector",
    "as_cmatrix",
    "hermitian",
    "matmul",
    "solve_hpd",
    "frobenius_norm",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NotPositiveDefiniteError(ArithmeticError):
    """Raised when a Cholesky factorization meets a non-positive pivot."""

    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite: non-positive pivot at index {pivot}")
        self.pivot = pivot


def as_cvector(x) -> np.ndarray:
    v = np.array(x, dtype=np.complex128)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def as_cmatrix(x) -> np.ndarray:
    m = np.array(x, dtype=np.complex128)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def hermitian(m: np.ndarray) -> np.ndarray:
    """Conjugate transpose (returns a new array)."""
    return np.conj(np.asarray(m)).T.copy()


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def solve_hpd(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``m x = rhs`` for Hermitian positive-definite ``m``.

    ``rhs`` may be a vector or a matrix of stacked right-hand sides.  Only the
    upper triangle of ``m`` is read.

    Raises
    ------
    NotPositiveDefiniteError
        If the factorization hits a non-positive pivot; ``pivot`` is the
        zero-based index of the offending leading minor.
    """
    m = np.asarray(m, dtype=np.complex128)
    rhs = np.asarray(rhs, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    if rhs.shape[0] != m.shape[0]:
        raise ShapeError(f"rhs of shape {rhs.shape} does not match matrix {m.shape}")
    c, info = lapack.zpotrf(m, lower=False, clean=False)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:  # pragma: no cover - argument error inside LAPACK
        raise ValueError(f"zpotrf argument {-info} invalid")
    x, info = lapack.zpotrs(c, rhs, lower=False)
    if info != 0:  # pragma: no cover
        raise ValueError(f"zpotrs failed with info={info}")
    return x


def frobenius_norm(m: np.ndarray) -> float:
    m = np.asarray(m)
    return float(np.sqrt(np.sum(m.real**2 + m.imag**2)))
