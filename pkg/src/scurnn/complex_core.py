"""Dense complex matrix algebra.

Matrices are plain ``numpy`` arrays of dtype ``complex128`` (row-major).
The functions here are thin, shape-checked wrappers around the handful of
primitives the Cayley transform and BPTT need.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "DimensionError",
    "SingularMatrixError",
    "LUFactor",
    "as_complex_matrix",
    "matmul",
    "conj_transpose",
    "lu_factor",
    "solve",
    "frobenius_norm",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class SingularMatrixError(ArithmeticError):
    """A pivot vanished to working precision during LU factorization."""


def as_complex_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_complex_matrix(a)
    b = as_complex_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def conj_transpose(a) -> np.ndarray:
    return np.ascontiguousarray(as_complex_matrix(a).conj().T)


@dataclass(frozen=True)
class LUFactor:
    """LU factorization with partial pivoting of a square complex matrix.

    ``solve(rhs, transpose=True)`` solves ``m.T @ x = rhs`` (plain transpose,
    not conjugate) reusing the same factors.
    """

    lu: np.ndarray
    piv: np.ndarray

    @property
    def n(self) -> int:
        return self.lu.shape[0]

    def solve(self, rhs, transpose: bool = False) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=np.complex128)
        if rhs.shape[0] != self.n:
            raise DimensionError(
                f"right-hand side has {rhs.shape[0]} rows, matrix is {self.n}x{self.n}"
            )
        return scipy.linalg.lu_solve((self.lu, self.piv), rhs, trans=1 if transpose else 0)


def lu_factor(m) -> LUFactor:
    m = as_complex_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"LU needs a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise SingularMatrixError("matrix has non-finite entries")
    with warnings.catch_warnings():
        # exact zero pivots are reported below as SingularMatrixError
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(m, check_finite=False)
    pivots = np.abs(np.diag(lu))
    scale = max(float(np.max(np.abs(m))), 1.0) if m.size else 1.0
    if m.size and pivots.min() <= m.shape[0] * np.finfo(np.float64).eps * scale:
        raise SingularMatrixError(f"pivot {pivots.min():.3e} is zero to working precision")
    return LUFactor(lu, piv)


def solve(m, rhs) -> np.ndarray:
    """Solve ``m @ x = rhs`` by LU with partial pivoting."""
    m = as_complex_matrix(m)
    rhs = np.asarray(rhs, dtype=np.complex128)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"solve needs a square matrix, got {m.shape}")
    if rhs.shape[0] != m.shape[0]:
        raise DimensionError(f"rhs has {rhs.shape[0]} rows, expected {m.shape[0]}")
    return lu_factor(m).solve(rhs)


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.complex128)
    return float(np.sqrt(np.sum(a.real**2 + a.imag**2)))
