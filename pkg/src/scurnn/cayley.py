"""Scaled Cayley transform ``W = (I + A)^-1 (I - A) D`` and its gradients.

``A`` is skew-Hermitian, ``A = X + iY`` with ``X`` skew-symmetric and ``Y``
symmetric, and ``D = diag(exp(i*theta))``. The skew-Hermitian structure is
kept by storage: only the strict lower triangle of ``X`` and the lower
triangle (with diagonal) of ``Y`` are trainable numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .complex_core import (
    DimensionError,
    LUFactor,
    SingularMatrixError,
    frobenius_norm,
    lu_factor,
)

__all__ = [
    "CorruptedParameterError",
    "SkewHermitianParam",
    "UnitaryDiag",
    "CayleyCache",
    "build_unitary",
    "grad_A",
    "grad_theta",
    "init_A",
    "init_theta",
    "unitarity_error",
]


class CorruptedParameterError(ArithmeticError):
    """``I + A`` could not be factored; ``A`` is not skew-Hermitian."""


@dataclass
class SkewHermitianParam:
    """Packed skew-Hermitian matrix.

    ``x_lower`` holds ``X[i, j]`` for ``i > j`` and ``y_lower`` holds
    ``Y[i, j]`` for ``i >= j``, both in ``np.tril_indices`` order.
    """

    n: int
    x_lower: np.ndarray
    y_lower: np.ndarray

    def __post_init__(self):
        self.x_lower = np.asarray(self.x_lower, dtype=np.float64)
        self.y_lower = np.asarray(self.y_lower, dtype=np.float64)
        if self.x_lower.shape != (self.n * (self.n - 1) // 2,):
            raise DimensionError(f"x_lower has shape {self.x_lower.shape} for n={self.n}")
        if self.y_lower.shape != (self.n * (self.n + 1) // 2,):
            raise DimensionError(f"y_lower has shape {self.y_lower.shape} for n={self.n}")

    @staticmethod
    def x_index(n: int):
        return np.tril_indices(n, -1)

    @staticmethod
    def y_index(n: int):
        return np.tril_indices(n, 0)

    @classmethod
    def zeros(cls, n: int) -> "SkewHermitianParam":
        return cls(n, np.zeros(n * (n - 1) // 2), np.zeros(n * (n + 1) // 2))

    @classmethod
    def from_matrices(cls, x, y) -> "SkewHermitianParam":
        """Pack ``x`` and ``y``; only their lower triangles are read."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n = x.shape[0]
        return cls(n, x[cls.x_index(n)].copy(), y[cls.y_index(n)].copy())

    @classmethod
    def from_complex(cls, a) -> "SkewHermitianParam":
        a = np.asarray(a, dtype=np.complex128)
        return cls.from_matrices(a.real, a.imag)

    @property
    def x(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.x_index(self.n)] = self.x_lower
        return out - out.T

    @property
    def y(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.y_index(self.n)] = self.y_lower
        return out + np.tril(out, -1).T

    def matrix(self) -> np.ndarray:
        return self.x + 1j * self.y

    def copy(self) -> "SkewHermitianParam":
        return SkewHermitianParam(self.n, self.x_lower.copy(), self.y_lower.copy())


@dataclass
class UnitaryDiag:
    """Argument vector ``theta``; ``D = diag(exp(i*theta))`` is derived on demand."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 1:
            raise DimensionError(f"theta must be a vector, got shape {self.theta.shape}")

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> np.ndarray:
        return np.exp(1j * self.theta)

    def matrix(self) -> np.ndarray:
        return np.diag(self.d)

    def copy(self) -> "UnitaryDiag":
        return UnitaryDiag(self.theta.copy())


@dataclass(frozen=True)
class CayleyCache:
    k: np.ndarray
    w: np.ndarray
    d: np.ndarray
    lu_of_I_plus_A: LUFactor

    @property
    def n(self) -> int:
        return self.w.shape[0]


def build_unitary(a: SkewHermitianParam, d: UnitaryDiag) -> CayleyCache:
    if a.n != d.n:
        raise DimensionError(f"A is {a.n}x{a.n} but theta has length {d.n}")
    n = a.n
    amat = a.matrix()
    eye = np.eye(n, dtype=np.complex128)
    try:
        lu = lu_factor(eye + amat)
    except SingularMatrixError as exc:
        raise CorruptedParameterError(f"I + A is singular: {exc}") from exc
    k = lu.solve(eye - amat)
    dvec = d.d
    # K @ diag(d) scales columns
    w = k * dvec[np.newaxis, :]
    return CayleyCache(k=k, w=w, d=dvec, lu_of_I_plus_A=lu)


def _check_square(dLdW, n):
    dLdW = np.asarray(dLdW, dtype=np.complex128)
    if dLdW.shape != (n, n):
        raise DimensionError(f"dL/dW has shape {dLdW.shape}, expected {(n, n)}")
    return dLdW


def grad_A(dLdW, a: SkewHermitianParam, d: UnitaryDiag, cache: CayleyCache) -> np.ndarray:
    """Gradient of the loss with respect to conj(A).

    ``dLdW`` is the unconjugated Wirtinger derivative
    ``(dL/dRe W - i dL/dIm W) / 2``. Returns ``C.T - conj(C)`` with
    ``C = (I + A)^-T dLdW (D + W.T)``, which is skew-Hermitian.
    """
    dLdW = _check_square(dLdW, cache.n)
    if a.n != cache.n or d.n != cache.n:
        raise DimensionError("parameters and cache disagree on n")
    # dLdW @ (D + W.T) = dLdW * d (column scaling) + dLdW @ W.T
    rhs = dLdW * cache.d[np.newaxis, :] + dLdW @ cache.w.T
    c = cache.lu_of_I_plus_A.solve(rhs, transpose=True)
    return c.T - c.conj()


def grad_theta(dLdW, cache: CayleyCache, d: UnitaryDiag) -> np.ndarray:
    """``2 Re(i * diag(dLdW.T @ K) * d)``, forming only the diagonal."""
    dLdW = _check_square(dLdW, cache.n)
    if d.n != cache.n:
        raise DimensionError("theta and cache disagree on n")
    diag = np.einsum("kj,kj->j", dLdW, cache.k)
    return 2.0 * np.real(1j * diag * d.d)


def init_A(n: int, rng_seed: int) -> SkewHermitianParam:
    """Block-diagonal skew-symmetric real part, zero imaginary part.

    Each 2x2 block is ``[[0, s], [-s, 0]]`` with ``s = sqrt((1 - cos t) / (1 + cos t))``
    and ``t ~ U[0, pi/2]``; an odd trailing unit gets a zero.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    t = rng.uniform(0.0, np.pi / 2, size=n // 2)
    return skew_blocks(n, block_scale(t))


def block_scale(t):
    t = np.asarray(t, dtype=np.float64)
    return np.sqrt((1.0 - np.cos(t)) / (1.0 + np.cos(t)))


def skew_blocks(n: int, s) -> SkewHermitianParam:
    x = np.zeros((n, n))
    for j, sj in enumerate(np.asarray(s, dtype=np.float64)):
        x[2 * j, 2 * j + 1] = sj
        x[2 * j + 1, 2 * j] = -sj
    return SkewHermitianParam.from_matrices(x, np.zeros((n, n)))


def init_theta(n: int, rng_seed: int) -> UnitaryDiag:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    return UnitaryDiag(rng.uniform(0.0, 2 * np.pi, size=n))


def unitarity_error(w) -> float:
    w = np.asarray(w, dtype=np.complex128)
    return frobenius_norm(w.conj().T @ w - np.eye(w.shape[0]))
