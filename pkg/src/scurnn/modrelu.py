"""modReLU activations and their Wirtinger derivatives.

All functions broadcast over numpy arrays; ``z`` is complex, ``b`` real.
Training uses the smoothed form ``modrelu_approx``; the exact form is kept
for analysis.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

EPS = 1e-5

__all__ = [
    "EPS",
    "SingularityError",
    "WirtingerPair",
    "SingularityReport",
    "modrelu_approx",
    "modrelu_approx_wirtinger",
    "modrelu_exact",
    "modrelu_exact_wirtinger",
    "singularity_probe",
]


class SingularityError(ArithmeticError):
    """Exact modReLU derivative requested at z = 0 on the active branch."""


class WirtingerPair(NamedTuple):
    d_dz: np.ndarray
    d_dzbar: np.ndarray


def _zhat(z, eps):
    return np.sqrt(z.real**2 + z.imag**2 + eps)


def modrelu_approx(z, b, eps: float = EPS):
    z = np.asarray(z, dtype=np.complex128)
    zhat = _zhat(z, eps)
    return z * (np.maximum(zhat + b, 0.0) / (zhat + eps))


def modrelu_approx_wirtinger(z, b, eps: float = EPS) -> WirtingerPair:
    z = np.asarray(z, dtype=np.complex128)
    b = np.asarray(b, dtype=np.float64)
    zhat = _zhat(z, eps)
    active = zhat + b >= 0
    tail = (eps - b) / (2.0 * zhat * (zhat + eps) ** 2)
    d_dz = (zhat + b) / (zhat + eps) + (z.real**2 + z.imag**2) * tail
    d_dzbar = z * z * tail
    return WirtingerPair(
        np.where(active, d_dz, 0.0).astype(np.complex128),
        np.where(active, d_dzbar, 0.0),
    )


def modrelu_exact(z, b):
    """``(|z| + b) z/|z|`` when ``|z| + b >= 0`` else 0; defined as 0 at ``z = 0``."""
    z = np.asarray(z, dtype=np.complex128)
    r = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        phase = np.where(r > 0, z / np.where(r > 0, r, 1.0), 0.0)
    return phase * np.maximum(r + b, 0.0)


def modrelu_exact_wirtinger(z, b) -> WirtingerPair:
    z = np.asarray(z, dtype=np.complex128)
    b = np.asarray(b, dtype=np.float64)
    r = np.abs(z)
    active = r + b >= 0
    if np.any(active & (r == 0)):
        raise SingularityError("modReLU derivative is unbounded at z = 0 when b >= 0")
    safe = np.where(r > 0, r, 1.0)
    d_dz = 1.0 + b / (2.0 * safe)
    d_dzbar = -b * z * z / (2.0 * safe**3)
    return WirtingerPair(
        np.where(active, d_dz, 0.0).astype(np.complex128),
        np.where(active, d_dzbar, 0.0),
    )


class SingularityReport(NamedTuple):
    max_dzbar: np.ndarray
    flagged: np.ndarray

    @property
    def flagged_units(self) -> int:
        return int(np.count_nonzero(self.flagged))

    @property
    def overall_max_dzbar(self) -> float:
        return float(self.max_dzbar.max()) if self.max_dzbar.size else 0.0


def singularity_probe(z_batch, b, threshold: float, eps: float = EPS) -> SingularityReport:
    """Per-unit diagnostics for the near-singular regime ``zhat + eps << b``.

    ``z_batch`` has hidden units on its last axis; every leading axis (time,
    batch) is reduced. A unit is flagged when ``b / (zhat + eps) > threshold``
    for any sample; only positive ``b`` can trip this.
    """
    z = np.asarray(z_batch, dtype=np.complex128)
    b = np.asarray(b, dtype=np.float64)
    if z.shape[-1] != b.shape[-1]:
        raise ValueError(f"z has {z.shape[-1]} units, b has {b.shape[-1]}")
    z2 = z.reshape(-1, z.shape[-1])
    zhat = _zhat(z2, eps)
    pair = modrelu_approx_wirtinger(z2, b, eps)
    max_dzbar = np.abs(pair.d_dzbar).max(axis=0) if z2.shape[0] else np.zeros(b.shape)
    ratio = b / (zhat + eps)
    flagged = (ratio > threshold).any(axis=0) if z2.shape[0] else np.zeros(b.shape, bool)
    return SingularityReport(max_dzbar, flagged)
