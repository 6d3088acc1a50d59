"""End-to-end finite-difference check of the analytic scuRNN gradients.

The loss is ``sum ||y_t - target_t||^2 / 2`` over a random sequence.
Analytic gradients come from BPTT followed by the Cayley gradient formulas;
the oracle perturbs each stored real parameter and re-runs the full forward
pass (including the Cayley transform) with central differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cayley import grad_A, grad_theta
from .modrelu import EPS
from .rnn import ScuRnnParams, backward, forward, init_params

GROUPS = ("X", "Y", "theta", "U", "V", "b", "c", "h0")
FD_STEP = 1e-6
# Minimum distance of every pre-activation from the modReLU kink, so that
# the finite-difference stencil never straddles it.
KINK_MARGIN = 1e-3


@dataclass
class GradcheckReport:
    n: int
    tau: int
    seed: int
    tol: float
    errors: dict[str, float]

    @property
    def failed(self) -> list[str]:
        return [g for g, e in self.errors.items() if not e < self.tol]

    @property
    def passed(self) -> bool:
        return not self.failed

    def lines(self) -> list[str]:
        out = [f"gradcheck n={self.n} tau={self.tau} seed={self.seed} tol={self.tol:g}"]
        for group, err in self.errors.items():
            status = "ok" if err < self.tol else "FAIL"
            out.append(f"  {group:<6} max rel err {err:.3e}  {status}")
        out.append("PASS" if self.passed else "FAIL: " + ", ".join(self.failed))
        return out


def relative_error(analytic, numeric) -> float:
    """Largest entrywise discrepancy, relative to the group's largest magnitude."""
    analytic = np.ravel(analytic)
    numeric = np.ravel(numeric)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def random_instance(n: int, m: int, p: int, tau: int, seed: int):
    """A generic parameter set plus one input sequence and its targets.

    Unlike the training initialisation, A has nonzero imaginary part, the
    bias straddles zero and h0 is O(1), so every code path is exercised.
    Draws are repeated until no pre-activation sits near the modReLU kink.
    """
    for attempt in range(100):
        rng = np.random.default_rng([seed, attempt])
        params = init_params(n, m, p, seed=int(rng.integers(2**31)))
        params.a.x_lower[:] = rng.normal(scale=0.5, size=params.a.x_lower.shape)
        params.a.y_lower[:] = rng.normal(scale=0.5, size=params.a.y_lower.shape)
        params.b[:] = rng.uniform(-0.5, 0.5, size=n)
        params.c[:] = rng.normal(size=p)
        params.h0_re[:] = rng.normal(size=n)
        params.h0_im[:] = rng.normal(size=n)
        x = rng.normal(size=(tau, m))
        target = rng.normal(size=(tau, p))
        z = forward(params, x).z_complex()
        if np.min(np.abs(np.sqrt(np.abs(z) ** 2 + EPS) + params.b)) > KINK_MARGIN:
            return params, x, target
    raise RuntimeError("could not draw an instance away from the modReLU kink")


def _loss(params: ScuRnnParams, x, target) -> float:
    y = forward(params, x).outputs
    return 0.5 * float(np.sum((y - target) ** 2))


def analytic_gradients(params: ScuRnnParams, x, target) -> dict[str, np.ndarray]:
    """Gradients with respect to the stored real parameters, per group."""
    tape = forward(params, x)
    g = backward(tape, params, tape.outputs - target)
    gA = grad_A(g.dLdW, params.a, params.theta, tape.cache)
    n = params.n
    xi = params.a.x_index(n)
    yi = params.a.y_index(n)
    # dL/dconj(A) = (dL/dX + i dL/dY) / 2 for tied off-diagonal pairs; a
    # diagonal Y entry is untied, giving dL/dY_jj = Im G_jj.
    dX = 2.0 * gA.real[xi]
    dY = 2.0 * gA.imag[yi]
    dY[yi[0] == yi[1]] *= 0.5
    return {
        "X": dX,
        "Y": dY,
        "theta": grad_theta(g.dLdW, tape.cache, params.theta),
        "U": np.concatenate([g.dLdU_re.ravel(), g.dLdU_im.ravel()]),
        "V": g.dLdV.ravel(),
        "b": g.dLdb,
        "c": g.dLdc,
        "h0": np.concatenate([g.dLdh0_re, g.dLdh0_im]),
    }


def _group_arrays(params: ScuRnnParams) -> dict[str, list[np.ndarray]]:
    return {
        "X": [params.a.x_lower],
        "Y": [params.a.y_lower],
        "theta": [params.theta.theta],
        "U": [params.u_re, params.u_im],
        "V": [params.v],
        "b": [params.b],
        "c": [params.c],
        "h0": [params.h0_re, params.h0_im],
    }


def numeric_gradients(params: ScuRnnParams, x, target, step: float = FD_STEP) -> dict[str, np.ndarray]:
    params = params.copy()
    out = {}
    for group, arrays in _group_arrays(params).items():
        parts = []
        for arr in arrays:
            grad = np.zeros(arr.shape)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + step
                up = _loss(params, x, target)
                arr[idx] = orig - step
                down = _loss(params, x, target)
                arr[idx] = orig
                grad[idx] = (up - down) / (2 * step)
            parts.append(grad.ravel())
        out[group] = np.concatenate(parts)
    return out


def run_gradcheck(
    n: int = 4,
    tau: int = 5,
    seed: int = 0,
    tol: float = 1e-5,
    m: int = 2,
    p: int = 2,
    corrupt: str | None = None,
) -> GradcheckReport:
    """Compare analytic and finite-difference gradients for every group.

    ``corrupt`` names a group whose analytic gradient gets its sign flipped,
    to confirm the check notices.
    """
    if not 1 <= n <= 10 or not 1 <= tau <= 8:
        raise ValueError("gradcheck supports 1 <= n <= 10 and 1 <= tau <= 8")
    if corrupt is not None and corrupt not in GROUPS:
        raise ValueError(f"unknown group {corrupt!r}; choose from {GROUPS}")
    params, x, target = random_instance(n, m, p, tau, seed)
    analytic = analytic_gradients(params, x, target)
    if corrupt is not None:
        analytic[corrupt] = -analytic[corrupt]
    numeric = numeric_gradients(params, x, target)
    errors = {g: relative_error(analytic[g], numeric[g]) for g in GROUPS}
    return GradcheckReport(n, tau, seed, tol, errors)
