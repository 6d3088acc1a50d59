"""scuRNN cell: forward recurrence, BPTT and loss heads.

Hidden states are kept split as ``[Re h | Im h]`` along the last axis, so a
complex product ``W h`` is one real matmul against the 2n x 2n block matrix
``[[Re W.T, Im W.T], [-Im W.T, Re W.T]]`` (row-vector convention). Inputs are
batched as ``(batch, time, features)``; a 2-D ``(time, features)`` sequence
is treated as a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .cayley import (
    CayleyCache,
    SkewHermitianParam,
    UnitaryDiag,
    build_unitary,
    init_A,
    init_theta,
)
from .complex_core import DimensionError
from .modrelu import EPS, SingularityReport, modrelu_approx_wirtinger, singularity_probe

__all__ = [
    "NumericFaultError",
    "TapeMismatchError",
    "ScuRnnParams",
    "ForwardTape",
    "GradientSet",
    "init_params",
    "forward",
    "backward",
    "cross_entropy_head",
    "mse_head",
    "last_step_mask",
]


class NumericFaultError(FloatingPointError):
    """A hidden state went non-finite during the forward pass."""

    def __init__(self, timestep: int, report: SingularityReport):
        self.timestep = timestep
        self.report = report
        super().__init__(
            f"non-finite hidden state at timestep {timestep}; "
            f"{report.flagged_units} units flagged, max |d/dzbar| = {report.overall_max_dzbar:.3e}"
        )


class TapeMismatchError(ValueError):
    """A tape is being replayed against parameters it was not recorded with."""


# Names of the real arrays updated by the "other weights" optimizer group.
DENSE_NAMES = ("u_re", "u_im", "v", "b", "c", "h0_re", "h0_im")


@dataclass
class ScuRnnParams:
    a: SkewHermitianParam
    theta: UnitaryDiag
    u_re: np.ndarray
    u_im: np.ndarray
    v: np.ndarray
    b: np.ndarray
    c: np.ndarray
    h0_re: np.ndarray
    h0_im: np.ndarray

    def __post_init__(self):
        for name in DENSE_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n, m, p = self.n, self.m, self.p
        expected = {
            "u_re": (n, m),
            "u_im": (n, m),
            "v": (p, 2 * n),
            "b": (n,),
            "c": (p,),
            "h0_re": (n,),
            "h0_im": (n,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.a.n != n or self.theta.n != n:
            raise DimensionError("A, theta and U disagree on the hidden size")

    @property
    def n(self) -> int:
        return self.u_re.shape[0]

    @property
    def m(self) -> int:
        return self.u_re.shape[1]

    @property
    def p(self) -> int:
        return self.v.shape[0]

    def dense(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in DENSE_NAMES}

    def copy(self) -> "ScuRnnParams":
        return ScuRnnParams(
            self.a.copy(), self.theta.copy(), **{k: v.copy() for k, v in self.dense().items()}
        )

    def cayley(self) -> CayleyCache:
        return build_unitary(self.a, self.theta)


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(
    n: int,
    m: int,
    p: int,
    seed: int,
    h0_range: float = 0.01,
    bias_range: float = 0.01,
) -> ScuRnnParams:
    """Initial parameters.

    A from the block skew-symmetric scheme, theta uniform on the circle,
    U and V Glorot-uniform, biases and the (trainable) initial state uniform
    in ``[-range, range]``.
    """
    seeds = np.random.SeedSequence(seed).spawn(4)
    a_seed, theta_seed = (int(s.generate_state(1)[0]) for s in seeds[:2])
    rng = np.random.default_rng(seeds[2])
    u_re = _glorot(rng, m, 2 * n, (n, m))
    u_im = _glorot(rng, m, 2 * n, (n, m))
    v = _glorot(rng, 2 * n, p, (p, 2 * n))
    rng = np.random.default_rng(seeds[3])
    b = rng.uniform(-bias_range, bias_range, size=n)
    c = rng.uniform(-bias_range, bias_range, size=p)
    h0_re = rng.uniform(-h0_range, h0_range, size=n)
    h0_im = rng.uniform(-h0_range, h0_range, size=n)
    return ScuRnnParams(
        init_A(n, a_seed), init_theta(n, theta_seed), u_re, u_im, v, b, c, h0_re, h0_im
    )


def _expanded_w(w: np.ndarray) -> np.ndarray:
    wr, wi = w.real.T, w.imag.T
    return np.block([[wr, wi], [-wi, wr]])


@dataclass
class ForwardTape:
    """Everything BPTT needs. Time-major arrays: ``z[t]`` feeds ``h[t + 1]``."""

    x: np.ndarray  # (batch, time, m)
    z: np.ndarray  # (time, batch, 2n) pre-activations, [re | im]
    h: np.ndarray  # (time + 1, batch, 2n), h[0] is the initial state
    y: np.ndarray  # (batch, time, p)
    cache: CayleyCache
    w_expanded: np.ndarray
    squeeze: bool = False

    @property
    def steps(self) -> int:
        return self.z.shape[0]

    @property
    def outputs(self) -> np.ndarray:
        return self.y[0] if self.squeeze else self.y

    def z_complex(self) -> np.ndarray:
        n = self.z.shape[-1] // 2
        return self.z[..., :n] + 1j * self.z[..., n:]

    def probe(self, b, threshold: float) -> SingularityReport:
        return singularity_probe(self.z_complex(), b, threshold)


@dataclass
class GradientSet:
    dLdW: np.ndarray
    dLdU_re: np.ndarray
    dLdU_im: np.ndarray
    dLdV: np.ndarray
    dLdb: np.ndarray
    dLdc: np.ndarray
    dLdh0_re: np.ndarray
    dLdh0_im: np.ndarray

    def dense(self) -> dict[str, np.ndarray]:
        """Gradients keyed like ``ScuRnnParams.dense()``."""
        return {
            "u_re": self.dLdU_re,
            "u_im": self.dLdU_im,
            "v": self.dLdV,
            "b": self.dLdb,
            "c": self.dLdc,
            "h0_re": self.dLdh0_re,
            "h0_im": self.dLdh0_im,
        }

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, f.name))) for f in fields(self))


def _as_batch(x_seq, m):
    x = np.asarray(x_seq, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[np.newaxis]
    if x.ndim != 3 or x.shape[2] != m:
        raise DimensionError(f"input has shape {np.shape(x_seq)}, expected (..., time, {m})")
    return x, squeeze


def forward(params: ScuRnnParams, x_seq, cache: CayleyCache | None = None) -> ForwardTape:
    """Run the recurrence ``h_t = modrelu(U x_t + W h_{t-1})``, ``y_t = V [Re h; Im h] + c``."""
    n = params.n
    x, squeeze = _as_batch(x_seq, params.m)
    if cache is None:
        cache = params.cayley()
    elif cache.n != n:
        raise DimensionError("Cayley cache does not match the hidden size")
    batch, steps, _ = x.shape
    w_exp = _expanded_w(cache.w)
    u_exp = np.concatenate([params.u_re.T, params.u_im.T], axis=1)  # (m, 2n)
    ux = np.einsum("btm,mk->tbk", x, u_exp)

    b = params.b
    z = np.empty((steps, batch, 2 * n))
    h = np.empty((steps + 1, batch, 2 * n))
    h[0, :, :n] = params.h0_re
    h[0, :, n:] = params.h0_im
    for t in range(steps):
        zt = ux[t] + h[t] @ w_exp
        z[t] = zt
        zr, zi = zt[:, :n], zt[:, n:]
        zhat = np.sqrt(zr * zr + zi * zi + EPS)
        scale = np.maximum(zhat + b, 0.0) / (zhat + EPS)
        h[t + 1, :, :n] = zr * scale
        h[t + 1, :, n:] = zi * scale

    if not np.all(np.isfinite(h)):
        bad = int(np.argmax(~np.isfinite(h).reshape(steps + 1, -1).all(axis=1)))
        report = singularity_probe(z[:bad, :, :n] + 1j * z[:bad, :, n:], b, 100.0)
        raise NumericFaultError(bad, report)

    y = np.einsum("tbk,pk->btp", h[1:], params.v) + params.c
    return ForwardTape(x=x, z=z, h=h, y=y, cache=cache, w_expanded=w_exp, squeeze=squeeze)


def backward(tape: ForwardTape, params: ScuRnnParams, dLdy_seq) -> GradientSet:
    """Full BPTT through the split real/imaginary graph.

    The activation is differentiated with its Wirtinger pair: with
    ``dh = dL/d(conj h)``, ``dL/d(conj z) = conj(d_dz) dh + d_dzbar conj(dh)``.
    ``dLdW`` comes back as ``(dL/dRe W - i dL/dIm W) / 2``.
    """
    n = params.n
    dy = np.asarray(dLdy_seq, dtype=np.float64)
    if tape.squeeze:
        dy = dy[np.newaxis]
    if dy.shape != tape.y.shape:
        raise TapeMismatchError(f"dL/dy has shape {np.shape(dLdy_seq)}, outputs have {tape.outputs.shape}")
    if tape.z.shape[-1] != 2 * n or tape.x.shape[-1] != params.m:
        raise TapeMismatchError("tape was recorded with different parameter shapes")

    steps = tape.steps
    dy_t = np.ascontiguousarray(dy.transpose(1, 0, 2))  # (time, batch, p)
    h_out = tape.h[1:].reshape(-1, 2 * n)
    dV = dy_t.reshape(-1, params.p).T @ h_out
    dc = dy_t.sum(axis=(0, 1))

    zc = tape.z_complex()
    pair = modrelu_approx_wirtinger(zc, params.b[np.newaxis, np.newaxis, :])
    conj_dz = pair.d_dz.conj()
    dzbar = pair.d_dzbar

    gh = dy_t @ params.v  # (time, batch, 2n): output-head part of dL/dh
    gz = np.empty_like(tape.z)
    w_exp_t = tape.w_expanded.T
    carry = np.zeros_like(tape.h[0])
    for t in range(steps - 1, -1, -1):
        g = gh[t] + carry
        gh[t] = g
        dh = 0.5 * (g[:, :n] + 1j * g[:, n:])
        dz = conj_dz[t] * dh + dzbar[t] * dh.conj()
        gz[t, :, :n] = 2.0 * dz.real
        gz[t, :, n:] = 2.0 * dz.imag
        carry = gz[t] @ w_exp_t

    zr, zi = tape.z[..., :n], tape.z[..., n:]
    zhat = np.sqrt(zr * zr + zi * zi + EPS)
    active = zhat + params.b >= 0
    db = np.where(active, (gh[..., :n] * zr + gh[..., n:] * zi) / (zhat + EPS), 0.0).sum(axis=(0, 1))

    gz_flat = gz.reshape(-1, 2 * n)
    dM = tape.h[:-1].reshape(-1, 2 * n).T @ gz_flat
    g_re = (dM[:n, :n] + dM[n:, n:]).T
    g_im = (dM[:n, n:] - dM[n:, :n]).T
    dLdW = 0.5 * (g_re - 1j * g_im)

    x_t = tape.x.transpose(1, 0, 2).reshape(-1, params.m)
    dU = x_t.T @ gz_flat  # (m, 2n)
    dh0 = carry.sum(axis=0)
    return GradientSet(
        dLdW=dLdW,
        dLdU_re=dU[:, :n].T.copy(),
        dLdU_im=dU[:, n:].T.copy(),
        dLdV=dV,
        dLdb=db,
        dLdc=dc,
        dLdh0_re=dh0[:n].copy(),
        dLdh0_im=dh0[n:].copy(),
    )


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy_head(y_seq, labels):
    """Mean softmax cross entropy and its gradient with respect to ``y_seq``.

    ``labels`` with one entry per timestep scores every position; one label
    per sequence scores only the final timestep. Batch and time are averaged.
    """
    y = np.asarray(y_seq, dtype=np.float64)
    labels = np.asarray(labels)
    squeeze = y.ndim == 2
    if squeeze:
        y = y[np.newaxis]
        labels = labels[np.newaxis]
    batch, steps, p = y.shape
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integers")
    if labels.size and (labels.min() < 0 or labels.max() >= p):
        raise ValueError(f"labels must lie in [0, {p})")

    grad = np.zeros_like(y)
    if labels.shape == (batch,):
        logits = y[:, -1, :]
        logp = _log_softmax(logits)
        rows = np.arange(batch)
        loss = -logp[rows, labels].mean()
        g = np.exp(logp)
        g[rows, labels] -= 1.0
        grad[:, -1, :] = g / batch
    elif labels.shape == (batch, steps):
        logp = _log_softmax(y)
        bi, ti = np.indices((batch, steps))
        loss = -logp[bi, ti, labels].mean()
        g = np.exp(logp)
        g[bi, ti, labels] -= 1.0
        grad = g / (batch * steps)
    else:
        raise DimensionError(f"labels shape {labels.shape} does not fit outputs {y.shape}")
    return float(loss), (grad[0] if squeeze else grad)


def last_step_mask(batch: int, steps: int) -> np.ndarray:
    mask = np.zeros((batch, steps), dtype=bool)
    mask[:, -1] = True
    return mask


def mse_head(y_seq, targets, mask=None):
    """Mean squared error over the unmasked entries, with its gradient.

    ``mask`` broadcasts against ``y_seq`` either directly or over all but the
    output axis, e.g. a ``(batch, time)`` mask selecting whole timesteps.
    """
    y = np.asarray(y_seq, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != y.shape:
        raise DimensionError(f"targets {t.shape} do not match outputs {y.shape}")
    if mask is None:
        weights = np.ones_like(y)
    else:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape == y.shape[:-1]:
            mask = mask[..., np.newaxis]
        weights = np.broadcast_to(mask, y.shape)
    count = weights.sum()
    if count == 0:
        raise ValueError("mask selects no entries")
    diff = (y - t) * weights
    loss = float(np.sum(diff * diff) / count)
    return loss, 2.0 * diff / count
