"""Per-group optimizers: SGD, RMSProp, Adam and Adagrad.

Three groups are stepped independently: the skew-Hermitian matrix ``A``,
the scaling arguments ``theta`` and every other weight. ``A`` is stepped on
its packed real and imaginary triangles, so squaring optimizers see the two
components separately and the result stays exactly skew-Hermitian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cayley import SkewHermitianParam, UnitaryDiag
from .complex_core import DimensionError, frobenius_norm

KINDS = ("sgd", "rmsprop", "adam", "adagrad")

__all__ = [
    "KINDS",
    "CorruptedGradientError",
    "OptimizerSpec",
    "GroupAssignment",
    "OptimizerState",
    "step_A",
    "step_theta",
    "step_dense",
]


class CorruptedGradientError(ValueError):
    """The gradient handed to ``step_A`` is not skew-Hermitian."""


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str
    lr: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}; choose from {KINDS}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")

    @classmethod
    def parse(cls, text: str) -> "OptimizerSpec":
        """Parse ``"KIND:LR"``, e.g. ``"rmsprop:1e-4"``."""
        try:
            kind, lr = text.split(":")
            return cls(kind.strip().lower(), float(lr))
        except ValueError as exc:
            raise ValueError(f"bad optimizer spec {text!r}, expected KIND:LR ({exc})") from None

    def __str__(self):
        return f"{self.kind}:{self.lr:g}"


@dataclass(frozen=True)
class GroupAssignment:
    group_A: OptimizerSpec
    group_D: OptimizerSpec
    group_other: OptimizerSpec

    @classmethod
    def uniform(cls, spec: OptimizerSpec) -> "GroupAssignment":
        return cls(spec, spec, spec)


@dataclass
class OptimizerState:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    rms_decay: float = 0.9
    rms_eps: float = 1e-10
    adagrad_eps: float = 1e-8
    step: int = 0
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        OptimizerSpec(self.kind, self.lr)

    @classmethod
    def from_spec(cls, spec: OptimizerSpec, **overrides) -> "OptimizerState":
        return cls(spec.kind, spec.lr, **overrides)

    def _slot(self, key: str, name: str, like: np.ndarray) -> np.ndarray:
        slots = self.slots.setdefault(key, {})
        arr = slots.get(name)
        if arr is None:
            arr = slots[name] = np.zeros_like(like)
        elif arr.shape != like.shape:
            raise DimensionError(f"optimizer slot {key}.{name} has shape {arr.shape}, got {like.shape}")
        return arr

    def update(self, key: str, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return the stepped value of ``param``; accumulators live under ``key``.

        Uses the step counter as it stands; callers advance it once per
        optimizer step via ``tick``.
        """
        param = np.asarray(param, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if param.shape != grad.shape:
            raise DimensionError(f"{key}: gradient shape {grad.shape} != parameter shape {param.shape}")
        lr = self.lr
        if self.kind == "sgd":
            return param - lr * grad
        if self.kind == "rmsprop":
            v = self._slot(key, "v", param)
            v *= self.rms_decay
            v += (1.0 - self.rms_decay) * grad * grad
            return param - lr * grad / (np.sqrt(v) + self.rms_eps)
        if self.kind == "adagrad":
            acc = self._slot(key, "acc", param)
            acc += grad * grad
            return param - lr * grad / (np.sqrt(acc) + self.adagrad_eps)
        # adam
        t = max(self.step, 1)
        m = self._slot(key, "m", param)
        v = self._slot(key, "v", param)
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * grad * grad
        m_hat = m / (1.0 - self.beta1**t)
        v_hat = v / (1.0 - self.beta2**t)
        return param - lr * m_hat / (np.sqrt(v_hat) + self.adam_eps)

    def tick(self) -> None:
        self.step += 1


def step_A(a: SkewHermitianParam, gradAbar, state: OptimizerState) -> SkewHermitianParam:
    """``A <- A - lr * opt(dL/dconj(A))`` applied to Re and Im parts independently."""
    g = np.asarray(gradAbar, dtype=np.complex128)
    if g.shape != (a.n, a.n):
        raise DimensionError(f"gradient shape {g.shape} does not match A ({a.n}x{a.n})")
    defect = frobenius_norm(g + g.conj().T)
    if defect > 1e-10 * max(1.0, frobenius_norm(g)):
        raise CorruptedGradientError(f"gradient is not skew-Hermitian (||G + G*|| = {defect:.3e})")
    state.tick()
    a.x_lower = state.update("A.re", a.x_lower, g.real[a.x_index(a.n)])
    a.y_lower = state.update("A.im", a.y_lower, g.imag[a.y_index(a.n)])
    return a


def step_theta(d: UnitaryDiag, grad_theta, state: OptimizerState) -> UnitaryDiag:
    grad_theta = np.asarray(grad_theta, dtype=np.float64)
    if grad_theta.shape != d.theta.shape:
        raise DimensionError(f"theta gradient shape {grad_theta.shape} != {d.theta.shape}")
    state.tick()
    d.theta = state.update("theta", d.theta, grad_theta)
    return d


def step_dense(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState):
    """Step every array in ``params`` in place and return the dict."""
    if set(params) != set(grads):
        raise DimensionError(f"parameter names {sorted(params)} != gradient names {sorted(grads)}")
    state.tick()
    for name in sorted(params):
        params[name][...] = state.update(name, params[name], grads[name])
    return params
