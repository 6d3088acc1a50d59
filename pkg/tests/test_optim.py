import math

import numpy as np
import pytest

from conftest import random_skew_hermitian
from scurnn.cayley import SkewHermitianParam, UnitaryDiag, build_unitary, unitarity_error
from scurnn.complex_core import DimensionError, frobenius_norm
from scurnn.optim import (
    KINDS,
    CorruptedGradientError,
    GroupAssignment,
    OptimizerSpec,
    OptimizerState,
    step_A,
    step_dense,
    step_theta,
)


def scalar_reference(kind, lr, grads, p0=0.0):
    """Plain-float optimizer trace for a single scalar parameter."""
    p, m, v, acc = p0, 0.0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        if kind == "sgd":
            p -= lr * g
        elif kind == "rmsprop":
            v = 0.9 * v + 0.1 * g * g
            p -= lr * g / (math.sqrt(v) + 1e-10)
        elif kind == "adagrad":
            acc += g * g
            p -= lr * g / (math.sqrt(acc) + 1e-8)
        else:
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mh = m / (1 - 0.9**t)
            vh = v / (1 - 0.999**t)
            p -= lr * mh / (math.sqrt(vh) + 1e-8)
        out.append(p)
    return out


def skew_gradient(rng, n):
    return random_skew_hermitian(rng, n, 1.0).matrix()


class TestSpec:
    def test_parse(self):
        assert OptimizerSpec.parse("RMSProp:1e-4") == OptimizerSpec("rmsprop", 1e-4)
        assert str(OptimizerSpec("adam", 0.001)) == "adam:0.001"

    @pytest.mark.parametrize("text", ["adam", "adam:x", "nadam:1e-3", "sgd:0", "sgd:-1", "a:b:c"])
    def test_parse_rejects(self, text):
        with pytest.raises(ValueError):
            OptimizerSpec.parse(text)

    def test_uniform_assignment(self):
        spec = OptimizerSpec("sgd", 0.1)
        g = GroupAssignment.uniform(spec)
        assert g.group_A == g.group_D == g.group_other == spec


@pytest.mark.parametrize("kind", KINDS)
def test_zero_gradient_is_a_no_op(kind, rng):
    a = random_skew_hermitian(rng, 5)
    before = a.copy()
    d = UnitaryDiag(rng.uniform(0, 6, 5))
    theta0 = d.theta.copy()
    dense = {"v": rng.normal(size=(2, 3))}
    dense0 = dense["v"].copy()
    state = OptimizerState(kind, 0.1)
    for _ in range(3):
        step_A(a, np.zeros((5, 5), dtype=complex), state)
        step_theta(d, np.zeros(5), state)
        step_dense(dense, {"v": np.zeros((2, 3))}, state)
    np.testing.assert_array_equal(a.x_lower, before.x_lower)
    np.testing.assert_array_equal(a.y_lower, before.y_lower)
    np.testing.assert_array_equal(d.theta, theta0)
    np.testing.assert_array_equal(dense["v"], dense0)


def test_sgd_step_on_A_is_exact(rng):
    a = random_skew_hermitian(rng, 4)
    g = skew_gradient(rng, 4)
    expected = a.matrix() - 0.01 * g
    step_A(a, g, OptimizerState("sgd", 0.01))
    np.testing.assert_allclose(a.matrix(), expected, rtol=0, atol=1e-15)


def test_sgd_step_on_theta_is_exact(rng):
    d = UnitaryDiag(rng.uniform(0, 6, 7))
    g = rng.normal(size=7)
    expected = d.theta - 0.5 * g
    step_theta(d, g, OptimizerState("sgd", 0.5))
    np.testing.assert_array_equal(d.theta, expected)


def test_rmsprop_first_step_closed_form(rng):
    p = rng.normal(size=6)
    g = rng.normal(size=6)
    out = OptimizerState("rmsprop", 1e-3).update("p", p, g)
    np.testing.assert_allclose(out, p - 1e-3 * g / (np.sqrt(0.1 * g * g) + 1e-10), rtol=1e-15)


def test_adam_first_step_moves_by_lr():
    state = OptimizerState("adam", 1e-3)
    state.tick()
    out = state.update("p", np.array([2.0, -1.0]), np.array([5.0, -0.01]))
    np.testing.assert_allclose(out, [2.0 - 1e-3, -1.0 + 1e-3], rtol=0, atol=2e-9)


@pytest.mark.parametrize("kind", KINDS)
def test_matches_scalar_reference(kind):
    grads = [0.3, -1.2, 0.05, 2.0, -0.7, 0.0, 1.1, -0.4, 0.9, -2.5]
    lr = 0.01
    state = OptimizerState(kind, lr)
    d = UnitaryDiag(np.array([0.25]))
    got = []
    for g in grads:
        step_theta(d, np.array([g]), state)
        got.append(d.theta[0])
    np.testing.assert_allclose(got, scalar_reference(kind, lr, grads, 0.25), rtol=0, atol=1e-14)


@pytest.mark.parametrize("kind", KINDS)
def test_A_components_use_separate_accumulators(kind, rng):
    """Each packed entry follows the scalar trace of its own gradient component."""
    n = 3
    a = SkewHermitianParam.zeros(n)
    state = OptimizerState(kind, 0.02)
    xs, ys = [], []
    for _ in range(5):
        g = skew_gradient(rng, n)
        xs.append(g.real[a.x_index(n)])
        ys.append(g.imag[a.y_index(n)])
        step_A(a, g, state)
    for j in range(a.x_lower.size):
        ref = scalar_reference(kind, 0.02, [x[j] for x in xs])[-1]
        assert a.x_lower[j] == pytest.approx(ref, abs=1e-14)
    for j in range(a.y_lower.size):
        ref = scalar_reference(kind, 0.02, [y[j] for y in ys])[-1]
        assert a.y_lower[j] == pytest.approx(ref, abs=1e-14)


def test_long_run_keeps_structure(rng):
    n = 8
    a = random_skew_hermitian(rng, n)
    d = UnitaryDiag(rng.uniform(0, 6, n))
    states = [OptimizerState(k, 1e-2) for k in KINDS]
    for i in range(1000):
        state = states[i % len(states)]
        step_A(a, skew_gradient(rng, n), state)
        step_theta(d, rng.normal(size=n), state)
    amat = a.matrix()
    assert frobenius_norm(amat + amat.conj().T) == 0.0
    np.testing.assert_allclose(np.abs(d.d), 1.0, rtol=0, atol=1e-15)
    assert unitarity_error(build_unitary(a, d).w) <= 1e-10


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic(kind):
    def run():
        rng = np.random.default_rng(11)
        a = random_skew_hermitian(rng, 4)
        state = OptimizerState(kind, 1e-3)
        for _ in range(20):
            step_A(a, skew_gradient(rng, 4), state)
        return a

    a1, a2 = run(), run()
    np.testing.assert_array_equal(a1.x_lower, a2.x_lower)
    np.testing.assert_array_equal(a1.y_lower, a2.y_lower)


def test_rejects_non_skew_gradient(rng):
    a = random_skew_hermitian(rng, 4)
    before = a.copy()
    g = skew_gradient(rng, 4)
    g[1, 2] += 0.1
    state = OptimizerState("adam", 1e-3)
    with pytest.raises(CorruptedGradientError):
        step_A(a, g, state)
    np.testing.assert_array_equal(a.x_lower, before.x_lower)
    assert state.step == 0


def test_shape_errors(rng):
    state = OptimizerState("sgd", 0.1)
    with pytest.raises(DimensionError):
        step_A(random_skew_hermitian(rng, 3), np.zeros((4, 4)), state)
    with pytest.raises(DimensionError):
        step_theta(UnitaryDiag(np.zeros(3)), np.zeros(4), state)
    with pytest.raises(DimensionError):
        step_dense({"v": np.zeros(2)}, {"w": np.zeros(2)}, state)
    with pytest.raises(DimensionError):
        state.update("p", np.zeros(2), np.zeros(3))
