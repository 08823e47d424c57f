"""Firing op: exact step forward, arctan-shaped gradient."""

import numpy as np
import pytest

from psn.errors import ContractError, ShapeMismatchError
from psn.neurons import (SurrogateConfig, heaviside_surrogate, smooth_step,
                        surrogate_grad)
from psn.tensor import Tape, Tensor, mul, sum_all


def test_step_values_with_threshold_one():
    h = Tensor(np.array([0.5, 1.0, 1.5]))
    s = heaviside_surrogate(h, 1.0)
    np.testing.assert_array_equal(s.data, [0.0, 1.0, 1.0])


def test_at_threshold_fires():
    s = heaviside_surrogate(Tensor(np.array([1.0])), 1.0)
    assert s.data[0] == 1.0


def test_outputs_are_binary():
    rng = np.random.default_rng(20)
    h = Tensor(rng.standard_normal((6, 9)))
    s = heaviside_surrogate(h, 0.0)
    assert set(np.unique(s.data)) <= {0.0, 1.0}


def test_sigma_peak_is_alpha_over_two():
    assert surrogate_grad(np.array(0.0), alpha=4.0) == pytest.approx(2.0)
    # Default alpha is 4 as well.
    assert surrogate_grad(np.array(0.0)) == pytest.approx(2.0)


def test_sigma_is_even_and_decaying():
    x = np.array([0.5, 1.0, 4.0])
    np.testing.assert_allclose(surrogate_grad(x), surrogate_grad(-x))
    vals = surrogate_grad(np.array([0.0, 0.5, 1.0, 4.0]))
    assert np.all(np.diff(vals) < 0)


def test_smooth_step_is_antiderivative_of_sigma():
    xs = np.linspace(-2.0, 2.0, 41)
    eps = 1e-5
    fd = (smooth_step(xs + eps) - smooth_step(xs - eps)) / (2 * eps)
    np.testing.assert_allclose(fd, surrogate_grad(xs), rtol=1e-6, atol=1e-9)


def test_smooth_step_limits():
    assert smooth_step(np.array(0.0)) == pytest.approx(0.5)
    assert smooth_step(np.array(1e9)) == pytest.approx(1.0, abs=1e-6)
    assert smooth_step(np.array(-1e9)) == pytest.approx(0.0, abs=1e-6)


def test_backward_at_threshold_equals_peak():
    h = Tensor(np.array([1.0]), requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(heaviside_surrogate(h, 1.0)))
    np.testing.assert_allclose(h.grad, [2.0])


def test_backward_matches_fd_of_relaxed_forward():
    rng = np.random.default_rng(21)
    h0 = rng.uniform(-1.5, 1.5, size=(4, 3))
    proj = rng.standard_normal((4, 3))

    h = Tensor(h0.copy(), requires_grad=True)
    with Tape() as tape:
        s = heaviside_surrogate(h, 0.25)
        tape.backward(sum_all(mul(s, Tensor(proj))))

    eps = 1e-6
    fd = np.zeros_like(h0)
    for i in np.ndindex(*h0.shape):
        hp = h0.copy()
        hp[i] += eps
        hm = h0.copy()
        hm[i] -= eps
        fd[i] = ((smooth_step(hp - 0.25) * proj).sum()
                 - ((smooth_step(hm - 0.25) * proj).sum())) / (2 * eps)
    np.testing.assert_allclose(h.grad, fd, rtol=1e-5, atol=1e-9)


def test_relaxed_forward_is_smooth_step():
    h = Tensor(np.array([-0.5, 0.0, 0.5]))
    s = heaviside_surrogate(h, 0.0, relaxed=True)
    np.testing.assert_allclose(s.data, smooth_step(h.data))


def test_threshold_tensor_gets_negated_gradient():
    rng = np.random.default_rng(22)
    h0 = rng.standard_normal((3, 4))
    th = Tensor(np.zeros(()), requires_grad=True)
    h = Tensor(h0.copy(), requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(heaviside_surrogate(h, th)))
    np.testing.assert_allclose(th.grad, -h.grad.sum(), rtol=1e-12)


def test_per_row_threshold_gradient_reduces_by_row():
    rng = np.random.default_rng(23)
    h0 = rng.standard_normal((3, 4))
    th = Tensor(np.zeros(3), requires_grad=True)
    h = Tensor(h0.copy(), requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(heaviside_surrogate(h, th)))
    np.testing.assert_allclose(th.grad, -h.grad.sum(axis=1), rtol=1e-12)


def test_bad_threshold_shape_rejected():
    h = Tensor(np.zeros((3, 4)))
    with pytest.raises(ShapeMismatchError):
        heaviside_surrogate(h, Tensor(np.zeros(7)))


def test_alpha_must_be_positive():
    with pytest.raises(ContractError):
        SurrogateConfig(alpha=0.0)
    with pytest.raises(ContractError):
        SurrogateConfig(alpha=-1.0)


def test_custom_alpha_changes_slope():
    h = Tensor(np.array([0.0]), requires_grad=True)
    with Tape() as tape:
        s = heaviside_surrogate(h, 0.0, cfg=SurrogateConfig(alpha=2.0))
        tape.backward(sum_all(s))
    np.testing.assert_allclose(h.grad, [1.0])


def test_huge_inputs_stay_finite():
    h = Tensor(np.array([1e30, -1e30]), requires_grad=True)
    with Tape() as tape:
        s = heaviside_surrogate(h, 0.0)
        tape.backward(sum_all(s))
    np.testing.assert_array_equal(s.data, [1.0, 0.0])
    assert np.all(np.isfinite(h.grad))
