"""Tape and op-level checks for the autodiff core.

Gradient assertions compare against central finite differences in float64;
structural assertions (broadcast locality, accumulation) use exact hand
cases.
"""

import numpy as np
import pytest

from psn.errors import ContractError, ShapeMismatchError
from psn.tensor import (Tape, Tensor, active_tape, add, matmul, mean_axis0,
                        mul, no_tape, reshape, scalar_affine, split_rows,
                        stack_rows, sub, sum_all)


def _fd_grad(f, x0, eps=1e-3):
    """Central differences of scalar f at x0, one coordinate at a time."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    it = np.nditer(x0, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x0.copy()
        xp[i] += eps
        xm = x0.copy()
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


# ---------------------------------------------------------------- forward


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = matmul(Tensor(np.eye(2)), Tensor(a))
    np.testing.assert_array_equal(out.data, a)


def test_matmul_hand_case():
    w = Tensor(np.array([[1.0, 0.0], [1.0, 1.0]]))
    x = Tensor(np.array([[5.0], [7.0]]))
    out = matmul(w, x)
    np.testing.assert_array_equal(out.data, [[5.0], [12.0]])


def test_matmul_shape_error_names_both_shapes():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((4, 5)))
    with pytest.raises(ShapeMismatchError) as err:
        matmul(a, b)
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


def test_matmul_associativity():
    rng = np.random.default_rng(0)
    a, b, c = (Tensor(rng.standard_normal((8, 8))) for _ in range(3))
    left = matmul(matmul(a, b), c).data
    right = matmul(a, matmul(b, c)).data
    np.testing.assert_allclose(left, right, atol=1e-5)


def test_add_elementwise():
    out = add(Tensor(np.array([1.0, 2.0])), Tensor(np.array([3.0, 4.0])))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_mul_by_zero_annihilates_value_and_gradient():
    x = Tensor(np.array([2.0, -3.0]), requires_grad=True)
    z = Tensor(np.zeros(2))
    with Tape() as tape:
        loss = sum_all(mul(x, z))
        tape.backward(loss)
    np.testing.assert_array_equal(loss.data, 0.0)
    np.testing.assert_array_equal(x.grad, np.zeros(2))


def test_sub_row_broadcast_is_per_row():
    h = np.arange(12.0).reshape(3, 4)
    b = np.array([10.0, 20.0, 30.0])
    out = sub(Tensor(h), Tensor(b))
    np.testing.assert_array_equal(out.data, h - b[:, None])


def test_sub_broadcast_perturbation_stays_in_its_row():
    # Changing threshold entry t may only move row t of the output.
    h = Tensor(np.ones((4, 5)))
    b0 = np.zeros(4)
    b1 = b0.copy()
    b1[2] = 0.25
    base = sub(h, Tensor(b0)).data
    bumped = sub(h, Tensor(b1)).data
    diff_rows = np.nonzero(np.any(base != bumped, axis=1))[0]
    np.testing.assert_array_equal(diff_rows, [2])


def test_scalar_affine_values():
    out = scalar_affine(Tensor(np.array([2.0])), 0.5, 0.0)
    np.testing.assert_array_equal(out.data, [1.0])
    ident = scalar_affine(Tensor(np.array([7.0, -1.0])), 1.0, 0.0)
    np.testing.assert_array_equal(ident.data, [7.0, -1.0])


def test_reshape_roundtrip():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(reshape(x, (3, 2)))
        tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_split_stack_roundtrip():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    rows = split_rows(x)
    assert len(rows) == 3
    np.testing.assert_array_equal(stack_rows(rows).data, x.data)


def test_mean_axis0_value():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(mean_axis0(x).data, [2.0, 3.0])


# --------------------------------------------------------------- backward


def test_backward_of_sum_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_accumulates_across_calls():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(x)
        tape.backward(loss)
        tape.backward(loss)
    np.testing.assert_array_equal(x.grad, 2 * np.ones(3))


def test_backward_rejects_non_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = add(x, x)
        with pytest.raises(ContractError):
            tape.backward(y)


def test_matmul_grad_structure_and_fd():
    rng = np.random.default_rng(1)
    w0 = rng.standard_normal((3, 4))
    x_const = rng.standard_normal((4, 5))

    w = Tensor(w0.copy(), requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(matmul(w, Tensor(x_const))))

    # d/dW sum(W X) = 1 X^T: every row equals the row sums of X.
    np.testing.assert_allclose(w.grad, np.tile(x_const.sum(axis=1), (3, 1)),
                               rtol=1e-12)
    fd = _fd_grad(lambda wv: (wv @ x_const).sum(), w0)
    np.testing.assert_allclose(w.grad, fd, rtol=1e-6, atol=1e-8)


def test_scalar_affine_grad_is_uniform_scale():
    x0 = np.array([0.3, -1.2, 2.0])
    x = Tensor(x0.copy(), requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(scalar_affine(x, -2.5, 7.0)))
    np.testing.assert_allclose(x.grad, np.full(3, -2.5), rtol=1e-12)


@pytest.mark.parametrize("op,f", [
    (add, lambda a, b: a + b),
    (sub, lambda a, b: a - b),
    (mul, lambda a, b: a * b),
])
def test_elementwise_grads_match_fd(op, f):
    rng = np.random.default_rng(2)
    a0 = rng.standard_normal((4, 3))
    b0 = rng.standard_normal((4, 3))
    a = Tensor(a0.copy(), requires_grad=True)
    b = Tensor(b0.copy(), requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(op(a, b)))
    np.testing.assert_allclose(
        a.grad, _fd_grad(lambda v: f(v, b0).sum(), a0), rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(
        b.grad, _fd_grad(lambda v: f(a0, v).sum(), b0), rtol=1e-5, atol=1e-8)


def test_row_broadcast_grad_reduces_to_vector():
    rng = np.random.default_rng(3)
    h0 = rng.standard_normal((3, 5))
    b0 = rng.standard_normal(3)
    b = Tensor(b0.copy(), requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(sub(Tensor(h0), b)))
    np.testing.assert_allclose(b.grad, np.full(3, -5.0), rtol=1e-12)
    fd = _fd_grad(lambda v: (h0 - v[:, None]).sum(), b0)
    np.testing.assert_allclose(b.grad, fd, rtol=1e-6)


def test_mul_grad_routes_opposite_operand():
    a0 = np.array([1.0, 2.0, 3.0])
    b0 = np.array([-1.0, 0.5, 4.0])
    a = Tensor(a0.copy(), requires_grad=True)
    b = Tensor(b0.copy(), requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(mul(a, b)))
    np.testing.assert_array_equal(a.grad, b0)
    np.testing.assert_array_equal(b.grad, a0)


# ------------------------------------------------------------- tape rules


def test_no_tape_blocks_recording():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        with no_tape():
            y = add(x, x)
        assert active_tape() is tape
    assert y.data.shape == (2,)
    assert x.grad is None


def test_requires_grad_false_never_accumulates():
    x = Tensor(np.ones(2), requires_grad=False)
    y = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(mul(x, y)))
    assert x.grad is None
    assert y.grad is not None


def test_zero_grad_clears_in_place():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        tape.backward(sum_all(x))
    assert x.grad is not None
    x.zero_grad()
    np.testing.assert_array_equal(x.grad, np.zeros(2))


def test_ops_outside_tape_are_pure_forward():
    x = Tensor(np.ones(2), requires_grad=True)
    y = add(x, x)  # no active tape
    np.testing.assert_array_equal(y.data, [2.0, 2.0])
    assert x.grad is None


def test_detached_shares_data_but_never_grads():
    x = Tensor(np.ones(3), requires_grad=True)
    d = x.detached()
    assert not d.requires_grad
    with Tape() as tape:
        tape.backward(sum_all(mul(d, x)))
    np.testing.assert_array_equal(x.grad, np.ones(3))
