import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bda.tensor import (
    GRADCHECK_TOL, ShapeError, Tape, Tensor, add, backward, concat_channels, finite_diff_gradient, gradcheck,
    max_rel_error, mean, mul, relu, reshape, scale, sigmoid, softmax_channels, sub, tsum,
)


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def test_sum_of_product_gradient_by_hand():
    a, b = leaf([1.0, 2.0, 3.0]), leaf([4.0, 5.0, 6.0])
    g = backward(tsum(mul(a, b)))
    np.testing.assert_array_equal(g[a], [4.0, 5.0, 6.0])
    np.testing.assert_array_equal(g[b], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(a.grad, [4.0, 5.0, 6.0])


def test_shared_subexpression_accumulates():
    # d/dx of (x*x + x) = 2x + 1
    x = leaf([0.5, -2.0])
    g = backward(tsum(add(mul(x, x), x)))
    np.testing.assert_allclose(g[x], [2.0, -3.0])


def test_sigmoid_derivative_closed_form():
    z = np.linspace(-6, 6, 13)
    x = leaf(z)
    g = backward(tsum(sigmoid(x)))
    s = 1 / (1 + np.exp(-z))
    np.testing.assert_allclose(sigmoid(Tensor(z)).data, s, rtol=1e-14)
    np.testing.assert_allclose(g[x], s * (1 - s), rtol=1e-12)


def test_relu_gradient_is_step():
    x = leaf([-1.0, 0.5, 2.0])
    g = backward(tsum(relu(x)))
    np.testing.assert_array_equal(g[x], [0.0, 1.0, 1.0])


def test_softmax_channels_sums_to_one_and_is_shift_invariant(rng):
    z = rng.standard_normal((5, 3, 4))
    p = softmax_channels(Tensor(z)).data
    np.testing.assert_allclose(p.sum(axis=0), 1.0, rtol=1e-12)
    np.testing.assert_allclose(softmax_channels(Tensor(z + 100.0)).data, p, rtol=1e-12)


def test_softmax_extreme_logits_stay_finite():
    z = np.array([[[1000.0]], [[-1000.0]]])
    np.testing.assert_array_equal(softmax_channels(Tensor(z)).data[:, 0, 0], [1.0, 0.0])


def test_gate_broadcasting_rules(rng):
    u = Tensor(rng.standard_normal((2, 3, 4, 4)))
    assert mul(u, Tensor(rng.standard_normal((2, 1, 4, 4)))).shape == (2, 3, 4, 4)
    assert mul(u, Tensor(rng.standard_normal((2, 3, 1, 1)))).shape == (2, 3, 4, 4)
    assert mul(u, 2.0).shape == (2, 3, 4, 4)
    with pytest.raises(ShapeError):
        mul(u, Tensor(rng.standard_normal((2, 3, 4, 1))))


def test_broadcast_gradients_reduce_to_parent_shape(rng):
    u = leaf(rng.standard_normal((3, 4, 4)))
    gate = leaf(rng.standard_normal((3, 1, 1)))
    g = backward(tsum(mul(u, gate)))
    assert g[gate].shape == (3, 1, 1)
    np.testing.assert_allclose(g[gate][:, 0, 0], u.data.sum(axis=(1, 2)))


def test_scalar_on_either_side():
    x = leaf([1.0, 2.0])
    assert np.array_equal((2.0 + x).data, [3.0, 4.0])
    assert np.array_equal((1.0 - x).data, [0.0, -1.0])
    assert np.array_equal(sub(x, 1.0).data, [0.0, 1.0])
    assert np.array_equal(scale(x, 3.0).data, [3.0, 6.0])


def test_concat_and_reshape_round_trip(rng):
    a, b = leaf(rng.standard_normal((2, 3, 3))), leaf(rng.standard_normal((4, 3, 3)))
    c = concat_channels(a, b)
    assert c.shape == (6, 3, 3)
    g = backward(tsum(mul(reshape(c, (6, 9)), Tensor(np.arange(54.0).reshape(6, 9)))))
    np.testing.assert_array_equal(g[a], np.arange(18.0).reshape(2, 3, 3))
    np.testing.assert_array_equal(g[b], np.arange(18.0, 54.0).reshape(4, 3, 3))


def test_mean_gradient():
    x = leaf(np.ones((2, 5)))
    np.testing.assert_allclose(backward(mean(x))[x], np.full((2, 5), 0.1))


def test_backward_rejects_non_scalar_and_constant_loss():
    with pytest.raises(ShapeError):
        backward(leaf([1.0, 2.0]) * 2.0)
    with pytest.raises(ValueError):
        backward(tsum(Tensor([1.0, 2.0])))


def test_tape_can_be_replayed():
    x = leaf([1.0, 2.0])
    tape = Tape(tsum(mul(x, x)))
    first = tape.backward()[x].copy()
    np.testing.assert_array_equal(tape.backward()[x], first)
    assert len(tape) >= 2


def test_non_finite_values_are_refused():
    with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError):
        mul(Tensor([np.inf]), Tensor([0.0]))


def test_leaves_without_requires_grad_get_nothing():
    a, b = leaf([1.0]), Tensor([2.0])
    g = backward(tsum(mul(a, b)))
    assert b not in g and b.grad is None


def test_finite_difference_oracle_on_polynomial():
    f = lambda t: tsum(mul(mul(t, t), t))
    x = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(finite_diff_gradient(f, x), 3 * x ** 2, rtol=1e-8)


def test_gradcheck_detects_a_wrong_derivative():
    def broken(x):
        out = sigmoid(x)
        out._backward = lambda g: (g,)  # claims d sigmoid = 1
        return tsum(out)

    assert gradcheck(broken, [np.array([0.1, 2.0])]) > 0.1
    assert gradcheck(lambda x: tsum(sigmoid(x)), [np.array([0.1, 2.0])]) < GRADCHECK_TOL[np.dtype(np.float64)]


def test_rel_error_metric_uses_unit_floor():
    assert max_rel_error([1e-9], [0.0]) == pytest.approx(1e-9)
    assert max_rel_error([100.0], [101.0]) == pytest.approx(0.01)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_sigmoid_bounded_and_monotone(vals):
    z = np.sort(np.asarray(vals))
    s = sigmoid(Tensor(z)).data
    assert np.all((s >= 0) & (s <= 1))
    assert np.all(np.diff(s) >= 0)


def test_float32_stays_float32():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    y = tsum(mul(sigmoid(x), x))
    assert y.dtype == np.float32
    assert backward(y)[x].dtype == np.float32


def test_integer_input_promoted():
    assert Tensor([1, 2]).dtype == np.float64
