"""Autodiff engine: forward values against numpy, gradients against central differences."""

from __future__ import annotations

import numpy as np
import pytest

from digcnet import nn

from conftest import numeric_grad, relative_error

TOL = 5e-7


def fd_check(build, arrays, tol=TOL):
    """Backprop gradients of scalar ``build(*tensors)`` vs the FD oracle."""
    tensors = [nn.Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    assert out.data.size == 1
    out.backward()

    def value() -> float:
        fresh = [nn.Tensor(a, requires_grad=True) for a in arrays]
        return float(build(*fresh).data)

    expected = numeric_grad(value, arrays)
    for t, ref in zip(tensors, expected):
        assert t.grad is not None
        assert relative_error(t.grad, ref) < tol


def rand(shape, seed, lo=-2.0, hi=2.0):
    return np.random.default_rng(seed).uniform(lo, hi, size=shape)


# --- forward values -------------------------------------------------------


def test_elementwise_forward_matches_numpy():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4)) + 3.0
    ta, tb = nn.Tensor(a), nn.Tensor(b)
    np.testing.assert_array_equal((ta + tb).data, a + b)
    np.testing.assert_array_equal((ta - tb).data, a - b)
    np.testing.assert_array_equal((ta * tb).data, a * b)
    np.testing.assert_array_equal((ta / tb).data, a / b)
    np.testing.assert_array_equal((-ta).data, -a)
    np.testing.assert_array_equal(ta.relu().data, np.maximum(a, 0.0))
    np.testing.assert_allclose(ta.tanh().data, np.tanh(a), rtol=1e-15)
    np.testing.assert_allclose(tb.log().data, np.log(b), rtol=1e-15)


def test_sigmoid_matches_closed_form_and_is_stable_at_extremes():
    x = np.array([-700.0, -5.0, 0.0, 5.0, 700.0])
    out = nn.Tensor(x).sigmoid().data
    moderate = 1.0 / (1.0 + np.exp(-x[1:4]))
    np.testing.assert_allclose(out[1:4], moderate, rtol=1e-15)
    assert out[2] == 0.5
    assert np.all(np.isfinite(out))
    assert np.all((out >= 0.0) & (out <= 1.0))
    assert 0.0 < out[0] < 1e-300 and out[4] > 1.0 - 1e-15


def test_matmul_matches_numpy_including_batched_broadcast():
    rng = np.random.default_rng(1)
    a2, b2 = rng.normal(size=(3, 4)), rng.normal(size=(4, 5))
    np.testing.assert_array_equal((nn.Tensor(a2) @ nn.Tensor(b2)).data, a2 @ b2)
    a3, b3 = rng.normal(size=(6, 3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_array_equal((nn.Tensor(a3) @ nn.Tensor(b3)).data, a3 @ b3)
    with pytest.raises(ValueError):
        _ = nn.Tensor(np.ones(3)) @ nn.Tensor(np.ones((3, 2)))


def test_reductions_and_shape_ops_match_numpy():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(2, 3, 4))
    t = nn.Tensor(a)
    assert float(t.sum().data) == pytest.approx(a.sum(), rel=1e-15)
    np.testing.assert_allclose(t.sum(axis=1).data, a.sum(axis=1), rtol=1e-15)
    assert float(t.mean().data) == pytest.approx(a.mean(), rel=1e-15)
    np.testing.assert_allclose(t.mean(axis=0).data, a.mean(axis=0), rtol=1e-15)
    np.testing.assert_array_equal(t.reshape((6, 4)).data, a.reshape(6, 4))
    np.testing.assert_array_equal(t[1, :, 2:].data, a[1, :, 2:])
    np.testing.assert_array_equal(t.clip(-0.5, 0.5).data, np.clip(a, -0.5, 0.5))


def test_concat_matches_numpy_on_both_axes():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 5))
    np.testing.assert_array_equal(
        nn.concat([nn.Tensor(a), nn.Tensor(b)], axis=1).data,
        np.concatenate([a, b], axis=1),
    )
    c = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(
        nn.concat([nn.Tensor(a), nn.Tensor(c)], axis=0).data,
        np.concatenate([a, c], axis=0),
    )


# --- gradients vs finite differences --------------------------------------


def test_add_sub_grads():
    fd_check(lambda a, b: (a + b).sum(), [rand((3, 4), 10), rand((3, 4), 11)])
    fd_check(lambda a, b: (a - b).sum(), [rand((3, 4), 12), rand((3, 4), 13)])


def test_broadcast_add_grad_reduces_to_operand_shape():
    a, b = rand((3, 4), 14), rand((4,), 15)
    ta, tb = nn.Tensor(a, requires_grad=True), nn.Tensor(b, requires_grad=True)
    ((ta + tb) * nn.Tensor(rand((3, 4), 16))).sum().backward()
    assert ta.grad.shape == (3, 4) and tb.grad.shape == (4,)
    fd_check(lambda x, y: ((x + y) * nn.Tensor(rand((3, 4), 16))).sum(), [a, b])


def test_mul_div_grads():
    fd_check(lambda a, b: (a * b).sum(), [rand((2, 5), 17), rand((2, 5), 18)])
    fd_check(
        lambda a, b: (a / b).sum(),
        [rand((2, 5), 19), rand((2, 5), 20, lo=1.0, hi=3.0)],
    )
    fd_check(
        lambda a, b: (a * b).sum(),
        [rand((2, 5), 21), rand((5,), 22)],
    )


def test_matmul_grads_2d_and_batched():
    fd_check(lambda a, b: (a @ b).sum(), [rand((3, 4), 23), rand((4, 2), 24)])
    fd_check(
        lambda a, b: ((a @ b) * nn.Tensor(rand((5, 3, 2), 27))).sum(),
        [rand((5, 3, 4), 25), rand((4, 2), 26)],
    )


def test_unary_grads():
    x = rand((3, 4), 28)
    x[np.abs(x) < 0.1] = 0.5  # keep relu test away from its kink
    fd_check(lambda a: a.relu().sum(), [x])
    fd_check(lambda a: a.sigmoid().sum(), [rand((3, 4), 29)])
    fd_check(lambda a: a.tanh().sum(), [rand((3, 4), 30)])
    fd_check(lambda a: a.log().sum(), [rand((3, 4), 31, lo=0.5, hi=4.0)])
    fd_check(lambda a: (-a).sum(), [rand((3, 4), 32)])


def test_clip_grad_is_zero_outside_bounds():
    x = np.array([-2.0, -0.3, 0.4, 1.7])
    t = nn.Tensor(x, requires_grad=True)
    t.clip(-1.0, 1.0).sum().backward()
    np.testing.assert_array_equal(t.grad, [0.0, 1.0, 1.0, 0.0])


def test_reduction_and_reshape_grads():
    fd_check(lambda a: (a.sum(axis=0) * nn.Tensor(rand((4,), 33))).sum(), [rand((3, 4), 34)])
    fd_check(lambda a: (a.mean(axis=1) * nn.Tensor(rand((3,), 35))).sum(), [rand((3, 4), 36)])
    fd_check(lambda a: a.mean(), [rand((3, 4), 37)])
    fd_check(
        lambda a: (a.reshape((6, 2)) * nn.Tensor(rand((6, 2), 38))).sum(),
        [rand((3, 4), 39)],
    )


def test_getitem_grad_scatters_into_source_positions():
    x = rand((4, 5), 40)
    t = nn.Tensor(x, requires_grad=True)
    t[1:3, ::2].sum().backward()
    expected = np.zeros((4, 5))
    expected[1:3, ::2] = 1.0
    np.testing.assert_array_equal(t.grad, expected)
    fd_check(lambda a: (a[0, 1:] * nn.Tensor(rand((4,), 41))).sum(), [x])


def test_concat_grad_routes_to_each_operand():
    fd_check(
        lambda a, b: (nn.concat([a, b], axis=1) * nn.Tensor(rand((2, 7), 42))).sum(),
        [rand((2, 3), 43), rand((2, 4), 44)],
    )


def test_diamond_graph_accumulates_both_paths():
    x = np.array([0.7, -1.3, 2.1])
    t = nn.Tensor(x, requires_grad=True)
    (t * t + t).sum().backward()
    np.testing.assert_allclose(t.grad, 2.0 * x + 1.0, rtol=1e-15)


def test_same_tensor_on_both_matmul_sides():
    fd_check(lambda a: (a @ a).sum(), [rand((3, 3), 45)])


def test_backward_seeds_ones_on_non_scalar_output():
    x = rand((2, 3), 46)
    t = nn.Tensor(x, requires_grad=True)
    (t * 3.0).backward()
    np.testing.assert_array_equal(t.grad, np.full((2, 3), 3.0))


def test_constant_tensors_receive_no_grad():
    a = nn.Tensor(rand((2, 2), 47), requires_grad=True)
    b = nn.Tensor(rand((2, 2), 48))  # constant
    (a * b).sum().backward()
    assert a.grad is not None
    assert b.grad is None


def test_grad_accumulates_across_backward_calls_until_zeroed():
    t = nn.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    t.sum().backward()
    t.sum().backward()
    np.testing.assert_array_equal(t.grad, [2.0, 2.0])


def test_tensors_are_float64():
    assert nn.Tensor([1, 2, 3]).data.dtype == np.float64
    assert nn.zeros((2, 2)).data.dtype == np.float64


def test_deep_chain_backward_does_not_recurse():
    t = nn.Tensor(np.array([1.0]), requires_grad=True)
    y = t
    for _ in range(5000):
        y = y + 1.0
    y.sum().backward()
    np.testing.assert_array_equal(t.grad, [1.0])


def test_assert_all_finite_names_the_offender():
    with pytest.raises(FloatingPointError, match="bad_param"):
        nn.assert_all_finite([("ok", np.ones(2)), ("bad_param", np.array([np.nan]))], "ctx")
