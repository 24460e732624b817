"""Autodiff ops against central finite differences and shape semantics."""

import numpy as np
import pytest

from frustumdet import tensor as T


def _param(rng, *shape):
    return T.Tensor(rng.normal(0, 1, shape), requires_grad=True)


def test_elementwise_ops_gradients(rng):
    a = _param(rng, 4, 3)
    b = _param(rng, 4, 3)
    cases = [
        lambda: T.sum_(T.mul(a, b)),
        lambda: T.sum_(T.add(a, b)),
        lambda: T.sum_(T.sub(a, b)),
        lambda: T.sum_(T.div(a, T.add(T.square(b), 1.0))),
        lambda: T.sum_(T.exp(T.mul(a, 0.3))),
        lambda: T.sum_(T.log(T.add(T.square(a), 1.0))),
        lambda: T.sum_(T.sqrt(T.add(T.square(a), 0.5))),
        lambda: T.sum_(T.sin(a)),
        lambda: T.sum_(T.cos(a)),
        lambda: T.sum_(T.pow_scalar(T.add(T.square(a), 1.0), 1.7)),
    ]
    for fn in cases:
        assert T.grad_check(fn, [a, b]) < 1e-7


def test_absolute_and_relu_gradients(rng):
    # keep values away from the kinks so finite differences are clean
    a = T.Tensor(rng.uniform(0.5, 2.0, (3, 3)) * rng.choice([-1, 1], (3, 3)), requires_grad=True)
    assert T.grad_check(lambda: T.sum_(T.absolute(a)), [a]) < 1e-7
    assert T.grad_check(lambda: T.sum_(T.relu(a)), [a]) < 1e-7


def test_matmul_gradient(rng):
    a = _param(rng, 3, 4)
    b = _param(rng, 4, 2)
    assert T.grad_check(lambda: T.sum_(T.square(T.matmul(a, b))), [a, b]) < 1e-7


def test_broadcasting_gradients(rng):
    a = _param(rng, 4, 3)
    row = _param(rng, 1, 3)
    scalar = _param(rng)
    fn = lambda: T.sum_(T.mul(T.add(a, row), scalar))
    assert T.grad_check(fn, [a, row, scalar]) < 1e-7


def test_reductions(rng):
    a = _param(rng, 4, 5)
    assert T.grad_check(lambda: T.mean(T.square(a)), [a]) < 1e-7
    assert T.grad_check(lambda: T.sum_(T.square(T.sum_(a, axis=0))), [a]) < 1e-7
    assert T.grad_check(lambda: T.sum_(T.square(T.mean(a, axis=1, keepdims=True))), [a]) < 1e-7


def test_max_over_axis_forward_and_ties():
    x = T.Tensor(np.array([[1.0, 3.0, 3.0], [2.0, 0.0, -1.0]]), requires_grad=True)
    out, arg = T.max_over_axis(x, 1)
    np.testing.assert_array_equal(out.data, [3.0, 2.0])
    np.testing.assert_array_equal(arg, [1, 0])
    T.sum_(out).backward()
    np.testing.assert_array_equal(x.grad, [[0, 1, 0], [1, 0, 0]])


def test_max_over_axis_gradient(rng):
    x = _param(rng, 5, 4)
    fn = lambda: T.sum_(T.square(T.max_over_axis(x, 1)[0]))
    assert T.grad_check(fn, [x]) < 1e-7


def test_where_and_minimum(rng):
    a = _param(rng, 4, 4)
    b = _param(rng, 4, 4)
    mask = rng.random((4, 4)) > 0.5
    assert T.grad_check(lambda: T.sum_(T.where(mask, T.square(a), b)), [a, b]) < 1e-7
    x = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = T.Tensor(np.array([1.0, 1.0]), requires_grad=True)
    T.sum_(T.minimum(x, y)).backward()
    np.testing.assert_array_equal(x.grad, [1, 0])
    np.testing.assert_array_equal(y.grad, [0, 1])


def test_reshape_concat(rng):
    a = _param(rng, 2, 6)
    b = _param(rng, 3, 6)
    fn = lambda: T.sum_(T.square(T.concat([T.reshape(a, (2, 6)), b], axis=0)))
    assert T.grad_check(fn, [a, b]) < 1e-7


def test_take_slice_plain_and_fancy(rng):
    x = _param(rng, 6, 4)
    assert T.grad_check(lambda: T.sum_(T.square(T.take_slice(x, slice(1, 5)))), [x]) < 1e-7
    x.zero_grad()
    idx = np.array([0, 2, 2, 5])
    out = T.take_slice(x, idx)
    T.sum_(out).backward()
    expect = np.zeros((6, 4))
    np.add.at(expect, idx, 1.0)
    np.testing.assert_array_equal(x.grad, expect)


def test_take_flat_duplicates_sum(rng):
    x = _param(rng, 3, 3)
    flat = np.array([0, 4, 4, 8])
    out = T.take_flat(x, flat)
    np.testing.assert_array_equal(out.data, x.data.ravel()[flat])
    T.sum_(out).backward()
    expect = np.zeros(9)
    np.add.at(expect, flat, 1.0)
    np.testing.assert_array_equal(x.grad, expect.reshape(3, 3))
    assert T.grad_check(lambda: T.sum_(T.square(T.take_flat(x, flat))), [x]) < 1e-7


def test_scatter_rows(rng):
    x = _param(rng, 3, 2)
    out = T.scatter_rows(x, 1, 2, 8)
    assert out.shape == (8, 2)
    np.testing.assert_array_equal(out.data[1::2][:3], x.data)
    np.testing.assert_array_equal(out.data[0::2], 0.0)
    assert T.grad_check(lambda: T.sum_(T.square(T.scatter_rows(x, 1, 2, 8))), [x]) < 1e-7


def test_pad_rows(rng):
    x = _param(rng, 3, 2)
    out = T.pad_rows(x, 2, 1)
    assert out.shape == (6, 2)
    np.testing.assert_array_equal(out.data[:2], 0.0)
    np.testing.assert_array_equal(out.data[5], 0.0)
    np.testing.assert_array_equal(out.data[2:5], x.data)
    assert T.grad_check(lambda: T.sum_(T.square(T.pad_rows(x, 2, 1))), [x]) < 1e-7


def test_segment_max_forward_empty_and_gradient(rng):
    x = T.Tensor(
        np.array([[1.0, -2.0], [3.0, 0.5], [0.0, 4.0], [2.0, 2.0]]), requires_grad=True
    )
    ids = np.array([0, 0, 2, 2])
    out = T.segment_max(x, ids, 4)
    np.testing.assert_array_equal(out.data[0], [3.0, 0.5])
    np.testing.assert_array_equal(out.data[1], [0.0, 0.0])
    np.testing.assert_array_equal(out.data[2], [2.0, 4.0])
    np.testing.assert_array_equal(out.data[3], [0.0, 0.0])
    T.sum_(out).backward()
    np.testing.assert_array_equal(x.grad, [[0, 0], [1, 1], [0, 1], [1, 0]])


def test_segment_max_tie_routes_to_first_row():
    x = T.Tensor(np.array([[5.0], [5.0]]), requires_grad=True)
    out = T.segment_max(x, np.array([0, 0]), 1)
    T.sum_(out).backward()
    np.testing.assert_array_equal(x.grad, [[1.0], [0.0]])


def test_segment_max_gradient(rng):
    x = _param(rng, 8, 3)
    ids = np.array([0, 0, 1, 1, 1, 3, 3, 3])
    fn = lambda: T.sum_(T.square(T.segment_max(x, ids, 5)))
    assert T.grad_check(fn, [x]) < 1e-7


def test_segment_max_trailing_empty_keeps_last_row():
    # the final nonempty segment must still reduce over its whole extent
    x = T.Tensor(np.array([[1.0], [9.0]]), requires_grad=True)
    out = T.segment_max(x, np.array([0, 0]), 3)
    np.testing.assert_array_equal(out.data, [[9.0], [0.0], [0.0]])
    T.sum_(out).backward()
    np.testing.assert_array_equal(x.grad, [[0.0], [1.0]])


def test_segment_max_all_empty(rng):
    x = T.Tensor(np.zeros((0, 4)), requires_grad=True)
    out = T.segment_max(x, np.zeros(0, dtype=np.int64), 3)
    np.testing.assert_array_equal(out.data, np.zeros((3, 4)))


def test_log_softmax_properties(rng):
    logits = _param(rng, 5, 7)
    ls = T.log_softmax(logits, axis=1)
    np.testing.assert_allclose(np.exp(ls.data).sum(axis=1), 1.0, atol=1e-12)
    big = T.Tensor(np.array([[1000.0, 1000.0, 0.0]]))
    assert np.all(np.isfinite(T.log_softmax(big, axis=1).data))
    assert T.grad_check(lambda: T.sum_(T.square(T.log_softmax(logits, axis=1))), [logits]) < 1e-7
    sm = T.softmax(logits, axis=1)
    np.testing.assert_allclose(sm.data.sum(axis=1), 1.0, atol=1e-12)


def test_smooth_l1_values_and_gradient(rng):
    x = T.Tensor(np.array([0.0, 0.5, 1.0, 2.0, -3.0]))
    out = T.smooth_l1(x).data
    np.testing.assert_allclose(out, [0.0, 0.125, 0.5, 1.5, 2.5], atol=1e-12)
    y = T.Tensor(rng.uniform(0.1, 3.0, 10) * rng.choice([-1, 1], 10), requires_grad=True)
    assert T.grad_check(lambda: T.sum_(T.smooth_l1(y)), [y]) < 1e-6


def test_operator_overloads(rng):
    a = _param(rng, 3, 3)
    b = _param(rng, 3, 3)
    out = ((a + b) * 2.0 - b) / 2.0 + (-a) + a @ b
    assert out.shape == (3, 3)
    out.sum().backward()
    assert a.grad is not None and b.grad is not None
    sliced = a[1:]
    assert sliced.shape == (2, 3)


def test_no_grad_blocks_graph(rng):
    a = _param(rng, 2, 2)
    with T.no_grad():
        out = T.sum_(T.square(a))
    assert not out.requires_grad
    d = a.detach()
    out2 = T.sum_(T.square(d))
    out2.backward()
    assert a.grad is None


def test_backward_accumulates_through_shared_node(rng):
    a = _param(rng, 3,)
    shared = T.mul(a, 2.0)
    out = T.add(T.sum_(shared), T.sum_(T.square(shared)))
    out.backward()
    expect = 2.0 + 2.0 * (2.0 * a.data) * 2.0
    np.testing.assert_allclose(a.grad, expect, atol=1e-12)
