"""Differentiation core: analytic gradients vs central finite differences."""

from __future__ import annotations

import numpy as np
import pytest

from codelm import autodiff as ad


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences; mutates x in place (shared with the graph)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad


def check_grad(build, *arrays, tol=1e-7):
    """build(tensors...) -> scalar Tensor; compares grads on every input."""
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    ad.backward(loss)
    for t, a in zip(tensors, arrays):
        numeric = numeric_grad(lambda: build(*[ad.Tensor(x.data) for x in tensors]).data.item(), a)
        assert t.grad is not None
        np.testing.assert_allclose(t.grad, numeric, rtol=tol, atol=tol)


def test_sum_of_squares_exact():
    x = ad.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    loss = ad.reduce_sum(ad.mul(x, x))
    ad.backward(loss)
    np.testing.assert_array_equal(x.grad, 2.0 * x.data)


def test_diamond_graph_accumulates():
    x = ad.Tensor(np.array([1.5, -0.5]), requires_grad=True)
    y = ad.add(ad.mul(x, x), x)  # x used twice
    loss = ad.reduce_sum(y)
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, 2.0 * x.data + 1.0)


def test_add_mul_broadcast_grads():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,))
    check_grad(lambda ta, tb: ad.reduce_sum(ad.mul(ad.add(ta, tb), tb)), a, b)


def test_sub_and_power_grads():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(5,)) + 3.0  # keep base positive for power
    b = rng.normal(size=(5,))
    check_grad(lambda ta, tb: ad.reduce_sum(ad.power(ad.sub(ta, tb), 2.0)), a, b)
    check_grad(lambda ta: ad.reduce_sum(ad.power(ta, -0.5)), a)


def test_matmul_grads_batched():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 5))
    check_grad(lambda ta, tb: ad.reduce_sum(ad.matmul(ta, tb)), a, b)


def test_matmul_rejects_vectors():
    with pytest.raises(ValueError):
        ad.matmul(ad.Tensor(np.zeros(3)), ad.Tensor(np.zeros((3, 2))))


def test_reduce_mean_axis_grads():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 4))
    check_grad(lambda ta: ad.reduce_sum(ad.power(ad.reduce_mean(ta, axis=-1, keepdims=True), 2.0)), a)


def test_relu_grad():
    a = np.array([-1.0, 0.5, 2.0, -0.2])
    check_grad(lambda ta: ad.reduce_sum(ad.mul(ad.relu(ta), ta)), a)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(4)
    x = ad.Tensor(rng.normal(size=(6, 9)) * 10.0)
    y = ad.softmax(x, axis=-1)
    np.testing.assert_allclose(y.data.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_grad():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(2, 5))
    w = rng.normal(size=(2, 5))
    check_grad(lambda ta: ad.reduce_sum(ad.mul(ad.softmax(ta, axis=-1), ad.Tensor(w))), a)


def test_log_softmax_grad():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))
    check_grad(lambda ta: ad.reduce_sum(ad.mul(ad.log_softmax(ta, axis=-1), ad.Tensor(w))), a)


def test_log_softmax_matches_softmax_log():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 7)) * 5.0
    ls = ad.log_softmax(ad.Tensor(x), axis=-1).data
    np.testing.assert_allclose(np.exp(ls), ad.softmax(ad.Tensor(x), axis=-1).data, atol=1e-12)


def test_embedding_scatter_add():
    table = ad.Tensor(np.arange(12, dtype=np.float64).reshape(4, 3), requires_grad=True)
    ids = np.array([1, 1, 3])
    out = ad.embedding(table, ids)
    loss = ad.reduce_sum(out)
    ad.backward(loss)
    expected = np.zeros((4, 3))
    expected[1] = 2.0  # row used twice
    expected[3] = 1.0
    np.testing.assert_array_equal(table.grad, expected)


def test_embedding_grad_fd():
    rng = np.random.default_rng(8)
    table = rng.normal(size=(5, 3))
    ids = np.array([[0, 2], [2, 4]])
    check_grad(lambda t: ad.reduce_sum(ad.power(ad.embedding(t, ids), 2.0)), table)


def test_take_index_grad():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(4, 6))
    idx = np.array([0, 5, 2, 2])
    check_grad(lambda ta: ad.reduce_sum(ad.power(ad.take_index(ta, idx), 2.0)), a)


def test_transpose_reshape_grads():
    rng = np.random.default_rng(10)
    a = rng.normal(size=(2, 3, 4))
    check_grad(
        lambda ta: ad.reduce_sum(
            ad.power(ad.reshape(ad.transpose(ta, (1, 0, 2)), (3, 8)), 2.0)
        ),
        a,
    )


def test_dropout_identity_when_not_training():
    x = ad.Tensor(np.ones((3, 3)), requires_grad=True)
    assert ad.dropout(x, 0.5, None, training=False) is x


def test_dropout_scales_kept_values():
    rng = np.random.default_rng(11)
    x = ad.Tensor(np.ones((1000,)))
    y = ad.dropout(x, 0.25, rng, training=True)
    kept = y.data[y.data > 0]
    np.testing.assert_allclose(kept, 1.0 / 0.75)
    assert 0.6 < (y.data > 0).mean() < 0.9


def test_no_grad_builds_no_graph():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.mul(x, x)
    assert not y.requires_grad
    with pytest.raises(ValueError):
        ad.backward(y if y.data.size == 1 else ad.reduce_sum(y))


def test_backward_requires_scalar():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(ad.mul(x, x))
