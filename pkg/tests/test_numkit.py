import math
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from genad.numkit import (
    Adam,
    DimensionError,
    NumericError,
    Tensor,
    adam_step,
    attention,
    bce,
    cross_entropy,
    layer_norm,
    linear,
    log_softmax,
    softmax,
    topo_order,
)
from genad.numkit import blob, gradcheck, ops


def test_linear_identity():
    out = linear(Tensor([[1.0, 0.0]]), Tensor(np.eye(2)), Tensor(np.zeros(2)))
    np.testing.assert_array_equal(out.data, [[1.0, 0.0]])


def test_linear_direct():
    out = linear(Tensor([[1.0, 2.0]]), Tensor([[1.0], [1.0]]), Tensor([0.5]))
    np.testing.assert_array_equal(out.data, [[3.5]])


def test_linear_shape_mismatch():
    with pytest.raises(DimensionError):
        linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.zeros(2)))


def test_linear_weight_grad_matches_finite_differences():
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    wt = Tensor(w.copy(), requires_grad=True)
    linear(Tensor(x), wt, Tensor(b)).sum().backward()
    num = gradcheck.numerical_grad(lambda w_: float((x @ w_ + b).sum()), [w.copy()])[0]
    assert gradcheck.relative_error(wt.grad, num) < 1e-4


def test_softmax_uniform_and_stable():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)
    out = softmax(Tensor([1000.0, 0.0])).data
    assert abs(out[0] - 1.0) < 1e-12 and abs(out[1]) < 1e-12


def test_softmax_rejects_nan():
    with pytest.raises(NumericError):
        softmax(Tensor([0.0, np.nan]))


@given(arrays(np.float64, 5, elements=st.floats(-50, 50)))
def test_softmax_sums_to_one_and_is_permutation_equivariant(x):
    out = softmax(Tensor(x)).data
    assert abs(out.sum() - 1.0) < 1e-10
    perm = np.random.default_rng(int(abs(x).sum() * 1000) % 2**32).permutation(5)
    np.testing.assert_allclose(softmax(Tensor(x[perm])).data, out[perm], rtol=0, atol=1e-15)


def test_attention_singleton_returns_value_row():
    q, k, v = np.ones((1, 3)), np.ones((1, 3)), np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_allclose(attention(Tensor(q), Tensor(k), Tensor(v)).data, v)


def test_attention_identical_rows_average_values():
    rng = np.random.default_rng(1)
    q = np.tile(rng.normal(size=(1, 4)), (3, 1))
    v = rng.normal(size=(3, 4))
    out = attention(Tensor(q), Tensor(q), Tensor(v)).data
    np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (3, 1)), atol=1e-12)


def test_attention_causal_ignores_future():
    rng = np.random.default_rng(2)
    q, k, v = (rng.normal(size=(4, 3)) for _ in range(3))
    base = attention(Tensor(q), Tensor(k), Tensor(v), causal=True).data
    k2, v2 = k.copy(), v.copy()
    k2[3] += 5.0
    v2[3] -= 5.0
    moved = attention(Tensor(q), Tensor(k2), Tensor(v2), causal=True).data
    np.testing.assert_allclose(moved[:3], base[:3], atol=1e-14)


def test_bce_values_and_gradient():
    p = Tensor([0.5], requires_grad=True)
    loss = bce(p, [1.0])
    assert abs(loss.item() - math.log(2)) < 1e-12
    loss.backward()
    assert abs(p.grad[0] + 2.0) < 1e-12


def test_bce_perfect_predictions_are_small():
    assert bce(Tensor([1.0, 0.0]), [1.0, 0.0]).item() <= 1e-3


def test_cross_entropy_margin_limit():
    losses = [cross_entropy(Tensor([[m, 0.0, 0.0]]), [0]).item() for m in (1, 5, 20, 40)]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-15


def test_cross_entropy_index_error():
    with pytest.raises(IndexError):
        cross_entropy(Tensor([[0.0, 0.0]]), [2])


def test_shared_subexpression_accumulates():
    x = Tensor([3.0], requires_grad=True)
    (x + x).backward()
    assert x.grad[0] == 2.0
    y = Tensor([2.0], requires_grad=True)
    z = y * y
    (z + z * y).backward()
    assert y.grad[0] == pytest.approx(2 * 2.0 + 3 * 4.0)


def test_topo_order_visits_each_node_once():
    x = Tensor([1.0], requires_grad=True)
    a = x * 2.0
    b = a + x
    c = b * a
    order = topo_order(c)
    assert len(order) == len({id(n) for n in order})
    pos = {id(n): i for i, n in enumerate(order)}
    for node in order:
        for parent in node._prev:
            assert pos[id(parent)] < pos[id(node)]


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    new, _ = adam_step(p, [np.zeros(2)], ([np.zeros(2)], [np.zeros(2)]), lr=0.1, t=1)
    np.testing.assert_array_equal(new[0], p[0])


def test_adam_first_step_magnitude_is_lr():
    p = [np.array([0.0])]
    new, _ = adam_step(p, [np.array([3.7])], ([np.zeros(1)], [np.zeros(1)]), lr=0.01, t=1)
    assert abs(abs(new[0][0]) - 0.01) < 1e-8


def test_adam_descends_on_quadratic():
    x = Tensor([1.0], requires_grad=True)
    opt = Adam([x], lr=0.1)
    for _ in range(2):
        opt.zero_grad()
        (x * x).sum().backward()
        opt.step()
    assert x.data[0] ** 2 < 1.0


def test_adam_requires_positive_step():
    with pytest.raises(ValueError):
        adam_step([np.zeros(1)], [np.zeros(1)], ([np.zeros(1)], [np.zeros(1)]), lr=0.1, t=0)


def test_blob_roundtrip_and_layout():
    arr = np.arange(6, dtype=np.float64).reshape(2, 3) / 7
    raw = blob.dumps(arr)
    assert raw[:4] == b"GADT"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 2
    np.testing.assert_array_equal(blob.loads(raw), arr)
    assert blob.dumps(blob.loads(raw)) == raw


def test_blob_truncation_detected():
    raw = blob.dumps(np.ones((3, 3)))
    with pytest.raises(blob.CorruptBlobError):
        blob.loads(raw[:-5])
    with pytest.raises(blob.CorruptBlobError):
        blob.loads(b"XXXX" + raw[4:])


# Each entry: (name, op, input-shape sampler). Every backward rule is covered.
def _op_cases():
    return [
        ("add", lambda a, b: a + b, [(3, 4), (4,)]),
        ("sub", lambda a, b: a - b, [(3, 4), (3, 1)]),
        ("mul", lambda a, b: a * b, [(3, 4), (3, 4)]),
        ("div", lambda a, b: a / (ops.exp(b) + 1.0), [(3, 4), (3, 4)]),
        ("matmul", lambda a, b: a @ b, [(2, 3, 4), (4, 5)]),
        ("linear", lambda x, w, b: linear(x, w, b), [(3, 4), (4, 2), (2,)]),
        ("exp_log", lambda a: ops.log(ops.exp(a) + 1.0), [(3, 4)]),
        ("tanh", ops.tanh, [(3, 4)]),
        ("sigmoid", ops.sigmoid, [(3, 4)]),
        ("relu", lambda a: ops.relu(a + 0.05), [(3, 4)]),
        ("square", ops.square, [(3, 4)]),
        ("sum_axis", lambda a: ops.sum(a, axis=1), [(3, 4)]),
        ("mean", lambda a: ops.mean(a, axis=0, keepdims=True), [(3, 4)]),
        ("reshape_transpose", lambda a: a.reshape(4, 3).transpose(1, 0), [(3, 4)]),
        ("concat", lambda a, b: ops.concat([a, b], axis=0), [(2, 3), (1, 3)]),
        ("getitem", lambda a: a[1:, ::2], [(3, 4)]),
        ("embedding", lambda t: ops.embedding(t, [[0, 2], [2, 2]]), [(3, 4)]),
        ("softmax", lambda a: ops.softmax(a, axis=-1), [(3, 4)]),
        ("log_softmax", lambda a: log_softmax(a, axis=0), [(3, 4)]),
        ("attention", lambda q, k, v: attention(q, k, v), [(3, 4), (5, 4), (5, 4)]),
        ("attention_causal", lambda q, k, v: attention(q, k, v, causal=True), [(2, 3, 4)] * 3),
        ("layer_norm", lambda x, g, b: layer_norm(x, g, b), [(3, 4), (4,), (4,)]),
        ("cross_entropy", lambda a: cross_entropy(a, [0, 3, 1]), [(3, 4)]),
        ("bce", lambda a: bce(ops.sigmoid(a), [[1, 0, 1, 1]] * 3), [(3, 4)]),
    ]


@pytest.mark.parametrize("name,op,shapes", _op_cases(), ids=[c[0] for c in _op_cases()])
def test_backward_matches_finite_differences(name, op, shapes):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(10):
        arrays_ = [rng.normal(size=s) for s in shapes]
        assert gradcheck.check(op, arrays_, rng) < 1e-4, name
