"""Differentiable operations on :class:`Tensor`.

Every op computes its forward value eagerly and registers a backward
closure mapping the output gradient to one gradient per input.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import DimensionError, NumericError, Tensor, as_tensor, make_node

BCE_EPS = 1e-7


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b),
                     lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return make_node(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_node(ad * ad, (a,), lambda g: (2.0 * ad * g,))


# -- unary nonlinearities -----------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_node(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_node(ad @ bd, (a, b), backward)


def linear(x, wt, bias=None) -> Tensor:
    """``x @ wt + bias`` for ``x[..., d_in]``, ``wt[d_in, d_out]``, ``bias[d_out]``."""
    x, wt = as_tensor(x), as_tensor(wt)
    if wt.ndim != 2 or x.shape[-1] != wt.shape[0]:
        raise DimensionError(f"linear: x{x.shape} vs Wt{wt.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (wt.shape[1],):
            raise DimensionError(f"linear: bias{bias.shape} vs Wt{wt.shape}")
    xd, wd = x.data, wt.data
    # flatten leading dims so numpy issues one GEMM instead of one per batch row
    x2 = xd.reshape(-1, xd.shape[-1])
    out = (x2 @ wd).reshape(xd.shape[:-1] + (wd.shape[1],))
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        gb = g2.sum(axis=0) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, wt, bias) if bias is not None else (x, wt)
    return make_node(out, parents, backward)


# -- reductions and shape ops -------------------------------------------------

def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_node(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return make_node(a.data[index], (a,), backward)


def embedding(table, idx) -> Tensor:
    """Row lookup ``table[idx]`` with scatter-add backward."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    shape = table.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return make_node(table.data[idx], (table,), backward)


# -- softmax family -----------------------------------------------------------

def softmax(x, axis=-1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise NumericError("softmax received NaN input")
    out = _softmax(x.data, axis)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (x,), backward)


def log_softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise NumericError("log_softmax received NaN input")
    out = _log_softmax(x.data, axis)

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), backward)


def _softmax(x: np.ndarray, axis=-1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax(x: np.ndarray, axis=-1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    s = x - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def attention(q, k, v, mask=None, causal: bool = False) -> Tensor:
    """Scaled dot-product attention ``softmax(q k^T / sqrt(d) + mask) v``.

    ``q`` is ``[..., Tq, d]``, ``k``/``v`` are ``[..., Tk, d]``. ``mask`` is an
    additive array broadcastable to ``[..., Tq, Tk]`` (use a large negative
    value for blocked keys). ``causal`` blocks keys after the query position.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    if k.shape[-1] != d or v.shape[-2] != k.shape[-2]:
        raise DimensionError(f"attention: q{q.shape} k{k.shape} v{v.shape}")
    qd, kd, vd = q.data, k.data, v.data
    scale = 1.0 / math.sqrt(d)
    scores = (qd @ np.swapaxes(kd, -1, -2)) * scale
    if mask is not None:
        scores = scores + mask
    if causal:
        tq, tk = scores.shape[-2:]
        scores = scores + np.triu(np.full((tq, tk), -1e30), k=1 + tk - tq)
    p = _softmax(scores, -1)
    out = p @ vd

    def backward(g):
        gv = np.swapaxes(p, -1, -2) @ g
        gp = g @ np.swapaxes(vd, -1, -2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ kd
        gk = np.swapaxes(gs, -1, -2) @ qd
        return (_unbroadcast(gq, qd.shape), _unbroadcast(gk, kd.shape), _unbroadcast(gv, vd.shape))

    return make_node(out, (q, k, v), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = xd.shape[-1]

    def backward(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True) / n)
        flat = g.reshape(-1, n)
        return gx, (flat * xhat.reshape(-1, n)).sum(axis=0), flat.sum(axis=0)

    return make_node(out, (x, gamma, beta), backward)


# -- losses -------------------------------------------------------------------

def cross_entropy(logits, targets, weights=None) -> Tensor:
    """Mean (or weight-normalized) cross-entropy of ``logits[n, V]`` vs indices."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, vocab = logits.shape
    if targets.shape[0] != n:
        raise DimensionError(f"cross_entropy: {n} rows vs {targets.shape[0]} targets")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise IndexError(f"cross_entropy: target outside vocabulary of size {vocab}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    denom = w.sum()
    if denom <= 0:
        denom = 1.0
    lsm = _log_softmax(logits.data, -1)
    rows = np.arange(n)
    loss = -(w * lsm[rows, targets]).sum() / denom

    def backward(g):
        grad = np.exp(lsm)
        grad[rows, targets] -= 1.0
        return (grad * (w / denom * g)[:, None],)

    return make_node(np.asarray(loss), (logits,), backward)


def bce(pred, target, weights=None) -> Tensor:
    """Binary cross-entropy on probabilities clamped to ``[eps, 1 - eps]``."""
    pred = as_tensor(pred)
    y = np.broadcast_to(np.asarray(target, dtype=np.float64), pred.shape)
    w = np.ones(pred.shape) if weights is None else np.broadcast_to(
        np.asarray(weights, dtype=np.float64), pred.shape)
    denom = w.sum() if w.sum() > 0 else 1.0
    pd = pred.data
    pc = np.clip(pd, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(w * (y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))).sum() / denom
    inside = (pd >= BCE_EPS) & (pd <= 1.0 - BCE_EPS)

    def backward(g):
        grad = (-(y / pc) + (1.0 - y) / (1.0 - pc)) * inside * w / denom
        return (grad * g,)

    return make_node(np.asarray(loss), (pred,), backward)


def losses(kind: str, pred, target, weights=None) -> Tensor:
    if kind == "cross_entropy":
        return cross_entropy(pred, target, weights)
    if kind == "bce":
        return bce(pred, target, weights)
    raise ValueError(f"unknown loss kind {kind!r}")
