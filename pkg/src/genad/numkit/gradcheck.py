"""Central finite-difference checks for backward rules."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[..., float], arrays: Sequence[np.ndarray], h: float = 1e-5):
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + h
            fp = fn(*arrays)
            arr[idx] = old - h
            fm = fn(*arrays)
            arr[idx] = old
            g[idx] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check(op: Callable[..., Tensor], arrays: Sequence[np.ndarray], rng: np.random.Generator,
          h: float = 1e-5) -> float:
    """Max relative error between analytic and numerical gradients of ``op``.

    Non-scalar outputs are projected onto a fixed random direction first.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*leaves)
    proj = rng.normal(size=out.shape)
    (out * proj).sum().backward()

    def scalar(*xs):
        return float((op(*[Tensor(x) for x in xs]).data * proj).sum())

    numeric = numerical_grad(scalar, arrays, h)
    return max(relative_error(leaf.grad if leaf.grad is not None else np.zeros_like(n), n)
               for leaf, n in zip(leaves, numeric))
