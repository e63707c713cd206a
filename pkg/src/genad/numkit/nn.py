"""Parameter containers and the layers the models are built from."""

from __future__ import annotations

from collections.abc import Iterator

import numpy as np

from . import ops
from .tensor import Tensor

NEG_INF = -1e30


class Module:
    """Attribute-walking parameter registry (insertion order is the canonical order)."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 init: str = "xavier"):
        w = rng.normal(0.0, np.sqrt(2.0 / (d_in + d_out)), size=(d_in, d_out))
        if init == "zeros":
            w = np.zeros((d_in, d_out))
        elif init == "small":
            w *= 0.05
        self.weight = param(w)
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = param(np.ones(d))
        self.shift = param(np.zeros(d))

    def __call__(self, x) -> Tensor:
        return ops.layer_norm(x, self.gain, self.shift)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, scale: float = 0.1):
        self.table = param(rng.normal(0.0, scale, size=(n, d)))

    def __call__(self, idx) -> Tensor:
        return ops.embedding(self.table, idx)


_ACTIVATIONS = {"tanh": ops.tanh, "relu": ops.relu, "sigmoid": ops.sigmoid}


class MLP(Module):
    """Stack of linear layers with an activation between them (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, act: str = "relu",
                 last_init: str = "xavier"):
        self.layers = [
            Linear(a, b, rng, init=last_init if i == len(sizes) - 2 else "xavier")
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]
        self._act = _ACTIVATIONS[act]

    def __call__(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self._act(x)
        return x


class MultiHeadAttention(Module):
    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        if d % n_heads:
            raise ValueError(f"d_model {d} not divisible by {n_heads} heads")
        self.q = Linear(d, d, rng, bias=False)
        self.k = Linear(d, d, rng, bias=False)
        self.v = Linear(d, d, rng, bias=False)
        self.o = Linear(d, d, rng)
        self._h = n_heads

    def _split(self, x: Tensor) -> Tensor:
        n, t, d = x.shape
        return x.reshape(n, t, self._h, d // self._h).transpose(0, 2, 1, 3)

    def project_memory(self, memory: Tensor) -> tuple[Tensor, Tensor]:
        """Key/value heads of ``memory``; reusable across queries (batch may be 1)."""
        return self._split(self.k(memory)), self._split(self.v(memory))

    def __call__(self, x: Tensor, memory: Tensor | None = None, mask=None,
                 causal: bool = False, kv: tuple[Tensor, Tensor] | None = None) -> Tensor:
        """``x[n, Tq, d]`` attends to ``memory[n or 1, Tk, d]`` (itself when omitted).

        ``mask`` is additive, broadcastable to ``[n, 1, Tq, Tk]``; ``kv`` takes
        precomputed :meth:`project_memory` output instead of ``memory``.
        """
        n, tq, d = x.shape
        if kv is None:
            kv = self.project_memory(x if memory is None else memory)
        k, v = kv
        q = self._split(self.q(x))
        out = ops.attention(q, k, v, mask=mask, causal=causal)
        out = out.transpose(0, 2, 1, 3).reshape(n, tq, d)
        return self.o(out)


def key_padding_mask(valid: np.ndarray) -> np.ndarray:
    """Additive mask ``[n, 1, 1, Tk]`` blocking keys where ``valid`` is False."""
    return np.where(valid, 0.0, NEG_INF)[:, None, None, :]
