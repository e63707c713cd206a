"""Residual-quantized autoencoder mapping dense embeddings to C-layer semantic tokens."""

from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .numkit import Adam, no_grad, ops
from .numkit.nn import MLP, Module
from .numkit.tensor import Tensor

COMMITMENT_WEIGHT = 0.25
EMA_DECAY = 0.99
DEAD_AFTER = 50
EMA_EPS = 1e-5


class TokenError(IndexError):
    pass


class RQVAE(Module):
    """2-layer tanh encoder/decoder around a stack of ``C`` residual codebooks.

    Codebooks are not gradient parameters: they move by EMA of the residuals
    assigned to them, and codes idle for ``DEAD_AFTER`` steps are re-seeded.
    """

    def __init__(self, d: int, C: int, W: int, rng: np.random.Generator, hidden: int | None = None):
        if C < 1 or W < 2:
            raise ValueError("need C >= 1 and W >= 2")
        hidden = hidden or 2 * d
        self.encoder = MLP([d, hidden, d], rng, act="tanh")
        self.decoder = MLP([d, hidden, d], rng, act="tanh")
        self._codebooks = np.zeros((C, W, d))
        self._d = d

    @property
    def codebooks(self) -> np.ndarray:
        return self._codebooks

    @codebooks.setter
    def codebooks(self, value: np.ndarray) -> None:
        self._codebooks = np.asarray(value, dtype=np.float64)

    @property
    def C(self) -> int:
        return self._codebooks.shape[0]

    @property
    def W(self) -> int:
        return self._codebooks.shape[1]

    # -- inference ---------------------------------------------------------
    def embed(self, x) -> np.ndarray:
        with no_grad():
            return self.encoder(Tensor(np.atleast_2d(x))).data

    def quantize(self, z: np.ndarray) -> np.ndarray:
        """Greedy residual quantization of latent vectors; ties go to the lowest code."""
        codes, _ = kernels.residual_quantize(np.ascontiguousarray(np.atleast_2d(z)), self._codebooks)
        return codes

    def encode(self, x) -> np.ndarray:
        """Token codes ``[n, C]`` for raw embeddings ``x[n, d]``."""
        return self.quantize(self.embed(x))

    def code_vectors(self, codes) -> np.ndarray:
        """Sum of the selected code vectors (the decoder input)."""
        codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
        if codes.shape[1] != self.C or codes.min() < 0 or codes.max() >= self.W:
            raise TokenError(f"codes out of range for C={self.C}, W={self.W}")
        return sum(self._codebooks[j][codes[:, j]] for j in range(self.C))

    def decode(self, codes) -> np.ndarray:
        with no_grad():
            return self.decoder(Tensor(self.code_vectors(codes))).data

    # -- training pieces ---------------------------------------------------
    def losses(self, x: np.ndarray):
        """Reconstruction and commitment losses plus the assignment used.

        The decoder sees ``z + stop_grad(q - z)`` (straight-through).
        """
        z = self.encoder(Tensor(x))
        codes, _ = kernels.residual_quantize(np.ascontiguousarray(z.data), self._codebooks)
        q = self.code_vectors(codes)
        x_hat = self.decoder(z + (q - z.data))
        rec = ops.mean(ops.square(x_hat - x))
        commit = ops.mean(ops.square(z - q))
        return rec, commit, z.data, codes


@dataclass
class RQVAETrainLog:
    epoch_loss: list[float] = field(default_factory=list)
    layer_residual_norms: list[list[float]] = field(default_factory=list)
    reseeded: int = 0


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[int(rng.integers(n))]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        tot = d2.sum()
        idx = int(rng.integers(n)) if tot <= 0 else int(rng.choice(n, p=d2 / tot))
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return np.stack(centers)


def train_rqvae(seed: int, embeddings: np.ndarray, C: int, W: int, epochs: int, lr: float,
                batch_size: int = 128, hidden: int | None = None) -> tuple[RQVAE, RQVAETrainLog]:
    """Fit an RQ-VAE: MSE reconstruction + 0.25 commitment, EMA codebooks, dead-code reseeding."""
    x = np.asarray(embeddings, dtype=np.float64)
    n_distinct = np.unique(x, axis=0).shape[0]
    if n_distinct < W:
        warnings.warn(f"only {n_distinct} distinct embeddings for W={W}; using W={n_distinct}",
                      stacklevel=2)
        W = max(n_distinct, 2)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 10]))
    model = RQVAE(x.shape[1], C, W, rng, hidden)
    opt = Adam(model.parameters(), lr=lr)

    # k-means++ seeding of each layer on the residuals of the layers above
    r = model.embed(x)
    cbs = np.zeros((C, W, x.shape[1]))
    for j in range(C):
        cbs[j] = _kmeanspp(r, W, rng)
        idx = kernels.nearest_codes(np.ascontiguousarray(r), cbs[j])
        r = r - cbs[j][idx]
    model.codebooks = cbs
    ema_n = np.ones((C, W))
    ema_sum = cbs.copy()
    last_used = np.zeros((C, W), dtype=np.int64)

    log = RQVAETrainLog()
    step = 0
    n = x.shape[0]
    for _ in range(epochs):
        perm = rng.permutation(n)
        tot, seen = 0.0, 0
        norms = np.zeros(C)
        for start in range(0, n, batch_size):
            xb = x[perm[start:start + batch_size]]
            step += 1
            rec, commit, z, codes = model.losses(xb)
            loss = rec + COMMITMENT_WEIGHT * commit
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += loss.item() * len(xb)
            seen += len(xb)

            res = z.copy()
            for j in range(C):
                cb = model.codebooks[j]
                onehot = np.zeros((len(xb), W))
                onehot[np.arange(len(xb)), codes[:, j]] = 1.0
                counts = onehot.sum(axis=0)
                ema_n[j] = EMA_DECAY * ema_n[j] + (1 - EMA_DECAY) * counts
                ema_sum[j] = EMA_DECAY * ema_sum[j] + (1 - EMA_DECAY) * (onehot.T @ res)
                total = ema_n[j].sum()
                smoothed = (ema_n[j] + EMA_EPS) / (total + W * EMA_EPS) * total
                cb[:] = ema_sum[j] / smoothed[:, None]
                last_used[j, counts > 0] = step
                dead = np.flatnonzero(step - last_used[j] >= DEAD_AFTER)
                if dead.size:
                    pick = rng.integers(len(xb), size=dead.size)
                    cb[dead] = res[pick]
                    ema_sum[j][dead] = res[pick]
                    ema_n[j][dead] = 1.0
                    last_used[j, dead] = step
                    log.reseeded += dead.size
                res = res - cb[codes[:, j]]
                norms[j] += np.linalg.norm(res, axis=1).sum()
        log.epoch_loss.append(tot / seen)
        log.layer_residual_norms.append((norms / seen).tolist())
    return model, log


# -- token index ----------------------------------------------------------------

@dataclass
class TokenIndex:
    """Item id <-> semantic token maps; several items may share one token."""

    forward: dict[int, tuple[int, ...]]
    inverse: dict[tuple[int, ...], list[int]]

    @classmethod
    def from_codes(cls, ids, codes) -> TokenIndex:
        forward = {int(i): tuple(int(c) for c in row) for i, row in zip(ids, np.atleast_2d(codes))}
        inverse: dict[tuple[int, ...], list[int]] = defaultdict(list)
        for i, tok in forward.items():
            inverse[tok].append(i)
        return cls(forward, {t: sorted(v) for t, v in inverse.items()})

    def collisions(self) -> int:
        """Items that share their token with an earlier item."""
        return sum(len(v) - 1 for v in self.inverse.values())

    def codes(self, ids) -> np.ndarray:
        return np.array([self.forward[int(i)] for i in ids], dtype=np.int64)


@dataclass
class CatalogTokens:
    poi: TokenIndex
    creative: TokenIndex


def build_index(catalog, poi_tokenizer: RQVAE, img_tokenizer: RQVAE) -> CatalogTokens:
    """Tokenize every POI and creative of ``catalog``."""
    poi_ids = [p.id for p in catalog.pois]
    poi_codes = poi_tokenizer.encode(catalog.poi_matrix)
    creatives = catalog.all_creatives()
    img_codes = img_tokenizer.encode(np.stack([c.e_img for c in creatives]))
    return CatalogTokens(TokenIndex.from_codes(poi_ids, poi_codes),
                         TokenIndex.from_codes([c.id for c in creatives], img_codes))
