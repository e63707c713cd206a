"""Permutation-aware list reward model: per-slot pCTR (POI, creative) and pCVR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import marketplace as mp
from .numkit import Adam, no_grad, ops
from .numkit.nn import MLP, Linear, Module
from .numkit.tensor import Tensor

TOWER_SIZES = (128, 32, 10)
HEADS = ("pctr_poi", "pctr_img", "pcvr")


class ShapeError(ValueError):
    pass


class ItemTable:
    """Dense per-item inputs: token code-vector sums and raw embeddings, indexed by id."""

    def __init__(self, catalog, tokens, poi_tokenizer, img_tokenizer):
        n_poi = len(catalog.pois)
        self.e_poi = catalog.poi_matrix
        self.poi_vec = poi_tokenizer.code_vectors(tokens.poi.codes(range(n_poi)))
        creatives = catalog.all_creatives()
        ids = [c.id for c in creatives]
        self.img_vec = np.zeros((max(ids) + 1, img_tokenizer.codebooks.shape[2]))
        self.img_vec[ids] = img_tokenizer.code_vectors(tokens.creative.codes(ids))
        self.gmv = np.array([p.gmv for p in catalog.pois])
        self.poi_creatives = [[c.id for c in p.creatives] for p in catalog.pois]

    @property
    def d_poi(self) -> int:
        return self.e_poi.shape[1]

    @property
    def d_img(self) -> int:
        return self.img_vec.shape[1]

    def user_context(self, request) -> np.ndarray:
        if not request.history:
            return np.zeros(self.d_poi)
        return self.e_poi[[p for p, _ in request.history]].mean(axis=0)

    def item_repr(self, pois, K: int) -> np.ndarray:
        """``[len, 2*d_poi + K]``: POI token vector, POI embedding, slot one-hot."""
        pois = np.asarray(pois, dtype=np.int64)
        return np.concatenate([self.poi_vec[pois], self.e_poi[pois], np.eye(K)[:len(pois)]], axis=1)

    def slot_features(self, request, slots, K: int) -> np.ndarray:
        """RM input rows ``[K, f]`` for a displayed ``[(poi, creative)]`` list."""
        pois = [p for p, _ in slots]
        cids = [c for _, c in slots]
        ctx = np.broadcast_to(self.user_context(request), (len(slots), self.d_poi))
        return np.concatenate([self.item_repr(pois, K), self.img_vec[cids], ctx], axis=1)

    def feature_dim(self, K: int) -> int:
        return 3 * self.d_poi + self.d_img + K


@dataclass
class RewardEstimates:
    pctr_poi: np.ndarray   # [n, K]
    pctr_img: np.ndarray
    pcvr: np.ndarray


class RewardModel(Module):
    """Projection, single-head self-attention with residual, then sigmoid towers.

    With ``pooled=True`` each tower reads the sum over slots instead of its own
    slot, so every slot gets the same list-level score.
    """

    def __init__(self, d_in: int, K: int, seed: int, d_model: int = 32, pooled: bool = False):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 30]))
        self.proj = Linear(d_in, d_model, rng)
        self.wq = Linear(d_model, d_model, rng, bias=False)
        self.wk = Linear(d_model, d_model, rng, bias=False)
        self.wv = Linear(d_model, d_model, rng, bias=False)
        self.towers = [MLP([d_model, *TOWER_SIZES, 1], rng, act="relu", last_init="small")
                       for _ in HEADS]
        self._K = K
        self._pooled = pooled

    @property
    def K(self) -> int:
        return self._K

    def forward(self, feats) -> list[Tensor]:
        """Three ``[n, K]`` probability tensors (POI pCTR, creative pCTR, pCVR)."""
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 3 or feats.shape[1] != self._K:
            raise ShapeError(f"expected [n, {self._K}, f] features, got {feats.shape}")
        x = self.proj(Tensor(feats))
        h = x + ops.attention(self.wq(x), self.wk(x), self.wv(x))
        if self._pooled:
            n, k, d = h.shape
            h = ops.sum(h, axis=1, keepdims=True) + Tensor(np.zeros((1, k, 1)))
        return [ops.sigmoid(t(h).reshape(h.shape[0], self._K)) for t in self.towers]

    def score(self, feats) -> RewardEstimates:
        with no_grad():
            outs = self.forward(feats)
        return RewardEstimates(*(o.data for o in outs))

    def loss(self, feats, labels) -> Tensor:
        """Mean BCE over slots, heads and batch; ``labels`` is ``[3, n, K]``."""
        outs = self.forward(feats)
        return sum(ops.bce(o, np.asarray(y)) for o, y in zip(outs, labels)) * (1.0 / len(HEADS))


class RMTrainer:
    def __init__(self, model: RewardModel, lr: float):
        self.model = model
        self.opt = Adam(model.parameters(), lr=lr)

    def step(self, feats, labels) -> float:
        loss = self.model.loss(feats, labels)
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        return loss.item()


def rm_train_step(trainer: RMTrainer, feats, labels) -> float:
    return trainer.step(feats, labels)


def sequence_reward(est_pctr, bids, gmv, is_ad, gmv_weight: float = 1.0,
                    lam_ux: float = 0.0) -> np.ndarray:
    """``sum_ads b*pctr + gmv_weight * sum_organic gmv*pctr + lam_ux * sum pctr`` per list."""
    est_pctr = np.atleast_2d(est_pctr)
    is_ad = np.atleast_2d(is_ad).astype(bool)
    bids = np.atleast_2d(bids)
    gmv = np.atleast_2d(gmv)
    revenue = np.where(is_ad, bids, 0.0) * est_pctr
    organic = np.where(is_ad, 0.0, gmv) * est_pctr
    return revenue.sum(1) + gmv_weight * organic.sum(1) + lam_ux * est_pctr.sum(1)


# -- training data ------------------------------------------------------------------

@dataclass
class RMDataset:
    feats: np.ndarray      # [n, K, f]
    labels: np.ndarray     # [3, n, K]
    true_ctr: np.ndarray   # [n, K] oracle POI click probabilities


def logged_lists(seed: int, world, table: ItemTable, requests, index_offset: int = 0) -> RMDataset:
    """Random displayed lists per request with simulated feedback as labels."""
    feats, labels, probs = [], [], []
    for i, r in enumerate(requests):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 31, index_offset + i]))
        pool = [a.poi_id for a in r.ads] + [o.poi_id for o in r.organics]
        pick = rng.choice(len(pool), size=r.K, replace=False)
        slots = []
        for k in pick:
            creatives = world.catalog.pois[pool[k]].creatives
            slots.append((pool[k], creatives[int(rng.integers(len(creatives)))].id))
        ctr, ctr_img, cvr = mp.slot_probabilities(world, r.user_id, slots)
        fb = mp.sample_feedback(seed, ctr, ctr_img, cvr, index=index_offset + i)
        feats.append(table.slot_features(r, slots, r.K))
        labels.append([fb.clicks, fb.img_clicks, fb.conversions])
        probs.append(ctr)
    return RMDataset(np.stack(feats), np.stack(labels, axis=1), np.stack(probs))


def train_rm(seed: int, data: RMDataset, K: int, epochs: int, lr: float, batch_size: int = 128,
             d_model: int = 32, pooled: bool = False) -> tuple[RewardModel, list[float]]:
    model = RewardModel(data.feats.shape[2], K, seed, d_model=d_model, pooled=pooled)
    trainer = RMTrainer(model, lr)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 32]))
    n = data.feats.shape[0]
    history = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        tot = 0.0
        for s in range(0, n, batch_size):
            idx = perm[s:s + batch_size]
            tot += trainer.step(data.feats[idx], data.labels[:, idx]) * len(idx)
        history.append(tot / n)
    return model, history


def calibration_by_decile(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean prediction and mean truth per prediction decile."""
    pred, truth = pred.ravel(), truth.ravel()
    order = np.argsort(pred, kind="stable")
    buckets = np.array_split(order, 10)
    return (np.array([pred[b].mean() for b in buckets]),
            np.array([truth[b].mean() for b in buckets]))
