"""Encoder-decoder generator over semantic tokens.

The encoder reads the user's history as interleaved ``(poi codes, creative
codes)`` tokens. A causal POI decoder emits the next POI token one codebook
layer at a time (coarse to fine); a creative decoder then emits the
creative token, cross-attending to the POI token it is paired with (the
multi-token-prediction head). With ``mtp=False`` the creative decoder does
not see that POI token (the independent next-token ablation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numkit import Adam, no_grad, ops
from .numkit.nn import Embedding, LayerNorm, Linear, MLP, Module, MultiHeadAttention, key_padding_mask
from .numkit.tensor import Tensor

LOG_PROB_FLOOR = math.log(1e-12)


class TruncationError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    C: int
    W: int
    K: int
    B: int
    d_model: int = 64
    n_heads: int = 2
    d_ff: int = 128
    L: int = 3
    mtp: bool = True
    mtp_shift: bool = False


class Block(Module):
    """Pre-norm transformer block: self-attention, optional cross-attentions, FFN."""

    def __init__(self, d: int, n_heads: int, d_ff: int, rng, n_cross: int = 0):
        self.ln_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, n_heads, rng)
        self.ln_cross = [LayerNorm(d) for _ in range(n_cross)]
        self.cross = [MultiHeadAttention(d, n_heads, rng) for _ in range(n_cross)]
        self.ln_ff = LayerNorm(d)
        self.ff = MLP([d, d_ff, d], rng, act="relu")


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 20]))
        self._cfg = cfg
        d, C, W = cfg.d_model, cfg.C, cfg.W
        self.tok = Embedding(2 * C * W + 2, d, rng)
        self.enc_pos = Embedding(max(2 * C * cfg.B, 1), d, rng)
        self.dec_pos = Embedding(cfg.K, d, rng)
        self.enc_blocks = [Block(d, cfg.n_heads, cfg.d_ff, rng) for _ in range(cfg.L)]
        self.enc_ln = LayerNorm(d)
        self.poi_blocks = [Block(d, cfg.n_heads, cfg.d_ff, rng, n_cross=1) for _ in range(cfg.L)]
        self.poi_ln = LayerNorm(d)
        n_img_cross = 2 if cfg.mtp else 1
        self.img_blocks = [Block(d, cfg.n_heads, cfg.d_ff, rng, n_cross=n_img_cross)
                           for _ in range(cfg.L)]
        self.img_ln = LayerNorm(d)
        self.poi_head_ln = [LayerNorm(d) for _ in range(C)]
        self.poi_heads = [Linear(d, W, rng, init="small") for _ in range(C)]
        self.img_head_ln = [LayerNorm(d) for _ in range(C)]
        self.img_heads = [Linear(d, W, rng, init="small") for _ in range(C)]

    @property
    def cfg(self) -> GeneratorConfig:
        return self._cfg

    # -- token ids ----------------------------------------------------------
    @property
    def bos(self) -> int:
        return 2 * self._cfg.C * self._cfg.W

    @property
    def pad(self) -> int:
        return self.bos + 1

    def poi_ids(self, codes: np.ndarray) -> np.ndarray:
        """Vocabulary ids of POI codes ``[..., C]``."""
        return np.arange(self._cfg.C) * self._cfg.W + codes

    def img_ids(self, codes: np.ndarray) -> np.ndarray:
        return (self._cfg.C + np.arange(self._cfg.C)) * self._cfg.W + codes

    # -- encoder --------------------------------------------------------------
    def encode(self, hist: np.ndarray, hist_valid: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """Contextualized history ``[n, 2C*B', d]`` and its additive key mask.

        ``hist`` is ``[n, B', 2, C]`` (poi codes, creative codes) per event.
        Rows with no valid event get a single BOS token.
        """
        n, bh = hist.shape[:2]
        C = self._cfg.C
        if bh == 0:
            ids = np.full((n, 1), self.bos)
            valid = np.ones((n, 1), dtype=bool)
        else:
            ids = np.concatenate([self.poi_ids(hist[:, :, 0]), self.img_ids(hist[:, :, 1])], axis=2)
            valid = np.repeat(hist_valid, 2 * C, axis=1)
            ids = np.where(valid, ids.reshape(n, -1), self.pad)
            empty = ~valid.any(axis=1)
            ids[empty, 0] = self.bos
            valid[empty, 0] = True
        x = self.tok(ids) + self.enc_pos(np.arange(ids.shape[1]))
        mask = key_padding_mask(valid)
        for blk in self.enc_blocks:
            x = x + blk.self_attn(blk.ln_self(x), mask=mask)
            x = x + blk.ff(blk.ln_ff(x))
        return self.enc_ln(x), mask

    # -- decoders ---------------------------------------------------------------
    def step_inputs(self, prefix: np.ndarray) -> Tensor:
        """Decoder inputs for steps ``0..t``: BOS then the ``t`` prefix items.

        ``prefix`` is ``[n, t, 2, C]``; output is ``[n, t+1, d]``.
        """
        n, t = prefix.shape[:2]
        C = self._cfg.C
        ids = np.full((n, t + 1, 2 * C), self.bos)
        if t:
            ids[:, 1:] = np.concatenate([self.poi_ids(prefix[:, :, 0]), self.img_ids(prefix[:, :, 1])],
                                        axis=2)
        x = self.tok(ids).sum(axis=2)
        return x + self.dec_pos(np.arange(t + 1))

    def _trunk(self, blocks, ln, x: Tensor, ctx, poi_mem: Tensor | None) -> Tensor:
        s_e, mask = ctx
        n, t, d = x.shape
        for blk in blocks:
            x = x + blk.self_attn(blk.ln_self(x), causal=True)
            x = x + blk.cross[0](blk.ln_cross[0](x), memory=s_e, mask=mask)
            if poi_mem is not None:
                q = blk.ln_cross[1](x).reshape(n * t, 1, d)
                x = x + blk.cross[1](q, memory=poi_mem).reshape(n, t, d)
            x = x + blk.ff(blk.ln_ff(x))
        return ln(x)

    def poi_hidden(self, x: Tensor, ctx) -> Tensor:
        return self._trunk(self.poi_blocks, self.poi_ln, x, ctx, None)

    def img_hidden(self, x: Tensor, ctx, poi_codes: np.ndarray | None) -> Tensor:
        """Creative trunk; ``poi_codes[n, t, C]`` is the POI token paired with each step."""
        mem = None
        if self._cfg.mtp:
            n, t = x.shape[:2]
            mem = self.tok(self.poi_ids(poi_codes).reshape(n * t, self._cfg.C))
        return self._trunk(self.img_blocks, self.img_ln, x, ctx, mem)

    def _layer_features(self, kind: str, h: Tensor, j: int, prefix_codes: np.ndarray) -> Tensor:
        u = h
        if j:
            ids = (self.poi_ids if kind == "poi" else self.img_ids)(
                np.concatenate([prefix_codes[..., :j],
                                np.zeros(prefix_codes.shape[:-1] + (self._cfg.C - j,), dtype=np.int64)],
                               axis=-1))[..., :j]
            u = u + self.tok(ids).sum(axis=-2)
        lns = self.poi_head_ln if kind == "poi" else self.img_head_ln
        return lns[j](u)

    def layer_features(self, kind: str, h: Tensor, j: int, prefix_codes: np.ndarray) -> Tensor:
        """Head input for codebook layer ``j`` given the token's codes for layers ``< j``."""
        return self._layer_features(kind, h, j, np.asarray(prefix_codes, dtype=np.int64))

    def head(self, kind: str, j: int, feats: Tensor) -> Tensor:
        return (self.poi_heads if kind == "poi" else self.img_heads)[j](feats)

    def layer_logits(self, kind: str, h: Tensor, j: int, prefix_codes: np.ndarray) -> Tensor:
        return self.head(kind, j, self.layer_features(kind, h, j, prefix_codes))

    # -- teacher forcing ----------------------------------------------------------
    def paired_poi(self, targets: np.ndarray) -> np.ndarray:
        """POI codes each creative step conditions on (shifted one step when ``mtp_shift``)."""
        poi = targets[:, :, 0]
        if not self._cfg.mtp_shift:
            return poi
        nxt = np.zeros_like(poi)
        nxt[:, :-1] = poi[:, 1:]
        return nxt

    def forward(self, hist, hist_valid, targets: np.ndarray):
        """Teacher-forced logits: two lists of ``C`` tensors ``[n, K, W]`` (POI, creative)."""
        targets = np.asarray(targets, dtype=np.int64)
        if targets.shape[1] > self._cfg.K:
            raise TruncationError(f"target length {targets.shape[1]} exceeds K={self._cfg.K}")
        ctx = self.encode(hist, hist_valid)
        x = self.step_inputs(targets[:, :-1])
        h_poi = self.poi_hidden(x, ctx)
        h_img = self.img_hidden(x, ctx, self.paired_poi(targets))
        C = self._cfg.C
        poi = [self.layer_logits("poi", h_poi, j, targets[:, :, 0]) for j in range(C)]
        img = [self.layer_logits("img", h_img, j, targets[:, :, 1]) for j in range(C)]
        return poi, img

    def losses(self, hist, hist_valid, targets):
        """``(L_NTP, L_MTP)``: per-step token negative log-likelihood, summed over layers."""
        targets = np.asarray(targets, dtype=np.int64)
        poi, img = self.forward(hist, hist_valid, targets)
        W = self._cfg.W
        l_ntp = sum(ops.cross_entropy(poi[j].reshape(-1, W), targets[:, :, 0, j].reshape(-1))
                    for j in range(self._cfg.C))
        l_mtp = sum(ops.cross_entropy(img[j].reshape(-1, W), targets[:, :, 1, j].reshape(-1))
                    for j in range(self._cfg.C))
        return l_ntp, l_mtp

    def joint_log_prob(self, hist, hist_valid, targets) -> np.ndarray:
        """Per-sequence ``sum_t log P(poi_t | .) + log P(img_t | poi_t, .)``.

        Each layer's log-probability is floored at ``log(1e-12)``.
        """
        targets = np.asarray(targets, dtype=np.int64)
        with no_grad():
            poi, img = self.forward(hist, hist_valid, targets)
        total = np.zeros(targets.shape[0])
        for kind, logits in ((0, poi), (1, img)):
            for j, lg in enumerate(logits):
                lsm = ops._log_softmax(lg.data, -1)
                picked = np.take_along_axis(lsm, targets[:, :, kind, j][..., None], axis=-1)[..., 0]
                total += np.maximum(picked, LOG_PROB_FLOOR).sum(axis=1)
        return total


@dataclass
class PretrainStats:
    l_ntp: float
    l_mtp: float
    l_pretrain: float


class Pretrainer:
    """Adam on ``L_NTP + L_MTP`` with teacher forcing."""

    def __init__(self, model: Generator, lr: float):
        self.model = model
        self.opt = Adam(model.parameters(), lr=lr)

    def step(self, hist, hist_valid, targets) -> PretrainStats:
        l_ntp, l_mtp = self.model.losses(hist, hist_valid, targets)
        loss = l_ntp + l_mtp
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        return PretrainStats(l_ntp.item(), l_mtp.item(), loss.item())


def pretrain_step(trainer: Pretrainer, hist, hist_valid, targets) -> PretrainStats:
    return trainer.step(hist, hist_valid, targets)


def teacher_forced_accuracy(model: Generator, hist, hist_valid, targets) -> tuple[float, float]:
    """Top-1 accuracy of full POI tokens and full creative tokens (all layers right)."""
    targets = np.asarray(targets, dtype=np.int64)
    with no_grad():
        poi, img = model.forward(hist, hist_valid, targets)
    ok_poi = np.ones(targets.shape[:2], dtype=bool)
    ok_img = np.ones(targets.shape[:2], dtype=bool)
    for j in range(model.cfg.C):
        ok_poi &= poi[j].data.argmax(-1) == targets[:, :, 0, j]
        ok_img &= img[j].data.argmax(-1) == targets[:, :, 1, j]
    return float(ok_poi.mean()), float(ok_img.mean())


# -- data shaping -------------------------------------------------------------------

def history_arrays(requests, tokens, B: int) -> tuple[np.ndarray, np.ndarray]:
    """``[n, B, 2, C]`` code array of the last ``B`` history events plus validity mask."""
    C = len(next(iter(tokens.poi.forward.values())))
    hist = np.zeros((len(requests), B, 2, C), dtype=np.int64)
    valid = np.zeros((len(requests), B), dtype=bool)
    for i, r in enumerate(requests):
        events = r.history[-B:] if B else []
        for s, (pid, cid) in enumerate(events):
            hist[i, s, 0] = tokens.poi.forward[pid]
            hist[i, s, 1] = tokens.creative.forward[cid]
            valid[i, s] = True
    return hist, valid


def target_arrays(sequences, tokens) -> np.ndarray:
    """``[n, K, 2, C]`` codes for lists of ``(poi_id, creative_id)`` pairs."""
    return np.array([[[tokens.poi.forward[p], tokens.creative.forward[c]] for p, c in seq]
                     for seq in sequences], dtype=np.int64)
