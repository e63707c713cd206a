"""Token-level bidding, bid-weighted beam allocation and policy-gradient post-training."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .generator import Generator, history_arrays
from .numkit import Adam, no_grad, ops
from .numkit.nn import Linear, Module, param
from .numkit.tensor import Tensor
from .reward import ItemTable, RewardModel, sequence_reward

MASKED = -1e30


class AllocationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AuctionConfig:
    alpha: float = 1.2
    beta: float = 2.0
    beam_width: int = 16
    agg: str = "max"               # "mean" is the averaged-bid ablation
    gmv_weight: float = 1.0
    lam_ux: float = 0.0
    marginal: str = "rerun"        # or "beams": best excluding sequence from the returned beams
    pg_layers: str = "product"     # or "last": only the finest POI layer enters log z

    @property
    def agg_code(self) -> int:
        return kernels.AGG_MEAN if self.agg == "mean" else kernels.AGG_MAX


def token_bid_weight(bids, alpha: float, beta: float, agg: str = "max") -> float:
    """``w = b^alpha + beta`` with ``b`` the max (or mean) bid on the token, 0 if none."""
    bids = np.asarray(bids, dtype=np.float64)
    if (bids < 0).any():
        raise ValueError("negative bid")
    if alpha <= 0 or beta < 0:
        raise ValueError("need alpha > 0 and beta >= 0")
    if bids.size == 0:
        b = 0.0
    else:
        b = float(bids.max() if agg == "max" else bids.mean())
    return b ** alpha + beta


def allocation_probs(logits, weights) -> np.ndarray:
    """``z = w e^l / sum(w e^l)`` per row; rows whose weights are all 0 are an error."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if not (weights > 0).any(axis=1).all():
        raise AllocationError("every token of a layer is masked")
    return np.exp(kernels.weighted_log_softmax(logits, weights))


# -- per-request item arrays ------------------------------------------------------

@dataclass
class RequestItems:
    """Ads followed by organics (pre-rank order) with their token codes."""

    request: object
    poi_ids: np.ndarray       # [n]
    bids: np.ndarray          # [n], 0 for organics
    is_ad: np.ndarray         # [n] bool
    codes: np.ndarray         # [n, C]
    cr_ids: np.ndarray        # [m] creative ids of all items
    cr_item: np.ndarray       # [m] owning item index
    cr_codes: np.ndarray      # [m, C]
    n_ads: int

    @classmethod
    def build(cls, request, tokens, table: ItemTable) -> RequestItems:
        orgs = sorted(request.organics, key=lambda o: o.pre_rank)
        poi_ids = np.array([a.poi_id for a in request.ads] + [o.poi_id for o in orgs], dtype=np.int64)
        bids = np.concatenate([[a.bid for a in request.ads], np.zeros(len(orgs))])
        is_ad = np.arange(len(poi_ids)) < len(request.ads)
        creatives = [a.creative_ids for a in request.ads] + [table.poi_creatives[o.poi_id] for o in orgs]
        cr_ids = np.array([c for cs in creatives for c in sorted(cs)], dtype=np.int64)
        cr_item = np.repeat(np.arange(len(creatives)), [len(cs) for cs in creatives])
        return cls(request, poi_ids, bids.astype(np.float64), is_ad, tokens.poi.codes(poi_ids),
                   cr_ids, cr_item, tokens.creative.codes(cr_ids), len(request.ads))

    def with_bids(self, ad_bids) -> RequestItems:
        bids = self.bids.copy()
        bids[:self.n_ads] = ad_bids
        return RequestItems(self.request, self.poi_ids, bids, self.is_ad, self.codes, self.cr_ids,
                            self.cr_item, self.cr_codes, self.n_ads)

    def live(self, used: np.ndarray, org_ptr: np.ndarray, exclude=None) -> np.ndarray:
        """Items available per row: unused ads plus only the next organic in pre-rank order."""
        idx = np.arange(len(self.poi_ids))
        nxt = (idx[None, :] == (self.n_ads + org_ptr)[:, None])
        live = ~used & (self.is_ad[None, :] | nxt)
        if exclude is not None:
            live[:, exclude] = False
        return live


# -- allocation policy ---------------------------------------------------------------

class AllocationPolicy(Module):
    """Generator plus trainable allocation terms on each POI layer.

    Each layer gets a zero-initialised linear correction of the head logits and
    a log-exponent on the token bid weights (``w ** exp(g)``, identity at init).
    """

    def __init__(self, gen: Generator, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 40]))
        cfg = gen.cfg
        self.gen = gen
        self.adapters = [Linear(cfg.d_model, cfg.W, rng, init="zeros") for _ in range(cfg.C)]
        self.bid_gain = [param(np.zeros(1)) for _ in range(cfg.C)]

    def adapter_parameters(self):
        return [p for a in self.adapters for p in a.parameters()] + list(self.bid_gain)

    def weight_exponent(self, j: int) -> float:
        return float(np.exp(self.bid_gain[j].data[0]))

    def poi_logits(self, h: Tensor, j: int, prefix) -> Tensor:
        feats = self.gen.layer_features("poi", h, j, prefix)
        return self.gen.head("poi", j, feats) + self.adapters[j](feats)

    def context(self, request, tokens):
        hist, valid = history_arrays([request], tokens, self.gen.cfg.B)
        return self.gen.encode(hist, valid)


@dataclass
class BeamCandidate:
    items: tuple[int, ...]          # indices into RequestItems
    creatives: tuple[int, ...]      # creative ids
    codes: np.ndarray               # [K, 2, C]
    score: float                    # cumulative sum of log z


def _expand(score, lz, width):
    """Top-``width`` (beam, code) pairs of ``score + lz``; ties by beam then code index."""
    cand = score[:, None] + lz
    b_idx, c_idx = np.nonzero(np.isfinite(cand))
    if b_idx.size == 0:
        raise AllocationError("no resolvable token for any beam")
    vals = cand[b_idx, c_idx]
    order = np.lexsort((c_idx, b_idx, -vals))[:width]
    return b_idx[order], c_idx[order], vals[order]


def beam_generate(policy: AllocationPolicy, items: RequestItems, ctx, cfg: AuctionConfig, K: int,
                  exclude=None) -> list[BeamCandidate]:
    """Beam search over ``K`` slots, POI token layer by layer then creative token.

    Beams are ranked by cumulative ``log z``; token weights come from the live
    items that match the beam's code prefix.
    """
    gen = policy.gen
    C, W = gen.cfg.C, gen.cfg.W
    n_items = len(items.poi_ids)
    if n_items - (0 if exclude is None else np.size(exclude)) < K:
        raise AllocationError(f"{n_items} items cannot fill {K} slots")
    n_b = 1
    codes = np.zeros((1, 0, 2, C), dtype=np.int64)
    seq_items = np.zeros((1, 0), dtype=np.int64)
    seq_cr = np.zeros((1, 0), dtype=np.int64)
    score = np.zeros(1)
    used = np.zeros((1, n_items), dtype=bool)
    org_ptr = np.zeros(1, dtype=np.int64)
    zero_bids = np.zeros(len(items.cr_ids))
    with no_grad():
        for t in range(K):
            x = gen.step_inputs(codes).data
            h = gen.poi_hidden(Tensor(x), ctx).data[:, -1]
            live = items.live(used, org_ptr, exclude)
            origin = np.arange(n_b)
            pref = np.zeros((n_b, C), dtype=np.int64)
            for j in range(C):
                logits = policy.poi_logits(Tensor(h), j, pref).data
                w = kernels.prefix_bid_weights(items.codes, items.bids, live, pref, j, W,
                                               cfg.alpha, cfg.beta, cfg.agg_code)
                lz = kernels.weighted_log_softmax(logits, w ** policy.weight_exponent(j))
                bi, ci, score = _expand(score, lz, cfg.beam_width)
                origin, h, live, pref = origin[bi], h[bi], live[bi], pref[bi]
                pref[:, j] = ci
            match = live & (items.codes[None, :, :] == pref[:, None, :]).all(axis=2)
            # highest-bid ad wins the token; otherwise the (single) live organic
            pick_score = np.where(match, items.bids[None, :] + 1.0, -1.0)
            chosen = np.argmax(pick_score, axis=1)

            prev_codes = codes[origin]
            poi_now = np.concatenate([prev_codes[:, :, 0], pref[:, None, :]], axis=1)
            h_img = gen.img_hidden(Tensor(x[origin]), ctx, poi_now).data[:, -1]
            cr_live = items.cr_item[None, :] == chosen[:, None]
            cpref = np.zeros((len(chosen), C), dtype=np.int64)
            corigin = np.arange(len(chosen))
            for j in range(C):
                logits = gen.layer_logits("img", Tensor(h_img), j, cpref).data
                w = kernels.prefix_bid_weights(items.cr_codes, zero_bids, cr_live, cpref, j, W,
                                               1.0, 1.0, kernels.AGG_MAX)
                lz = kernels.weighted_log_softmax(logits, w)
                bi, ci, score = _expand(score, lz, cfg.beam_width)
                corigin, h_img, cr_live, cpref = corigin[bi], h_img[bi], cr_live[bi], cpref[bi]
                cpref[:, j] = ci
            cmatch = cr_live & (items.cr_codes[None, :, :] == cpref[:, None, :]).all(axis=2)
            cr_pick = items.cr_ids[np.argmax(cmatch, axis=1)]   # creatives sorted by id per item

            src = origin[corigin]
            chosen = chosen[corigin]
            step_codes = np.stack([pref[corigin], cpref], axis=1)[:, None]
            codes = np.concatenate([codes[src], step_codes], axis=1)
            seq_items = np.concatenate([seq_items[src], chosen[:, None]], axis=1)
            seq_cr = np.concatenate([seq_cr[src], cr_pick[:, None]], axis=1)
            used = used[src].copy()
            used[np.arange(len(chosen)), chosen] = True
            org_ptr = org_ptr[src] + (~items.is_ad[chosen]).astype(np.int64)
            n_b = len(chosen)
    return [BeamCandidate(tuple(int(v) for v in seq_items[b]), tuple(int(v) for v in seq_cr[b]),
                          codes[b], float(score[b])) for b in range(n_b)]


# -- teacher-forced trace ------------------------------------------------------------

@dataclass
class AllocationTrace:
    """Per-step POI-layer quantities of a fixed sequence, reused by training and regret."""

    feats: list            # C tensors [K, d] (head inputs)
    log_w: np.ndarray      # [K, C, W] log token weights (MASKED where 0), before the exponent
    targets: np.ndarray    # [K, C] POI codes
    logits: np.ndarray     # [K, C, W] allocation logits
    weights: np.ndarray    # [K, C, W]
    poi_log_z: np.ndarray  # [K, C]
    img_log_z: np.ndarray  # [K, C]
    other_agg: np.ndarray  # [K, C] max/sum bid of other live items sharing the own code
    other_count: np.ndarray
    exponent: np.ndarray   # [C] policy exponent on the token weights

    @property
    def z(self) -> np.ndarray:
        """POI-level allocation probability per slot (product over layers)."""
        return np.exp(self.poi_log_z.sum(axis=1))


def trace_sequence(policy: AllocationPolicy, items: RequestItems, ctx, seq_items, seq_cr,
                   cfg: AuctionConfig, grad: bool = False) -> AllocationTrace:
    gen = policy.gen
    C, W = gen.cfg.C, gen.cfg.W
    seq_items = np.asarray(seq_items, dtype=np.int64)
    K = len(seq_items)
    cr_pos = {int(c): i for i, c in enumerate(items.cr_ids)}
    cr_idx = np.array([cr_pos[int(c)] for c in seq_cr], dtype=np.int64)
    codes = np.stack([items.codes[seq_items], items.cr_codes[cr_idx]], axis=1)   # [K, 2, C]

    used = np.zeros((K, len(items.poi_ids)), dtype=bool)
    org_ptr = np.zeros(K, dtype=np.int64)
    for t in range(1, K):
        used[t] = used[t - 1]
        used[t, seq_items[t - 1]] = True
        org_ptr[t] = org_ptr[t - 1] + (not items.is_ad[seq_items[t - 1]])
    live = items.live(used, org_ptr)

    def run():
        x = gen.step_inputs(codes[None, :-1])
        h_poi = gen.poi_hidden(x, ctx)
        h_img = gen.img_hidden(x, ctx, gen.paired_poi(codes[None]))
        return h_poi, h_img

    if grad:
        h_poi, h_img = run()
    else:
        with no_grad():
            h_poi, h_img = run()
    h_poi = h_poi.reshape(K, -1)
    h_img = h_img.reshape(K, -1)

    log_w = np.zeros((K, C, W))
    logits = np.zeros((K, C, W))
    weights = np.zeros((K, C, W))
    poi_lz = np.zeros((K, C))
    img_lz = np.zeros((K, C))
    other_agg = np.zeros((K, C))
    other_count = np.zeros((K, C), dtype=np.int64)
    rows = np.arange(K)
    pref = codes[:, 0]
    expo = np.array([policy.weight_exponent(j) for j in range(C)])
    with contextlib.nullcontext() if grad else no_grad():
        feats = [gen.layer_features("poi", h_poi, j, pref) for j in range(C)]
    for j in range(C):
        with no_grad():
            lg = (gen.head("poi", j, feats[j]) + policy.adapters[j](feats[j])).data
        w = kernels.prefix_bid_weights(items.codes, items.bids, live, pref, j, W,
                                       cfg.alpha, cfg.beta, cfg.agg_code)
        lz = kernels.weighted_log_softmax(lg, w ** expo[j])
        logits[:, j], weights[:, j] = lg, w
        with np.errstate(divide="ignore"):
            log_w[:, j] = np.where(w > 0, np.log(np.where(w > 0, w, 1.0)), MASKED)
        poi_lz[:, j] = lz[rows, pref[:, j]]
        # competitors sharing the own code at this layer (own item excluded)
        share = live & (items.codes[None, :, :j + 1] == pref[:, None, :j + 1]).all(axis=2)
        share[rows, seq_items] = False
        other_count[:, j] = share.sum(axis=1)
        if cfg.agg == "max":
            other_agg[:, j] = np.where(share, items.bids[None, :], -np.inf).max(axis=1, initial=-np.inf)
            other_agg[:, j] = np.where(other_count[:, j] > 0, other_agg[:, j], 0.0)
        else:
            other_agg[:, j] = np.where(share, items.bids[None, :], 0.0).sum(axis=1)
    cpref = codes[:, 1]
    cr_live = items.cr_item[None, :] == seq_items[:, None]
    with no_grad():
        for j in range(C):
            lg = gen.layer_logits("img", Tensor(h_img.data), j, cpref).data
            w = kernels.prefix_bid_weights(items.cr_codes, np.zeros(len(items.cr_ids)), cr_live,
                                           cpref, j, W, 1.0, 1.0, kernels.AGG_MAX)
            img_lz[:, j] = kernels.weighted_log_softmax(lg, w)[rows, cpref[:, j]]
    return AllocationTrace(feats, log_w, pref.copy(), logits, weights, poi_lz, img_lz,
                           other_agg, other_count, expo)


def trace_log_z(policy: AllocationPolicy, trace: AllocationTrace, cfg: AuctionConfig) -> Tensor:
    """Differentiable ``log z`` per slot ``[K]`` (sum over POI layers, or the last one)."""
    C = len(trace.feats)
    K = trace.targets.shape[0]
    layers = range(C) if cfg.pg_layers == "product" else [C - 1]
    total = None
    for j in layers:
        lg = policy.gen.head("poi", j, trace.feats[j]) + policy.adapters[j](trace.feats[j])
        live = trace.log_w[:, j] > MASKED
        lw = np.where(live, trace.log_w[:, j], 0.0)
        lsm = ops.log_softmax(lg + lw * ops.exp(policy.bid_gain[j]) + np.where(live, 0.0, MASKED),
                              axis=-1)
        picked = lsm[np.arange(K), trace.targets[:, j]]
        total = picked if total is None else total + picked
    return total


# -- sequence selection -----------------------------------------------------------------

@dataclass
class AllocationOutcome:
    items: RequestItems
    seq_items: np.ndarray         # [K] item indices
    slots: list                   # [(poi_id, creative_id)]
    is_ad: np.ndarray             # [K]
    bids: np.ndarray              # [K] (0 for organics)
    z: np.ndarray                 # [K] POI allocation probability
    pctr_poi: np.ndarray
    pctr_img: np.ndarray
    pcvr: np.ndarray
    reward: float
    log_z: float
    trace: AllocationTrace | None = field(default=None, repr=False)

    @property
    def revenue_estimate(self) -> float:
        return float((self.bids * self.pctr_poi).sum())


def score_beams(rm: RewardModel, table: ItemTable, items: RequestItems, beams, cfg: AuctionConfig):
    """RM estimates and list rewards for every beam."""
    req = items.request
    K = len(beams[0].items)
    feats = np.stack([table.slot_features(req, [(int(items.poi_ids[i]), c)
                                                for i, c in zip(b.items, b.creatives)], K)
                      for b in beams])
    est = rm.score(feats)
    idx = np.array([b.items for b in beams])
    rewards = sequence_reward(est.pctr_poi, items.bids[idx], table.gmv[items.poi_ids[idx]],
                              items.is_ad[idx], cfg.gmv_weight, cfg.lam_ux)
    return est, rewards


def select_winner(rm: RewardModel, table: ItemTable, items: RequestItems, beams,
                  cfg: AuctionConfig) -> tuple[int, object, np.ndarray]:
    """Index of the max-reward beam; ties by higher ``log z`` then lexicographic tokens."""
    est, rewards = score_beams(rm, table, items, beams, cfg)
    keys = [(-rewards[i], -beams[i].score, tuple(beams[i].codes.ravel())) for i in range(len(beams))]
    best = min(range(len(beams)), key=lambda i: keys[i])
    return best, est, rewards


def allocate(policy, rm, table, tokens, request, cfg: AuctionConfig, items: RequestItems | None = None,
             ctx=None, exclude=None, with_trace: bool = True) -> AllocationOutcome:
    """Full generative allocation for one request: beams, RM selection, trace of the winner."""
    items = items or RequestItems.build(request, tokens, table)
    if ctx is None:
        with no_grad():
            ctx = policy.context(request, tokens)
    beams = beam_generate(policy, items, ctx, cfg, request.K, exclude=exclude)
    best, est, rewards = select_winner(rm, table, items, beams, cfg)
    b = beams[best]
    seq = np.array(b.items, dtype=np.int64)
    trace = trace_sequence(policy, items, ctx, seq, b.creatives, cfg) if with_trace else None
    out = AllocationOutcome(
        items=items, seq_items=seq,
        slots=[(int(items.poi_ids[i]), int(c)) for i, c in zip(seq, b.creatives)],
        is_ad=items.is_ad[seq].copy(), bids=items.bids[seq].copy(),
        z=trace.z if trace is not None else np.full(len(seq), np.nan),
        pctr_poi=est.pctr_poi[best], pctr_img=est.pctr_img[best], pcvr=est.pcvr[best],
        reward=float(rewards[best]), log_z=b.score, trace=trace)
    out._beams = beams
    out._beam_est = est
    return out


# -- post-training -------------------------------------------------------------------------

def revenue(bids, pctr) -> float:
    return float((np.asarray(bids) * np.asarray(pctr)).sum())


def marginal_contribution(policy, rm, table, tokens, outcome: AllocationOutcome, slot: int,
                          cfg: AuctionConfig, ctx) -> float:
    """Revenue of the winner minus revenue of the best list without the item at ``slot``."""
    base = revenue(outcome.bids, outcome.pctr_poi)
    item = int(outcome.seq_items[slot])
    items = outcome.items
    if cfg.marginal == "beams":
        beams = outcome._beams
        est = outcome._beam_est
        keep = [i for i, b in enumerate(beams) if item not in b.items]
        if keep:
            _, rewards = score_beams(rm, table, items, [beams[i] for i in keep], cfg)
            k = keep[int(np.argmax(rewards))]
            idx = np.array(beams[k].items)
            return base - revenue(items.bids[idx], est.pctr_poi[k])
    try:
        alt = allocate(policy, rm, table, tokens, items.request, cfg, items=items, ctx=ctx,
                       exclude=[item], with_trace=False)
    except AllocationError:
        return base
    return base - revenue(alt.bids, alt.pctr_poi)


@dataclass
class PGStats:
    loss: float
    mean_reward: float
    mean_revenue: float


class PGTrainer:
    """REINFORCE-style update ``-sum r_i log z_i`` on the allocation adapters.

    With ``full=True`` every generator parameter is trainable as well and the
    pre-training loss is added (single-stage end-to-end variant).
    """

    def __init__(self, policy: AllocationPolicy, rm, table, tokens, cfg: AuctionConfig, lr: float,
                 full: bool = False):
        self.policy, self.rm, self.table, self.tokens, self.cfg = policy, rm, table, tokens, cfg
        self.full = full
        params = policy.parameters() if full else policy.adapter_parameters()
        self.opt = Adam(params, lr=lr)
        self._ctx_cache: dict[int, object] = {}

    def _ctx(self, request):
        if self.full:
            return None
        key = id(request)
        if key not in self._ctx_cache:
            with no_grad():
                self._ctx_cache[key] = (request, self.policy.context(request, self.tokens))
        return self._ctx_cache[key][1]

    def loss(self, requests, pretrain_batch=None):
        total = None
        rewards, revs = [], []
        for r in requests:
            ctx = self._ctx(r)
            if ctx is None:
                with no_grad():
                    ctx = self.policy.context(r, self.tokens)
            out = allocate(self.policy, self.rm, self.table, self.tokens, r, self.cfg, ctx=ctx,
                           with_trace=False)
            rewards.append(out.reward)
            revs.append(out.revenue_estimate)
            contrib = np.array([marginal_contribution(self.policy, self.rm, self.table, self.tokens,
                                                      out, s, self.cfg, ctx)
                                for s in range(len(out.seq_items))])
            if not contrib.any():
                continue
            if self.full:
                ctx = self.policy.context(r, self.tokens)
            tr = trace_sequence(self.policy, out.items, ctx, out.seq_items,
                                [c for _, c in out.slots], self.cfg, grad=self.full)
            term = ops.sum(trace_log_z(self.policy, tr, self.cfg) * contrib)
            total = term if total is None else total + term
        loss = None if total is None else total * (-1.0 / len(requests))
        if pretrain_batch is not None:
            l_ntp, l_mtp = self.policy.gen.losses(*pretrain_batch)
            loss = l_ntp + l_mtp if loss is None else loss + l_ntp + l_mtp
        return loss, rewards, revs

    def step(self, requests, pretrain_batch=None) -> PGStats:
        loss, rewards, revs = self.loss(requests, pretrain_batch)
        self.opt.zero_grad()
        if loss is not None:
            loss.backward()
            self.opt.step()
        return PGStats(0.0 if loss is None else loss.item(), float(np.mean(rewards)),
                       float(np.mean(revs)))


def pg_train_step(trainer: PGTrainer, requests, pretrain_batch=None) -> PGStats:
    return trainer.step(requests, pretrain_batch)


def mean_winner_revenue(policy, rm, table, tokens, requests, cfg: AuctionConfig) -> float:
    """Mean ``sum b * pctr`` of the selected list over ``requests``."""
    return float(np.mean([allocate(policy, rm, table, tokens, r, cfg, with_trace=False).revenue_estimate
                          for r in requests]))


# -- GSP-only baseline allocation ------------------------------------------------------------

def gsp_allocation(rm, table, tokens, request, cfg: AuctionConfig) -> AllocationOutcome:
    """Ads by descending bid alternate with organics in pre-rank order; lowest-id creative."""
    items = RequestItems.build(request, tokens, table)
    ads = sorted(range(items.n_ads), key=lambda i: (-items.bids[i], i))
    orgs = list(range(items.n_ads, len(items.poi_ids)))
    seq = []
    while len(seq) < request.K:
        for pool in (ads, orgs):
            if pool and len(seq) < request.K:
                seq.append(pool.pop(0))
    seq = np.array(seq, dtype=np.int64)
    cr = [int(items.cr_ids[items.cr_item == i].min()) for i in seq]
    slots = [(int(items.poi_ids[i]), c) for i, c in zip(seq, cr)]
    est = rm.score(table.slot_features(request, slots, request.K)[None])
    rew = sequence_reward(est.pctr_poi, items.bids[seq], table.gmv[items.poi_ids[seq]],
                          items.is_ad[seq], cfg.gmv_weight, cfg.lam_ux)
    return AllocationOutcome(items, seq, slots, items.is_ad[seq].copy(), items.bids[seq].copy(),
                             np.ones(len(seq)), est.pctr_poi[0], est.pctr_img[0], est.pcvr[0],
                             float(rew[0]), 0.0, None)
