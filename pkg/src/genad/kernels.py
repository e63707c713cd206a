"""Hot numeric loops, each with a numba and a pure-numpy implementation.

The numba versions are used by default; set ``GENAD_NUMBA=0`` to force the
numpy path (identical results up to floating-point summation order).
Both variants stay importable as ``<name>_nb`` / ``<name>_np`` so tests and
``benchmarks/bench_kernels.py`` can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

AGG_MAX = 0
AGG_MEAN = 1

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("GENAD_NUMBA", "1") != "0"


def _njit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


# -- nearest code (residual quantization) ---------------------------------------

@_njit
def nearest_codes_nb(residuals, codebook):
    n, d = residuals.shape
    w = codebook.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        arg = 0
        for k in range(w):
            acc = 0.0
            for t in range(d):
                diff = residuals[i, t] - codebook[k, t]
                acc += diff * diff
            if acc < best:
                best = acc
                arg = k
        out[i] = arg
    return out


def nearest_codes_np(residuals, codebook):
    diff = residuals[:, None, :] - codebook[None, :, :]
    return np.argmin(np.einsum("nwd,nwd->nw", diff, diff), axis=1).astype(np.int64)


@_njit
def residual_quantize_nb(x, codebooks):
    n, d = x.shape
    c = codebooks.shape[0]
    codes = np.empty((n, c), dtype=np.int64)
    norms = np.empty((n, c))
    r = x.copy()
    for j in range(c):
        idx = nearest_codes_nb(r, codebooks[j])
        for i in range(n):
            k = idx[i]
            codes[i, j] = k
            acc = 0.0
            for t in range(d):
                r[i, t] -= codebooks[j, k, t]
                acc += r[i, t] * r[i, t]
            norms[i, j] = np.sqrt(acc)
    return codes, norms


def residual_quantize_np(x, codebooks):
    r = np.array(x, dtype=np.float64, copy=True)
    c = codebooks.shape[0]
    codes = np.empty((r.shape[0], c), dtype=np.int64)
    norms = np.empty((r.shape[0], c))
    for j in range(c):
        idx = nearest_codes_np(r, codebooks[j])
        codes[:, j] = idx
        r -= codebooks[j][idx]
        norms[:, j] = np.sqrt((r * r).sum(axis=1))
    return codes, norms


# -- token-level bid aggregation ------------------------------------------------

@_njit
def prefix_bid_weights_nb(item_codes, bids, live, prefixes, layer, width, alpha, beta, agg):
    """Weight rows ``[n_beams, width]`` for one codebook layer.

    Item ``m`` contributes to code ``item_codes[m, layer]`` of beam ``b`` when it
    is live for that beam and its first ``layer`` codes equal ``prefixes[b]``.
    Codes with no contributing item get weight 0 (masked).
    """
    n_beams = prefixes.shape[0]
    n_items = item_codes.shape[0]
    out = np.zeros((n_beams, width))
    agg_bid = np.zeros(width)
    count = np.zeros(width, dtype=np.int64)
    for b in range(n_beams):
        agg_bid[:] = 0.0
        count[:] = 0
        for m in range(n_items):
            if not live[b, m]:
                continue
            ok = True
            for j in range(layer):
                if item_codes[m, j] != prefixes[b, j]:
                    ok = False
                    break
            if not ok:
                continue
            k = item_codes[m, layer]
            if agg == AGG_MAX:
                if count[k] == 0 or bids[m] > agg_bid[k]:
                    agg_bid[k] = bids[m]
            else:
                agg_bid[k] += bids[m]
            count[k] += 1
        for k in range(width):
            if count[k] > 0:
                v = agg_bid[k] if agg == AGG_MAX else agg_bid[k] / count[k]
                out[b, k] = v ** alpha + beta
    return out


def prefix_bid_weights_np(item_codes, bids, live, prefixes, layer, width, alpha, beta, agg):
    n_beams = prefixes.shape[0]
    match = live.copy()
    if layer > 0:
        match &= (item_codes[None, :, :layer] == prefixes[:, None, :layer]).all(axis=2)
    codes = item_codes[:, layer]
    onehot = codes[None, :] == np.arange(width)[:, None]               # [W, items]
    hit = match[:, None, :] & onehot[None, :, :]                       # [beams, W, items]
    count = hit.sum(axis=2)
    if agg == AGG_MAX:
        agg_bid = np.where(hit, bids[None, None, :], -np.inf).max(axis=2, initial=-np.inf)
    else:
        agg_bid = np.where(hit, bids[None, None, :], 0.0).sum(axis=2) / np.maximum(count, 1)
    out = np.zeros((n_beams, width))
    present = count > 0
    out[present] = agg_bid[present] ** alpha + beta
    return out


# -- bid-weighted softmax ---------------------------------------------------------

@_njit
def weighted_log_softmax_nb(logits, weights):
    """``log(w e^l / sum w e^l)`` per row; ``-inf`` where ``w == 0``."""
    n, w = logits.shape
    out = np.full((n, w), -np.inf)
    for i in range(n):
        m = -np.inf
        for k in range(w):
            if weights[i, k] > 0.0:
                s = np.log(weights[i, k]) + logits[i, k]
                if s > m:
                    m = s
        if m == -np.inf:
            continue
        tot = 0.0
        for k in range(w):
            if weights[i, k] > 0.0:
                tot += np.exp(np.log(weights[i, k]) + logits[i, k] - m)
        lse = m + np.log(tot)
        for k in range(w):
            if weights[i, k] > 0.0:
                out[i, k] = np.log(weights[i, k]) + logits[i, k] - lse
    return out


def weighted_log_softmax_np(logits, weights):
    with np.errstate(divide="ignore"):
        s = np.where(weights > 0, np.log(np.where(weights > 0, weights, 1.0)) + logits, -np.inf)
    m = s.max(axis=1, keepdims=True)
    dead = ~np.isfinite(m)
    m = np.where(dead, 0.0, m)
    e = np.exp(s - m)
    lse = m + np.log(np.where(dead, 1.0, e.sum(axis=1, keepdims=True)))
    out = s - lse
    out[np.repeat(dead, s.shape[1], axis=1)] = -np.inf
    return out


# -- allocation probability under a misreported bid ------------------------------

@_njit
def misreport_alloc_probs_nb(rest, own_exp, other_agg, other_count, grid, alpha, beta, agg, expo):
    """Allocation probability ``prod_j z_j(b')`` of a fixed item for each bid in ``grid``.

    Per ad ``a`` and layer ``j``: ``own_exp`` is ``exp(logit - shift)`` of the
    item's own code, ``rest`` the weighted mass of every other code with the
    same shift, ``other_agg``/``other_count`` the max (or sum) and count of the
    competing bids that share the item's code; ``expo`` the per-layer exponent
    the policy applies to token weights.
    """
    n_ads, c = rest.shape
    g = grid.shape[1]
    out = np.ones((n_ads, g))
    for a in range(n_ads):
        for j in range(c):
            for t in range(g):
                b = grid[a, t]
                if agg == AGG_MAX:
                    v = b if (other_count[a, j] == 0 or b > other_agg[a, j]) else other_agg[a, j]
                else:
                    v = (other_agg[a, j] + b) / (other_count[a, j] + 1)
                w_own = (v ** alpha + beta) ** expo[a, j]
                num = w_own * own_exp[a, j]
                out[a, t] *= num / (rest[a, j] + num)
    return out


def misreport_alloc_probs_np(rest, own_exp, other_agg, other_count, grid, alpha, beta, agg, expo):
    b = grid[:, None, :]                                  # [A, 1, G]
    oa = other_agg[:, :, None]
    oc = other_count[:, :, None]
    if agg == AGG_MAX:
        v = np.where((oc == 0) | (b > oa), b, oa)
    else:
        v = (oa + b) / (oc + 1)
    num = (v ** alpha + beta) ** expo[:, :, None] * own_exp[:, :, None]
    return np.prod(num / (rest[:, :, None] + num), axis=1)


# -- generalized second price -----------------------------------------------------

@_njit
def gsp_prices_nb(bids, pctr):
    """GSP prices for ads already sorted by ``bid * pctr`` descending."""
    n = bids.shape[0]
    out = np.zeros(n)
    for i in range(n - 1):
        p = bids[i + 1] * pctr[i + 1] / pctr[i]
        if p < 0.0:
            p = 0.0
        if p > bids[i]:
            p = bids[i]
        out[i] = p
    return out


def gsp_prices_np(bids, pctr):
    out = np.zeros(bids.shape[0])
    if bids.shape[0] > 1:
        out[:-1] = np.clip(bids[1:] * pctr[1:] / pctr[:-1], 0.0, bids[:-1])
    return out


_IMPLS = {
    "nearest_codes": (nearest_codes_nb, nearest_codes_np),
    "residual_quantize": (residual_quantize_nb, residual_quantize_np),
    "prefix_bid_weights": (prefix_bid_weights_nb, prefix_bid_weights_np),
    "weighted_log_softmax": (weighted_log_softmax_nb, weighted_log_softmax_np),
    "misreport_alloc_probs": (misreport_alloc_probs_nb, misreport_alloc_probs_np),
    "gsp_prices": (gsp_prices_nb, gsp_prices_np),
}

nearest_codes = _IMPLS["nearest_codes"][0 if USE_NUMBA else 1]
residual_quantize = _IMPLS["residual_quantize"][0 if USE_NUMBA else 1]
prefix_bid_weights = _IMPLS["prefix_bid_weights"][0 if USE_NUMBA else 1]
weighted_log_softmax = _IMPLS["weighted_log_softmax"][0 if USE_NUMBA else 1]
misreport_alloc_probs = _IMPLS["misreport_alloc_probs"][0 if USE_NUMBA else 1]
gsp_prices = _IMPLS["gsp_prices"][0 if USE_NUMBA else 1]


def implementations(name: str):
    """``(numba, numpy)`` pair for a kernel name."""
    return _IMPLS[name]
