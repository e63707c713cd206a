import numpy as np
import pytest

from genad import kernels

SEEDS = range(5)


def _pair(name):
    return kernels.implementations(name)


@pytest.mark.parametrize("seed", SEEDS)
def test_nearest_codes_agree_with_brute_force(seed):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=(40, 6))
    cb = rng.normal(size=(9, 6))
    brute = np.array([min(range(9), key=lambda k: (((x - cb[k]) ** 2).sum(), k)) for x in r])
    for fn in _pair("nearest_codes"):
        np.testing.assert_array_equal(fn(r, cb), brute)


def test_nearest_codes_ties_go_to_lowest_index():
    cb = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    for fn in _pair("nearest_codes"):
        assert fn(np.zeros((1, 2)), cb)[0] == 0
        assert fn(np.array([[1.0, 0.0]]), cb)[0] == 0


@pytest.mark.parametrize("seed", SEEDS)
def test_residual_quantize_pair(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 4))
    cbs = rng.normal(size=(3, 8, 4))
    (c1, n1), (c2, n2) = (fn(x, cbs) for fn in _pair("residual_quantize"))
    np.testing.assert_array_equal(c1, c2)
    np.testing.assert_allclose(n1, n2, atol=1e-12)
    # residual after the last layer matches an explicit recomputation
    rec = x - sum(cbs[j][c1[:, j]] for j in range(3))
    np.testing.assert_allclose(n1[:, -1], np.linalg.norm(rec, axis=1), atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("agg", [kernels.AGG_MAX, kernels.AGG_MEAN])
def test_prefix_bid_weights_pair_and_oracle(seed, agg):
    rng = np.random.default_rng(seed)
    W, C, n = 4, 2, 12
    codes = rng.integers(W, size=(n, C))
    bids = rng.uniform(0, 4, size=n)
    live = rng.uniform(size=(3, n)) < 0.7
    pref = rng.integers(W, size=(3, C))
    for layer in range(C):
        a, b = (fn(codes, bids, live, pref, layer, W, 1.2, 2.0, agg) for fn in _pair("prefix_bid_weights"))
        np.testing.assert_allclose(a, b, atol=1e-12)
        for row in range(3):
            for k in range(W):
                m = [i for i in range(n) if live[row, i] and codes[i, layer] == k
                     and all(codes[i, j] == pref[row, j] for j in range(layer))]
                if not m:
                    assert a[row, k] == 0.0
                else:
                    v = max(bids[m]) if agg == kernels.AGG_MAX else np.mean(bids[m])
                    assert a[row, k] == pytest.approx(v ** 1.2 + 2.0)


@pytest.mark.parametrize("seed", SEEDS)
def test_weighted_log_softmax_pair(seed):
    rng = np.random.default_rng(seed)
    lg = rng.normal(size=(5, 7)) * 3
    w = rng.uniform(0, 3, size=(5, 7)) * (rng.uniform(size=(5, 7)) < 0.6)
    w[0] = 0.0
    a, b = (fn(lg, w) for fn in _pair("weighted_log_softmax"))
    np.testing.assert_allclose(np.where(np.isfinite(a), a, 0), np.where(np.isfinite(b), b, 0), atol=1e-12)
    np.testing.assert_array_equal(np.isfinite(a), np.isfinite(b))
    assert not np.isfinite(a[0]).any()
    for i in range(1, 5):
        if (w[i] > 0).any():
            assert np.exp(a[i][w[i] > 0]).sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("agg", [kernels.AGG_MAX, kernels.AGG_MEAN])
def test_misreport_alloc_probs_pair(seed, agg):
    rng = np.random.default_rng(seed)
    A, C, G = 4, 2, 6
    args = (rng.uniform(0.5, 3, (A, C)), rng.uniform(0.1, 1, (A, C)), rng.uniform(0, 3, (A, C)),
            rng.integers(0, 3, (A, C)), rng.uniform(0.1, 4, (A, G)), 1.2, 2.0, agg,
            rng.uniform(0.5, 2, (A, C)))
    a, b = (fn(*args) for fn in _pair("misreport_alloc_probs"))
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert ((a > 0) & (a < 1)).all()


def test_misreport_alloc_probs_matches_direct_softmax():
    # one layer, own code 0 with competitor bid 1.5 sharing it, one other code
    lg = np.array([0.3, -0.2])
    alpha, beta, e = 1.2, 2.0, 1.3
    w_other = 0.7 ** alpha + beta
    for b in (0.5, 1.5, 3.0):
        w_own = (max(b, 1.5) ** alpha + beta) ** e
        want = w_own * np.exp(lg[0]) / (w_own * np.exp(lg[0]) + w_other ** e * np.exp(lg[1]))
        for fn in _pair("misreport_alloc_probs"):
            got = fn(np.array([[w_other ** e * np.exp(lg[1] - lg[0])]]), np.ones((1, 1)),
                     np.array([[1.5]]), np.array([[1]]), np.array([[b]]), alpha, beta,
                     kernels.AGG_MAX, np.array([[e]]))
            assert got[0, 0] == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_gsp_prices_pair(seed):
    rng = np.random.default_rng(seed)
    b = rng.uniform(0.5, 5, 6)
    p = rng.uniform(0.01, 0.3, 6)
    order = np.argsort(-(b * p))
    b, p = b[order], p[order]
    x, y = (fn(b, p) for fn in _pair("gsp_prices"))
    np.testing.assert_allclose(x, y, atol=1e-12)
    assert y[-1] == 0.0 and (y <= b).all() and (y >= 0).all()


def test_active_kernel_follows_flag():
    idx = 0 if kernels.USE_NUMBA else 1
    assert kernels.gsp_prices is kernels.implementations("gsp_prices")[idx]
