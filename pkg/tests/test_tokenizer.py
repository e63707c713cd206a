import numpy as np
import pytest

from genad import marketplace as mp
from genad import tokenizer as tk


def _blobs(seed, n=300, d=4, k=6):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(k, d)) * 3
    return centers[rng.integers(k, size=n)] + 0.1 * rng.normal(size=(n, d))


def test_residual_quantization_hand_example():
    m = tk.RQVAE(2, 2, 2, np.random.default_rng(0))
    m.codebooks = np.array([[[1.0, 0.0], [0.0, 1.0]], [[0.1, 0.0], [0.0, 0.1]]])
    codes = m.quantize(np.array([[1.0, 0.1], [0.1, 0.9]]))
    np.testing.assert_array_equal(codes, [[0, 1], [1, 0]])
    np.testing.assert_allclose(m.code_vectors(codes), [[1.0, 0.1], [0.1, 1.0]])


def test_code_range_checked():
    m = tk.RQVAE(2, 2, 3, np.random.default_rng(0))
    with pytest.raises(tk.TokenError):
        m.code_vectors([[0, 3]])
    with pytest.raises(tk.TokenError):
        m.code_vectors([[0, 1, 2]])


def test_training_is_deterministic_and_lowers_loss():
    x = _blobs(0)
    a, log_a = tk.train_rqvae(1, x, 2, 8, 30, 3e-3)
    b, log_b = tk.train_rqvae(1, x, 2, 8, 30, 3e-3)
    assert log_a.epoch_loss == log_b.epoch_loss
    np.testing.assert_array_equal(a.codebooks, b.codebooks)
    assert log_a.epoch_loss[-1] < 0.5 * log_a.epoch_loss[0]


def test_residual_norm_shrinks_with_depth():
    x = _blobs(2)
    m, log = tk.train_rqvae(0, x, 3, 8, 30, 3e-3)
    norms = log.layer_residual_norms[-1]
    assert norms[0] > norms[1] > norms[2]


def test_separated_clusters_get_distinct_first_codes():
    x = _blobs(3, k=4)
    m, _ = tk.train_rqvae(0, x, 1, 8, 40, 3e-3)
    codes = m.encode(x)[:, 0]
    # close points mostly share the first code, far points almost never do
    d = np.linalg.norm(x[:, None] - x[None], axis=-1)
    near = d < 1.0
    same = codes[:, None] == codes[None]
    assert same[near].mean() > 0.8
    assert same[~near].mean() < 0.05


def test_too_few_distinct_points_warns_and_shrinks_vocabulary():
    x = np.repeat(np.eye(3), 10, axis=0)
    with pytest.warns(UserWarning):
        m, _ = tk.train_rqvae(0, x, 2, 8, 2, 1e-3)
    assert m.W == 3


def test_token_index_collisions_and_lookup():
    idx = tk.TokenIndex.from_codes([5, 7, 9], [[0, 1], [0, 1], [2, 0]])
    assert idx.collisions() == 1
    assert idx.inverse[(0, 1)] == [5, 7]
    np.testing.assert_array_equal(idx.codes([9, 5]), [[2, 0], [0, 1]])


def test_build_index_covers_catalog():
    cat = mp.gen_catalog(0, 40, 2, 4, 4, 3)
    p, _ = tk.train_rqvae(0, cat.poi_matrix, 2, 4, 3, 1e-3)
    im, _ = tk.train_rqvae(0, np.stack([c.e_img for c in cat.all_creatives()]), 2, 4, 3, 1e-3)
    toks = tk.build_index(cat, p, im)
    assert set(toks.poi.forward) == {q.id for q in cat.pois}
    assert len(toks.creative.forward) == 80
    assert sum(len(v) for v in toks.poi.inverse.values()) == 40
