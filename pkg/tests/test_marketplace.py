import math

import numpy as np
import pytest

from genad import marketplace as mp


@pytest.fixture(scope="module")
def world():
    return mp.gen_world(3, 200, 3, 16, 16, 8, 50)


def test_catalog_deterministic_and_degenerate():
    a = mp.gen_catalog(1, 20, 2, 4, 4, 3)
    b = mp.gen_catalog(1, 20, 2, 4, 4, 3)
    assert a.poi_matrix.tobytes() == b.poi_matrix.tobytes()
    assert [c.e_img.tobytes() for c in a.all_creatives()] == [c.e_img.tobytes() for c in b.all_creatives()]
    one = mp.gen_catalog(1, 1, 1, 4, 4, 1)
    assert len(one.pois) == 1 and len(one.pois[0].creatives) == 1


def test_catalog_rejects_empty_sizes():
    with pytest.raises(mp.ConfigError):
        mp.gen_catalog(0, 0, 1, 4, 4, 1)


def test_single_cluster_pairwise_distance_matches_gaussian_expectation():
    d = 8
    cat = mp.gen_catalog(5, 400, 1, d, d, 1)
    x = cat.poi_matrix
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))[np.triu_indices(len(x), 1)]
    # x - y ~ N(0, 2 I): E|x - y| = sqrt(2) * sqrt(2) * Gamma((d+1)/2) / Gamma(d/2)
    expected = 2.0 * math.exp(math.lgamma((d + 1) / 2) - math.lgamma(d / 2))
    assert abs(dist.mean() - expected) / expected < 0.03


def test_centers_on_sphere_and_quality_bounded(world):
    np.testing.assert_allclose(np.linalg.norm(world.catalog.centers, axis=1), 4.0)
    q = [c.quality for c in world.catalog.all_creatives()]
    assert min(q) >= 0 and max(q) <= 1


def test_request_shape_and_invariants(world):
    r = mp.gen_request(7, world, B=16, N=10, M=6, K=5)
    assert len(r.history) == 16 and len(r.ads) == 10 and len(r.organics) == 6
    assert all(o.bid == 0 for o in r.organics)
    assert sorted(o.pre_rank for o in r.organics) == list(range(1, 7))
    assert all(0.5 <= a.bid <= 5.0 and a.bid == a.value for a in r.ads)
    assert r == mp.gen_request(7, world, B=16, N=10, M=6, K=5)


def test_request_ads_only_and_config_error(world):
    r = mp.gen_request(1, world, B=4, N=6, M=0, K=5)
    assert r.organics == [] and len(r.ads) == 6
    with pytest.raises(mp.ConfigError):
        mp.gen_request(1, world, B=4, N=2, M=2, K=5)


def test_history_concentrates_on_preferred_cluster(world):
    hits = total = 0
    for r in mp.gen_requests(11, world, 1000, 16, 10, 5, 5):
        pref = world.oracle.preferred[r.user_id]
        hits += sum(world.catalog.pois[p].cluster == pref for p, _ in r.history)
        total += len(r.history)
    assert hits / total >= 0.6


def test_bid_distribution_is_clipped_lognormal(world):
    bids = np.array([a.bid for r in mp.gen_requests(2, world, 300, 1, 20, 0, 5) for a in r.ads])
    assert bids.min() >= 0.5 and bids.max() <= 5.0
    # median of exp(N(0, 0.5)) is 1 and clipping keeps it there
    assert abs(np.median(bids) - 1.0) < 0.05


def test_position_decay(world):
    p = world.catalog.pois[0]
    c = p.creatives[0].id
    s1 = mp.true_ctr(world, 0, p.id, c, 1)
    s4 = mp.true_ctr(world, 0, p.id, c, 4)
    assert s1 / s4 == pytest.approx(4 ** 0.6, rel=1e-12)
    vals = [mp.true_ctr(world, 0, p.id, c, s) for s in range(1, 11)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_orthogonal_latents_give_base_rate(world):
    o = world.oracle
    e = np.zeros(16)
    assert o.true_ctr(0, e, 0.5, 1) == pytest.approx(1 / (1 + math.exp(2.5)), rel=1e-12)


def test_empirical_click_rate_matches_oracle(world):
    p = world.catalog.pois[3]
    slots = [(p.id, p.creatives[0].id)]
    ctr, ctr_img, cvr = mp.slot_probabilities(world, 2, slots)
    clicks = np.array([mp.sample_feedback(9, ctr, ctr_img, cvr, index=i).clicks[0] for i in range(10000)])
    sigma = math.sqrt(ctr[0] * (1 - ctr[0]) / len(clicks))
    assert abs(clicks.mean() - ctr[0]) <= 2 * sigma


def test_feedback_extremes():
    zeros = mp.sample_feedback(0, np.zeros(4), np.zeros(4), np.ones(4))
    assert zeros.clicks.sum() == 0 and zeros.img_clicks.sum() == 0 and zeros.conversions.sum() == 0
    ones = mp.sample_feedback(0, np.ones(4), np.ones(4), np.ones(4))
    assert ones.clicks.all() and ones.img_clicks.all() and ones.conversions.all()


def test_conversions_require_clicks(world):
    fb = mp.sample_feedback(4, np.full(50, 0.3), np.full(50, 0.3), np.full(50, 0.9))
    assert (fb.conversions <= fb.clicks).all()


def test_exposure_target_keeps_organic_order(world):
    for r in mp.gen_requests(5, world, 20, 8, 10, 10, 5):
        tgt = mp.exposure_target(world, r)
        assert len(tgt) == 5 and len({p for p, _ in tgt}) == 5
        rank = {o.poi_id: o.pre_rank for o in r.organics}
        org = [rank[p] for p, _ in tgt if p in rank]
        assert org == sorted(org)


def test_jsonl_roundtrip(tmp_path, world):
    reqs = mp.gen_requests(1, world, 3, 4, 5, 3, 4)
    mp.write_requests(tmp_path / "r.jsonl", reqs)
    assert mp.read_requests(tmp_path / "r.jsonl") == reqs
    cat = mp.gen_catalog(2, 5, 2, 3, 3, 2)
    mp.write_catalog(tmp_path / "c.jsonl", cat)
    back = mp.read_catalog(tmp_path / "c.jsonl")
    np.testing.assert_array_equal(back.poi_matrix, cat.poi_matrix)
    assert [c.id for c in back.all_creatives()] == [c.id for c in cat.all_creatives()]
