"""Small hand-built allocation instances shared by the auction and acceptance tests."""

import itertools
from types import SimpleNamespace

import numpy as np

from genad.auction import AllocationPolicy, RequestItems, trace_sequence
from genad.generator import Generator, GeneratorConfig


def toy_instance(seed, W=4, C=2, K=2, n_ads=3, n_org=2, max_creatives=2, d_model=8):
    """Random generator, context and item set with distinct POI tokens."""
    rng = np.random.default_rng(seed)
    gen = Generator(GeneratorConfig(C=C, W=W, K=K, B=3, d_model=d_model, n_heads=2, d_ff=16, L=1),
                    seed)
    # a larger head scale makes the token logits far from uniform
    for head in gen.poi_heads + gen.img_heads:
        head.weight.data *= 40.0
    policy = AllocationPolicy(gen, seed)
    n = n_ads + n_org
    all_codes = np.array(list(itertools.product(range(W), repeat=C)))
    codes = all_codes[rng.choice(len(all_codes), size=n, replace=False)]
    n_cr = rng.integers(1, max_creatives + 1, size=n)
    cr_item = np.repeat(np.arange(n), n_cr)
    cr_codes = np.concatenate([all_codes[rng.choice(len(all_codes), size=k, replace=False)]
                               for k in n_cr])
    bids = np.concatenate([rng.uniform(0.5, 5.0, n_ads), np.zeros(n_org)])
    items = RequestItems(SimpleNamespace(K=K), np.arange(n), bids, np.arange(n) < n_ads, codes,
                         np.arange(len(cr_item)), cr_item, cr_codes, n_ads)
    hist = rng.integers(W, size=(1, 3, 2, C))
    ctx = gen.encode(hist, np.ones((1, 3), dtype=bool))
    return policy, items, ctx


def feasible_sequences(items, K):
    """Every ``(items, creatives)`` list a beam could emit: organics in pre-rank order."""
    n = len(items.poi_ids)
    for seq in itertools.permutations(range(n), K):
        orgs = [i for i in seq if not items.is_ad[i]]
        if orgs != list(range(items.n_ads, items.n_ads + len(orgs))):
            continue
        options = [items.cr_ids[items.cr_item == i] for i in seq]
        for crs in itertools.product(*options):
            yield seq, crs


def enumerate_best(policy, items, ctx, cfg, K):
    """Exhaustive argmax of cumulative ``log z`` (POI and creative layers)."""
    best = None
    for seq, crs in feasible_sequences(items, K):
        tr = trace_sequence(policy, items, ctx, np.array(seq), np.array(crs), cfg)
        s = tr.poi_log_z.sum() + tr.img_log_z.sum()
        if best is None or s > best[0]:
            best = (s, tuple(seq), tuple(int(c) for c in crs))
    return best
