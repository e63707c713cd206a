"""Synthetic LBS marketplace: clustered catalog, users, requests, click oracle.

Everything here is a pure function of ``(seed, config)``: per-request
generators derive their stream from ``SeedSequence([base_seed, index])``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

BID_FLOOR = 0.5
BID_CAP = 5.0
BID_SIGMA = 0.5
DECAY_EXPONENT = 0.6
CENTER_RADIUS = 4.0
HISTORY_TEMPERATURE = 0.5
CANDIDATE_TEMPERATURE = 2.0


class ConfigError(ValueError):
    pass


@dataclass
class Creative:
    id: int
    e_img: np.ndarray
    quality: float


@dataclass
class Poi:
    id: int
    e_poi: np.ndarray
    creatives: list[Creative]
    cluster: int = 0
    gmv: float = 1.0


@dataclass
class Catalog:
    pois: list[Poi]
    centers: np.ndarray

    @property
    def poi_matrix(self) -> np.ndarray:
        return np.stack([p.e_poi for p in self.pois])

    def creative(self, creative_id: int) -> Creative:
        return self._creatives()[creative_id][1]

    def poi_of_creative(self, creative_id: int) -> int:
        return self._creatives()[creative_id][0]

    def _creatives(self) -> dict[int, tuple[int, Creative]]:
        cache = getattr(self, "_by_id", None)
        if cache is None:
            cache = {c.id: (p.id, c) for p in self.pois for c in p.creatives}
            self._by_id = cache
        return cache

    def all_creatives(self) -> list[Creative]:
        return [c for p in self.pois for c in p.creatives]


@dataclass
class AdCandidate:
    poi_id: int
    creative_ids: list[int]
    value: float
    bid: float


@dataclass
class OrganicItem:
    poi_id: int
    pre_rank: int
    bid: float = field(default=0.0, init=False)


@dataclass
class Request:
    user_id: int
    history: list[tuple[int, int]]
    ads: list[AdCandidate]
    organics: list[OrganicItem]
    K: int

    def with_bids(self, bids) -> Request:
        ads = [AdCandidate(a.poi_id, list(a.creative_ids), a.value, float(b))
               for a, b in zip(self.ads, bids)]
        return Request(self.user_id, list(self.history), ads, list(self.organics), self.K)


# -- catalog -------------------------------------------------------------------

def gen_catalog(seed: int, n_poi: int, n_creatives_per_poi: int, d_poi: int, d_img: int,
                n_clusters: int) -> Catalog:
    """POIs drawn from unit-variance Gaussians around centers on a radius-4 sphere."""
    if min(n_poi, n_creatives_per_poi, d_poi, d_img, n_clusters) < 1:
        raise ConfigError("catalog sizes must all be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    dirs = rng.normal(size=(n_clusters, d_poi))
    centers = CENTER_RADIUS * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    proj = np.eye(d_poi, d_img) if d_img == d_poi else rng.normal(size=(d_poi, d_img)) / np.sqrt(d_poi)
    pois = []
    cid = 0
    for i in range(n_poi):
        cluster = int(rng.integers(n_clusters))
        e_poi = centers[cluster] + rng.normal(size=d_poi)
        gmv = float(np.clip(np.exp(rng.normal(0.0, BID_SIGMA)), BID_FLOOR, BID_CAP))
        creatives = []
        for _ in range(n_creatives_per_poi):
            e_img = e_poi @ proj + 0.5 * rng.normal(size=d_img)
            creatives.append(Creative(cid, e_img, float(rng.uniform())))
            cid += 1
        pois.append(Poi(i, e_poi, creatives, cluster, gmv))
    return Catalog(pois, centers)


# -- click oracle ---------------------------------------------------------------

@dataclass
class ClickOracle:
    """Ground-truth click/conversion model behind every label in the lab."""

    users: np.ndarray                 # [n_users, d_poi] latent preference vectors
    preferred: np.ndarray             # [n_users] preferred cluster
    ctr_weights: np.ndarray           # [d_poi, d_poi] logistic weight matrix
    cvr_weights: np.ndarray           # [d_poi, d_poi]
    img_weights: np.ndarray           # [d_poi, d_img] user/creative affinity
    ctr_bias: float = -2.5
    img_bias: float = -2.5
    cvr_bias: float = -1.5
    quality_weight: float = 1.0
    img_quality_weight: float = 2.0
    decay_exponent: float = DECAY_EXPONENT

    def decay(self, slot) -> np.ndarray:
        return np.asarray(slot, dtype=np.float64) ** -self.decay_exponent

    def ctr_logit(self, user: int, e_poi: np.ndarray, quality) -> np.ndarray:
        return (self.ctr_bias + e_poi @ self.ctr_weights.T @ self.users[user]
                + self.quality_weight * (np.asarray(quality) - 0.5))

    def true_ctr(self, user: int, e_poi, quality, slot) -> np.ndarray:
        """POI click probability ``sigmoid(affinity + quality) * slot^-0.6``."""
        return _sigmoid(self.ctr_logit(user, np.asarray(e_poi), quality)) * self.decay(slot)

    def true_img_ctr(self, user: int, e_poi, e_img, quality, slot) -> np.ndarray:
        logit = (self.img_bias + np.asarray(e_poi) @ self.ctr_weights.T @ self.users[user]
                 + np.asarray(e_img) @ self.img_weights.T @ self.users[user]
                 + self.img_quality_weight * (np.asarray(quality) - 0.5))
        return _sigmoid(logit) * self.decay(slot)

    def true_cvr(self, user: int, e_poi) -> np.ndarray:
        return _sigmoid(self.cvr_bias + np.asarray(e_poi) @ self.cvr_weights.T @ self.users[user])


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gen_oracle(seed: int, catalog: Catalog, n_users: int, affinity: float = 0.6) -> ClickOracle:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    d = catalog.centers.shape[1]
    d_img = catalog.pois[0].creatives[0].e_img.shape[0]
    preferred = rng.integers(catalog.centers.shape[0], size=n_users)
    dirs = catalog.centers[preferred] / CENTER_RADIUS
    users = affinity * (dirs + 0.3 * rng.normal(size=(n_users, d)) / np.sqrt(d))
    return ClickOracle(
        users=users,
        preferred=preferred,
        ctr_weights=np.eye(d),
        cvr_weights=0.5 * (np.eye(d) + 0.3 * rng.normal(size=(d, d)) / np.sqrt(d)),
        img_weights=0.5 * rng.normal(size=(d, d_img)) / np.sqrt(d_img),
    )


@dataclass
class World:
    catalog: Catalog
    oracle: ClickOracle


def gen_world(seed: int, n_poi: int, n_creatives_per_poi: int, d_poi: int, d_img: int,
              n_clusters: int, n_users: int) -> World:
    catalog = gen_catalog(seed, n_poi, n_creatives_per_poi, d_poi, d_img, n_clusters)
    return World(catalog, gen_oracle(seed, catalog, n_users))


# -- requests --------------------------------------------------------------------

def true_ctr(world: World, user: int, poi_id: int, creative_id: int, slot) -> float:
    poi = world.catalog.pois[poi_id]
    quality = world.catalog.creative(creative_id).quality
    return float(world.oracle.true_ctr(user, poi.e_poi, quality, slot))


def _poi_logits(world: World, user: int) -> np.ndarray:
    cat = world.catalog
    quality = np.array([max(c.quality for c in p.creatives) for p in cat.pois])
    return world.oracle.ctr_logit(user, cat.poi_matrix, quality)


def best_creative(world: World, user: int, poi_id: int) -> int:
    """Creative of ``poi_id`` with the highest true image CTR for ``user``."""
    poi = world.catalog.pois[poi_id]
    e_img = np.stack([c.e_img for c in poi.creatives])
    q = np.array([c.quality for c in poi.creatives])
    scores = world.oracle.true_img_ctr(user, poi.e_poi, e_img, q, 1)
    return poi.creatives[int(np.argmax(scores))].id


def gen_request(seed: int, world: World, B: int, N: int, M: int, K: int,
                index: int = 0) -> Request:
    """One page-view request with ``N`` ads, ``M`` pre-ranked organics and ``K`` slots."""
    if N + M < K:
        raise ConfigError(f"N + M = {N + M} < K = {K}")
    cat = world.catalog
    n_poi = len(cat.pois)
    if N + M > n_poi:
        raise ConfigError(f"N + M = {N + M} exceeds catalog size {n_poi}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2, index]))
    user = int(rng.integers(world.oracle.users.shape[0]))
    logits = _poi_logits(world, user)

    hist_p = _softmax(logits / HISTORY_TEMPERATURE)
    hist_pois = rng.choice(n_poi, size=B, p=hist_p)
    history = []
    for pid in hist_pois:
        poi = cat.pois[int(pid)]
        e_img = np.stack([c.e_img for c in poi.creatives])
        q = np.array([c.quality for c in poi.creatives])
        ctr = world.oracle.true_img_ctr(user, poi.e_poi, e_img, q, 1)
        c = rng.choice(len(poi.creatives), p=ctr / ctr.sum())
        history.append((int(pid), poi.creatives[int(c)].id))

    cand_p = _softmax(logits / CANDIDATE_TEMPERATURE)
    cand = rng.choice(n_poi, size=N + M, replace=False, p=cand_p)
    bids = np.clip(np.exp(rng.normal(0.0, BID_SIGMA, size=N)), BID_FLOOR, BID_CAP)
    ads = [AdCandidate(int(pid), [c.id for c in cat.pois[int(pid)].creatives], float(b), float(b))
           for pid, b in zip(cand[:N], bids)]
    org_pois = [int(p) for p in cand[N:]]
    gmv_score = np.array([
        true_ctr(world, user, p, best_creative(world, user, p), 1) * cat.pois[p].gmv
        for p in org_pois
    ])
    order = np.argsort(-gmv_score, kind="stable")
    organics = [OrganicItem(org_pois[i], rank + 1) for rank, i in enumerate(order)]
    organics.sort(key=lambda o: o.pre_rank)
    return Request(user, history, ads, organics, K)


def gen_requests(seed: int, world: World, n: int, B: int, N: int, M: int, K: int,
                 start: int = 0) -> list[Request]:
    return [gen_request(seed, world, B, N, M, K, index=start + i) for i in range(n)]


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


# -- feedback --------------------------------------------------------------------

@dataclass
class Feedback:
    clicks: np.ndarray        # POI clicks per slot
    img_clicks: np.ndarray    # creative-image clicks per slot
    conversions: np.ndarray   # click-and-convert per slot


def slot_probabilities(world: World, user: int, slots: list[tuple[int, int]]):
    """True ``(ctr_poi, ctr_img, cvr)`` arrays for a displayed ``[(poi, creative)]`` list."""
    cat = world.catalog
    o = world.oracle
    ctr = np.empty(len(slots))
    ctr_img = np.empty(len(slots))
    cvr = np.empty(len(slots))
    for s, (pid, cid) in enumerate(slots):
        poi = cat.pois[pid]
        cr = cat.creative(cid)
        ctr[s] = o.true_ctr(user, poi.e_poi, cr.quality, s + 1)
        ctr_img[s] = o.true_img_ctr(user, poi.e_poi, cr.e_img, cr.quality, s + 1)
        cvr[s] = o.true_cvr(user, poi.e_poi)
    return ctr, ctr_img, cvr


def sample_feedback(seed: int, ctr: np.ndarray, ctr_img: np.ndarray, cvr: np.ndarray,
                    index: int = 0) -> Feedback:
    """Bernoulli clicks from the oracle; conversions only follow a POI click."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3, index]))
    u = rng.uniform(size=(3, len(ctr)))
    clicks = (u[0] < ctr).astype(np.float64)
    img = (u[1] < ctr_img).astype(np.float64)
    conv = clicks * (u[2] < cvr)
    return Feedback(clicks, img, conv)


def exposure_target(world: World, request: Request) -> list[tuple[int, int]]:
    """Oracle top-K exposure: candidates ranked by true CTR x (bid or GMV).

    Organics keep their pre-rank order among themselves.
    """
    user = request.user_id
    scored = []
    for a in request.ads:
        c = best_creative(world, user, a.poi_id)
        scored.append((true_ctr(world, user, a.poi_id, c, 1) * a.bid, a.poi_id, c, None))
    for o in request.organics:
        c = best_creative(world, user, o.poi_id)
        gmv = world.catalog.pois[o.poi_id].gmv
        scored.append((true_ctr(world, user, o.poi_id, c, 1) * gmv, o.poi_id, c, o.pre_rank))
    scored.sort(key=lambda t: -t[0])
    top = scored[:request.K]
    org_slots = [i for i, t in enumerate(top) if t[3] is not None]
    org_sorted = sorted((top[i] for i in org_slots), key=lambda t: t[3])
    for i, t in zip(org_slots, org_sorted):
        top[i] = t
    return [(pid, cid) for _, pid, cid, _ in top]


# -- line-delimited serialization ---------------------------------------------------

def _poi_record(p: Poi) -> dict:
    return {
        "id": p.id, "cluster": p.cluster, "gmv": p.gmv, "e_poi": p.e_poi.tolist(),
        "creatives": [{"id": c.id, "quality": c.quality, "e_img": c.e_img.tolist()}
                      for c in p.creatives],
    }


def write_catalog(path, catalog: Catalog) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"centers": catalog.centers.tolist()}) + "\n")
        for p in catalog.pois:
            fh.write(json.dumps(_poi_record(p)) + "\n")


def read_catalog(path) -> Catalog:
    lines = Path(path).read_text().splitlines()
    head = json.loads(lines[0])
    pois = []
    for line in lines[1:]:
        r = json.loads(line)
        creatives = [Creative(c["id"], np.array(c["e_img"]), c["quality"]) for c in r["creatives"]]
        pois.append(Poi(r["id"], np.array(r["e_poi"]), creatives, r["cluster"], r["gmv"]))
    return Catalog(pois, np.array(head["centers"]))


def request_record(r: Request) -> dict:
    return {
        "user_id": r.user_id,
        "K": r.K,
        "history": [list(h) for h in r.history],
        "ads": [asdict(a) for a in r.ads],
        "organics": [{"poi_id": o.poi_id, "pre_rank": o.pre_rank} for o in r.organics],
    }


def write_requests(path, requests: list[Request]) -> None:
    with open(path, "w") as fh:
        for r in requests:
            fh.write(json.dumps(request_record(r)) + "\n")


def read_requests(path) -> list[Request]:
    out = []
    for line in Path(path).read_text().splitlines():
        r = json.loads(line)
        ads = [AdCandidate(a["poi_id"], a["creative_ids"], a["value"], a["bid"]) for a in r["ads"]]
        organics = [OrganicItem(o["poi_id"], o["pre_rank"]) for o in r["organics"]]
        out.append(Request(r["user_id"], [tuple(h) for h in r["history"]], ads, organics, r["K"]))
    return out
