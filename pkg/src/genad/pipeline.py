"""The multi-phase experiment: data, tokenizers, pre-training, RM, allocation, payment, evaluation.

Every phase is a pure function of the config (and the phases before it), so
two runs with one seed write byte-identical checkpoints.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import marketplace as mp
from .auction import (AllocationPolicy, AuctionConfig, PGTrainer, allocate, gsp_allocation,
                      mean_winner_revenue)
from .checkpoint import RunManifest, load_component, save_component
from .config import ExperimentConfig, stage_hash
from .evaluation import MetricsReport, ProbeSession, ctr, ic_probe, rpm, to_csv
from .generator import Generator, GeneratorConfig, Pretrainer, history_arrays, target_arrays
from .numkit import no_grad
from .payment import (PaymentNet, PaymentTrainer, build_scenario, gsp_payment, misreport_z,
                      payment_forward, payment_inputs)
from .reward import ItemTable, RewardModel, logged_lists, train_rm
from .tokenizer import RQVAE, build_index, train_rqvae

log = logging.getLogger("genad")

VARIANTS = ["EGA-V2", "EGA-mtp", "EGA-end", "EGA-bid", "EGA-gsp", "GSP-only"]


# -- data -------------------------------------------------------------------------------------

def build_world(cfg: ExperimentConfig) -> mp.World:
    return mp.gen_world(cfg.seed, cfg.n_poi, cfg.n_creatives, cfg.d_poi, cfg.d_img, cfg.n_clusters,
                        cfg.n_users)


def train_requests(cfg, world):
    return mp.gen_requests(cfg.seed, world, cfg.n_train, cfg.B, cfg.N, cfg.M, cfg.K)


def test_requests(cfg, world):
    return mp.gen_requests(cfg.seed, world, cfg.n_test, cfg.B, cfg.N, cfg.M, cfg.K, start=cfg.n_train)


def rm_requests(cfg, world):
    return mp.gen_requests(cfg.seed, world, cfg.n_rm_lists, cfg.B, cfg.N, cfg.M, cfg.K,
                           start=cfg.n_train + cfg.n_test)


def gen_data(cfg: ExperimentConfig, out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    world = build_world(cfg)
    mp.write_catalog(out / "catalog.jsonl", world.catalog)
    mp.write_requests(out / "requests_train.jsonl", train_requests(cfg, world))
    mp.write_requests(out / "requests_test.jsonl", test_requests(cfg, world))
    return {"n_poi": len(world.catalog.pois), "n_train": cfg.n_train, "n_test": cfg.n_test}


# -- model construction ---------------------------------------------------------------------------

def generator_config(cfg: ExperimentConfig) -> GeneratorConfig:
    return GeneratorConfig(C=cfg.C, W=cfg.W, K=cfg.K, B=cfg.B, d_model=cfg.d_model,
                           n_heads=cfg.n_heads, d_ff=cfg.d_ff, L=cfg.L, mtp=cfg.ablation != "mtp",
                           mtp_shift=cfg.mtp_shift)


def auction_config(cfg: ExperimentConfig) -> AuctionConfig:
    return AuctionConfig(alpha=cfg.alpha, beta=cfg.beta, beam_width=cfg.beam_width,
                         agg="mean" if cfg.ablation == "bid" else "max", gmv_weight=cfg.gmv_weight,
                         lam_ux=cfg.lam_ux, marginal=cfg.marginal)


def fit_tokenizers(cfg, world):
    cat = world.catalog
    poi, plog = train_rqvae(cfg.seed, cat.poi_matrix, cfg.C, cfg.W, cfg.tok_epochs, cfg.lr,
                            cfg.batch_size)
    img, ilog = train_rqvae(cfg.seed + 1, np.stack([c.e_img for c in cat.all_creatives()]), cfg.C,
                            cfg.W, cfg.tok_epochs, cfg.lr, cfg.batch_size)
    return poi, img, plog, ilog


def pretrain_arrays(cfg, world, tokens, requests):
    hist, valid = history_arrays(requests, tokens, cfg.B)
    targets = target_arrays([mp.exposure_target(world, r) for r in requests], tokens)
    return hist, valid, targets


def fit_generator(cfg, world, tokens, requests, epochs=None):
    gen = Generator(generator_config(cfg), cfg.seed)
    hist, valid, targets = pretrain_arrays(cfg, world, tokens, requests)
    trainer = Pretrainer(gen, cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 21]))
    history = []
    for _ in range(cfg.pretrain_epochs if epochs is None else epochs):
        perm = rng.permutation(len(requests))
        for s in range(0, len(perm), cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            st = trainer.step(hist[idx], valid[idx], targets[idx])
        history.append({"l_ntp": st.l_ntp, "l_mtp": st.l_mtp, "l_pretrain": st.l_pretrain})
    return gen, history


def fit_rm(cfg, world, table):
    data = logged_lists(cfg.seed, world, table, rm_requests(cfg, world))
    rm, history = train_rm(cfg.seed, data, cfg.K, cfg.rm_epochs, cfg.lr, cfg.batch_size,
                           d_model=cfg.rm_d_model, pooled=cfg.rm_pooled)
    return rm, history


def fit_alloc(cfg, lab: Lab, steps=None):
    """Policy-gradient post-training; the single-stage variant also trains on the pre-training loss."""
    policy = AllocationPolicy(lab.gen, cfg.seed)
    acfg = auction_config(cfg)
    full = cfg.ablation == "end"
    trainer = PGTrainer(policy, lab.rm, lab.table, lab.tokens, acfg, cfg.lr, full=full)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 41]))
    if full:
        hist, valid, targets = pretrain_arrays(cfg, lab.world, lab.tokens, lab.train)
    history = []
    for step in range(cfg.pg_steps if steps is None else steps):
        idx = rng.choice(len(lab.train), size=cfg.pg_batch, replace=False)
        batch = None
        if full:
            pidx = rng.choice(len(lab.train), size=min(cfg.batch_size, len(lab.train)), replace=False)
            batch = (hist[pidx], valid[pidx], targets[pidx])
        st = trainer.step([lab.train[i] for i in idx], batch)
        if step % 100 == 0:
            history.append({"step": step, "loss": st.loss, "revenue": st.mean_revenue})
    return policy, history


# -- lab --------------------------------------------------------------------------------------------

@dataclass
class Lab:
    """Everything one configuration produces, loaded lazily from a run directory."""

    cfg: ExperimentConfig
    world: mp.World
    train: list
    test: list
    tokens: object = None
    poi_tok: RQVAE = None
    img_tok: RQVAE = None
    table: ItemTable = None
    gen: Generator = None
    rm: RewardModel = None
    policy: AllocationPolicy = None
    pay_net: PaymentNet | None = None
    lam: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, cfg) -> Lab:
        world = build_world(cfg)
        return cls(cfg, world, train_requests(cfg, world), test_requests(cfg, world))

    def set_tokenizers(self, poi, img):
        self.poi_tok, self.img_tok = poi, img
        self.tokens = build_index(self.world.catalog, poi, img)
        self.table = ItemTable(self.world.catalog, self.tokens, poi, img)

    @property
    def acfg(self) -> AuctionConfig:
        return auction_config(self.cfg)


# -- payment scenario --------------------------------------------------------------------------------

def session_tuple(lab: Lab, outcome):
    req = outcome.items.request
    rep = lab.table.item_repr([p for p, _ in outcome.slots], req.K)
    return (rep, outcome.bids, outcome.is_ad, outcome.z, outcome.pctr_poi, outcome.trace, lab.acfg)


def realloc_callback(lab: Lab, outcomes):
    """Re-run the whole allocation under a single-ad misreport (expensive)."""

    def cb(i, slot, report):
        out = outcomes[i]
        items = out.items
        item = int(out.seq_items[slot])
        bids = items.bids[:items.n_ads].copy()
        bids[item] = report
        alt = allocate(lab.policy, lab.rm, lab.table, lab.tokens, items.request, lab.acfg,
                       items=items.with_bids(bids))
        where = np.flatnonzero(alt.seq_items == item)
        if where.size == 0:
            return None, 0.0
        s = int(where[0])
        rep = lab.table.item_repr([p for p, _ in alt.slots], items.request.K)
        row = payment_inputs(rep, alt.bids, alt.z, alt.pctr_poi)[s]
        return row, float(alt.pctr_poi[s])

    return cb


def payment_scenario(lab: Lab, requests, n_v=None, gammas=None):
    cfg = lab.cfg
    outcomes = [allocate(lab.policy, lab.rm, lab.table, lab.tokens, r, lab.acfg) for r in requests]
    realloc = realloc_callback(lab, outcomes) if cfg.regret_mode == "realloc" else None
    sc = build_scenario([session_tuple(lab, o) for o in outcomes], cfg.seed,
                        n_v=cfg.n_v if n_v is None else n_v,
                        gammas=np.asarray(cfg.gammas if gammas is None else gammas),
                        n_random=cfg.n_random_misreports, realloc=realloc)
    return sc, outcomes


def payment_dim(lab: Lab) -> int:
    return 2 * lab.table.d_poi + lab.cfg.K + (lab.cfg.K - 1) + 1


def fit_payment(cfg, lab: Lab, rounds=None):
    sc, _ = payment_scenario(lab, lab.train[:cfg.pay_sessions])
    net = PaymentNet(payment_dim(lab), cfg.seed)
    trainer = PaymentTrainer(net, sc, cfg.lr, rho=cfg.rho, lam_init=cfg.lambda_init,
                             batch_size=cfg.batch_size, steps_per_round=cfg.pay_steps_per_round,
                             seed=cfg.seed)
    history = [{"round": 0, "regret": trainer.mean_regret()}]
    for k in range(cfg.pay_rounds if rounds is None else rounds):
        r = trainer.round()
        history.append({"round": k + 1, "regret": r.mean_regret, "revenue": r.revenue,
                        "lambda": r.lam_mean})
    return net, trainer.lam, history


# -- mechanisms for evaluation -------------------------------------------------------------------------

def slot_payments(lab: Lab, outcome, bids_slots=None, z=None) -> np.ndarray:
    """Per-slot payments of an outcome under the variant's payment rule."""
    bids_slots = outcome.bids if bids_slots is None else bids_slots
    if lab.pay_net is None:
        pay = np.zeros(len(bids_slots))
        ads = outcome.is_ad
        pay[ads] = gsp_payment(bids_slots[ads], outcome.pctr_poi[ads])
        return pay
    z = outcome.z if z is None else z
    rep = lab.table.item_repr([p for p, _ in outcome.slots], len(outcome.slots))
    _, pay = payment_forward(lab.pay_net, payment_inputs(rep, bids_slots, z, outcome.pctr_poi),
                             bids_slots, outcome.is_ad)
    return pay


def fixed_alloc_mechanism(lab: Lab, outcome):
    """Bids over the request's ads -> (pCTR, payment) with the displayed list held fixed."""
    n_ads = outcome.items.n_ads
    slots_of = {int(i): s for s, i in enumerate(outcome.seq_items) if outcome.is_ad[s]}

    def mech(ad_bids):
        bids_slots = outcome.bids.copy()
        z = outcome.z.copy()
        for item, s in slots_of.items():
            if ad_bids[item] != outcome.bids[s]:
                bids_slots[s] = ad_bids[item]
                if outcome.trace is not None:
                    z[s] = misreport_z(outcome.trace, s, [ad_bids[item]], lab.acfg)[0]
        pay = slot_payments(lab, outcome, bids_slots, z)
        pctr = np.zeros(n_ads)
        out = np.zeros(n_ads)
        for item, s in slots_of.items():
            pctr[item] = outcome.pctr_poi[s]
            out[item] = pay[s]
        return pctr, out

    return mech


def realloc_mechanism(lab: Lab, outcome):
    items = outcome.items

    def mech(ad_bids):
        alt = allocate(lab.policy, lab.rm, lab.table, lab.tokens, items.request, lab.acfg,
                       items=items.with_bids(ad_bids))
        pay = slot_payments(lab, alt)
        pctr = np.zeros(items.n_ads)
        out = np.zeros(items.n_ads)
        for s, i in enumerate(alt.seq_items):
            if alt.is_ad[s]:
                pctr[i] = alt.pctr_poi[s]
                out[i] = pay[s]
        return pctr, out

    return mech


def outcomes_for(lab: Lab, requests, gsp_only=False):
    if gsp_only:
        return [gsp_allocation(lab.rm, lab.table, lab.tokens, r, lab.acfg) for r in requests]
    return [allocate(lab.policy, lab.rm, lab.table, lab.tokens, r, lab.acfg) for r in requests]


def psi(lab: Lab, outcomes, mode=None) -> float:
    mode = mode or lab.cfg.regret_mode
    make = fixed_alloc_mechanism if mode == "fixed-alloc" else realloc_mechanism
    sessions = [ProbeSession(make(lab, o), o.items.bids[:o.items.n_ads]) for o in outcomes]
    return ic_probe(sessions, gammas=np.asarray(lab.cfg.gammas)).psi


def evaluate_lab(lab: Lab, variant: str, requests=None) -> list[MetricsReport]:
    requests = lab.test if requests is None else requests
    outcomes = outcomes_for(lab, requests, gsp_only=variant == "GSP-only")
    clicks, img_clicks, pays, pctr, pctr_img, ads = [], [], [], [], [], []
    for i, o in enumerate(outcomes):
        p_click, p_img, p_cvr = mp.slot_probabilities(lab.world, o.items.request.user_id, o.slots)
        fb = mp.sample_feedback(lab.cfg.seed, p_click, p_img, p_cvr, index=lab.cfg.n_train + i)
        clicks.append(fb.clicks)
        img_clicks.append(fb.img_clicks)
        pays.append(slot_payments(lab, o))
        pctr.append(o.pctr_poi)
        pctr_img.append(o.pctr_img)
        ads.append(o.is_ad)
    clicks, img_clicks, pays = np.concatenate(clicks), np.concatenate(img_clicks), np.concatenate(pays)
    pctr, pctr_img = np.concatenate(pctr), np.concatenate(pctr_img)
    ad_ratio = float(np.concatenate(ads).mean())
    psi_v = psi(lab, outcomes)
    n = len(requests)
    seed = lab.cfg.seed
    return [
        MetricsReport(variant, "simulator", rpm(clicks, pays), ctr(clicks),
                      ctr(img_clicks), psi_v, ad_ratio, n, seed),
        MetricsReport(variant, "offline", rpm(pctr, pays), ctr(pctr), ctr(pctr_img),
                      psi_v, ad_ratio, n, seed),
    ]


# -- checkpoint (de)serialization ---------------------------------------------------------------------

def _tok_arrays(poi: RQVAE, img: RQVAE) -> dict:
    out = {}
    for name, m in (("poi", poi), ("img", img)):
        for k, v in m.state_dict().items():
            out[f"{name}.{k}"] = v
        out[f"{name}.codebooks"] = m.codebooks
    return out


def _tok_from_arrays(arrays: dict, cfg) -> tuple[RQVAE, RQVAE]:
    models = []
    for name in ("poi", "img"):
        cb = arrays[f"{name}.codebooks"]
        m = RQVAE(cb.shape[2], cb.shape[0], cb.shape[1], np.random.default_rng(0))
        m.load_state_dict({k[len(name) + 1:]: v for k, v in arrays.items()
                           if k.startswith(name + ".") and k != f"{name}.codebooks"})
        m.codebooks = cb
        models.append(m)
    return models[0], models[1]


class Run:
    """A run directory: phase functions that load their inputs and save their outputs."""

    def __init__(self, cfg: ExperimentConfig, root):
        self.cfg = cfg
        self.root = Path(root)
        self.manifest = RunManifest(self.root)
        self.hashes = {p: stage_hash(cfg, s) for p, s in
                       zip(["tokenizer", "pretrain", "rm", "alloc", "pay"],
                           ["tokenizer", "pretrain", "rm", "alloc", "pay"])}
        self._lab: Lab | None = None

    @property
    def lab(self) -> Lab:
        if self._lab is None:
            self._lab = Lab.fresh(self.cfg)
        return self._lab

    def _save(self, phase, arrays, meta):
        save_component(self.root, phase, self.hashes[phase], arrays, meta)

    def _load(self, phase, meta=None):
        return load_component(self.root, phase, self.hashes[phase], meta)

    # loading -----------------------------------------------------------------------------
    def load_tokenizers(self):
        arrays, _ = self._load("tokenizer", {"C": self.cfg.C, "W": self.cfg.W})
        self.lab.set_tokenizers(*_tok_from_arrays(arrays, self.cfg))

    def load_generator(self):
        arrays, _ = self._load("pretrain")
        gen = Generator(generator_config(self.cfg), self.cfg.seed)
        gen.load_state_dict(arrays)
        self.lab.gen = gen

    def load_rm(self):
        arrays, meta = self._load("rm")
        rm = RewardModel(int(meta["d_in"]), self.cfg.K, self.cfg.seed, d_model=self.cfg.rm_d_model,
                         pooled=self.cfg.rm_pooled)
        rm.load_state_dict(arrays)
        self.lab.rm = rm

    def load_policy(self):
        arrays, _ = self._load("alloc")
        pol = AllocationPolicy(self.lab.gen, self.cfg.seed)
        pol.load_state_dict(arrays)
        self.lab.policy = pol

    def load_payment(self):
        arrays, meta = self._load("pay")
        if meta.get("rule") == "gsp":
            self.lab.pay_net, self.lab.lam = None, None
            return
        net = PaymentNet(int(meta["d_in"]), self.cfg.seed)
        lam = arrays.pop("lambda")
        net.load_state_dict(arrays)
        self.lab.pay_net, self.lab.lam = net, lam

    def load_through(self, phase: str):
        steps = [("tokenizer", self.load_tokenizers), ("pretrain", self.load_generator),
                 ("rm", self.load_rm), ("alloc", self.load_policy), ("pay", self.load_payment)]
        for name, fn in steps:
            fn()
            if name == phase:
                return self.lab

    # phases -----------------------------------------------------------------------------------
    def train_tokenizer(self):
        poi, img, plog, ilog = fit_tokenizers(self.cfg, self.lab.world)
        self.lab.set_tokenizers(poi, img)
        self._save("tokenizer", _tok_arrays(poi, img),
                   {"C": self.cfg.C, "W": poi.W, "W_img": img.W, "d_code": poi.codebooks.shape[2]})
        self.manifest.mark("tokenizer", self.hashes["tokenizer"])
        self.manifest.append_metrics("tokenizer", [
            {"epoch": e, "poi_loss": a, "img_loss": b}
            for e, (a, b) in enumerate(zip(plog.epoch_loss, ilog.epoch_loss))])

    def pretrain(self, epochs=None):
        self.manifest.require("pretrain", self.hashes)
        self.load_tokenizers()
        if self.cfg.ablation == "end":
            epochs = 0          # single-stage variant: pre-training loss joins the PG phase
        gen, history = fit_generator(self.cfg, self.lab.world, self.lab.tokens, self.lab.train, epochs)
        self.lab.gen = gen
        self._save("pretrain", gen.state_dict(), {"C": self.cfg.C, "W": self.cfg.W, "K": self.cfg.K})
        self.manifest.mark("pretrain", self.hashes["pretrain"])
        self.manifest.append_metrics("pretrain", history)

    def train_rm(self):
        self.manifest.require("rm", self.hashes)
        self.load_through("pretrain")
        rm, history = fit_rm(self.cfg, self.lab.world, self.lab.table)
        self.lab.rm = rm
        self._save("rm", rm.state_dict(), {"d_in": self.lab.table.feature_dim(self.cfg.K)})
        self.manifest.mark("rm", self.hashes["rm"])
        self.manifest.append_metrics("rm", [{"epoch": e, "loss": v} for e, v in enumerate(history)])

    def train_alloc(self, steps=None):
        self.manifest.require("alloc", self.hashes)
        self.load_through("rm")
        policy, history = fit_alloc(self.cfg, self.lab, steps)
        self.lab.policy = policy
        self._save("alloc", policy.state_dict(), {"trainable": "all" if self.cfg.ablation == "end"
                                                   else "adapters"})
        self.manifest.mark("alloc", self.hashes["alloc"])
        self.manifest.append_metrics("alloc", history)

    def train_pay(self, rounds=None):
        self.manifest.require("pay", self.hashes)
        self.load_through("alloc")
        if self.cfg.ablation == "gsp":
            self.lab.pay_net = None
            self._save("pay", {}, {"rule": "gsp"})
            history = []
        else:
            net, lam, history = fit_payment(self.cfg, self.lab, rounds)
            self.lab.pay_net, self.lab.lam = net, lam
            self._save("pay", {**net.state_dict(), "lambda": lam},
                       {"rule": "net", "d_in": payment_dim(self.lab)})
        self.manifest.mark("pay", self.hashes["pay"])
        self.manifest.append_metrics("pay", history)

    def complete(self) -> bool:
        return self.manifest.done("pay", self.hashes["pay"])


def run_pipeline(cfg: ExperimentConfig, root, pg_steps=None, pay_rounds=None) -> Run:
    run = Run(cfg, root)
    run.train_tokenizer()
    run.pretrain()
    run.train_rm()
    run.train_alloc(pg_steps)
    run.train_pay(pay_rounds)
    return run


def evaluate_runs(runs: dict, reference: str = "EGA-V2", requests=None) -> str:
    """CSV over variants; ``runs`` maps variant name to a completed :class:`Run`.

    ``GSP-only`` reuses any completed run's tokenizers and RM.
    """
    reports = []
    for variant, run in runs.items():
        if not run.complete():
            raise mp.ConfigError(f"variant {variant}: run directory {run.root} has no trained payment phase")
        lab = run.load_through("pay")
        if variant == "GSP-only":
            lab.pay_net = None
        reports += evaluate_lab(lab, variant, requests)
    ref = reference if reference in runs else next(iter(runs))
    return to_csv(reports, ref)


def auction_summary(lab: Lab, request) -> dict:
    out = allocate(lab.policy, lab.rm, lab.table, lab.tokens, request, lab.acfg)
    pay = slot_payments(lab, out)
    return {"slots": [{"poi": p, "creative": c, "ad": bool(a), "bid": float(b), "z": float(z),
                       "pctr": float(q), "payment": float(x)}
                      for (p, c), a, b, z, q, x in zip(out.slots, out.is_ad, out.bids, out.z,
                                                       out.pctr_poi, pay)],
            "reward": out.reward}


def sweep(lab: Lab, param: str, values, requests=None) -> str:
    """Allocation-curve data: ad ratio and estimated revenue for each ``alpha``/``beta`` value."""
    if param not in ("alpha", "beta"):
        raise ValueError("sweep param must be alpha or beta")
    requests = lab.test if requests is None else requests
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "value", "ad_ratio", "mean_revenue", "mean_reward", "ctr_poi_offline"])
    base = lab.cfg
    for v in values:
        lab.cfg = base.replace(**{param: float(v)})
        outs = outcomes_for(lab, requests)
        w.writerow([param, f"{float(v):g}", f"{np.mean([o.is_ad.mean() for o in outs]):.6f}",
                    f"{np.mean([o.revenue_estimate for o in outs]):.6f}",
                    f"{np.mean([o.reward for o in outs]):.6f}",
                    f"{np.mean([o.pctr_poi.mean() for o in outs]):.6f}"])
    lab.cfg = base
    return buf.getvalue()


def winner_revenue(lab: Lab, policy, requests) -> float:
    with no_grad():
        return mean_winner_revenue(policy, lab.rm, lab.table, lab.tokens, requests, lab.acfg)
