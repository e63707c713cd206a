"""POI-level payment network, empirical ex-post regret and the Lagrangian trainer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .numkit import Adam, no_grad, ops
from .numkit.nn import MLP, Module
from .numkit.tensor import Tensor

GAMMAS = 0.2 * np.arange(1, 11)
N_RANDOM_MISREPORTS = 5
VALUATION_SIGMA = 0.25
HIDDEN = (128, 32, 10)


# -- network -------------------------------------------------------------------------

class PaymentNet(Module):
    """``p_hat = sigmoid(MLP(item repr ; others' bids ; z * theta))`` per slot."""

    def __init__(self, d_in: int, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 50]))
        self.mlp = MLP([d_in, *HIDDEN, 1], rng, act="relu")
        self._d_in = d_in

    @property
    def d_in(self) -> int:
        return self._d_in

    def rates(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        if x.shape[-1] != self._d_in:
            raise ValueError(f"payment input width {x.shape[-1]} != {self._d_in}")
        out = self.mlp(x)
        return ops.sigmoid(out.reshape(*out.shape[:-1]))


def others_bids(bids) -> np.ndarray:
    """Row ``i``: the other slots' bids sorted descending (organics contribute 0)."""
    bids = np.asarray(bids, dtype=np.float64)
    K = len(bids)
    mask = ~np.eye(K, dtype=bool)
    rows = np.broadcast_to(bids, (K, K))[mask].reshape(K, K - 1)
    return -np.sort(-rows, axis=1)


def payment_inputs(item_repr, bids, z, theta) -> np.ndarray:
    """``[K, f]`` rows ``[item repr ; others' bids ; z * theta]``."""
    return np.concatenate([item_repr, others_bids(bids), (np.asarray(z) * np.asarray(theta))[:, None]],
                          axis=1)


def payment_forward(net: PaymentNet, inputs, bids, is_ad) -> tuple[np.ndarray, np.ndarray]:
    """Rates and payments ``p = p_hat * b``; organic slots pay exactly 0."""
    bids = np.asarray(bids, dtype=np.float64)
    is_ad = np.asarray(is_ad, dtype=bool)
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[:-1] != bids.shape or bids.shape != is_ad.shape:
        raise ValueError(f"inputs {inputs.shape}, bids {bids.shape}, is_ad {is_ad.shape} disagree")
    with no_grad():
        rates = net.rates(inputs).data
    rates = np.where(is_ad, rates, 0.0)
    return rates, rates * bids


def gsp_payment(bids, pctr) -> np.ndarray:
    """Generalized second price for ads given in any order (payments in input order).

    Ads are ranked by ``b * pctr`` (ties keep input order); each pays the next
    score over its own pCTR, clamped to ``[0, b]``; the last pays 0.
    """
    bids = np.asarray(bids, dtype=np.float64)
    pctr = np.asarray(pctr, dtype=np.float64)
    order = np.argsort(-(bids * pctr), kind="stable")
    out = np.zeros(len(bids))
    out[order] = kernels.gsp_prices(np.ascontiguousarray(bids[order]), np.ascontiguousarray(pctr[order]))
    return out


def multiplier_update(lam, rho: float, rgt) -> np.ndarray:
    """``lambda <- max(0, lambda + rho * rgt)``."""
    return np.maximum(0.0, np.asarray(lam, dtype=np.float64) + rho * np.asarray(rgt, dtype=np.float64))


# -- generic empirical regret ------------------------------------------------------------

def misreport_grid(value: float, rng: np.random.Generator | None, gammas=GAMMAS,
                   n_random: int = N_RANDOM_MISREPORTS) -> np.ndarray:
    """Truthful report first, then ``gamma * v``, then uniform points in ``(0, 2v]``."""
    pts = [np.array([value]), np.asarray(gammas) * value]
    if n_random and rng is not None:
        pts.append((1.0 - rng.uniform(size=n_random)) * 2.0 * value)
    return np.concatenate(pts)


def sample_valuations(bid: float, n_v: int, rng: np.random.Generator) -> np.ndarray:
    """``v_j = b * exp(0.25 eps_j)``; the first sample is the bid itself."""
    v = bid * np.exp(VALUATION_SIGMA * rng.normal(size=n_v))
    v[0] = bid
    return v


def utility(value: float, pctr: float, payment: float) -> float:
    """``(v - p) * pctr`` (0 when not allocated, i.e. ``pctr == 0``)."""
    return (value - payment) * pctr


def empirical_regret(mechanism, bids, ad: int, valuations, grid_fn) -> float:
    """Mean over valuations of the best utility gain from misreporting.

    ``mechanism(bids) -> (pctr, payments)`` per ad (pctr 0 if not shown);
    ``grid_fn(v)`` yields candidate reports (the truthful one is always added).
    """
    bids = np.array(bids, dtype=np.float64)
    gains = []
    for v in np.atleast_1d(valuations):
        b = bids.copy()
        b[ad] = v
        pctr, pay = mechanism(b)
        truthful = utility(v, pctr[ad], pay[ad])
        best = truthful
        for r in grid_fn(v):
            b[ad] = r
            pctr, pay = mechanism(b)
            best = max(best, utility(v, pctr[ad], pay[ad]))
        gains.append(best - truthful)
    return float(np.mean(gains))


# -- scenario for training -----------------------------------------------------------------

@dataclass
class PaymentScenario:
    """Frozen allocations plus every misreport row the regret term needs.

    Session arrays are ``[n, K, ...]``. Regret entries (one per displayed ad)
    carry ``[A, N_v, G]`` blocks whose ``[:, :, 0]`` column is the truthful report.
    """

    inputs: np.ndarray       # [n, K, f]
    bids: np.ndarray         # [n, K]
    is_ad: np.ndarray        # [n, K]
    theta: np.ndarray        # [n, K] RM pCTR of each slot
    entry_session: np.ndarray  # [A]
    values: np.ndarray       # [A, N_v]
    reports: np.ndarray      # [A, N_v, G]
    rows: np.ndarray         # [A, N_v, G, f] payment-net input under each report
    alloc_theta: np.ndarray  # [A, N_v, G] pCTR the ad receives under each report (0 if not shown)

    @property
    def n_sessions(self) -> int:
        return self.inputs.shape[0]

    def subset(self, sessions) -> PaymentScenario:
        sessions = np.asarray(sessions)
        keep = np.isin(self.entry_session, sessions)
        remap = -np.ones(self.n_sessions, dtype=np.int64)
        remap[sessions] = np.arange(len(sessions))
        return PaymentScenario(self.inputs[sessions], self.bids[sessions], self.is_ad[sessions],
                               self.theta[sessions], remap[self.entry_session[keep]],
                               self.values[keep], self.reports[keep], self.rows[keep],
                               self.alloc_theta[keep])


def fixed_alloc_entries(item_repr, bids, is_ad, z, theta, trace, cfg, rng, n_v: int, gammas,
                        n_random: int):
    """Misreport rows of one session with its allocation held fixed.

    Only the deviating ad's own ``z`` moves with its report (recomputed from the
    cached per-layer logits and weights); its slot and pCTR stay put.
    """
    base = payment_inputs(item_repr, bids, z, theta)
    out = []
    for s in np.flatnonzero(is_ad):
        vals = sample_valuations(bids[s], n_v, rng)
        reps = np.stack([misreport_grid(v, rng, gammas, n_random) for v in vals])
        zg = misreport_z(trace, s, reps.ravel(), cfg).reshape(reps.shape)
        rows = np.broadcast_to(base[s], reps.shape + (base.shape[1],)).copy()
        rows[..., -1] = zg * theta[s]
        out.append((s, vals, reps, rows, np.full(reps.shape, theta[s])))
    return base, out


def misreport_z(trace, slot: int, reports, cfg) -> np.ndarray:
    """Allocation probability of the item in ``slot`` if it had bid each of ``reports``."""
    lg = trace.logits[slot]          # [C, W]
    expo = trace.exponent
    w = trace.weights[slot] ** expo[:, None]
    own = trace.targets[slot]
    C = lg.shape[0]
    rest = np.zeros((1, C))
    own_exp = np.zeros((1, C))
    for j in range(C):
        live = w[j] > 0
        m = lg[j][live].max()
        e = np.where(live, np.exp(lg[j] - m), 0.0)
        own_exp[0, j] = e[own[j]]
        rest[0, j] = (w[j] * e).sum() - w[j, own[j]] * e[own[j]]
    grid = np.asarray(reports, dtype=np.float64)[None, :]
    return kernels.misreport_alloc_probs(rest, own_exp, trace.other_agg[slot][None].astype(np.float64),
                                         trace.other_count[slot][None].astype(np.int64), grid,
                                         cfg.alpha, cfg.beta, cfg.agg_code, expo[None])[0]


def build_scenario(sessions, seed: int, n_v: int = 8, gammas=GAMMAS,
                   n_random: int = N_RANDOM_MISREPORTS, realloc=None) -> PaymentScenario:
    """Assemble a scenario from ``(item_repr, bids, is_ad, z, theta, trace, cfg)`` tuples.

    ``realloc(session_index, ad_slot, report) -> (row, theta)`` (row ``None``
    when the ad is displaced) switches to re-running the allocation for every
    report instead of holding it fixed.
    """
    inputs, bids, is_ad, theta = [], [], [], []
    ent_s, vals, reps, rows, ath = [], [], [], [], []
    for i, (rep, b, ad, z, th, trace, cfg) in enumerate(sessions):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 51, i]))
        base, entries = fixed_alloc_entries(rep, b, ad, z, th, trace, cfg, rng, n_v, gammas, n_random)
        inputs.append(base)
        bids.append(b)
        is_ad.append(ad)
        theta.append(th)
        for s, v, r, rw, at in entries:
            if realloc is not None:
                rw = rw.copy()
                at = at.copy()
                for idx in np.ndindex(r.shape):
                    row, t = realloc(i, s, r[idx])
                    if row is None:
                        at[idx] = 0.0
                    else:
                        rw[idx] = row
                        at[idx] = t
            ent_s.append(i)
            vals.append(v)
            reps.append(r)
            rows.append(rw)
            ath.append(at)
    f = inputs[0].shape[1]
    g = reps[0].shape[1] if reps else 1
    return PaymentScenario(
        np.stack(inputs), np.stack(bids), np.stack(is_ad), np.stack(theta),
        np.array(ent_s, dtype=np.int64),
        np.stack(vals) if vals else np.zeros((0, n_v)),
        np.stack(reps) if reps else np.zeros((0, n_v, g)),
        np.stack(rows) if rows else np.zeros((0, n_v, g, f)),
        np.stack(ath) if ath else np.zeros((0, n_v, g)))


# -- objective -------------------------------------------------------------------------------

def regret_tensor(net: PaymentNet, sc: PaymentScenario) -> Tensor:
    """Per-entry empirical regret ``[A]``; gradients reach the payment net only."""
    A, n_v, G = sc.reports.shape
    with no_grad():
        p_all = net.rates(sc.rows.reshape(A * n_v * G, -1)).data.reshape(A, n_v, G)
    best = np.argmax((sc.values[:, :, None] - p_all * sc.reports) * sc.alloc_theta, axis=2)
    # the max is piecewise linear in the rates: only the argmax and truthful rows carry gradient
    a_idx, v_idx = np.meshgrid(np.arange(A), np.arange(n_v), indexing="ij")
    pick = np.stack([best, np.zeros_like(best)], axis=2)                 # [A, n_v, 2]
    rows = sc.rows[a_idx[..., None], v_idx[..., None], pick]
    p_hat = net.rates(rows.reshape(A * n_v * 2, -1)).reshape(A, n_v, 2)
    rep = np.take_along_axis(sc.reports, pick, axis=2)
    th = np.take_along_axis(sc.alloc_theta, pick, axis=2)
    u = (Tensor(sc.values[:, :, None]) - p_hat * rep) * th
    return ops.mean(u[:, :, 0] - u[:, :, 1], axis=1)


def revenue_tensor(net: PaymentNet, sc: PaymentScenario) -> Tensor:
    """Sum over sessions of ``sum_ads p_i * theta_i`` at truthful bids."""
    n, K, f = sc.inputs.shape
    p_hat = net.rates(sc.inputs.reshape(n * K, f)).reshape(n, K)
    return ops.sum(p_hat * (sc.bids * sc.theta * sc.is_ad))


def pay_loss(net, sc: PaymentScenario, lam, rho: float) -> tuple[Tensor, Tensor]:
    """``-(1/n) (revenue - sum lambda rgt - rho/2 sum rgt^2)`` and the regret vector."""
    rgt = regret_tensor(net, sc)
    rev = revenue_tensor(net, sc)
    lam_t = Tensor(np.asarray(lam, dtype=np.float64))
    obj = rev - ops.sum(lam_t * rgt) - ops.sum(ops.square(rgt)) * (rho / 2)
    return obj * (-1.0 / sc.n_sessions), rgt


@dataclass
class PayRound:
    loss: float
    mean_regret: float
    revenue: float
    lam_mean: float


class PaymentTrainer:
    """Alternating schedule: ``steps_per_round`` Adam steps, then one multiplier update."""

    def __init__(self, net: PaymentNet, sc: PaymentScenario, lr: float, rho: float = 1.0,
                 lam_init: float = 1.0, batch_size: int = 128, steps_per_round: int = 100,
                 seed: int = 0):
        self.net, self.sc = net, sc
        self.rho = rho
        self.lam = np.full(len(sc.entry_session), lam_init, dtype=np.float64)
        self.opt = Adam(net.parameters(), lr=lr)
        self.batch_size = batch_size
        self.steps_per_round = steps_per_round
        self._rng = np.random.default_rng(np.random.SeedSequence([seed, 52]))

    def mean_regret(self) -> float:
        with no_grad():
            return float(regret_tensor(self.net, self.sc).data.mean())

    def step(self) -> float:
        n = self.sc.n_sessions
        sessions = np.sort(self._rng.choice(n, size=min(self.batch_size, n), replace=False))
        sub = self.sc.subset(sessions)
        keep = np.isin(self.sc.entry_session, sessions)
        loss, _ = pay_loss(self.net, sub, self.lam[keep], self.rho)
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        return loss.item()

    def round(self) -> PayRound:
        for _ in range(self.steps_per_round):
            loss = self.step()
        with no_grad():
            rgt = regret_tensor(self.net, self.sc).data
            rev = revenue_tensor(self.net, self.sc).data
        self.lam = multiplier_update(self.lam, self.rho, rgt)
        return PayRound(loss, float(rgt.mean()), float(rev) / self.sc.n_sessions, float(self.lam.mean()))


def pay_train_step(trainer: PaymentTrainer) -> float:
    return trainer.step()
