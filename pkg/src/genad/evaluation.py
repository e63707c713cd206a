"""Revenue/click metrics, the counterfactual-bid IC probe and the variant report."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .payment import GAMMAS, utility

PSI_EPS = 1e-9
CSV_FIELDS = ["variant", "mode", "rpm", "ctr_poi", "ctr_img", "psi", "ad_ratio", "n_sessions", "seed"]
LIFT_FIELDS = ["rpm", "ctr_poi", "ctr_img", "psi"]


class UndefinedMetricError(ValueError):
    pass


def rpm(clicks, payments, impressions: int | None = None) -> float:
    """``sum(click * payment) / impressions * 1000``; impressions default to slot count."""
    clicks = np.asarray(clicks, dtype=np.float64)
    impressions = clicks.size if impressions is None else impressions
    if impressions < 1:
        raise UndefinedMetricError("RPM needs at least one impression")
    return float((clicks * np.asarray(payments, dtype=np.float64)).sum() / impressions * 1000.0)


def ctr(clicks, impressions: int | None = None) -> float:
    clicks = np.asarray(clicks, dtype=np.float64)
    impressions = clicks.size if impressions is None else impressions
    if impressions < 1:
        raise UndefinedMetricError("CTR needs at least one impression")
    return float(clicks.sum() / impressions)


# -- IC probe --------------------------------------------------------------------------------

@dataclass
class ProbeSession:
    """``mechanism(bids) -> (pctr, payments)`` over the ads of one session (pctr 0 = not shown)."""

    mechanism: object
    bids: np.ndarray
    values: np.ndarray | None = None


@dataclass
class PsiResult:
    psi: float
    n_terms: int
    n_skipped: int
    n_gross: int     # terms normalized by gross value because truthful utility was ~0


def ic_probe(sessions, gammas=GAMMAS, eps: float = PSI_EPS) -> PsiResult:
    """Mean over sessions of ``sum_i rgt_i / u_i`` for displayed ads under ``b_i -> gamma b_i``.

    When the truthful utility is below ``eps`` (e.g. first price) the gross
    value ``v * pctr`` is used as denominator; the term is skipped if that is
    also below ``eps``.
    """
    if not sessions:
        raise UndefinedMetricError("empty dataset")
    per_session = []
    n_terms = n_skipped = n_gross = 0
    for s in sessions:
        bids = np.asarray(s.bids, dtype=np.float64)
        values = bids if s.values is None else np.asarray(s.values, dtype=np.float64)
        pctr, pay = s.mechanism(bids)
        total = 0.0
        for i in np.flatnonzero(np.asarray(pctr) > 0):
            u0 = utility(values[i], pctr[i], pay[i])
            best = u0
            b = bids.copy()
            for g in gammas:
                b[i] = g * bids[i]
                pc, pa = s.mechanism(b)
                best = max(best, utility(values[i], pc[i], pa[i]))
            den = u0
            if den < eps:
                den = values[i] * pctr[i]
                if den < eps:
                    n_skipped += 1
                    continue
                n_gross += 1
            total += (best - u0) / den
            n_terms += 1
        per_session.append(total)
    return PsiResult(float(np.mean(per_session)), n_terms, n_skipped, n_gross)


def bid_independent(pctr, payments):
    pctr = np.asarray(pctr, dtype=np.float64)
    payments = np.asarray(payments, dtype=np.float64)
    return lambda bids: (pctr.copy(), payments.copy())


def _single_slot(pctr: float, price):
    def mech(bids):
        bids = np.asarray(bids, dtype=np.float64)
        win = int(np.argmax(bids))          # ties go to the lower index
        out_p = np.zeros(len(bids))
        out_pay = np.zeros(len(bids))
        out_p[win] = pctr
        out_pay[win] = price(bids, win)
        return out_p, out_pay
    return mech


def single_slot_second_price(pctr: float):
    return _single_slot(pctr, lambda b, w: float(np.max(np.delete(b, w), initial=0.0)))


def single_slot_first_price(pctr: float):
    return _single_slot(pctr, lambda b, w: float(b[w]))


# -- report ----------------------------------------------------------------------------------

@dataclass
class MetricsReport:
    variant: str
    mode: str            # "simulator" (oracle clicks) or "offline" (RM predictions)
    rpm: float
    ctr_poi: float
    ctr_img: float
    psi: float
    ad_ratio: float
    n_sessions: int
    seed: int


def with_lifts(reports: list[MetricsReport], reference: str) -> list[dict]:
    """Rows with ``<metric>_lift_pct`` relative to ``reference`` in the same mode."""
    base = {r.mode: r for r in reports if r.variant == reference}
    rows = []
    for r in reports:
        row = asdict(r)
        ref = base.get(r.mode)
        for f in LIFT_FIELDS:
            v0 = getattr(ref, f) if ref is not None else float("nan")
            row[f"{f}_lift_pct"] = (getattr(r, f) - v0) / abs(v0) * 100.0 if v0 else 0.0
        rows.append(row)
    return rows


def to_csv(reports: list[MetricsReport], reference: str) -> str:
    buf = io.StringIO()
    fields = CSV_FIELDS + [f"{f}_lift_pct" for f in LIFT_FIELDS]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for row in with_lifts(reports, reference):
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
