import csv
import io

import numpy as np
import pytest

from genad import evaluation as ev


def test_rpm_and_ctr():
    assert ev.rpm([1, 0, 1, 0], [0.5, 2.0, 1.5, 0.0]) == pytest.approx(500.0)
    assert ev.rpm([1, 1], [1.0, 1.0], impressions=4) == pytest.approx(500.0)
    assert ev.ctr([1, 0, 0, 1]) == 0.5
    with pytest.raises(ev.UndefinedMetricError):
        ev.rpm([], [])
    with pytest.raises(ev.UndefinedMetricError):
        ev.ctr([])


def test_probe_zero_for_bid_independent_mechanism():
    mech = ev.bid_independent([0.3, 0.2, 0.0], [0.7, 0.4, 0.0])
    res = ev.ic_probe([ev.ProbeSession(mech, np.array([1.0, 2.0, 0.5]))])
    assert res.psi == pytest.approx(0.0, abs=1e-12)
    assert res.n_terms == 2


def test_probe_zero_for_second_price():
    rng = np.random.default_rng(0)
    sessions = [ev.ProbeSession(ev.single_slot_second_price(0.4), rng.uniform(0.5, 5, 4))
                for _ in range(50)]
    assert ev.ic_probe(sessions).psi == pytest.approx(0.0, abs=1e-12)


def test_probe_first_price_hand_value():
    # v = (1, 0.5), pCTR 0.5: truthful utility 0; bidding 0.6 wins at price 0.6 -> 0.2
    # normalised by the gross value 1 * 0.5
    res = ev.ic_probe([ev.ProbeSession(ev.single_slot_first_price(0.5), np.array([1.0, 0.5]))])
    assert res.psi == pytest.approx(0.4, abs=1e-12)
    assert res.n_gross == 1 and res.n_terms == 1


def test_probe_skips_zero_value_and_rejects_empty():
    mech = ev.bid_independent([0.5], [0.0])
    res = ev.ic_probe([ev.ProbeSession(mech, np.array([0.0]))])
    assert res.n_skipped == 1 and res.psi == 0.0
    with pytest.raises(ev.UndefinedMetricError):
        ev.ic_probe([])


def test_single_slot_ties_go_to_lower_index():
    p, pay = ev.single_slot_second_price(0.5)(np.array([1.0, 1.0]))
    assert p[0] == 0.5 and p[1] == 0.0 and pay[0] == 1.0


def _rep(variant, rpm, mode="simulator"):
    return ev.MetricsReport(variant, mode, rpm, 0.1, 0.05, 0.02, 0.4, 100, 0)


def test_lifts_and_csv():
    reps = [_rep("EGA-V2", 200.0), _rep("EGA-mtp", 190.0), _rep("EGA-V2", 100.0, "offline")]
    rows = ev.with_lifts(reps, "EGA-V2")
    assert rows[0]["rpm_lift_pct"] == 0.0
    assert rows[1]["rpm_lift_pct"] == pytest.approx(-5.0)
    text = ev.to_csv(reps, "EGA-V2")
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert [r["variant"] for r in parsed] == ["EGA-V2", "EGA-mtp", "EGA-V2"]
    assert parsed[1]["rpm"] == "190.000000"
    assert text == ev.to_csv(reps, "EGA-V2")
