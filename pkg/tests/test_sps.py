import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from cv2x_gbmu.channel import ChannelParams, dbm_to_watts, watts_to_dbm
from cv2x_gbmu.sps import (
    NO_RSRP,
    Resource,
    SensingRecord,
    SpsState,
    half_duplex_filter,
    measure,
    required_survivors,
    select_with_trace,
    sense,
    sps_select,
    tick_sps,
    window_resources,
)

NOISE_W = ChannelParams().noise_w
NOISE_DBM = float(watts_to_dbm(NOISE_W))


def test_silent_window():
    table = sense(measure({}, NOISE_W))
    assert len(table) == 16
    assert all(r.measured_rsrp_dbm == NO_RSRP and not r.reserved for r in table)
    assert all(r.rssi_dbm == pytest.approx(NOISE_DBM) for r in table)
    tr = select_with_trace(table, -110.0, np.random.default_rng(0))
    assert len(tr.survivors) == 16
    # equal RSSI everywhere: stable tie-break by subframe then channel
    assert tr.best == (Resource(0, 0), Resource(0, 1), Resource(1, 0))


def test_single_and_double_transmitter_measurement():
    res = Resource(3, 1)
    p = dbm_to_watts(-80.0)
    (rec,) = [r for r in measure({res: [p]}, NOISE_W) if r.resource == res]
    assert rec.measured_rsrp_dbm == pytest.approx(-80.0)
    assert rec.reserved
    q = dbm_to_watts(-85.0)
    (rec,) = [r for r in measure({res: [p, q]}, NOISE_W) if r.resource == res]
    assert rec.rssi_dbm == pytest.approx(10 * math.log10((p + q + NOISE_W) * 1e3))
    assert rec.measured_rsrp_dbm == pytest.approx(-80.0)


def test_below_sensing_floor_is_not_reserved():
    res = Resource(0, 0)
    (rec,) = [r for r in measure({res: [dbm_to_watts(-108.0)]}, NOISE_W) if r.resource == res]
    assert not rec.reserved and rec.measured_rsrp_dbm == NO_RSRP


def test_sense_validation():
    table = measure({}, NOISE_W)
    with pytest.raises(ValueError, match="missing"):
        sense(table[:-1])
    with pytest.raises(ValueError, match="duplicate"):
        sense(table + table[:1])


def _table(rsrp_by_index):
    rows = []
    for k, res in enumerate(window_resources()):
        rsrp = rsrp_by_index.get(k, NO_RSRP)
        rssi = NOISE_DBM if rsrp == NO_RSRP else rsrp + 0.5
        rows.append(SensingRecord(res, rsrp, rssi, rsrp != NO_RSRP))
    return rows


def test_threshold_raised_by_three_db():
    # 14 reserved above -110 dBm; two of them sit between -110 and -107
    rsrp = {k: -90.0 for k in range(14)}
    rsrp[0] = rsrp[1] = -108.5
    tr = select_with_trace(_table(rsrp), -110.0, np.random.default_rng(1))
    assert required_survivors(16) == 4
    assert tr.threshold_dbm == -107.0
    assert set(tr.survivors) == {Resource(0, 0), Resource(0, 1), Resource(7, 0), Resource(7, 1)}
    assert tr.resource in tr.best


def test_threshold_keeps_rising_until_enough_survive():
    # one reservation clears +3 dB, giving 3 survivors; a further step is needed for the fourth
    rsrp = {k: -90.0 for k in range(14)}
    rsrp[0] = -108.5
    rsrp[1] = -105.5
    tr = select_with_trace(_table(rsrp), -110.0, np.random.default_rng(1))
    assert tr.threshold_dbm == -104.0
    assert len(tr.survivors) == 4


def test_uniform_among_best_three():
    rsrp = {k: -80.0 - k for k in range(16)}
    table = _table(rsrp)
    picks = Counter(sps_select(table, -60.0, np.random.default_rng(s)) for s in range(10_000))
    best = {window_resources()[k] for k in (13, 14, 15)}
    assert set(picks) == best
    assert chisquare(list(picks.values())).pvalue > 0.01


def test_tick_sps():
    rng = np.random.default_rng(0)
    st_, reselect = tick_sps(SpsState(Resource(0, 0), 1), rng)
    assert reselect and 5 <= st_.reselection_counter <= 15
    st_, reselect = tick_sps(SpsState(Resource(0, 0), 5), rng)
    assert not reselect and st_.reselection_counter == 4
    draws = Counter(tick_sps(SpsState(None, 1), rng)[0].reselection_counter for _ in range(10_000))
    assert set(draws) == set(range(5, 16))
    assert chisquare([draws[k] for k in range(5, 16)]).pvalue > 0.01


def test_keep_probability_one_never_reselects():
    rng = np.random.default_rng(0)
    assert not any(tick_sps(SpsState(None, 1), rng, keep_probability=1.0)[1] for _ in range(100))


def test_half_duplex_filter():
    cars = list(range(21))
    assert half_duplex_filter(cars, []) == cars
    assert half_duplex_filter(cars, cars) == []
    rx = half_duplex_filter(cars, [2, 5, 9])
    assert len(rx) == 18 and not set(rx) & {2, 5, 9}


@st.composite
def sensing_tables(draw):
    rows = []
    for res in window_resources():
        reserved = draw(st.booleans())
        rsrp = draw(st.floats(-130, -50)) if reserved else NO_RSRP
        rssi = draw(st.floats(-115, -40))
        rows.append(SensingRecord(res, rsrp, rssi, reserved))
    return rows


@settings(max_examples=200, deadline=None)
@given(sensing_tables(), st.floats(-125, -90), st.integers(0, 2**32 - 1))
def test_selection_invariants(table, threshold, seed):
    tr = select_with_trace(table, threshold, np.random.default_rng(seed))
    excluded = {r.resource for r in table if r.reserved and r.measured_rsrp_dbm > tr.threshold_dbm}
    assert tr.resource not in excluded
    assert len(tr.survivors) >= required_survivors(len(table))
    survivors = [r for r in table if r.resource in set(tr.survivors)]
    cutoff = sorted(r.rssi_dbm for r in survivors)[2]
    chosen = next(r for r in table if r.resource == tr.resource)
    assert chosen.rssi_dbm <= cutoff
