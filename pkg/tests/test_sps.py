import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from capsim.sps import (Announcement, SpsHistory, SpsVehicle, average_rssi, counter_range,
                        sps_select)


def _history(t, n_subch=4, rri=100, energy=None, source=None):
    times = np.arange(max(0, t - 1000), t)
    e = np.full((len(times), n_subch), -200.0) if energy is None else energy
    s = np.full((len(times), n_subch), -1) if source is None else source
    return SpsHistory(times, e, e, s, np.full(16, rri), np.zeros(0, dtype=np.int64))


def test_counter_range():
    assert counter_range(100) == (5, 15)
    assert counter_range(200) == (5, 15)
    assert counter_range(50) == (10, 30)
    assert counter_range(20) == (25, 75)


def test_window_capped_at_rri():
    rng = np.random.default_rng(0)
    for _ in range(50):
        start, k, _ = sps_select(2000, 20, _history(2000), rng)
        assert 2000 < start <= 2020 and 0 <= k < 4


def test_excludes_strong_decoded_reservations():
    t, rri = 2000, 100
    h = _history(t, rri=rri)
    # source 3 reserves sub-channels 1..3 strongly; sub-channel 0 stays free (25% of slots)
    h.source[:, 1:] = 3
    h.rsrp[:, 1:] = -70.0
    rng = np.random.default_rng(1)
    for _ in range(30):
        s, k, esc = sps_select(t, rri, h, rng)
        assert k == 0 and esc == 0


def test_weak_reservations_not_excluded():
    t, rri = 2000, 100
    h = _history(t, rri=rri)
    h.source[:, 1:] = 3
    h.energy[:, 1:] = -200.0   # rsrp aliases energy: weak and quiet
    rng = np.random.default_rng(1)
    ks = {sps_select(t, rri, h, rng)[1] for _ in range(60)}
    assert ks == {0, 1, 2, 3}


def test_threshold_escalates_when_everything_is_reserved():
    t, rri = 2000, 100
    h = _history(t, rri=rri)
    h.source[:] = 5
    h.rsrp[:] = -105.0
    _, _, esc = sps_select(t, rri, h, np.random.default_rng(0))
    assert esc >= 1


def test_half_duplex_residues_excluded():
    t, rri = 2000, 100
    h = _history(t, rri=rri)
    h.own_tx = np.array([1903])
    rng = np.random.default_rng(2)
    for _ in range(100):
        s, _, _ = sps_select(t, rri, h, rng)
        assert s % rri != 3


def test_announcement_blocks_future_slot():
    a = Announcement(source=7, start_ms=2050, subchannel=1, rri_ms=100)
    s = np.array([2050, 2051, 2150, 1950])
    assert a.blocks(s, 1).tolist() == [True, False, True, False]
    t = 2000
    h = _history(t, n_subch=1)
    h.announcements = [Announcement(7, t + 1 + i, 0, 100) for i in range(79)]
    rng = np.random.default_rng(3)
    for _ in range(30):
        s, _, _ = sps_select(t, 100, h, rng)
        assert s > t + 79


def test_average_rssi_over_images():
    t, rri = 1000, 100
    h = _history(t, n_subch=1, rri=rri)
    h.energy[(h.times % rri) == 10, 0] = -80.0
    avg = average_rssi(np.array([1010, 1011]), rri, h)
    assert 10 * math.log10(avg[0, 0]) == pytest.approx(-80.0)
    assert avg[1, 0] < avg[0, 0]


@given(seed=st.integers(0, 10**6), busy=st.floats(0, 0.95))
@settings(max_examples=40, deadline=None)
def test_pick_lies_in_lowest_rssi_fraction(seed, busy):
    t, rri = 2000, 100
    rng = np.random.default_rng(seed)
    h = _history(t, rri=rri)
    noisy = rng.random((rri, 4)) < busy
    level = rng.uniform(-110, -70, (rri, 4))
    rows = h.times % rri
    h.energy[:] = np.where(noisy[rows], level[rows], -200.0)
    s, k, _ = sps_select(t, rri, h, rng)
    avg = average_rssi(np.arange(t + 1, t + rri + 1), rri, h)
    cutoff = np.sort(avg.ravel())[math.ceil(0.2 * avg.size) - 1]
    assert avg[s - t - 1, k] <= cutoff


def test_vehicle_counter_cycle_and_reselection():
    v = SpsVehicle(0, 100, np.random.default_rng(0))
    v.random_start(0, 4)
    assert 5 <= v.counter <= 15
    n = v.counter
    outcomes = []
    t = v.next_tx
    for _ in range(n):
        outcomes.append(v.on_transmit(t, lambda tt: _history(tt)))
        t = v.next_tx
    assert outcomes[:-1] == ["keep"] * (n - 1)
    assert outcomes[-1] == "reselect"


def test_look_ahead_announces_before_switching():
    v = SpsVehicle(0, 100, np.random.default_rng(5), look_ahead=True)
    v.random_start(0, 4)
    t = v.next_tx
    out = None
    while out != "plan":
        out = v.on_transmit(t, lambda tt: _history(tt))
        t = v.next_tx
    ann = v.announcement()
    assert ann is not None and ann.start_ms > t
    planned = (ann.start_ms, ann.subchannel)
    assert v.on_transmit(t, lambda tt: _history(tt)) == "reselect"
    assert (v.next_tx, v.resource.subchannel_index) == planned
    assert v.announcement() is None
