"""AoI bookkeeping, channel busy ratio and MAC error accounting."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, asdict
from typing import Iterable

import numpy as np

def _area(last: np.ndarray, lo: np.ndarray, hi) -> np.ndarray:
    """Sum of ages ``tau - last`` for integer ``tau`` in ``[lo, hi)``."""
    n = np.maximum(hi - lo, 0)
    return n * (lo - last) + n * (n - 1) // 2


class AoiLedger:
    """Per ordered pair age bookkeeping, integrated lazily.

    ``last[j, i]`` is the time receiver ``i`` last heard from transmitter
    ``j`` (or the time the pair came into existence, so a_{i,j} starts at 0)
    and ``mark[j, i]`` the time up to which its age has been summed into
    ``area``.  Only the measurement interval from ``t0`` on is integrated.
    Slots are reusable: a departing vehicle's pairs are flushed and the slot
    may be handed to a newcomer.
    """

    def __init__(self, capacity: int, t0: int = 0):
        self.capacity = capacity
        self.t0 = t0
        self.now = 0
        self.last = np.zeros((capacity, capacity), dtype=np.int64)
        self.mark = np.zeros((capacity, capacity), dtype=np.int64)
        self.area = np.zeros((capacity, capacity), dtype=np.int64)
        self.alive = np.zeros(capacity, dtype=bool)
        self.born = np.zeros(capacity, dtype=np.int64)
        self.slot_vid = np.full(capacity, -1, dtype=np.int64)
        self.total_area = 0
        self.total_time = 0
        # receiver-side totals keyed by vehicle id
        self.vehicle_area: dict[int, int] = {}
        self.vehicle_time: dict[int, int] = {}
        self._counted_from = t0

    # -- population -------------------------------------------------------
    def add(self, slot: int, t: int, vid: int | None = None):
        for idx in (np.s_[slot, :], np.s_[:, slot]):
            self.last[idx] = t
            self.mark[idx] = t
            self.area[idx] = 0
        self.alive[slot] = True
        self.born[slot] = t
        self.slot_vid[slot] = slot if vid is None else vid

    def _integrate(self, rows, cols, t: int):
        last = self.last[rows, cols]
        lo = np.maximum(self.mark[rows, cols], self.t0)
        self.area[rows, cols] += _area(last, lo, t)
        self.mark[rows, cols] = np.maximum(self.mark[rows, cols], t)

    def _credit(self, rx_slots, areas, times):
        for i, a, dt in zip(rx_slots, areas, times):
            vid = int(self.slot_vid[i])
            self.vehicle_area[vid] = self.vehicle_area.get(vid, 0) + int(a)
            self.vehicle_time[vid] = self.vehicle_time.get(vid, 0) + int(dt)

    def remove(self, slot: int, t: int):
        others = np.flatnonzero(self.alive)
        others = others[others != slot]
        if len(others):
            self._integrate(others, slot, t)
            self._integrate(slot, others, t)
            start = np.maximum(np.maximum(self.born[others], self.born[slot]), self._counted_from)
            dt = np.maximum(t - start, 0)
            heard = self.area[others, slot]   # slot listening to others
            told = self.area[slot, others]    # others listening to slot
            self.total_area += int(heard.sum() + told.sum())
            self.total_time += 2 * int(dt.sum())
            self._credit([slot], [heard.sum()], [dt.sum()])
            self._credit(others, told, dt)
            self.area[others, slot] = 0
            self.area[slot, others] = 0
        self.alive[slot] = False

    # -- receptions -------------------------------------------------------
    def receive(self, tx: np.ndarray, rx_mask: np.ndarray, t: int):
        """Receivers flagged in ``rx_mask[k]`` hear transmitter ``tx[k]`` at ``t``."""
        if len(tx) == 0:
            return
        last = self.last[tx]
        mark = self.mark[tx]
        if t > self.t0:
            lo = np.maximum(mark, self.t0)
            self.area[tx] += np.where(rx_mask, _area(last, lo, t), 0)
        self.last[tx] = np.where(rx_mask, t, last)
        self.mark[tx] = np.where(rx_mask, t, mark)

    def tick(self, receptions: Iterable[tuple[int, int]]):
        """Deliver ``(receiver, transmitter)`` pairs at the current time, then advance 1 ms."""
        pairs = list(receptions)
        if pairs:
            rx = np.array([p[0] for p in pairs])
            tx = np.array([p[1] for p in pairs])
            for j in np.unique(tx):
                mask = np.zeros(self.capacity, dtype=bool)
                mask[rx[tx == j]] = True
                mask &= self.alive
                mask[j] = False
                self.receive(np.array([j]), mask[None, :], self.now)
        self.now += 1

    def ages(self, t: int | None = None) -> np.ndarray:
        """``ages[i, j]`` = a_{i,j,t}; -1 where the pair does not exist."""
        t = self.now - 1 if t is None else t
        a = (t - self.last).T.copy()
        a[~self._pairs()] = -1
        return a

    def _pairs(self) -> np.ndarray:
        alive2 = self.alive[:, None] & self.alive[None, :]
        np.fill_diagonal(alive2, False)
        return alive2

    # -- distance binned flush (freeway) -----------------------------------
    def flush_binned(self, t: int, bin_index: np.ndarray, bin_area: np.ndarray, bin_time: np.ndarray):
        """Move everything accrued since the previous flush into distance bins.

        ``bin_index[j, i]`` is the bin the pair sat in over that interval,
        -1 when it was outside the reporting range.
        """
        pairs = self._pairs()
        self._integrate(np.s_[:], np.s_[:], t)
        start = np.maximum(np.maximum(self.born[:, None], self.born[None, :]), self._counted_from)
        dt = np.where(pairs, np.maximum(t - start, 0), 0)
        area = np.where(pairs, self.area, 0)
        sel = pairs & (bin_index >= 0)
        np.add.at(bin_area, bin_index[sel], area[sel])
        np.add.at(bin_time, bin_index[sel], dt[sel])
        self.total_area += int(area.sum())
        self.total_time += int(dt.sum())
        alive = np.flatnonzero(self.alive)
        self._credit(alive, area.sum(axis=0)[alive], dt.sum(axis=0)[alive])
        self.area[:] = 0
        self._counted_from = max(t, self.t0)

    # -- results ----------------------------------------------------------
    def finalize(self, t1: int):
        alive = np.flatnonzero(self.alive)
        if len(alive) >= 2:
            sub = np.ix_(alive, alive)
            self._integrate(sub[0], sub[1], t1)
            area = self.area[sub].copy()
            np.fill_diagonal(area, 0)
            b = self.born[alive]
            start = np.maximum(np.maximum(b[:, None], b[None, :]), self._counted_from)
            dt = np.maximum(t1 - start, 0)
            np.fill_diagonal(dt, 0)
            self.total_area += int(area.sum())
            self.total_time += int(dt.sum())
            self._credit(alive, area.sum(axis=0), dt.sum(axis=0))
            self.area[sub] = 0
        self.alive[:] = False

    @property
    def average(self) -> float:
        return self.total_area / self.total_time if self.total_time else math.nan

    def per_vehicle(self) -> dict[int, float]:
        return {v: self.vehicle_area[v] / t for v, t in sorted(self.vehicle_time.items()) if t > 0}


def tick_aoi(ledger: AoiLedger, receptions: Iterable[tuple[int, int]]) -> AoiLedger:
    ledger.tick(receptions)
    return ledger


# ---------------------------------------------------------------------------
# CBR
# ---------------------------------------------------------------------------

def measure_cbr(energy_dbm: np.ndarray, threshold_dbm: float) -> float:
    """Busy fraction of the observed sub-channels in a trailing energy window.

    NaN entries (half-duplex, nothing sensed) are left out of the denominator.
    """
    e = np.asarray(energy_dbm, dtype=float)
    seen = ~np.isnan(e)
    n = int(seen.sum())
    if n == 0:
        return 0.0
    return float((e[seen] > threshold_dbm).sum() / n)


# ---------------------------------------------------------------------------
# Error classification
# ---------------------------------------------------------------------------

HD, COLLISION, PHY, NONE = "hd", "collision", "phy", "none"


def classify_error(*, receiver_transmitting: bool, decoded: bool,
                   n_transmitters: int, clean_decodable: bool = True) -> str:
    """Reason a (receiver, packet) opportunity failed, or ``"none"``.

    ``clean_decodable`` says whether the packet would have been decoded had
    it been alone on its sub-channel(s); it separates collisions from
    link-budget and fading losses.
    """
    if receiver_transmitting:
        return HD
    if decoded:
        return NONE
    if n_transmitters >= 2 and clean_decodable:
        return COLLISION
    return PHY


@dataclass
class ErrorTally:
    counts: Counter = field(default_factory=Counter)

    def add(self, kind: str, n: int = 1):
        self.counts[kind] += n

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def rate(self, kind: str) -> float:
        tot = self.total
        return self.counts[kind] / tot if tot else 0.0

    @property
    def loss_ratio(self) -> float:
        tot = self.total
        return (tot - self.counts[NONE]) / tot if tot else 0.0


@dataclass
class MetricsReport:
    avg_aoi_ms: float
    cbr: float
    collision_error_rate: float
    hd_error_rate: float
    packet_loss_ratio: float
    per_vehicle_aoi: dict = field(default_factory=dict)
    error_counts: dict = field(default_factory=dict)
    plr_by_distance: dict = field(default_factory=dict)
    aoi_by_distance: dict = field(default_factory=dict)
    n_ht: int = 0
    n_col: int = 0
    n_fd: int = 0
    n_cd: int = 0
    fd_by_threshold: dict = field(default_factory=dict)
    n_missing: int = 0
    d_farther_m: float = math.nan
    collisions_per_window: list = field(default_factory=list)
    window_ms: int = 0
    n_reselections: int = 0
    max_collab_bits: int = 0
    local_cbr_samples: list = field(default_factory=list)
    rri_histogram: dict = field(default_factory=dict)
    mean_population: float = math.nan
    communication_range_m: float = math.nan

    @property
    def r_ht(self) -> float:
        return self.n_ht / self.n_col if self.n_col else math.nan

    @property
    def r_fd(self) -> float:
        return self.n_fd / self.n_cd if self.n_cd else math.nan

    def r_fd_at(self, threshold_dbm: float) -> float:
        n_fd, n_cd = self.fd_by_threshold.get(threshold_dbm, (0, 0))
        return n_fd / n_cd if n_cd else math.nan

    def convergence_window(self) -> int | None:
        """Index of the first window after which no packet ever collides again."""
        w = self.collisions_per_window
        for k in range(len(w) - 1, -1, -1):
            if w[k]:
                return k + 1 if k + 1 < len(w) else None
        return 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["r_ht"] = self.r_ht
        d["r_fd"] = self.r_fd
        return d
