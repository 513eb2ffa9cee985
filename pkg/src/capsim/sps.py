"""Sensing-based semi-persistent scheduling and its look-ahead (LA) variant."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import ResourceLocation

SENSING_MS = 1000
CANDIDATE_FRACTION = 0.2


def counter_range(rri_ms: int) -> tuple[int, int]:
    """Re-selection counter bounds, scaled up for RRIs shorter than 100 ms."""
    if rri_ms >= 100:
        return 5, 15
    return round(500 / rri_ms), round(1500 / rri_ms)


@dataclass(frozen=True)
class Announcement:
    """Next-selection location piggybacked by an SPS/LA vehicle."""

    source: int
    start_ms: int
    subchannel: int
    rri_ms: int

    def blocks(self, s: np.ndarray, k: int) -> np.ndarray:
        return (s >= self.start_ms) & ((s - self.start_ms) % self.rri_ms == 0)


@dataclass
class SpsHistory:
    """What one vehicle sensed over the trailing second.

    ``energy`` and ``rsrp`` are ``(L, n_subch)`` dBm arrays over ``times``
    (NaN where the vehicle was transmitting); ``source`` holds the decoded
    transmitter id or -1; ``source_rri`` maps ids to their announced RRI.
    """

    times: np.ndarray
    energy: np.ndarray
    rsrp: np.ndarray
    source: np.ndarray
    source_rri: np.ndarray
    own_tx: np.ndarray
    announcements: list = field(default_factory=list)


def sps_select(t: int, rri_ms: int, hist: SpsHistory, rng: np.random.Generator,
               window_ms: int = 100, rsrp_thr_dbm: float = -110.0,
               step_db: float = 3.0) -> tuple[int, int, int]:
    """Choose ``(start_ms, subchannel)`` in ``(t, t + W]``; also returns the escalation count.

    W is the configured window capped at the vehicle's RRI so the first
    transmission never lands later than one period after ``t``.
    """
    n_subch = hist.energy.shape[1]
    w = max(1, min(window_ms, rri_ms))
    s = np.arange(t + 1, t + w + 1)
    total = w * n_subch
    need = math.ceil(CANDIDATE_FRACTION * total)

    base = np.ones((w, n_subch), dtype=bool)
    # half-duplex: our own past sub-frames are unobserved, assume they repeat
    if len(hist.own_tx):
        own_res = np.unique(np.asarray(hist.own_tx) % rri_ms)
        base &= ~np.isin(s % rri_ms, own_res)[:, None]
    for a in hist.announcements:
        if 0 <= a.subchannel < n_subch:
            base[:, a.subchannel] &= ~a.blocks(s, a.subchannel)

    dec = hist.source >= 0
    tau_idx, k_idx = np.nonzero(dec)
    taus = hist.times[tau_idx]
    srcs = hist.source[tau_idx, k_idx]
    rsrp = hist.rsrp[tau_idx, k_idx]
    periods = hist.source_rri[srcs] if len(srcs) else np.zeros(0, dtype=np.int64)

    thr = rsrp_thr_dbm
    top = float(rsrp.max()) if len(rsrp) else -math.inf
    escalations = 0
    while True:
        avail = base.copy()
        strong = rsrp > thr
        for p in np.unique(periods[strong]):
            sel = strong & (periods == p)
            table = np.zeros((int(p), n_subch), dtype=bool)
            table[taus[sel] % p, k_idx[sel]] = True
            avail &= ~table[s % p]
        if avail.sum() >= need or thr > top:
            break
        thr += step_db
        escalations += 1

    if not avail.any():
        avail = base if base.any() else np.ones_like(base)

    rssi = average_rssi(s, rri_ms, hist)
    cand = np.flatnonzero(avail)
    order = rng.permutation(len(cand))
    cand = cand[order]
    score = rssi.ravel()[cand]
    score = np.where(np.isnan(score), np.inf, score)
    ranked = cand[np.argsort(score, kind="stable")]
    pool = ranked[:need]
    pick = int(pool[rng.integers(len(pool))])
    row, k = divmod(pick, n_subch)
    return int(s[row]), int(k), escalations


def average_rssi(s: np.ndarray, rri_ms: int, hist: SpsHistory) -> np.ndarray:
    """Mean linear RSSI of each candidate over its past images ``s - q*rri``."""
    n_subch = hist.energy.shape[1]
    lin = np.power(10.0, hist.energy / 10.0)
    ok = ~np.isnan(lin)
    res = hist.times % rri_ms
    sums = np.zeros((rri_ms, n_subch))
    cnt = np.zeros((rri_ms, n_subch))
    for k in range(n_subch):
        sums[:, k] = np.bincount(res, weights=np.where(ok[:, k], lin[:, k], 0.0), minlength=rri_ms)
        cnt[:, k] = np.bincount(res, weights=ok[:, k].astype(float), minlength=rri_ms)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = sums / cnt
    return avg[s % rri_ms]


@dataclass(eq=False)
class SpsVehicle:
    vid: int
    rri_ms: int
    rng: np.random.Generator
    keep_prob: float = 0.0
    window_ms: int = 100
    rsrp_thr_dbm: float = -110.0
    look_ahead: bool = False
    resource: ResourceLocation | None = None
    next_tx: int = -1
    counter: int = 0
    planned: tuple | None = None     # LA: (start_ms, subch) of the next selection
    plan_keep: bool = False

    def arm_counter(self):
        lo, hi = counter_range(self.rri_ms)
        self.counter = int(self.rng.integers(lo, hi + 1))

    def adopt(self, start_ms: int, subch: int):
        self.resource = ResourceLocation(start_ms % self.rri_ms, subch)
        self.next_tx = start_ms

    def random_start(self, t: int, n_subch: int):
        start = t + int(self.rng.integers(self.rri_ms))
        self.adopt(start, int(self.rng.integers(n_subch)))
        self.arm_counter()

    def select(self, t: int, hist: SpsHistory) -> int:
        start, k, esc = sps_select(t, self.rri_ms, hist, self.rng, self.window_ms, self.rsrp_thr_dbm)
        self.adopt(start, k)
        return esc

    def announcement(self) -> Announcement | None:
        if self.look_ahead and self.planned is not None:
            return Announcement(self.vid, self.planned[0], self.planned[1], self.rri_ms)
        return None

    def on_transmit(self, t: int, history_at) -> str:
        """Counter bookkeeping after a transmission at ``t``; schedules ``next_tx``.

        ``history_at(t)`` builds the :class:`SpsHistory` when a selection is
        needed. Returns ``"keep"``, ``"reselect"`` or ``"plan"``.
        """
        self.counter -= 1
        if self.look_ahead and self.counter == 1:
            # decide one period ahead and advertise the outcome
            self.plan_keep = self.rng.random() < self.keep_prob
            if not self.plan_keep:
                start, k, _ = sps_select(t + self.rri_ms, self.rri_ms, history_at(t),
                                         self.rng, self.window_ms, self.rsrp_thr_dbm)
                self.planned = (start, k)
            self.next_tx = t + self.rri_ms
            return "plan"
        if self.counter <= 0:
            self.arm_counter()
            if self.look_ahead:
                planned, keep = self.planned, self.plan_keep
                self.planned, self.plan_keep = None, False
                if planned is None or keep:
                    self.next_tx = t + self.rri_ms
                    return "keep"
                self.adopt(*planned)
                return "reselect"
            if self.rng.random() < self.keep_prob:
                self.next_tx = t + self.rri_ms
                return "keep"
            self.select(t, history_at(t))
            return "reselect"
        self.next_tx = t + self.rri_ms
        return "keep"
