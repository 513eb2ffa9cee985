"""Per-vehicle CAPS state machine: sensing, piggyback assistance, (re-)selection."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .grid import GridConfig, ResourceLocation
from .offset import effective_area_at, next_real_time, real_to_virtual_subframes

MAX_ASSIST = 3
RESELECT_PROB = 0.5


class SlotStatus(str, Enum):
    DECODED = "decoded"
    SUSPECTED = "suspected_collision"
    IDLE = "idle"
    HD_DEAF = "hd_deaf"


@dataclass(frozen=True)
class SlotOutcome:
    location: ResourceLocation
    status: SlotStatus
    energy_dbm: float = -math.inf
    source: int | None = None


def location_bits(n_subf: int, n_subch: int) -> int:
    """Bits needed to point at one sub-channel inside the assistance range."""
    return math.ceil(math.log2(n_subf)) + math.ceil(math.log2(n_subch)) if n_subf > 0 else 0


@dataclass(frozen=True)
class CollabMessage:
    """Suspected-collision entries piggybacked on a data packet.

    Entries are ``(subframe_offset, subchannel)`` with the offset counted
    from the start of the sender's assistance range; ``origin_ms`` is that
    start, which any receiver can rebuild from the globally known frame
    numbering.
    """

    origin_ms: int
    entries: tuple[tuple[int, int], ...]
    encoded_bits: int

    def __len__(self):
        return len(self.entries)

    def absolute(self):
        return [(self.origin_ms + off, k) for off, k in self.entries]


EMPTY_MESSAGE = CollabMessage(0, (), 0)


class Decision(str, Enum):
    KEEP = "keep"
    RESELECT = "reselect"
    IGNORED = "ignored"


@dataclass(eq=False)
class CapsVehicle:
    vid: int
    rri_ms: int
    rng: np.random.Generator
    e_thre_dbm: float = -95.0
    escalation_db: float = 3.0
    resource: ResourceLocation | None = None
    next_tx: int = -1
    pending: list = field(default_factory=list)     # [(t, subch)] oldest first
    handled: dict = field(default_factory=dict)     # (t, subch) -> expiry time
    tx_log: deque = field(default_factory=lambda: deque(maxlen=4))  # (t, subchannels)

    # -- sensing ----------------------------------------------------------
    def sense(self, t: int, subch: int, energy_dbm: float, decoded: bool):
        """Cache ``(t, subch)`` when it carries energy but nothing decodes."""
        if decoded or not energy_dbm > self.e_thre_dbm:
            return
        self._expire(t)
        if len(self.pending) < MAX_ASSIST:
            self.pending.append((t, subch))

    def _expire(self, now: int):
        lo = now - self.rri_ms
        if self.pending and self.pending[0][0] < lo:
            self.pending = [e for e in self.pending if e[0] >= lo]

    # -- collaboration ----------------------------------------------------
    def build_collab(self, t: int, n_subch: int) -> CollabMessage:
        self._expire(t)
        if not self.pending:
            return EMPTY_MESSAGE
        origin = t - self.rri_ms
        entries = tuple((tau - origin, k) for tau, k in self.pending[:MAX_ASSIST])
        self.pending = []
        bits = len(entries) * location_bits(self.rri_ms, n_subch)
        return CollabMessage(origin, entries, bits)

    def record_tx(self, t: int, subchannels: tuple[int, ...]):
        self.tx_log.append((t, subchannels))

    def owns(self, t: int, subch: int) -> bool:
        return any(tt == t and subch in ks for tt, ks in self.tx_log)

    def handle_collab(self, entry: tuple[int, int], now: int) -> Decision:
        """React to one absolute ``(t, subch)`` entry heard at ``now``."""
        if not self.owns(*entry):
            return Decision.IGNORED
        if self.handled:
            self.handled = {k: v for k, v in self.handled.items() if v > now}
        if entry in self.handled:
            return Decision.KEEP
        self.handled[entry] = entry[0] + 2 * self.rri_ms
        if self.rng.random() < RESELECT_PROB:
            return Decision.RESELECT
        return Decision.KEEP

    # -- selection --------------------------------------------------------
    def select(self, t: int, energy_of, cfg: GridConfig) -> ResourceLocation:
        """Pick a virtual resource at ``t`` and schedule its first real transmission.

        ``energy_of(times)`` returns the vehicle's sensed energy for those
        absolute sub-frames as a ``(len(times), n_subch)`` array with NaN
        where it was deaf.
        """
        area = effective_area_at(t, self.rri_ms, cfg)
        times = area.times()
        e = energy_of(times)
        virt = virtual_energy(times, e, self.rri_ms, cfg)
        self.resource = choose_candidate(virt, self.e_thre_dbm, self.escalation_db, self.rng)
        self.next_tx = next_real_time(self.resource, t, self.rri_ms, cfg)
        self.pending = []
        return self.resource

    def random_start(self, t: int, cfg: GridConfig) -> ResourceLocation:
        n = int(self.rng.integers(self.rri_ms))
        k = int(self.rng.integers(cfg.n_subch_per_subframe))
        self.resource = ResourceLocation(n, k)
        self.next_tx = next_real_time(self.resource, t - 1, self.rri_ms, cfg)
        return self.resource

    def advance(self, t: int, cfg: GridConfig) -> int:
        self.next_tx = next_real_time(self.resource, t, self.rri_ms, cfg)
        return self.next_tx


def virtual_energy(times: np.ndarray, energy: np.ndarray, rri_ms: int, cfg: GridConfig) -> np.ndarray:
    """Scatter an effective area's real energies onto the virtual window."""
    n_subch = energy.shape[1]
    period = times // cfg.t_upd_ms + 1
    subf = real_to_virtual_subframes((times % rri_ms)[:, None], np.arange(n_subch)[None, :],
                                     period[:, None], cfg.t_ost_ms)
    out = np.full((rri_ms, n_subch), np.nan)
    out[subf, np.broadcast_to(np.arange(n_subch), subf.shape)] = energy
    return out


def choose_candidate(virt: np.ndarray, thr_dbm: float, step_db: float,
                     rng: np.random.Generator) -> ResourceLocation:
    """Uniform pick among observable slots below threshold, raising it until one exists."""
    seen = ~np.isnan(virt)
    if not seen.any():
        n, k = divmod(int(rng.integers(virt.size)), virt.shape[1])
        return ResourceLocation(n, k)
    top = np.nanmax(virt)
    thr = thr_dbm
    while True:
        free = seen & (np.where(seen, virt, np.inf) < thr)
        if free.any() or thr > top:
            break
        thr += step_db
    idx = np.flatnonzero(free)
    pick = int(idx[rng.integers(len(idx))])
    n, k = divmod(pick, virt.shape[1])
    return ResourceLocation(n, k)
