"""Ring buffers of what every vehicle sensed over the recent past."""

from __future__ import annotations

import numpy as np

from .scenario import IDLE_DBM


class SensingStore:
    """Energy (dBm) and decoded source per (receiver, sub-frame, sub-channel).

    In ideal MAC mode every listening vehicle senses the same thing, so one
    shared row per sub-frame plus a per-vehicle transmit mask is enough; in
    PHY mode each receiver keeps its own rows.  Reads return NaN energy and
    source -1 for sub-frames a vehicle was deaf to (its own transmissions,
    before it existed, or older than the buffer).
    """

    def __init__(self, capacity: int, n_subch: int, depth: int, shared: bool):
        self.capacity = capacity
        self.n_subch = n_subch
        self.depth = depth
        self.shared = shared
        self.stamp = np.full(depth, -1, dtype=np.int64)
        self.txmask = np.zeros((capacity, depth), dtype=bool)
        self.born = np.zeros(capacity, dtype=np.int64)
        if shared:
            self.energy_buf = np.full((depth, n_subch), IDLE_DBM)
            self.source_buf = np.full((depth, n_subch), -1, dtype=np.int32)
        else:
            self.energy_buf = np.full((capacity, depth, n_subch), np.nan, dtype=np.float32)
            self.source_buf = np.full((capacity, depth, n_subch), -1, dtype=np.int32)

    def reset_slot(self, slot: int, t: int):
        self.born[slot] = t
        self.txmask[slot] = False

    def write(self, t: int, energy, source, tx_slots):
        """``energy``/``source`` are ``(n_subch,)`` rows (shared) or ``(capacity, n_subch)``."""
        h = t % self.depth
        self.stamp[h] = t
        self.txmask[:, h] = False
        if len(tx_slots):
            self.txmask[tx_slots, h] = True
        if self.shared:
            self.energy_buf[h] = energy
            self.source_buf[h] = source
        else:
            self.energy_buf[:, h] = energy
            self.source_buf[:, h] = source

    def _valid(self, slot: int, times: np.ndarray):
        h = times % self.depth
        ok = (self.stamp[h] == times) & (times >= self.born[slot]) & ~self.txmask[slot, h]
        return h, ok

    def energy(self, slot: int, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=np.int64)
        h, ok = self._valid(slot, times)
        e = self.energy_buf[h] if self.shared else self.energy_buf[slot, h]
        return np.where(ok[:, None], e, np.nan).astype(float)

    def source(self, slot: int, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=np.int64)
        h, ok = self._valid(slot, times)
        s = self.source_buf[h] if self.shared else self.source_buf[slot, h]
        return np.where(ok[:, None], s, -1)

    def own_tx(self, slot: int, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=np.int64)
        h = times % self.depth
        return times[(self.stamp[h] == times) & self.txmask[slot, h]]
