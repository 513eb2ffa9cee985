"""Sub-frame offset mapping between virtual and real resource windows.

A virtual location ``{n_subf, n_subch}`` is shifted inside its cyclic-shift
block by ``n_subch * (i - 1)`` sub-frames, where ``i`` is the (1-based) offset
update period of the real location. Indices are zero-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .grid import GridConfig, GridError, ResourceLocation, period_index_of


class InsufficientHistory(GridError):
    pass


@dataclass(frozen=True)
class MappingWindow:
    kind: Literal["virtual", "real"]
    anchor_ms: int
    span_ms: int

    def contains(self, t_ms: int) -> bool:
        return self.anchor_ms <= t_ms < self.anchor_ms + self.span_ms


@dataclass(frozen=True)
class EffectiveArea:
    start_ms: int
    end_ms: int
    periods: tuple[int, ...] = field(default=())

    def __len__(self):
        return self.end_ms - self.start_ms

    def times(self) -> np.ndarray:
        return np.arange(self.start_ms, self.end_ms)


def _check_period(period_index: int):
    if period_index < 1:
        raise GridError(f"period_index must be >= 1, got {period_index}")


def virtual_to_real(loc: ResourceLocation, period_index: int, cfg: GridConfig) -> ResourceLocation:
    _check_period(period_index)
    t_ost = cfg.t_ost_ms
    n, k = loc.subframe_index, loc.subchannel_index
    shift = k * (period_index - 1)
    return ResourceLocation((n + shift) % t_ost + (n // t_ost) * t_ost, k)


def real_to_virtual(loc: ResourceLocation, period_index: int, cfg: GridConfig) -> ResourceLocation:
    _check_period(period_index)
    t_ost = cfg.t_ost_ms
    n, k = loc.subframe_index, loc.subchannel_index
    shift = k * (period_index - 1)
    return ResourceLocation((n - shift) % t_ost + (n // t_ost) * t_ost, k)


def real_to_virtual_subframes(real_subf, subch, period_index, t_ost: int):
    """Vectorised :func:`real_to_virtual` on the sub-frame coordinate only."""
    real_subf = np.asarray(real_subf)
    shift = np.asarray(subch) * (np.asarray(period_index) - 1)
    return (real_subf - shift) % t_ost + (real_subf // t_ost) * t_ost


def real_time_in_window(loc: ResourceLocation, window_index: int, rri_ms: int, cfg: GridConfig) -> int:
    """Absolute transmit time of virtual ``loc`` in the ``window_index``-th RRI window."""
    base = window_index * rri_ms
    block_start = base + (loc.subframe_index // cfg.t_ost_ms) * cfg.t_ost_ms
    real = virtual_to_real(loc, period_index_of(block_start, cfg), cfg)
    return base + real.subframe_index


def next_real_time(loc: ResourceLocation, after_ms: int, rri_ms: int, cfg: GridConfig) -> int:
    """First real occurrence of virtual ``loc`` strictly after ``after_ms``."""
    w = max(after_ms, 0) // rri_ms
    while True:
        t = real_time_in_window(loc, w, rri_ms, cfg)
        if t > after_ms:
            return t
        w += 1


def virtual_location_of(t_ms: int, subch: int, rri_ms: int, cfg: GridConfig) -> ResourceLocation:
    """Virtual location whose real image occupies sub-frame ``t_ms`` on ``subch``."""
    real = ResourceLocation(t_ms % rri_ms, subch)
    return real_to_virtual(real, period_index_of(t_ms - t_ms % cfg.t_ost_ms, cfg), cfg)


def effective_area_at(t_ms: int, rri_ms: int, cfg: GridConfig) -> EffectiveArea:
    """Whole cyclic-shift periods of total length ``rri_ms`` preceding ``t_ms``.

    When those periods would straddle an update-period boundary, the area is
    moved back to the tail of the earlier update period so that one offset
    applies to every slot in it.
    """
    if t_ms < rri_ms:
        raise InsufficientHistory(f"t={t_ms} ms has less than one RRI ({rri_ms} ms) of history")
    t_ost, t_upd = cfg.t_ost_ms, cfg.t_upd_ms
    end = (t_ms // t_ost) * t_ost
    start = end - rri_ms
    boundary = ((end - 1) // t_upd) * t_upd
    if start < boundary:
        end = boundary
        start = end - rri_ms
    periods = tuple(range(start, end, t_ost))
    return EffectiveArea(start, end, periods)
