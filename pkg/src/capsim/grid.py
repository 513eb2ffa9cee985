"""Resource lattice and clock arithmetic.

One sub-frame is 1 ms, so all times are integer millisecond counters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    n_subch_per_subframe: int = 4
    rri_ms: int = 50
    t_ost_ms: int = 10
    t_upd_ms: int = 1000
    bandwidth_subchannels: int | None = None

    def __post_init__(self):
        if self.n_subch_per_subframe < 1:
            raise GridError("n_subch_per_subframe must be >= 1")
        if self.rri_ms < 1 or self.t_ost_ms < 1 or self.t_upd_ms < 1:
            raise GridError("rri_ms, t_ost_ms and t_upd_ms must be >= 1")
        if self.rri_ms % self.t_ost_ms or self.t_upd_ms % self.t_ost_ms:
            raise GridError(
                f"t_ost_ms={self.t_ost_ms} must divide rri_ms={self.rri_ms} "
                f"and t_upd_ms={self.t_upd_ms}"
            )
        if self.t_upd_ms < self.rri_ms:
            raise GridError("t_upd_ms must be >= rri_ms")
        if self.bandwidth_subchannels is None:
            object.__setattr__(self, "bandwidth_subchannels", self.n_subch_per_subframe)

    @property
    def n_subf(self) -> int:
        """Sub-frames per mapping window (the window spans one RRI)."""
        return self.rri_ms

    @property
    def c(self) -> int:
        return subchannels_per_rri(self)

    def with_rri(self, rri_ms: int) -> "GridConfig":
        return replace(self, rri_ms=rri_ms)


@dataclass(frozen=True, order=True)
class ResourceLocation:
    subframe_index: int
    subchannel_index: int

    def check(self, n_subf: int, n_subch: int) -> "ResourceLocation":
        if not (0 <= self.subframe_index < n_subf and 0 <= self.subchannel_index < n_subch):
            raise GridError(f"{self} outside a {n_subf}x{n_subch} window")
        return self


@dataclass(frozen=True)
class SimClock:
    now_ms: int
    t_upd_ms: int

    @property
    def upd_period_index(self) -> int:
        return self.now_ms // self.t_upd_ms + 1


def subchannels_per_rri(cfg: GridConfig) -> int:
    return cfg.rri_ms * cfg.n_subch_per_subframe


def period_index_of(t_ms: int, cfg: GridConfig) -> int:
    """Offset update period containing ``t_ms``; the first period is 1."""
    if t_ms < 0:
        raise GridError("t_ms must be >= 0")
    return t_ms // cfg.t_upd_ms + 1
