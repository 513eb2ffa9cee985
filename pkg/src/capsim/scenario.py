"""Traffic flows, freeway mobility and the sidelink channel abstraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Mapping

import numpy as np

from .caps import SlotOutcome, SlotStatus
from .grid import ResourceLocation

SPEED_OF_LIGHT = 299_792_458.0
IDLE_DBM = -200.0   # ideal MAC: what an empty sub-channel reads


@dataclass(frozen=True)
class TrafficModel:
    kind: Literal["static", "dynamic", "freeway"] = "static"
    v0: int = 40
    x: float = 0.0
    y: float = 0.0
    poisson: bool = False
    length_m: float = 2000.0
    lanes: int = 6
    lane_width_m: float = 4.0
    speed_kmh: float = 70.0

    def __post_init__(self):
        if self.v0 < 1:
            raise ValueError("v0 must be >= 1")
        if self.kind == "static" and (self.x or self.y):
            raise ValueError("static traffic has no arrivals or departures")
        if self.kind == "dynamic" and not math.isclose(self.x, self.y):
            raise ValueError("dynamic traffic requires x == y")
        if self.kind not in ("static", "dynamic", "freeway"):
            raise ValueError(f"unknown traffic kind {self.kind!r}")


@dataclass(frozen=True)
class WinnerB1Los:
    """WINNER+ B1 line-of-sight path loss constants (heights in m, fc in GHz)."""

    h_tx_m: float = 1.5
    h_rx_m: float = 1.5
    h_env_m: float = 1.0
    near_slope: float = 22.7
    near_offset: float = 41.0
    near_freq: float = 20.0
    far_slope: float = 40.0
    far_offset: float = 9.45
    height_coef: float = 17.3
    far_freq: float = 2.7
    min_distance_m: float = 1.0

    def breakpoint_m(self, carrier_ghz: float) -> float:
        h1 = self.h_tx_m - self.h_env_m
        h2 = self.h_rx_m - self.h_env_m
        return 4 * h1 * h2 * carrier_ghz * 1e9 / SPEED_OF_LIGHT

    def loss_db(self, d_m, carrier_ghz: float):
        d = np.maximum(np.asarray(d_m, dtype=float), self.min_distance_m)
        h1 = self.h_tx_m - self.h_env_m
        h2 = self.h_rx_m - self.h_env_m
        fc = carrier_ghz / 5.0
        near = self.near_slope * np.log10(d) + self.near_offset + self.near_freq * np.log10(fc)
        far = (self.far_slope * np.log10(d) + self.far_offset
               - self.height_coef * (math.log10(h1) + math.log10(h2))
               + self.far_freq * np.log10(fc))
        return np.where(d <= self.breakpoint_m(carrier_ghz), near, far)


@dataclass(frozen=True)
class ChannelModel:
    mode: Literal["ideal_mac", "freeway_phy"] = "ideal_mac"
    tx_power_dbm: float = 23.0
    carrier_ghz: float = 5.9
    shadowing_sigma_db: float = 3.0
    collision_detect_threshold_dbm: float = -95.0
    sinr_capture_db: float = 3.0
    noise_dbm: float = -104.7   # 2.16 MHz sub-channel, 6 dB noise figure
    ideal_rx_dbm: float = -80.0
    pathloss: WinnerB1Los = field(default_factory=WinnerB1Los)

    @property
    def sensitivity_dbm(self) -> float:
        """Weakest interference-free signal that still decodes."""
        return self.noise_dbm + self.sinr_capture_db


# ---------------------------------------------------------------------------
# traffic
# ---------------------------------------------------------------------------

@dataclass
class TrafficState:
    arrival_credit: float = 0.0
    departure_credit: float = 0.0

    @classmethod
    def centred(cls, model: TrafficModel, rri_ms: int) -> "TrafficState":
        """Credits that round instead of floor, so the population averages v0."""
        return cls(arrivals_batch(model, rri_ms) / 2, 0.5)


def arrivals_batch(model: TrafficModel, rri_ms: int) -> int:
    return math.ceil(round(model.x * model.v0 * rri_ms / 1000, 9))


def step_traffic(model: TrafficModel, state: TrafficState, t_ms: int, rri_ms: int,
                 rng: np.random.Generator) -> tuple[int, int]:
    """Arrivals and departures to apply at an RRI boundary.

    Deterministic mode releases arrivals in batches of A_r once enough
    expected arrivals have accumulated, so the long-run rate is x*v0 per
    second, and departs floor of the accumulated expectation each window
    (alternating floor/ceil for fractional L_e).  Start from
    :meth:`TrafficState.centred` to keep the mean population at v0.
    """
    if model.kind != "dynamic" or t_ms % rri_ms:
        return 0, 0
    lam_in = model.x * model.v0 * rri_ms / 1000
    lam_out = model.y * model.v0 * rri_ms / 1000
    if model.poisson:
        return int(rng.poisson(lam_in)), int(rng.poisson(lam_out))
    a_r = arrivals_batch(model, rri_ms)
    state.arrival_credit += lam_in
    arrivals = 0
    if a_r and state.arrival_credit >= a_r - 1e-9:
        arrivals = a_r
        state.arrival_credit -= a_r
    state.departure_credit += lam_out
    departures = int(math.floor(state.departure_credit + 1e-9))
    state.departure_credit -= departures
    return arrivals, departures


@dataclass
class Freeway:
    """Vehicles on a straight multi-lane road that wraps at both ends."""

    model: TrafficModel
    x: np.ndarray
    lane: np.ndarray
    direction: np.ndarray

    @classmethod
    def place(cls, model: TrafficModel, n: int, rng: np.random.Generator) -> "Freeway":
        x = rng.uniform(0, model.length_m, n)
        lane = rng.integers(0, model.lanes, n)
        half = model.lanes // 2
        direction = np.where(lane < half, 1.0, -1.0)
        return cls(model, x, lane, direction)

    @property
    def y(self) -> np.ndarray:
        return self.lane * self.model.lane_width_m

    def advance(self, dt_ms: float):
        step = self.model.speed_kmh / 3.6 * dt_ms / 1000
        self.x = (self.x + self.direction * step) % self.model.length_m

    def distances(self) -> np.ndarray:
        dx = np.abs(self.x[:, None] - self.x[None, :])
        dx = np.minimum(dx, self.model.length_m - dx)
        dy = self.y[:, None] - self.y[None, :]
        return np.hypot(dx, dy)


def shadowing_matrix(n: int, sigma_db: float, rng: np.random.Generator) -> np.ndarray:
    """Symmetric log-normal shadowing (dB) for every pair, zero diagonal."""
    s = rng.normal(0.0, sigma_db, (n, n)) if sigma_db > 0 else np.zeros((n, n))
    s = np.triu(s, 1)
    return s + s.T


def received_power(distance_m, channel: ChannelModel, shadow_db=0.0, tx_power_dbm=None):
    p = channel.tx_power_dbm if tx_power_dbm is None else tx_power_dbm
    return p - channel.pathloss.loss_db(distance_m, channel.carrier_ghz) + shadow_db


def communication_range_m(channel: ChannelModel, hi_m: float = 1e5) -> float:
    """Distance where an interference-free packet decodes half the time.

    Shadowing is zero-median, so this is where the median received power
    meets the sensitivity.
    """
    lo, hi = channel.pathloss.min_distance_m, hi_m
    if received_power(lo, channel) < channel.sensitivity_dbm:
        return 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if received_power(mid, channel) >= channel.sensitivity_dbm:
            lo = mid
        else:
            hi = mid
    return lo


def dbm_sum(values_dbm) -> float:
    v = np.asarray(values_dbm, dtype=float)
    if v.size == 0:
        return -math.inf
    return float(10 * np.log10(np.sum(np.power(10.0, v / 10))))


def resolve_slot(powers_dbm: Mapping[int, float], receiver_transmitting: bool,
                 channel: ChannelModel, location: ResourceLocation | None = None) -> SlotOutcome:
    """Outcome of one sub-channel at one receiver.

    ``powers_dbm`` maps each transmitter on the sub-channel to its received
    power.  In ideal mode only the transmitter count matters.
    """
    loc = location or ResourceLocation(0, 0)
    if receiver_transmitting:
        return SlotOutcome(loc, SlotStatus.HD_DEAF, math.nan)
    n = len(powers_dbm)
    if channel.mode == "ideal_mac":
        if n == 0:
            return SlotOutcome(loc, SlotStatus.IDLE, IDLE_DBM)
        if n == 1:
            (src,) = powers_dbm
            return SlotOutcome(loc, SlotStatus.DECODED, channel.ideal_rx_dbm, src)
        return SlotOutcome(loc, SlotStatus.SUSPECTED, channel.ideal_rx_dbm)
    if n == 0:
        return SlotOutcome(loc, SlotStatus.IDLE, -math.inf)
    ids = list(powers_dbm)
    p = np.array([powers_dbm[i] for i in ids])
    lin = np.power(10.0, p / 10)
    best = int(np.argmax(lin))
    interference = lin.sum() - lin[best] + 10 ** (channel.noise_dbm / 10)
    sinr_db = 10 * math.log10(lin[best] / interference)
    energy = float(10 * np.log10(lin.sum()))
    if sinr_db >= channel.sinr_capture_db:
        return SlotOutcome(loc, SlotStatus.DECODED, energy, ids[best])
    if energy > channel.collision_detect_threshold_dbm:
        return SlotOutcome(loc, SlotStatus.SUSPECTED, energy)
    return SlotOutcome(loc, SlotStatus.IDLE, energy)
