"""Millisecond-resolution simulation loop binding protocols, channel and metrics."""

from __future__ import annotations

import concurrent.futures as cf
import csv
import io
import math
import os
import time
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import analysis
from .caps import CapsVehicle, Decision, virtual_energy
from .grid import GridConfig
from .metrics import (AoiLedger, ErrorTally, MetricsReport, COLLISION, HD, NONE, PHY,
                      measure_cbr)
from .scenario import (IDLE_DBM, ChannelModel, Freeway, TrafficModel, TrafficState,
                       arrivals_batch, communication_range_m, received_power, shadowing_matrix,
                       step_traffic)
from .sensing import SensingStore
from .offset import effective_area_at, virtual_location_of
from .sps import SENSING_MS, SpsHistory, SpsVehicle, average_rssi

SCHEMES = ("caps", "sps", "spsla")
CSV_COLUMNS = ("scheme", "v", "rri", "t_upd", "cbr", "avg_aoi", "collision_rate",
               "hd_rate", "plr", "r_ht", "r_fd", "d_farther", "seed")
THREADS_ENV = "CAPSIM_THREADS"
SMALL_MSG_BYTES = 190

# rng stream tags
_TRAFFIC, _CHANNEL, _VEHICLE = 1, 2, 3


@dataclass(frozen=True)
class AdaptiveRri:
    enabled: bool = False
    low_cbr: float = 0.40
    high_cbr: float = 0.80
    candidate_rris: tuple[int, ...] = ()
    window_ms: int = 100
    threshold_dbm: float = -95.0


@dataclass(frozen=True)
class SpsParams:
    keep_prob: float = 0.0
    window_ms: int = 100
    rsrp_threshold_dbm: float = -110.0


@dataclass(frozen=True)
class ExperimentConfig:
    scheme: str = "caps"
    grid: GridConfig = field(default_factory=GridConfig)
    traffic: TrafficModel = field(default_factory=TrafficModel)
    channel: ChannelModel = field(default_factory=ChannelModel)
    duration_s: float = 100.0
    seeds: tuple[int, ...] = (0,)
    warmup_ms: int = 1000
    include_warmup: bool = False
    adaptive: AdaptiveRri = field(default_factory=AdaptiveRri)
    message_pattern: tuple[int, ...] = (SMALL_MSG_BYTES,)
    sps: SpsParams = field(default_factory=SpsParams)
    probe_thresholds_dbm: tuple[float, ...] = (-102, -101, -100, -99, -98, -97, -96, -95)
    distance_bin_m: float = 50.0
    report_range_m: float = 1000.0
    geometry_epoch_ms: int = 100

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.duration_s < 1:
            raise ValueError("duration_s must be >= 1")
        if not self.message_pattern or min(self.message_pattern) <= 0:
            raise ValueError("message_pattern needs positive sizes")
        sps = self.sps
        if not (16 <= sps.window_ms <= 100):
            raise ValueError("SPS selection window must lie in [16, 100] ms")
        if not (0.0 <= sps.keep_prob <= 1.0):
            raise ValueError("keep_prob must lie in [0, 1]")
        if self.traffic.kind == "freeway" and self.channel.mode != "freeway_phy":
            raise ValueError("freeway traffic needs the freeway_phy channel")
        if self.traffic.kind != "freeway" and self.channel.mode != "ideal_mac":
            raise ValueError("static/dynamic traffic runs on the ideal_mac channel")
        ad = self.adaptive
        if ad.enabled:
            if self.scheme != "caps":
                raise ValueError("adaptive RRI is only defined for CAPS")
            if not ad.candidate_rris:
                raise ValueError("adaptive RRI needs candidate_rris")
            g = self.grid
            opt = analysis.optimal_rri(g.t_upd_ms, g.n_subch_per_subframe, g.t_ost_ms).practical
            for r in ad.candidate_rris:
                if r % g.t_ost_ms or r > g.t_upd_ms:
                    raise ValueError(f"candidate RRI {r} must be a multiple of t_ost and <= t_upd")
                if r < opt:
                    raise ValueError(f"candidate RRI {r} is below the optimal RRI {opt}")
            if g.rri_ms not in ad.candidate_rris:
                raise ValueError("initial rri_ms must be one of the candidate RRIs")

    @property
    def duration_ms(self) -> int:
        return int(round(self.duration_s * 1000))

    @property
    def measure_from_ms(self) -> int:
        return 0 if self.include_warmup else min(self.warmup_ms, self.duration_ms - 1)


@dataclass(eq=False)
class RunResult:
    report: MetricsReport
    config: ExperimentConfig
    seed: int
    wall_time_s: float = 0.0   # not part of equality

    def __eq__(self, other):
        # compare reports through exact reprs so NaN fields compare equal
        if not isinstance(other, RunResult):
            return NotImplemented
        return (self.seed == other.seed and self.config == other.config
                and repr(self.report.to_dict()) == repr(other.report.to_dict()))

    def csv_row(self) -> dict:
        r, c = self.report, self.config
        return {
            "scheme": c.scheme, "v": c.traffic.v0, "rri": c.grid.rri_ms, "t_upd": c.grid.t_upd_ms,
            "cbr": r.cbr, "avg_aoi": r.avg_aoi_ms, "collision_rate": r.collision_error_rate,
            "hd_rate": r.hd_error_rate, "plr": r.packet_loss_ratio, "r_ht": r.r_ht,
            "r_fd": r.r_fd, "d_farther": r.d_farther_m, "seed": self.seed,
        }


def adapt_rri(current: int, measured_cbr: float, adaptive: AdaptiveRri) -> int:
    """Step to the adjacent shorter/longer candidate when CBR leaves the band."""
    cands = sorted(adaptive.candidate_rris)
    if not cands:
        return current
    if current not in cands:
        return min(cands, key=lambda r: (abs(r - current), r))
    i = cands.index(current)
    if measured_cbr < adaptive.low_cbr and i > 0:
        return cands[i - 1]
    if measured_cbr > adaptive.high_cbr and i < len(cands) - 1:
        return cands[i + 1]
    return current


def _db_to_lin(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


class Simulation:
    """One seeded run. Vehicles live in reusable array slots."""

    def __init__(self, cfg: ExperimentConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.grid = cfg.grid
        self.K = cfg.grid.n_subch_per_subframe
        self.phy = cfg.channel.mode == "freeway_phy"
        self.dynamic = cfg.traffic.kind == "dynamic"
        self.t0 = cfg.measure_from_ms
        self.T = cfg.duration_ms
        self.traffic_rng = np.random.default_rng([seed, _TRAFFIC])
        self.channel_rng = np.random.default_rng([seed, _CHANNEL])
        self.traffic_state = TrafficState.centred(cfg.traffic, cfg.grid.rri_ms)

        v0 = cfg.traffic.v0
        extra = 2 * arrivals_batch(cfg.traffic, cfg.grid.rri_ms) + 8 if self.dynamic else 0
        self.cap = v0 + extra
        rris = (cfg.grid.rri_ms,) + tuple(cfg.adaptive.candidate_rris)
        if cfg.scheme == "caps":
            depth = max(2 * max(rris) + 2 * cfg.grid.t_ost_ms, cfg.adaptive.window_ms) + 1
        else:
            depth = SENSING_MS + 1
        self.store = SensingStore(self.cap, self.K, depth, shared=not self.phy)
        self.depth = depth
        self.ledger = AoiLedger(self.cap, self.t0)
        self.vehicles: list = [None] * self.cap
        self.alive = np.zeros(self.cap, dtype=bool)
        self.free = list(range(self.cap - 1, -1, -1))
        self.next_vid = 0
        self.msg_count = np.zeros(self.cap, dtype=np.int64)
        self.rri_of = np.full(self.cap, cfg.grid.rri_ms, dtype=np.int64)
        self.schedule: dict[int, list] = defaultdict(list)
        self.txlog: list = [None] * depth      # per sub-frame {subch: [vid, ...]}
        self.slot_of: dict[int, int] = {}
        self.announcements: list = []          # (t, subchannels, slot, Announcement)

        self.tally = ErrorTally()
        self.cbr_busy = 0
        self.cbr_seen = 0
        self.window_ms = cfg.grid.rri_ms
        self.collided = np.zeros(self.T // self.window_ms + 1, dtype=np.int64)
        self.n_reselections = 0
        self.max_bits = 0
        self.n_ht = 0
        self.n_col = 0
        self.fd = {float(th): [0, 0] for th in cfg.probe_thresholds_dbm}
        self.n_missing = 0
        self.d_farther_sum = 0.0
        self.local_cbr: list = []
        self.rri_hist: dict = defaultdict(int)
        self.pop_sum = 0
        self.pop_n = 0

        if self.phy:
            nb = int(math.ceil(cfg.report_range_m / cfg.distance_bin_m))
            self.n_bins = nb
            self.bin_area = np.zeros(nb, dtype=np.int64)
            self.bin_time = np.zeros(nb, dtype=np.int64)
            self.plr_tot = np.zeros(nb, dtype=np.int64)
            self.plr_fail = np.zeros(nb, dtype=np.int64)
            self.road = Freeway.place(cfg.traffic, self.cap, self.traffic_rng)
            self.noise_lin = 10 ** (cfg.channel.noise_dbm / 10)
            self.gamma_lin = 10 ** (cfg.channel.sinr_capture_db / 10)
            self.sens = cfg.channel.sensitivity_dbm
            self._geometry(0, flush=False)

        for _ in range(v0):
            self._spawn(0)

    # -- population -------------------------------------------------------
    def _vehicle_rng(self, vid: int):
        return np.random.default_rng([self.seed, _VEHICLE, vid])

    def _spawn(self, t: int):
        slot = self.free.pop()
        vid = self.next_vid
        self.next_vid += 1
        cfg = self.cfg
        rng = self._vehicle_rng(vid)
        rri = cfg.grid.rri_ms
        if cfg.scheme == "caps":
            veh = CapsVehicle(vid, rri, rng, e_thre_dbm=self._caps_threshold())
            veh.random_start(t, self.grid)
        else:
            veh = SpsVehicle(vid, rri, rng, keep_prob=cfg.sps.keep_prob, window_ms=cfg.sps.window_ms,
                             rsrp_thr_dbm=cfg.sps.rsrp_threshold_dbm,
                             look_ahead=cfg.scheme == "spsla")
            veh.random_start(t, self.K)
        veh.slot = slot
        self.vehicles[slot] = veh
        self.alive[slot] = True
        self.slot_of[vid] = slot
        self.msg_count[slot] = int(rng.integers(len(cfg.message_pattern)))
        self.rri_of[slot] = rri
        self.store.reset_slot(slot, t)
        self.ledger.add(slot, t, vid)
        self.schedule[veh.next_tx].append(slot)

    def _depart(self, slot: int, t: int):
        veh = self.vehicles[slot]
        self.ledger.remove(slot, t)
        self.vehicles[slot] = None
        self.alive[slot] = False
        del self.slot_of[veh.vid]
        self.free.append(slot)

    def _caps_threshold(self) -> float:
        return self.cfg.channel.collision_detect_threshold_dbm

    def _traffic(self, t: int):
        arr, dep = step_traffic(self.cfg.traffic, self.traffic_state, t, self.grid.rri_ms,
                                self.traffic_rng)
        if dep:
            alive = np.flatnonzero(self.alive)
            dep = min(dep, len(alive))
            for slot in self.traffic_rng.choice(alive, size=dep, replace=False):
                self._depart(int(slot), t)
        for _ in range(arr):
            if not self.free:
                raise RuntimeError("vehicle capacity exhausted")
            self._spawn(t)

    # -- geometry (freeway) ------------------------------------------------
    def _geometry(self, t: int, flush: bool = True):
        cfg = self.cfg
        if flush:
            self.ledger.flush_binned(t, self.bin_idx, self.bin_area, self.bin_time)
            self.road.advance(cfg.geometry_epoch_ms)
        self.dist = self.road.distances()
        shadow = shadowing_matrix(self.cap, cfg.channel.shadowing_sigma_db, self.channel_rng)
        self.P = received_power(self.dist, cfg.channel, shadow)
        np.fill_diagonal(self.P, -np.inf)
        self.lin = _db_to_lin(self.P)
        b = np.floor(self.dist / cfg.distance_bin_m).astype(np.int64)
        b[self.dist >= cfg.report_range_m] = -1
        np.fill_diagonal(b, -1)
        self.bin_idx = b

    # -- adaptive RRI -----------------------------------------------------
    def _adapt(self, t: int):
        ad = self.cfg.adaptive
        times = np.arange(t - ad.window_ms, t)
        samples = []
        for slot in np.flatnonzero(self.alive):
            veh = self.vehicles[slot]
            cbr = measure_cbr(self.store.energy(slot, times), ad.threshold_dbm)
            samples.append(cbr)
            new = adapt_rri(veh.rri_ms, cbr, ad)
            if t >= self.t0:
                self.rri_hist[veh.rri_ms] += 1
            if new != veh.rri_ms:
                veh.rri_ms = new
                self.rri_of[slot] = new
                self._caps_reselect(slot, t)
        if t >= self.t0 and samples:
            self.local_cbr.append(float(np.mean(samples)))

    # -- protocol hooks ---------------------------------------------------
    def _caps_reselect(self, slot: int, t: int):
        veh = self.vehicles[slot]
        if t < veh.rri_ms or t - self.store.born[slot] < veh.rri_ms:
            veh.random_start(t + 1, self.grid)
        else:
            veh.select(t, lambda times: self.store.energy(slot, times), self.grid)
        self.schedule[veh.next_tx].append(slot)
        self.n_reselections += 1

    def _sps_history(self, slot: int, t: int) -> SpsHistory:
        lo = max(0, t - SENSING_MS, int(self.store.born[slot]))
        times = np.arange(lo, t)
        energy = self.store.energy(slot, times)
        source = self.store.source(slot, times)
        anns = []
        if self.announcements:
            self.announcements = [a for a in self.announcements
                                  if t < a[3].start_ms + a[3].rri_ms]
            for ta, ks, src_slot, ann in self.announcements:
                if ta < lo or ta >= t or src_slot == slot:
                    continue
                if self.store.source(slot, [ta])[0, ks[0]] == src_slot:
                    anns.append(ann)
        return SpsHistory(times, energy, energy, source, self.rri_of,
                          self.store.own_tx(slot, times), anns)

    # -- main loop --------------------------------------------------------
    def run(self) -> MetricsReport:
        for t in range(self.T):
            self.tick(t)
        return self._finish()

    def tick(self, t: int):
        """Everything that happens in sub-frame ``t``."""
        cfg = self.cfg
        if t:
            if self.dynamic and t % self.grid.rri_ms == 0:
                self._traffic(t)
            if self.phy and t % cfg.geometry_epoch_ms == 0:
                self._geometry(t)
            if cfg.adaptive.enabled and t % self.grid.t_upd_ms == 0:
                self._adapt(t)
        if t >= self.t0:
            self.pop_sum += int(self.alive.sum())
            self.pop_n += 1
        self._step(t)

    def _transmitters(self, t: int):
        entries = self.schedule.pop(t, None)
        if not entries:
            return []
        out = []
        seen = set()
        for slot in entries:
            veh = self.vehicles[slot]
            if veh is None or veh.next_tx != t or slot in seen:
                continue
            seen.add(slot)
            out.append(slot)
        return out

    def _subchannels(self, slot: int, k: int, t: int) -> tuple[int, ...]:
        """Sub-channels used at ``t``: the reserved one, plus a neighbour for large messages.

        The extra sub-channel is whichever adjacent one the sender's own
        sensing reports quieter at this sub-frame (upper on ties).
        """
        pat = self.cfg.message_pattern
        size = pat[self.msg_count[slot] % len(pat)]
        self.msg_count[slot] += 1
        if size <= SMALL_MSG_BYTES or self.K == 1:
            return (k,)
        cands = [j for j in (k + 1, k - 1) if 0 <= j < self.K]
        if len(cands) == 1:
            return (k, cands[0])
        e = self._sensed_at(slot, t, cands)
        e = np.where(np.isnan(e), np.inf, e)
        return (k, cands[int(np.argmin(e))])

    def _sensed_at(self, slot: int, t: int, cands: list[int]) -> np.ndarray:
        """Energy the sender expects on ``cands`` at sub-frame ``t`` from its own history."""
        veh = self.vehicles[slot]
        rri = veh.rri_ms
        if t < rri or t - self.store.born[slot] < rri:
            return np.zeros(len(cands))
        if self.cfg.scheme == "caps":
            area = effective_area_at(t, rri, self.grid)
            times = area.times()
            virt = virtual_energy(times, self.store.energy(slot, times), rri, self.grid)
            n = [virtual_location_of(t, k, rri, self.grid).subframe_index for k in cands]
            return virt[n, cands]
        hist = self._sps_history(slot, t)
        return average_rssi(np.array([t]), rri, hist)[0, cands]

    def _step(self, t: int):
        txs = self._transmitters(t)
        measuring = t >= self.t0
        K = self.K
        if not txs:
            if self.phy:
                e = np.full((self.cap, K), IDLE_DBM)
                e[~self.alive] = np.nan
                self.store.write(t, e, -1, [])
                if measuring:
                    self.cbr_seen += int(self.alive.sum()) * K
            else:
                self.store.write(t, IDLE_DBM, -1, [])
                if measuring:
                    self.cbr_seen += K
            self.txlog[t % self.depth] = None
            return

        caps = self.cfg.scheme == "caps"
        subs = []
        msgs = []
        for slot in txs:
            veh = self.vehicles[slot]
            subs.append(self._subchannels(slot, veh.resource.subchannel_index, t))
            if caps:
                m = veh.build_collab(t, K)
                if m.encoded_bits > self.max_bits:
                    self.max_bits = m.encoded_bits
                msgs.append(m)
        tx_arr = np.array(txs, dtype=np.int64)
        occ = defaultdict(list)
        for slot, ks in zip(txs, subs):
            for k in ks:
                occ[k].append(slot)
        if caps:
            self.txlog[t % self.depth] = {k: [self.vehicles[s].vid for s in v] for k, v in occ.items()}

        rx_base = self.alive.copy()
        rx_base[tx_arr] = False
        if self.phy:
            decoded, hears = self._resolve_phy(t, txs, subs, occ, rx_base, measuring)
        else:
            decoded, hears = self._resolve_ideal(t, txs, subs, occ, rx_base, measuring)

        # AoI
        dec_idx = [i for i, d in enumerate(decoded) if d]
        if dec_idx:
            if self.phy:
                mask = hears[dec_idx]
            else:
                mask = np.broadcast_to(rx_base, (len(dec_idx), self.cap))
            self.ledger.receive(tx_arr[dec_idx], mask, t)

        self.collided[t // self.window_ms] += sum(
            1 for ks in subs if any(len(occ[k]) > 1 for k in ks))

        if caps:
            self._caps_after(t, txs, subs, msgs, decoded, hears, rx_base)
        else:
            self._sps_after(t, txs, subs)

    # -- ideal MAC resolution --------------------------------------------
    def _resolve_ideal(self, t, txs, subs, occ, rx_base, measuring):
        K = self.K
        ch = self.cfg.channel
        energy = np.full(K, IDLE_DBM)
        source = np.full(K, -1, dtype=np.int32)
        for k, owners in occ.items():
            energy[k] = ch.ideal_rx_dbm
            if len(owners) == 1:
                source[k] = owners[0]
        self.store.write(t, energy, source, txs)
        decoded = [all(len(occ[k]) == 1 for k in ks) for ks in subs]
        if measuring:
            n_alive = int(self.alive.sum())
            n_tx = len(txs)
            self.cbr_busy += len(occ)
            self.cbr_seen += K
            for d in decoded:
                others = n_alive - 1
                hd = n_tx - 1
                self.tally.add(HD, hd)
                self.tally.add(NONE if d else COLLISION, others - hd)
        # suspected collisions: every listener senses energy without a decode
        self._suspects = [k for k, owners in occ.items() if len(owners) > 1]
        return decoded, None

    # -- PHY resolution -----------------------------------------------------
    def _resolve_phy(self, t, txs, subs, occ, rx_base, measuring):
        cap, K = self.cap, self.K
        half = np.array([0.5 if len(ks) > 1 else 1.0 for ks in subs])
        lin = self.lin[txs] * half[:, None]          # per-sub-channel power
        inr = (10 * np.log10(np.maximum(lin, 1e-300))) >= self.sens
        index = {s: i for i, s in enumerate(txs)}
        energy = np.full((cap, K), IDLE_DBM)
        source = np.full((cap, K), -1, dtype=np.int32)
        n_in = np.zeros((cap, K), dtype=np.int64)
        far = np.zeros((cap, K))
        for k, owners in occ.items():
            rows = [index[s] for s in owners]
            L = lin[rows]
            tot = L.sum(axis=0)
            b = L.argmax(axis=0)
            best = L[b, np.arange(cap)]
            sinr = best / (tot - best + self.noise_lin)
            with np.errstate(divide="ignore"):
                energy[:, k] = np.where(tot > 0, 10 * np.log10(np.maximum(tot, 1e-300)), IDLE_DBM)
            src = np.array(owners)[b]
            source[:, k] = np.where(sinr >= self.gamma_lin, src, -1)
            inrange = inr[rows]
            n_in[:, k] = inrange.sum(axis=0)
            d = np.where(inrange, self.dist[owners], 0.0)
            far[:, k] = d.max(axis=0)
        listen = rx_base
        energy[~listen] = np.nan
        source[~listen] = -1
        self.store.write(t, energy, source, txs)

        hears = np.zeros((len(txs), cap), dtype=bool)
        for i, (s, ks) in enumerate(zip(txs, subs)):
            h = listen.copy()
            for k in ks:
                h &= source[:, k] == s
            hears[i] = h
        decoded = [bool(h.any()) for h in hears]

        valid = listen[:, None] & np.ones((1, K), dtype=bool)
        if measuring:
            seen = valid
            self.cbr_busy += int((energy[seen] > self.cfg.channel.collision_detect_threshold_dbm).sum())
            self.cbr_seen += int(seen.sum())
            undecoded = valid & (source < 0)
            for th, acc in self.fd.items():
                det = undecoded & (energy > th)
                acc[0] += int((det & (n_in < 2)).sum())
                acc[1] += int(det.sum())
            miss = valid & (source >= 0) & (n_in >= 2)
            self.n_missing += int(miss.sum())
            self.d_farther_sum += float(far[miss].sum())
            self._tally_phy(txs, subs, occ, lin, hears, index)

        thr = self.cfg.channel.collision_detect_threshold_dbm
        sus = valid & (source < 0) & (energy > thr)
        self._suspects_phy = np.argwhere(sus)
        return decoded, hears

    def _tally_phy(self, txs, subs, occ, lin, hears, index):
        alive = self.alive
        tx_mask = np.zeros(self.cap, dtype=bool)
        tx_mask[txs] = True
        for i, (s, ks) in enumerate(zip(txs, subs)):
            bins = self.bin_idx[s]
            rx = alive & (bins >= 0)
            rx[s] = False
            if not rx.any():
                continue
            hd = rx & tx_mask
            ok = rx & hears[i]
            shared = any(len(occ[k]) > 1 for k in ks)
            clean = 10 * np.log10(np.maximum(lin[i], 1e-300)) >= self.sens
            fail = rx & ~hd & ~ok
            coll = fail & clean if shared else np.zeros_like(fail)
            phy = fail & ~coll
            self.tally.add(HD, int(hd.sum()))
            self.tally.add(NONE, int(ok.sum()))
            self.tally.add(COLLISION, int(coll.sum()))
            self.tally.add(PHY, int(phy.sum()))
            np.add.at(self.plr_tot, bins[rx], 1)
            np.add.at(self.plr_fail, bins[rx & ~ok], 1)

    # -- protocol reactions -------------------------------------------------
    def _caps_after(self, t, txs, subs, msgs, decoded, hears, rx_base):
        veh_list = self.vehicles
        if self.phy:
            for r, k in self._suspects_phy:
                veh_list[r].sense(t, int(k), math.inf, False)
        elif self._suspects:
            listeners = np.flatnonzero(rx_base)
            e = self.cfg.channel.ideal_rx_dbm
            for k in self._suspects:
                for r in listeners:
                    veh_list[r].sense(t, k, e, False)

        for i, (s, m) in enumerate(zip(txs, msgs)):
            if not m.entries or not decoded[i]:
                continue
            for tau, k in m.absolute():
                log = self.txlog[tau % self.depth]
                if log is None or tau < t - self.depth:
                    continue
                owners = [self.slot_of[v] for v in log.get(k, ()) if v in self.slot_of]
                for o in owners:
                    if o == s:
                        continue
                    if self.phy:
                        heard = bool(hears[i, o])
                    else:
                        heard = bool(rx_base[o])
                    if not heard:
                        continue
                    veh = veh_list[o]
                    if veh.handle_collab((tau, k), t) is Decision.RESELECT:
                        self.n_col += 1
                        if self.phy and any(c != o and self.P[c, o] < self.sens for c in owners):
                            self.n_ht += 1
                        self._caps_reselect(o, t)

        for s, ks in zip(txs, subs):
            veh = veh_list[s]
            # only the reserved sub-channel is persistent, so only it is defended
            veh.record_tx(t, ks[:1])
            self.schedule[veh.advance(t, self.grid)].append(s)

    def _sps_after(self, t, txs, subs):
        for s, ks in zip(txs, subs):
            veh = self.vehicles[s]
            before = veh.resource
            outcome = veh.on_transmit(t, lambda tt, s=s: self._sps_history(s, tt))
            if outcome == "reselect" and veh.resource != before:
                self.n_reselections += 1
            ann = veh.announcement()
            if ann is not None and outcome == "plan":
                self.announcements.append((t, ks, s, ann))
            self.schedule[veh.next_tx].append(s)

    # -- wrap up ----------------------------------------------------------
    def _finish(self) -> MetricsReport:
        cfg = self.cfg
        if self.phy:
            self.ledger.flush_binned(self.T, self.bin_idx, self.bin_area, self.bin_time)
        self.ledger.finalize(self.T)
        tally = self.tally
        aoi_by_d = {}
        plr_by_d = {}
        if self.phy:
            w = cfg.distance_bin_m
            for b in range(self.n_bins):
                centre = (b + 0.5) * w
                if self.bin_time[b]:
                    aoi_by_d[centre] = self.bin_area[b] / self.bin_time[b]
                if self.plr_tot[b]:
                    plr_by_d[centre] = self.plr_fail[b] / self.plr_tot[b]
        thr = float(cfg.channel.collision_detect_threshold_dbm)
        n_fd, n_cd = self.fd.get(thr, [0, 0]) if self.phy else (0, 0)
        report = MetricsReport(
            avg_aoi_ms=self.ledger.average,
            cbr=self.cbr_busy / self.cbr_seen if self.cbr_seen else 0.0,
            collision_error_rate=tally.rate(COLLISION),
            hd_error_rate=tally.rate(HD),
            packet_loss_ratio=tally.loss_ratio,
            per_vehicle_aoi=self.ledger.per_vehicle(),
            error_counts=dict(tally.counts),
            plr_by_distance=plr_by_d,
            aoi_by_distance=aoi_by_d,
            n_ht=self.n_ht,
            n_col=self.n_col,
            n_fd=n_fd,
            n_cd=n_cd,
            fd_by_threshold={k: tuple(v) for k, v in self.fd.items()} if self.phy else {},
            n_missing=self.n_missing,
            d_farther_m=self.d_farther_sum / self.n_missing if self.n_missing else math.nan,
            collisions_per_window=self.collided.tolist(),
            window_ms=self.window_ms,
            n_reselections=self.n_reselections,
            max_collab_bits=self.max_bits,
            local_cbr_samples=self.local_cbr,
            rri_histogram=dict(sorted(self.rri_hist.items())),
            mean_population=self.pop_sum / self.pop_n if self.pop_n else math.nan,
            communication_range_m=communication_range_m(cfg.channel) if self.phy else math.nan,
        )
        return report


def run(config: ExperimentConfig, seed: int | None = None) -> RunResult:
    seed = config.seeds[0] if seed is None else seed
    t_start = time.perf_counter()
    report = Simulation(config, seed).run()
    return RunResult(report, config, seed, time.perf_counter() - t_start)


# ---------------------------------------------------------------------------
# sweeps and CSV
# ---------------------------------------------------------------------------

def with_axis(config: ExperimentConfig, name: str, value) -> ExperimentConfig:
    """Copy of ``config`` with one sweep axis set."""
    if name == "v":
        return replace(config, traffic=replace(config.traffic, v0=int(value)))
    if name == "rri":
        return replace(config, grid=config.grid.with_rri(int(value)))
    if name == "t_upd":
        return replace(config, grid=replace(config.grid, t_upd_ms=int(value)))
    if name == "t_ost":
        return replace(config, grid=replace(config.grid, t_ost_ms=int(value)))
    if name == "scheme":
        return replace(config, scheme=str(value))
    if name in ("x", "rate"):
        return replace(config, traffic=replace(config.traffic, x=float(value), y=float(value)))
    if name == "speed":
        return replace(config, traffic=replace(config.traffic, speed_kmh=float(value)))
    if name == "duration":
        return replace(config, duration_s=float(value))
    raise ValueError(f"unknown sweep axis {name!r}")


def _run_point(args):
    config, seed = args
    try:
        return run(config, seed)
    except Exception as exc:  # one bad point must not sink the sweep
        return exc


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class SweepPoint:
    axis_value: object
    results: list
    error: str | None = None

    def mean(self, attr: str) -> float:
        vals = [getattr(r.report, attr) for r in self.results]
        return float(np.mean(vals)) if vals else math.nan

    def std(self, attr: str) -> float:
        vals = [getattr(r.report, attr) for r in self.results]
        return float(np.std(vals)) if vals else math.nan


def sweep(config: ExperimentConfig, axis: str | None = None, values: Sequence = (),
          seeds: Iterable[int] | None = None, workers: int | None = None) -> list[SweepPoint]:
    seeds = list(config.seeds if seeds is None else seeds)
    points = []
    for v in (values if axis and values else [None]):
        try:
            points.append((v, config if v is None else with_axis(config, axis, v), None))
        except Exception as exc:
            points.append((v, None, f"{type(exc).__name__}: {exc}"))
    jobs = []
    for idx, (v, cfg, err) in enumerate(points):
        if err is None:
            for s in seeds:
                jobs.append((idx, (cfg, s)))
    workers = _workers() if workers is None else workers
    if workers > 1:
        with cf.ProcessPoolExecutor(workers) as ex:
            outs = list(ex.map(_run_point, [j[1] for j in jobs]))
    else:
        outs = [_run_point(j[1]) for j in jobs]
    table = [SweepPoint(v, [], err) for v, _, err in points]
    for (idx, _), out in zip(jobs, outs):
        if isinstance(out, Exception):
            table[idx].error = f"{type(out).__name__}: {out}"
        else:
            table[idx].results.append(out)
    return table


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(results: Iterable[RunResult], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        row = r.csv_row()
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def csv_text(results: Iterable[RunResult]) -> str:
    buf = io.StringIO()
    write_csv(results, buf)
    return buf.getvalue()
