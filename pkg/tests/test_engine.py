import dataclasses
import math

import numpy as np
import pytest

from capsim import ChannelModel, ExperimentConfig, GridConfig, TrafficModel, adapt_rri, run, sweep
from capsim.engine import AdaptiveRri, SpsParams, Simulation, csv_text, with_axis

SMALL = GridConfig(4, 10, 10, 50)


def _cfg(**kw):
    base = dict(grid=SMALL, traffic=TrafficModel(v0=20), duration_s=3)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.mark.parametrize("scheme", ["caps", "sps", "spsla"])
def test_single_vehicle(scheme):
    r = run(_cfg(scheme=scheme, traffic=TrafficModel(v0=1))).report
    assert r.error_counts.get("collision", 0) == 0
    assert r.error_counts.get("hd", 0) == 0
    assert math.isnan(r.avg_aoi_ms)


@pytest.mark.parametrize("scheme", ["caps", "sps", "spsla"])
def test_full_grid_runs(scheme):
    r = run(_cfg(scheme=scheme, traffic=TrafficModel(v0=40), duration_s=2)).report
    assert 0 < r.cbr <= 1
    assert r.avg_aoi_ms > 0


@pytest.mark.parametrize("scheme", ["caps", "sps", "spsla"])
def test_replay_is_byte_identical(scheme):
    cfg = _cfg(scheme=scheme, traffic=TrafficModel(kind="dynamic", v0=20, x=0.7, y=0.7))
    a, b = run(cfg, 5), run(cfg, 5)
    assert a == b
    assert csv_text([a]) == csv_text([b])
    assert csv_text([run(cfg, 6)]) != csv_text([a])


def test_caps_converges_to_zero_collisions():
    cfg = _cfg(grid=GridConfig(5, 10, 10, 200), traffic=TrafficModel(v0=40), duration_s=20)
    r = run(cfg, 0).report
    w = r.convergence_window()
    assert w is not None and w * r.window_ms < 10_000
    assert sum(r.collisions_per_window[w:]) == 0


def test_static_cbr_matches_occupancy():
    r = run(_cfg(traffic=TrafficModel(v0=12), duration_s=5)).report
    assert r.cbr == pytest.approx(12 / 40)


def test_ideal_channel_has_no_false_detection():
    r = run(_cfg()).report
    assert r.n_fd == 0 and r.n_missing == 0


def test_dynamic_population_conserved():
    cfg = ExperimentConfig(grid=GridConfig(4, 50, 10, 200),
                           traffic=TrafficModel(kind="dynamic", v0=40, x=0.7, y=0.7), duration_s=100)
    r = run(cfg, 0).report
    assert r.mean_population == pytest.approx(40, rel=0.02)


def test_warmup_excluded_by_default():
    cfg = _cfg(duration_s=2)
    a = run(cfg).report
    b = run(dataclasses.replace(cfg, include_warmup=True)).report
    assert a.avg_aoi_ms != b.avg_aoi_ms


def test_freeway_run_reports_distance_bins():
    cfg = ExperimentConfig(grid=GridConfig(4, 50, 10, 200),
                           traffic=TrafficModel(kind="freeway", v0=50),
                           channel=ChannelModel(mode="freeway_phy"),
                           message_pattern=(300, 190, 190, 190, 190), duration_s=2)
    r = run(cfg).report
    assert r.plr_by_distance and min(r.plr_by_distance) == 25.0
    assert all(0 <= v <= 1 for v in r.plr_by_distance.values())
    assert r.aoi_by_distance


# -- adaptive RRI ---------------------------------------------------------------

AD = AdaptiveRri(enabled=True, candidate_rris=(20, 30, 50))


@pytest.mark.parametrize("cbr,current,expected", [
    (0.35, 30, 20), (0.60, 30, 30), (0.90, 50, 50), (0.90, 30, 50), (0.10, 20, 20),
])
def test_adapt_rri(cbr, current, expected):
    assert adapt_rri(current, cbr, AD) == expected


def test_adaptive_run_changes_rri():
    cfg = ExperimentConfig(grid=GridConfig(4, 50, 10, 200), traffic=TrafficModel(v0=20),
                           adaptive=AdaptiveRri(True, candidate_rris=(20, 30, 40, 50)), duration_s=5)
    r = run(cfg).report
    assert 20 in r.rri_histogram


# -- validation ----------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(scheme="aloha"),
    dict(duration_s=0.5),
    dict(message_pattern=()),
    dict(sps=SpsParams(window_ms=10)),
    dict(channel=ChannelModel(mode="freeway_phy")),
    dict(adaptive=AdaptiveRri(True, candidate_rris=())),
    dict(grid=GridConfig(4, 10, 10, 400), adaptive=AdaptiveRri(True, candidate_rris=(10, 20))),
    dict(scheme="sps", adaptive=AdaptiveRri(True, candidate_rris=(20,))),
])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        _cfg(**kw)


# -- sweeps --------------------------------------------------------------------

def test_sweep_empty_axis_single_run():
    table = sweep(_cfg(duration_s=1), None, [], seeds=[0])
    assert len(table) == 1 and len(table[0].results) == 1


def test_sweep_keeps_going_past_bad_points():
    table = sweep(_cfg(duration_s=1), "rri", [10, 15, 20], seeds=[0, 1])
    assert [len(p.results) for p in table] == [2, 0, 2]
    assert table[1].error and "GridError" in table[1].error
    assert table[0].mean("cbr") > table[2].mean("cbr")


def test_sweep_parallel_matches_serial():
    cfg = _cfg(duration_s=1)
    a = sweep(cfg, "v", [5, 10], seeds=[0, 1], workers=1)
    b = sweep(cfg, "v", [5, 10], seeds=[0, 1], workers=2)
    assert [p.results for p in a] == [p.results for p in b]
    assert all(math.isnan(r.report.d_farther_m) for p in b for r in p.results)


def test_with_axis_unknown():
    with pytest.raises(ValueError):
        with_axis(_cfg(), "colour", 1)


def test_throughput_budget():
    cfg = ExperimentConfig(grid=GridConfig(4, 50, 10, 50), traffic=TrafficModel(v0=180), duration_s=100)
    res = run(cfg)
    assert res.wall_time_s < 60
    assert res.report.cbr == pytest.approx(0.9)
