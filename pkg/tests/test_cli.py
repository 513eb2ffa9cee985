import csv
import io
import subprocess
import sys

import pytest

from capsim.cli import main
from capsim.config import dumps, load, loads, preset, save
from capsim.engine import CSV_COLUMNS


def test_presets_load():
    t1, t2 = preset("mac"), preset("freeway")
    assert (t1.grid.n_subch_per_subframe, t1.grid.rri_ms, t1.grid.t_ost_ms) == (4, 50, 10)
    assert t1.duration_s == 100 and t1.message_pattern == (190,)
    assert t2.traffic.kind == "freeway" and t2.grid.t_upd_ms == 200
    assert t2.message_pattern == (300, 190, 190, 190, 190)
    assert t2.channel.shadowing_sigma_db == 3 and t2.channel.tx_power_dbm == 23


@pytest.mark.parametrize("name", ["mac", "freeway"])
def test_round_trip(name, tmp_path):
    cfg = preset(name)
    assert loads(dumps(cfg)) == cfg
    save(cfg, tmp_path / "c.ini")
    assert load(tmp_path / "c.ini") == cfg


def test_unknown_keys_rejected():
    with pytest.raises(ValueError):
        loads("[grid]\nrri = 50\n")
    with pytest.raises(ValueError):
        loads("[physics]\nx = 1\n")


def test_partial_file_uses_defaults():
    cfg = loads("[experiment]\nscheme = sps\nseeds = 1, 2, 3\n[traffic]\nv0 = 7\n")
    assert cfg.scheme == "sps" and cfg.seeds == (1, 2, 3) and cfg.traffic.v0 == 7


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_run_writes_fixed_columns(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["run", "--config", "mac", "--duration", "2", "--seed", "3", "--out", str(out)]) == 0
    rows = _csv(out.read_text())
    assert list(rows[0]) == list(CSV_COLUMNS)
    assert rows[0]["seed"] == "3" and rows[0]["scheme"] == "caps"


def test_run_is_reproducible(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        main(["run", "--config", "mac", "--duration", "2", "--seed", "1", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_sweep_rows_and_summary(tmp_path, capsys):
    out = tmp_path / "s.csv"
    rc = main(["sweep", "--config", "mac", "--duration", "1", "--axis", "v=4,8",
               "--seeds", "2", "--out", str(out)])
    assert rc == 0
    rows = _csv(out.read_text())
    assert [(r["v"], r["seed"]) for r in rows] == [("4", "0"), ("4", "1"), ("8", "0"), ("8", "1")]
    main(["sweep", "--config", "mac", "--duration", "2", "--axis", "v=4,8", "--seeds", "2",
          "--summary", "--out", str(out)])
    summary = _csv(out.read_text())
    assert [r["value"] for r in summary] == ["4", "8"]
    assert float(summary[1]["cbr_mean"]) == pytest.approx(8 / 200)


def test_sweep_reports_bad_point(tmp_path, capsys):
    out = tmp_path / "s.csv"
    rc = main(["sweep", "--config", "mac", "--duration", "1", "--axis", "rri=50,55", "--out", str(out)])
    assert rc == 1
    assert "rri=55" in capsys.readouterr().err
    assert len(_csv(out.read_text())) == 1


def test_analyze(capsys):
    main(["analyze", "--theorem", "optimal-rri", "--params", "t_upd=400", "n_subch=4", "t_ost=5"])
    rows = _csv(capsys.readouterr().out)
    assert rows[0] == {"theoretical_ms": "17.5921", "practical_ms": "20"}
    main(["analyze", "--theorem", "static", "--params", "n_subch=4", "rri=50", "t_upd=1000"])
    assert float(_csv(capsys.readouterr().out)[0]["aoi_ms"]) == pytest.approx(32.05, abs=0.01)
    main(["analyze", "--theorem", "dynamic", "--params", "v0=40", "x=0.7", "rri=10", "t_upd=200"])
    assert float(_csv(capsys.readouterr().out)[0]["aoi_ms"]) > 12
    main(["analyze", "--theorem", "surface", "--params", "t_upds=50,400", "rri_max=30"])
    assert len(_csv(capsys.readouterr().out)) == 6


def test_analyze_error_exit(capsys):
    assert main(["analyze", "--theorem", "convergence", "--params", "c=5", "v=5"]) == 2


def test_plot_data(tmp_path, capsys):
    src = tmp_path / "in.csv"
    src.write_text("scheme,cbr,avg_aoi\ncaps,0.2,25\ncaps,0.2,27\nsps,0.2,40\n")
    main(["plot-data", "--input", str(src)])
    rows = _csv(capsys.readouterr().out)
    assert rows == [{"x": "0.2", "y": "26.0", "series": "caps"},
                    {"x": "0.2", "y": "40.0", "series": "sps"}]


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "capsim", "analyze", "--theorem", "convergence"],
                         capture_output=True, text=True, check=True).stdout
    assert "3.8147e-05" in out
