"""Command line: single runs, sweeps, closed-form evaluation and plot data."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from collections import defaultdict
from pathlib import Path

from . import analysis
from .config import resolve
from .engine import CSV_COLUMNS, THREADS_ENV, run, sweep, write_csv

SUMMARY_METRICS = ("cbr", "avg_aoi_ms", "collision_error_rate", "hd_error_rate",
                   "packet_loss_ratio", "r_ht", "r_fd", "d_farther_m")


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _config(args):
    cfg = resolve(args.config)
    if getattr(args, "include_warmup", False):
        cfg = dataclasses.replace(cfg, include_warmup=True)
    if getattr(args, "scheme", None):
        cfg = dataclasses.replace(cfg, scheme=args.scheme)
    if getattr(args, "duration", None):
        cfg = dataclasses.replace(cfg, duration_s=args.duration)
    return cfg


def _parse_axis(text: str):
    name, _, vals = text.partition("=")
    if not name or not vals:
        raise argparse.ArgumentTypeError("axis must look like name=v1,v2,...")
    out = []
    for v in vals.split(","):
        v = v.strip()
        try:
            out.append(int(v))
        except ValueError:
            try:
                out.append(float(v))
            except ValueError:
                out.append(v)
    return name.strip(), out


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        key, _, val = item.partition("=")
        if not _:
            raise SystemExit(f"bad parameter {item!r}, expected key=value")
        val = val.strip()
        if "," in val:
            out[key.strip()] = val
        else:
            out[key.strip()] = float(val) if any(ch in val for ch in ".e") else int(val)
    return out


# -- sub-commands -----------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _config(args)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    res = run(cfg, seed)
    fh, close = _open_out(args.out)
    try:
        write_csv([res], fh)
    finally:
        if close:
            fh.close()
    if args.json:
        Path(args.json).write_text(json.dumps(res.report.to_dict(), indent=2, default=str))
    print(f"seed {seed}: avg AoI {res.report.avg_aoi_ms:.3f} ms, CBR {res.report.cbr:.3f}, "
          f"{res.wall_time_s:.1f} s", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    axis, values = args.axis if args.axis else (None, [])
    seeds = list(range(args.seed_base, args.seed_base + args.seeds)) if args.seeds else list(cfg.seeds)
    table = sweep(cfg, axis, values, seeds, workers=args.workers)
    fh, close = _open_out(args.out)
    failed = 0
    try:
        if args.summary:
            w = csv.writer(fh, lineterminator="\n")
            head = ["axis", "value", "runs"]
            for m in SUMMARY_METRICS:
                head += [f"{m}_mean", f"{m}_std"]
            w.writerow(head + ["error"])
            for p in table:
                row = [axis or "", "" if p.axis_value is None else p.axis_value, len(p.results)]
                for m in SUMMARY_METRICS:
                    row += [repr(p.mean(m)), repr(p.std(m))]
                w.writerow(row + [p.error or ""])
        else:
            write_csv([r for p in table for r in p.results], fh)
    finally:
        if close:
            fh.close()
    for p in table:
        if p.error:
            failed += 1
            print(f"{axis}={p.axis_value}: {p.error}", file=sys.stderr)
    return 1 if failed else 0


def cmd_analyze(args) -> int:
    p = _parse_params(args.params)
    w = csv.writer(sys.stdout, lineterminator="\n")
    th = args.theorem
    try:
        if th == "static":
            inp = analysis.StaticAnalysisInput(p.get("n_subch", 4), p.get("rri", 50), p.get("t_upd", 1000))
            w.writerows([("n_subch", "rri", "t_upd", "aoi_ms"),
                         (inp.n_subch, inp.rri, inp.t_fix, repr(analysis.aoi_static(inp)))])
        elif th == "dynamic":
            x = p.get("x", 0.7)
            inp = analysis.DynamicAnalysisInput(p.get("n_subch", 4), p.get("rri", 10), p.get("t_upd", 200),
                                                x=x, y=p.get("y", x), v0=p.get("v0", 20))
            w.writerows([("n_subch", "rri", "t_upd", "v0", "x", "n_col", "aoi_ms"),
                         (inp.n_subch, inp.rri, inp.t_fix, inp.v0, inp.x,
                          repr(analysis.collision_count_per_rri(inp)), repr(analysis.aoi_dynamic(inp)))])
        elif th == "optimal-rri":
            opt = analysis.optimal_rri(p.get("t_upd", 400), p.get("n_subch", 4), p.get("t_ost", 5))
            w.writerows([("theoretical_ms", "practical_ms"), (f"{opt.theoretical:.4f}", opt.practical)])
        elif th == "convergence":
            m = analysis.convergence_margin(p.get("c", 50), p.get("v", 40))
            w.writerows([("c", "v", "min_ez", "argmin_n0", "argmin_nrs", "all_positive"),
                         (m.c, m.v, f"{m.minimum:.6g}", *m.argmin, m.all_positive)])
        elif th == "surface":
            n = p.get("n_subch", 4)
            t_ost = p.get("t_ost", 10)
            rris = range(t_ost, p.get("rri_max", 100) + 1, t_ost)
            t_upds = [int(t) for t in str(p.get("t_upds", "")).split(",") if t] or [50, 200, 400, 1000]
            w.writerow(("rri", "t_upd", "aoi_ms"))
            for row in analysis.static_surface(n, rris, t_upds):
                w.writerow((row[0], row[1], repr(row[2])))
    except analysis.AnalysisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def cmd_plot_data(args) -> int:
    """Average ``y`` per (series, x) from a run/sweep CSV and emit (x, y, series) triples."""
    with open(args.input, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for col in (args.x, args.y) + ((args.series,) if args.series else ()):
        if rows and col not in rows[0]:
            raise SystemExit(f"column {col!r} not in {args.input}")
    acc = defaultdict(list)
    for r in rows:
        y = float(r[args.y])
        if math.isnan(y):
            continue
        acc[(r[args.series] if args.series else "", float(r[args.x]))].append(y)
    fh, close = _open_out(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("x", "y", "series"))
        for (series, x), ys in sorted(acc.items()):
            w.writerow((repr(x), repr(sum(ys) / len(ys)), series))
    finally:
        if close:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="capsim", description=__doc__,
                                 epilog=f"Sweeps run {THREADS_ENV} worker processes (default 1).")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI file or preset name (mac, freeway)")
        p.add_argument("--scheme", choices=("caps", "sps", "spsla"))
        p.add_argument("--duration", type=float, help="override duration in seconds")
        p.add_argument("--include-warmup", action="store_true",
                       help="measure from t=0 instead of after the 1 s random start")
        p.add_argument("--out", help="CSV destination (default stdout)")

    p = sub.add_parser("run", help="one seeded run")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--json", help="also dump the full report as JSON")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="runs over one axis and several seeds")
    common(p)
    p.add_argument("--axis", type=_parse_axis, help="name=v1,v2,... (v, rri, t_upd, t_ost, scheme, x, speed, duration)")
    p.add_argument("--seeds", type=int, help="number of seeds")
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--workers", type=int, help=f"worker processes (overrides {THREADS_ENV})")
    p.add_argument("--summary", action="store_true", help="mean/std per axis value instead of raw rows")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="closed-form quantities")
    p.add_argument("--theorem", required=True,
                   choices=("static", "dynamic", "optimal-rri", "convergence", "surface"))
    p.add_argument("--params", nargs="*", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plot-data", help="(x, y, series) triples from a result CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--x", default="cbr")
    p.add_argument("--y", default="avg_aoi")
    p.add_argument("--series", default="scheme")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_data)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
