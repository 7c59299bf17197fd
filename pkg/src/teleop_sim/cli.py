"""Command-line front end: ``teleop-sim {gen-tours,simulate,sweep,min-ratio,report}``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .engine import RestMode, RestPolicy, run_baseline, run_simulation, write_event_log, write_snapshots
from .kpi import STATISTICS, SUMMARY_KPIS, compute_kpis, dump_json
from .scenario import (ConfigError, ServiceLevelTarget, clock, default_config, implied_gain, load_sweep,
                       load_sweep_config, min_ratio_for_target, n_teleoperators_for, parse_clock, run_sweep,
                       sweep_config_from_dict, write_sweep)
from .tours import (DEFAULT_SPEED_KMH, Distribution, GeneratorProfile, TourParseError, TourValidationError,
                    filter_window, generate_tours, load_tours, sample_penetration, write_tours)

log = logging.getLogger("teleop_sim")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument types

def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def clock_time(text: str) -> float:
    try:
        v = parse_clock(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HH:MM or minutes, got {text!r}") from None
    if not 0 <= v <= 1440:
        raise argparse.ArgumentTypeError(f"clock time out of range: {text!r}")
    return v


_DURATION = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(h|min|m)?\s*$")


def duration(default_unit: str):
    """Parser for ``N``, ``Nh`` or ``Nmin``; bare numbers take ``default_unit``.

    Returns minutes.
    """
    def parse(text: str) -> float:
        m = _DURATION.match(text)
        if not m:
            raise argparse.ArgumentTypeError(f"expected a duration like 9h or 45min, got {text!r}")
        value = float(m.group(1))
        unit = m.group(2) or default_unit
        return value * 60.0 if unit == "h" else value
    parse.__name__ = "duration"
    return parse


def fraction(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {v}")
    return v


def _check_writable(path: Path, what: str):
    parent = path.parent if path.parent != Path("") else Path(".")
    if not parent.is_dir():
        raise OSError(f"cannot write {what} {path}: directory {parent} does not exist")
    if not os.access(parent, os.W_OK):
        raise OSError(f"cannot write {what} {path}: directory {parent} is not writable")


def _check_readable(path: Path, what: str):
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")


# ---------------------------------------------------------------------------
# gen-tours

def _profile_from_args(args) -> GeneratorProfile:
    doc = {}
    if args.profile:
        _check_readable(Path(args.profile), "profile file")
        with open(args.profile) as fh:
            doc = json.load(fh)
    base = GeneratorProfile.from_dict(doc)
    changes = {}
    if args.mean_trips is not None:
        changes["mean_trips_per_tour"] = args.mean_trips
    if args.trip_count is not None:
        changes["trip_count"] = args.trip_count
    if args.speed is not None:
        changes["distance_speed"] = args.speed
    if args.trip_mean is not None or args.trip_sigma is not None:
        t = base.trip_time
        changes["trip_time"] = Distribution.of("lognormal",
                                               mean=args.trip_mean if args.trip_mean is not None else t.mean,
                                               sigma=args.trip_sigma if args.trip_sigma is not None else 0.5)
    if args.dwell_mean is not None or args.dwell_sigma is not None:
        d = base.dwell
        changes["dwell"] = Distribution.of("lognormal",
                                           mean=args.dwell_mean if args.dwell_mean is not None else d.mean,
                                           sigma=args.dwell_sigma if args.dwell_sigma is not None else 0.5)
    return replace(base, **changes) if changes else base


def cmd_gen_tours(args) -> int:
    out = Path(args.out)
    _check_writable(out, "tour file")
    profile = _profile_from_args(args)
    tours = generate_tours(profile, args.count, args.seed)
    write_tours(tours, out, args.format)
    s = tours.stats()
    print(f"tours                  {s['tours']:d}")
    print(f"trips                  {s['trips']:d}")
    print(f"mean trips per tour    {s['mean_trips_per_tour']:.3f}")
    print(f"mean tour duration h   {s['mean_tour_duration_h']:.3f}")
    print(f"mean driving time h    {s['mean_driving_time_h']:.3f}")
    print(f"written                {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate

def _rest_from_args(args) -> RestPolicy:
    return RestPolicy(max_drive=args.max_drive, long_rest=args.long_rest, short_rest=args.short_rest,
                      mode=RestMode(args.rest))


def _rounded(obj, digits: int = 9):
    if isinstance(obj, float):
        return round(obj, digits)
    if isinstance(obj, dict):
        return {k: _rounded(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v, digits) for v in obj]
    return obj


def cmd_simulate(args) -> int:
    src = Path(args.tours)
    _check_readable(src, "tours file")
    prefix = Path(args.out)
    _check_writable(prefix, "output")
    rest = _rest_from_args(args)
    shift_h = args.shift / 60.0

    tours = load_tours(src)
    if args.penetration < 1:
        tours = sample_penetration(tours, args.penetration, args.seed)
    admitted = filter_window(tours, args.start, shift_h)
    if len(admitted) == 0:
        raise ConfigError(f"no tours admitted in window {clock(args.start)} + {shift_h:g} h")
    n_to = args.teleoperators or n_teleoperators_for(args.ratio, len(admitted))

    trace = run_simulation(admitted, n_to, args.takeover, rest, args.start, shift_h, seed=args.seed,
                           snapshot_interval=args.snapshot_interval)
    baseline = run_baseline(admitted, args.start, shift_h, snapshot_interval=None, record_log=False)
    report = compute_kpis(trace, baseline, prorate_distance=args.prorate_distance)

    doc = {
        "version": __version__,
        "config": {
            "tours": str(src),
            "start_time": clock(args.start),
            "shift_hours": shift_h,
            "ratio": args.ratio,
            "takeover_min": args.takeover,
            "penetration": args.penetration,
            "rest_policy": rest.to_dict(),
            "seed": args.seed,
            "snapshot_interval_min": args.snapshot_interval,
            "prorate_distance": args.prorate_distance,
        },
        "n_vehicles": report.n_vehicles,
        "n_teleoperators": report.n_teleoperators,
        "baseline_makespan": report.baseline_makespan,
        "baseline_completion_time": baseline.completion_time,
        "shift_end_time": args.start + args.shift,
        "kpis": report.to_dict(),
    }
    paths = [
        dump_json(_rounded(doc), prefix.with_name(prefix.name + ".kpi.json")),
        write_event_log(trace, prefix.with_name(prefix.name + ".events.csv")),
        write_snapshots(trace, prefix.with_name(prefix.name + ".snapshots.csv")),
    ]
    print(f"vehicles {report.n_vehicles:d}  teleoperators {report.n_teleoperators:d}")
    for k in ("avg_wait_per_vehicle", "avg_wait_per_queue_entry", "avg_teleoperator_utilization",
              "avg_vehicle_utilization", "tour_completion_rate", "distance_completion_rate", "delay",
              "completion_makespan", "baseline_makespan"):
        print(f"{k:30s} {report.scalar(k):12.4f}")
    for p in paths:
        print(f"written {p}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

def cmd_sweep(args) -> int:
    if args.write_config:
        out = Path(args.write_config)
        _check_writable(out, "config")
        dump_json(default_config(), out)
        print(f"written {out}")
        return EXIT_OK
    if args.out is None:
        raise UsageError("sweep: --out is required")
    if args.config:
        cfg_path = Path(args.config)
        _check_readable(cfg_path, "config file")
        try:
            grid, base = load_sweep_config(cfg_path)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{cfg_path}: invalid JSON: {exc}") from None
    else:
        grid, base = sweep_config_from_dict(default_config())
    out = Path(args.out)
    _check_writable(out, "output directory")
    log.info("sweep: %d cells x %d replications", len(grid), base.replications)
    result = run_sweep(grid, base, threads=args.threads)
    paths = write_sweep(result, out)
    failed = sum(1 for c in result.cells if not c.ok)
    print(f"cells {len(result.cells):d}  failed {failed:d}  replications {base.replications:d}")
    for p in paths.values():
        print(f"written {p}")
    return EXIT_FAILURE if failed == len(result.cells) else EXIT_OK


# ---------------------------------------------------------------------------
# min-ratio

def cmd_min_ratio(args) -> int:
    if args.kpi not in SUMMARY_KPIS:
        raise UsageError(f"unknown kpi {args.kpi!r}; valid names: {', '.join(SUMMARY_KPIS)}")
    target = ServiceLevelTarget(args.kpi, args.op, args.threshold, args.statistic)
    sweep_dir = Path(args.sweep)
    cells = load_sweep(sweep_dir)
    best = min_ratio_for_target(cells, target)
    by_key = {(c.config.key, c.config.ratio): c for c in cells}
    print(f"# target: {args.statistic} {args.kpi} {args.op} {args.threshold:.6f}")
    print(f"{'start':>5s} {'shift_h':>7s} {'takeover':>8s} {'min_ratio':>9s} {'gain_pct':>8s}")
    for key in sorted(best):
        s, h, k = key
        r = best[key]
        if r is None:
            ratio_s, gain_s = "none", "none"
        else:
            ratio_s = f"{r:.2f}"
            gain_s = f"{100 * implied_gain(by_key[(key, r)]):.2f}"
        print(f"{clock(s):>5s} {h:7.1f} {k:8.1f} {ratio_s:>9s} {gain_s:>8s}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

REPORT_KPIS = ("tour_completion_rate", "distance_completion_rate", "delay", "avg_wait_per_queue_entry",
               "avg_teleoperator_utilization")


def _read_snapshots(path: Path):
    import numpy as np
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:6], data[:, 6:10], data[:, 10]


def cmd_report(args) -> int:
    if not args.sweep and not args.run:
        raise UsageError("report: give --sweep DIR and/or --run PREFIX")
    for k in args.kpis:
        if k not in SUMMARY_KPIS:
            raise UsageError(f"unknown kpi {k!r}; valid names: {', '.join(SUMMARY_KPIS)}")
    out = Path(args.out)
    sweep_dir = Path(args.sweep) if args.sweep else None
    if sweep_dir is not None:
        _check_readable(sweep_dir / "summary.csv", "sweep summary")
    run = Path(args.run) if args.run else None
    if run is not None:
        _check_readable(run.with_name(run.name + ".snapshots.csv"), "snapshot file")
        _check_readable(run.with_name(run.name + ".kpi.json"), "KPI file")
    out.mkdir(parents=True, exist_ok=True)

    from . import plotting

    written = []
    if sweep_dir is not None:
        cells = load_sweep(sweep_dir)
        rows = plotting.curve_rows(cells, args.kpis)
        curves = out / "curves.csv"
        tmp = curves.with_name(curves.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("start_time", "shift_hours", "takeover_min", "ratio", "kpi", "mean", "std"))
            for s, h, k, r, kpi, mean, std in rows:
                w.writerow((clock(s), f"{h:g}", f"{k:g}", f"{r:.2f}", kpi, f"{mean:.6f}", f"{std:.6f}"))
        tmp.replace(curves)
        written.append(curves)
        for kpi in args.kpis:
            written.append(plotting.ratio_curves_figure(rows, kpi, out / f"ratio_{kpi}.png"))
    if run is not None:
        with open(run.with_name(run.name + ".kpi.json")) as fh:
            doc = json.load(fh)
        times, veh, ops, queue = _read_snapshots(run.with_name(run.name + ".snapshots.csv"))
        cfg = doc["config"]
        start = parse_clock(cfg["start_time"])
        title = (f"ratio {cfg['ratio']:.2f}, takeover {cfg['takeover_min']:g} min, "
                 f"start {cfg['start_time']}, {cfg['shift_hours']:g} h shift")
        written.append(plotting.snapshot_figure(times, veh, ops, queue, out / f"{run.name}.snapshots.png",
                                                start_time=start, baseline_makespan=doc["baseline_makespan"],
                                                shift_hours=cfg["shift_hours"], title=title))
    for p in written:
        print(f"written {p}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="teleop-sim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-tours", help="generate a synthetic tour file")
    g.add_argument("--count", type=positive_int, required=True)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--out", required=True)
    g.add_argument("--format", choices=("csv", "json"), default=None, help="default: from the file suffix")
    g.add_argument("--profile", help="JSON generator profile")
    g.add_argument("--mean-trips", type=float)
    g.add_argument("--trip-count", choices=("poisson", "geometric"))
    g.add_argument("--trip-mean", type=float, help="mean trip travel time (min), lognormal")
    g.add_argument("--trip-sigma", type=float)
    g.add_argument("--dwell-mean", type=float, help="mean dwell time (min), lognormal")
    g.add_argument("--dwell-sigma", type=float)
    g.add_argument("--speed", type=float, help=f"km/h for derived distances (default {DEFAULT_SPEED_KMH:g})")
    g.set_defaults(func=cmd_gen_tours)

    s = sub.add_parser("simulate", help="run one scenario and export its trace")
    s.add_argument("--tours", required=True)
    s.add_argument("--out", required=True, help="output prefix")
    s.add_argument("--ratio", type=fraction, default=1.0)
    s.add_argument("--teleoperators", type=positive_int, help="override the ratio with a fixed count")
    s.add_argument("--takeover", type=duration("min"), default=0.0, help="minutes, or e.g. 0.05h")
    s.add_argument("--start", type=clock_time, default=0.0, help="HH:MM")
    s.add_argument("--shift", type=duration("h"), default=24 * 60.0, help="hours, or e.g. 540min")
    s.add_argument("--rest", choices=[m.value for m in RestMode], default="monolithic")
    s.add_argument("--max-drive", type=duration("min"), default=270.0)
    s.add_argument("--long-rest", type=duration("min"), default=45.0)
    s.add_argument("--short-rest", type=duration("min"), default=10.0)
    s.add_argument("--penetration", type=fraction, default=1.0)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--snapshot-interval", type=duration("min"), default=1.0)
    s.add_argument("--prorate-distance", action="store_true")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="run a scenario grid")
    w.add_argument("--config", help="JSON sweep config (default: the full 360-cell grid)")
    w.add_argument("--out", help="output directory")
    w.add_argument("--threads", type=int, default=None, help="worker processes (default: TELEOP_SIM_THREADS)")
    w.add_argument("--write-config", metavar="PATH", help="write the default config and exit")
    w.set_defaults(func=cmd_sweep)

    m = sub.add_parser("min-ratio", help="smallest ratio meeting a service level")
    m.add_argument("--sweep", required=True, help="sweep output directory")
    m.add_argument("--kpi", required=True)
    m.add_argument("--op", choices=("le", "ge", "lt", "gt"), default="le")
    m.add_argument("--threshold", type=float, required=True)
    m.add_argument("--statistic", choices=STATISTICS, default="mean")
    m.set_defaults(func=cmd_min_ratio)

    r = sub.add_parser("report", help="plot-ready CSV and PNG figures")
    r.add_argument("--sweep", help="sweep output directory")
    r.add_argument("--run", help="prefix given to simulate --out")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--kpis", nargs="+", default=list(REPORT_KPIS))
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"teleop-sim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TourParseError, TourValidationError, ValueError, RuntimeError, OSError) as exc:
        print(f"teleop-sim {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
