"""Scenario cells, seeded replications, grid sweeps and service-level queries."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .engine import RestMode, RestPolicy, run_baseline, run_simulation
from .kpi import (STATISTICS, SUMMARY_KPIS, KpiReport, ReplicationSummary, Stats, aggregate,
                  compute_kpis, dump_json, gain_simple)
from .tours import GeneratorProfile, TourSet, filter_window, generate_tours, load_tours, sample_penetration

__all__ = [
    "CellResult",
    "ConfigError",
    "ScenarioConfig",
    "ServiceLevelTarget",
    "SweepGrid",
    "SweepResult",
    "TourSource",
    "clock",
    "load_sweep",
    "load_sweep_config",
    "min_ratio_for_target",
    "n_teleoperators_for",
    "default_grid",
    "replication_seed",
    "run_scenario",
    "run_sweep",
    "write_sweep",
]

log = logging.getLogger(__name__)

DEFAULT_START_TIMES = (0.0, 300.0, 480.0)
DEFAULT_SHIFT_HOURS = (9.0, 24.0)
DEFAULT_TAKEOVERS = (0.0, 1.0, 2.0, 3.0)
DEFAULT_RATIOS = tuple(round(0.30 + 0.05 * i, 2) for i in range(15))
DEFAULT_POPULATION = 124436


class ConfigError(ValueError):
    pass


def clock(minutes: float) -> str:
    """Minutes since midnight as ``HH:MM``."""
    m = int(round(minutes))
    return f"{m // 60:02d}:{m % 60:02d}"


def parse_clock(value) -> float:
    """``"HH:MM"`` or a number of minutes since midnight."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    if ":" in text:
        hh, mm = text.split(":", 1)
        h, m = int(hh), int(mm)
        if not (0 <= h <= 24 and 0 <= m < 60):
            raise ConfigError(f"bad clock time {value!r}")
        return float(h * 60 + m)
    return float(text)


def replication_seed(master_seed: int, replication: int) -> int:
    """Independent 64-bit seed for one replication; a pure function of its arguments."""
    words = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(replication)]).generate_state(2, np.uint32)
    return int(words[0]) << 32 | int(words[1])


def n_teleoperators_for(ratio: float, n_vehicles: int) -> int:
    # rounding first keeps ceil(0.3 * 10) at 3 rather than 4
    return max(1, math.ceil(round(ratio * n_vehicles, 9)))


@dataclass(frozen=True)
class TourSource:
    """Either a tour file or a generator profile with population size and seed."""

    path: str | None = None
    profile: GeneratorProfile | None = None
    count: int = DEFAULT_POPULATION
    seed: int = 20230101

    def __post_init__(self):
        if self.path is None and self.profile is None:
            object.__setattr__(self, "profile", GeneratorProfile())
        if self.path is not None and self.profile is not None:
            raise ConfigError("tours: give either path or generator, not both")
        if self.path is None and self.count < 1:
            raise ConfigError("tours.generator.count must be >= 1")

    def resolve(self) -> TourSet:
        return _resolve_source(self)

    def to_dict(self) -> dict:
        if self.path is not None:
            return {"path": self.path}
        return {"generator": {"count": self.count, "seed": self.seed, "profile": self.profile.to_dict()}}

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "TourSource":
        unknown = set(d) - {"path", "generator"}
        if unknown:
            raise ConfigError(f"unknown key tours.{sorted(unknown)[0]}")
        if "path" in d:
            p = Path(d["path"])
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            return cls(path=str(p))
        g = dict(d.get("generator", {}))
        unknown = set(g) - {"count", "seed", "profile"}
        if unknown:
            raise ConfigError(f"unknown key tours.generator.{sorted(unknown)[0]}")
        try:
            profile = GeneratorProfile.from_dict(g.get("profile", {}))
        except ValueError as exc:
            raise ConfigError(f"tours.generator.profile: {exc}") from None
        return cls(profile=profile, count=int(g.get("count", DEFAULT_POPULATION)), seed=int(g.get("seed", 20230101)))


@lru_cache(maxsize=4)
def _resolve_source(source: TourSource) -> TourSet:
    if source.path is not None:
        return load_tours(source.path)
    return generate_tours(source.profile, source.count, source.seed)


@dataclass(frozen=True)
class ScenarioConfig:
    start_time: float = 0.0
    shift_hours: float = 9.0
    ratio: float = 1.0
    takeover_min: float = 0.0
    penetration: float = 0.01
    replications: int = 5
    rest: RestPolicy = field(default_factory=RestPolicy)
    master_seed: int = 1
    tours: TourSource = field(default_factory=TourSource)

    def __post_init__(self):
        if not (0 < self.ratio <= 1):
            raise ConfigError(f"ratio must be in (0, 1], got {self.ratio}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not (0 < self.penetration <= 1):
            raise ConfigError(f"penetration must be in (0, 1], got {self.penetration}")
        if self.takeover_min < 0:
            raise ConfigError("takeover must be non-negative")
        if not self.shift_hours > 0:
            raise ConfigError("shift_hours must be positive")

    @property
    def key(self) -> tuple[float, float, float]:
        """Grouping key for ratio queries: (start, shift, takeover)."""
        return (self.start_time, self.shift_hours, self.takeover_min)

    def label(self) -> str:
        return (f"start={clock(self.start_time)} shift={self.shift_hours:g}h "
                f"ratio={self.ratio:.2f} takeover={self.takeover_min:g}")


def _replicate(cfg: ScenarioConfig, population: TourSet, i: int, baselines: dict | None = None):
    seed = replication_seed(cfg.master_seed, i)
    sampled = sample_penetration(population, cfg.penetration, seed)
    admitted = filter_window(sampled, cfg.start_time, cfg.shift_hours)
    if len(admitted) == 0:
        raise ConfigError(
            f"no tours admitted in window {clock(cfg.start_time)} + {cfg.shift_hours:g} h (replication {i})"
        )
    n_to = n_teleoperators_for(cfg.ratio, len(admitted))
    trace = run_simulation(admitted, n_to, cfg.takeover_min, cfg.rest, cfg.start_time, cfg.shift_hours,
                           seed=seed, snapshot_interval=None, record_log=False)
    bkey = (seed, cfg.start_time, cfg.shift_hours)
    baseline = baselines.get(bkey) if baselines is not None else None
    if baseline is None:
        baseline = run_baseline(admitted, cfg.start_time, cfg.shift_hours, snapshot_interval=None, record_log=False)
        if baselines is not None:
            baselines[bkey] = baseline
    return seed, compute_kpis(trace, baseline)


def run_scenario(cfg: ScenarioConfig, population: TourSet | None = None,
                 _baselines: dict | None = None) -> tuple[ReplicationSummary, list[KpiReport]]:
    """Run every replication of one cell and summarise the KPIs."""
    if population is None:
        population = cfg.tours.resolve()
    reports = [_replicate(cfg, population, i, _baselines)[1] for i in range(cfg.replications)]
    return aggregate(reports), reports


# ---------------------------------------------------------------------------
# Sweeps

@dataclass(frozen=True)
class SweepGrid:
    start_times: tuple[float, ...] = DEFAULT_START_TIMES
    shift_hours: tuple[float, ...] = DEFAULT_SHIFT_HOURS
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    takeover_minutes: tuple[float, ...] = DEFAULT_TAKEOVERS

    def __post_init__(self):
        for name in ("start_times", "shift_hours", "ratios", "takeover_minutes"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ConfigError(f"grid {name} is empty")
            object.__setattr__(self, name, vals)

    def __len__(self):
        return len(self.start_times) * len(self.shift_hours) * len(self.ratios) * len(self.takeover_minutes)

    def cells(self, base: ScenarioConfig) -> list[ScenarioConfig]:
        return [
            replace(base, start_time=s, shift_hours=h, takeover_min=k, ratio=r)
            for s, h, k, r in itertools.product(self.start_times, self.shift_hours,
                                                self.takeover_minutes, self.ratios)
        ]


def default_grid() -> SweepGrid:
    return SweepGrid()


@dataclass
class CellResult:
    config: ScenarioConfig
    summary: ReplicationSummary | None
    reports: list[KpiReport]
    seeds: list[int]
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SweepResult:
    cells: list[CellResult]
    grid: SweepGrid | None = None
    base: ScenarioConfig | None = None
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.cells)


_WORKER_POPULATION: TourSet | None = None


def _init_worker(population):
    global _WORKER_POPULATION
    _WORKER_POPULATION = population


def _run_cells(cfgs: Sequence[ScenarioConfig], population: TourSet | None = None) -> list[CellResult]:
    population = population if population is not None else _WORKER_POPULATION
    baselines: dict = {}
    out = []
    for cfg in cfgs:
        seeds = [replication_seed(cfg.master_seed, i) for i in range(cfg.replications)]
        try:
            summary, reports = run_scenario(cfg, population, baselines)
            out.append(CellResult(cfg, summary, reports, seeds))
        except (ValueError, RuntimeError) as exc:
            log.warning("cell %s failed: %s", cfg.label(), exc)
            out.append(CellResult(cfg, None, [], seeds, error=str(exc)))
    return out


def _thread_count(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("TELEOP_SIM_THREADS", "0") or 0)
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def run_sweep(grid: SweepGrid, base: ScenarioConfig, threads: int | None = None) -> SweepResult:
    """Run every grid cell; results come back in grid product order.

    Cells sharing a (start, shift) window are batched in one worker so the
    dedicated-driver baseline of each replication is simulated once.
    """
    if len(grid) == 0:
        raise ConfigError("empty grid")
    population = base.tours.resolve()
    cfgs = grid.cells(base)
    batches: dict[tuple, list[int]] = {}
    for n, cfg in enumerate(cfgs):
        batches.setdefault((cfg.start_time, cfg.shift_hours), []).append(n)
    jobs = list(batches.values())
    results: list[CellResult | None] = [None] * len(cfgs)
    n_threads = min(_thread_count(threads), len(jobs))
    if n_threads <= 1:
        for idx in jobs:
            for n, res in zip(idx, _run_cells([cfgs[n] for n in idx], population)):
                results[n] = res
    else:
        with ProcessPoolExecutor(n_threads, initializer=_init_worker, initargs=(population,)) as pool:
            futures = [(idx, pool.submit(_run_cells, [cfgs[n] for n in idx])) for idx in jobs]
            for idx, fut in futures:
                for n, res in zip(idx, fut.result()):
                    results[n] = res
    provenance = {
        "tool": "teleop_sim",
        "version": __version__,
        "master_seed": base.master_seed,
        "replication_seeds": [replication_seed(base.master_seed, i) for i in range(base.replications)],
        "tours": base.tours.to_dict(),
        "population_size": len(population),
        "cells": len(cfgs),
    }
    return SweepResult(results, grid, base, provenance)


# ---------------------------------------------------------------------------
# Service-level queries

_COMPARATORS = {
    "le": lambda v, t: v <= t,
    "ge": lambda v, t: v >= t,
    "lt": lambda v, t: v < t,
    "gt": lambda v, t: v > t,
}


@dataclass(frozen=True)
class ServiceLevelTarget:
    kpi: str
    comparator: str = "le"
    threshold: float = 0.0
    statistic: str = "mean"

    def __post_init__(self):
        if self.kpi not in SUMMARY_KPIS:
            raise ConfigError(f"unknown kpi {self.kpi!r}; valid: {', '.join(SUMMARY_KPIS)}")
        if self.comparator not in _COMPARATORS:
            raise ConfigError(f"unknown comparator {self.comparator!r}; valid: {', '.join(_COMPARATORS)}")
        if self.statistic not in STATISTICS:
            raise ConfigError(f"unknown statistic {self.statistic!r}; valid: {', '.join(STATISTICS)}")

    def satisfied(self, summary: ReplicationSummary) -> bool:
        return _COMPARATORS[self.comparator](summary.get(self.kpi, self.statistic), self.threshold)


def _cells_of(sweep) -> list[CellResult]:
    return sweep.cells if isinstance(sweep, SweepResult) else list(sweep)


def min_ratio_for_target(sweep: SweepResult | Iterable[CellResult],
                         target: ServiceLevelTarget) -> dict[tuple[float, float, float], float | None]:
    """Smallest grid ratio meeting ``target`` for each (start, shift, takeover) group."""
    groups: dict[tuple, list[CellResult]] = {}
    for cell in _cells_of(sweep):
        groups.setdefault(cell.config.key, []).append(cell)
    out: dict[tuple, float | None] = {}
    for key, cells in groups.items():
        best = None
        for cell in sorted(cells, key=lambda c: c.config.ratio):
            if cell.ok and target.satisfied(cell.summary):
                best = cell.config.ratio
                break
        out[key] = best
    return out


def implied_gain(cell: CellResult) -> float:
    """Labor saving of a cell from its mean fleet and operator counts."""
    n_base = round(cell.summary.get("n_vehicles"))
    n_to = round(cell.summary.get("n_teleoperators"))
    return gain_simple(n_base, min(n_to, n_base))


# ---------------------------------------------------------------------------
# Config and output files

_CONFIG_KEYS = {"start_times", "shift_hours", "ratios", "takeover_minutes", "penetration", "replications",
                "rest_policy", "master_seed", "tours"}
_REST_KEYS = {"mode", "max_drive_min", "long_rest_min", "short_rest_min"}


def load_sweep_config(path) -> tuple[SweepGrid, ScenarioConfig]:
    """Read a JSON sweep configuration; missing keys take the default grid."""
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    return sweep_config_from_dict(doc, path.parent)


def sweep_config_from_dict(doc: dict, base_dir: Path | None = None) -> tuple[SweepGrid, ScenarioConfig]:
    if not isinstance(doc, dict):
        raise ConfigError("sweep config must be a JSON object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    rest_doc = doc.get("rest_policy", {})
    unknown = set(rest_doc) - _REST_KEYS
    if unknown:
        raise ConfigError(f"unknown config key rest_policy.{sorted(unknown)[0]}")
    try:
        rest = RestPolicy(
            max_drive=float(rest_doc.get("max_drive_min", 270.0)),
            long_rest=float(rest_doc.get("long_rest_min", 45.0)),
            short_rest=float(rest_doc.get("short_rest_min", 10.0)),
            mode=RestMode(rest_doc.get("mode", "monolithic")),
        )
    except ValueError as exc:
        raise ConfigError(f"rest_policy: {exc}") from None
    grid = SweepGrid(
        start_times=tuple(parse_clock(v) for v in doc.get("start_times", DEFAULT_START_TIMES)),
        shift_hours=tuple(doc.get("shift_hours", DEFAULT_SHIFT_HOURS)),
        ratios=tuple(doc.get("ratios", DEFAULT_RATIOS)),
        takeover_minutes=tuple(doc.get("takeover_minutes", DEFAULT_TAKEOVERS)),
    )
    for r in grid.ratios:
        if not (0 < r <= 1):
            raise ConfigError(f"ratios: {r} outside (0, 1]")
    base = ScenarioConfig(
        start_time=grid.start_times[0],
        shift_hours=grid.shift_hours[0],
        ratio=grid.ratios[0],
        takeover_min=grid.takeover_minutes[0],
        penetration=float(doc.get("penetration", 0.01)),
        replications=int(doc.get("replications", 5)),
        rest=rest,
        master_seed=int(doc.get("master_seed", 1)),
        tours=TourSource.from_dict(doc.get("tours", {}), base_dir),
    )
    return grid, base


def default_config() -> dict:
    """The full default grid as a JSON-ready config document."""
    return {
        "start_times": [clock(s) for s in DEFAULT_START_TIMES],
        "shift_hours": list(DEFAULT_SHIFT_HOURS),
        "ratios": list(DEFAULT_RATIOS),
        "takeover_minutes": list(DEFAULT_TAKEOVERS),
        "penetration": 0.01,
        "replications": 5,
        "rest_policy": RestPolicy().to_dict(),
        "master_seed": 1,
        "tours": TourSource().to_dict(),
    }


_CELL_COLUMNS = ("cell", "start_time", "shift_hours", "ratio", "takeover_min")


def _f(x) -> str:
    return f"{float(x):.6f}"


def _cell_fields(n: int, cfg: ScenarioConfig) -> list[str]:
    return [str(n), clock(cfg.start_time), f"{cfg.shift_hours:g}", f"{cfg.ratio:.2f}", f"{cfg.takeover_min:g}"]


def _write_atomic(path: Path, header, rows):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def write_sweep(result: SweepResult, out_dir) -> dict[str, Path]:
    """Write ``results.csv`` (cell x replication x kpi), ``summary.csv`` (one row per cell)
    and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_rows = []
    summary_rows = []
    for n, cell in enumerate(result.cells):
        base = _cell_fields(n, cell.config)
        for i, (seed, rep) in enumerate(zip(cell.seeds, cell.reports)):
            for kpi in SUMMARY_KPIS:
                results_rows.append([*base, str(i), str(seed), kpi, _f(rep.scalar(kpi))])
        if cell.ok:
            stats = [_f(getattr(cell.summary[k], s)) for k in SUMMARY_KPIS for s in STATISTICS]
            summary_rows.append([*base, str(cell.summary.n), "ok", "", *stats])
        else:
            summary_rows.append([*base, "0", "error", cell.error, *([""] * (len(SUMMARY_KPIS) * len(STATISTICS)))])
    paths = {"results": out / "results.csv", "summary": out / "summary.csv", "manifest": out / "manifest.json"}
    _write_atomic(paths["results"], (*_CELL_COLUMNS, "replication", "seed", "kpi", "value"), results_rows)
    _write_atomic(paths["summary"],
                  (*_CELL_COLUMNS, "replications", "status", "error",
                   *(f"{k}_{s}" for k in SUMMARY_KPIS for s in STATISTICS)),
                  summary_rows)
    manifest = dict(result.provenance)
    if result.grid is not None and result.base is not None:
        manifest["config"] = {
            "start_times": [clock(s) for s in result.grid.start_times],
            "shift_hours": list(result.grid.shift_hours),
            "ratios": list(result.grid.ratios),
            "takeover_minutes": list(result.grid.takeover_minutes),
            "penetration": result.base.penetration,
            "replications": result.base.replications,
            "rest_policy": result.base.rest.to_dict(),
            "master_seed": result.base.master_seed,
            "tours": result.base.tours.to_dict(),
        }
    dump_json(manifest, paths["manifest"])
    return paths


def load_sweep(out_dir) -> list[CellResult]:
    """Read ``summary.csv`` back into cell results (summaries only, no per-replication reports)."""
    path = Path(out_dir) / "summary.csv"
    if not path.exists():
        raise FileNotFoundError(f"no summary.csv in {out_dir}")
    cells = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cfg = ScenarioConfig(start_time=parse_clock(row["start_time"]), shift_hours=float(row["shift_hours"]),
                                 ratio=float(row["ratio"]), takeover_min=float(row["takeover_min"]),
                                 replications=max(1, int(row["replications"])))
            if row["status"] == "ok":
                stats = {k: Stats(**{s: float(row[f"{k}_{s}"]) for s in STATISTICS}) for k in SUMMARY_KPIS}
                cells.append(CellResult(cfg, ReplicationSummary(int(row["replications"]), stats), [], []))
            else:
                cells.append(CellResult(cfg, None, [], [], error=row["error"]))
    return cells
