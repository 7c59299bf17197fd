"""Service-level indicators for a teleoperation run, labor-cost gain ratios,
and replication statistics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import SimulationTrace

__all__ = [
    "GainInputs",
    "KpiReport",
    "ReplicationSummary",
    "STATISTICS",
    "SUMMARY_KPIS",
    "Stats",
    "aggregate",
    "compute_kpis",
    "gain_simple",
    "gain_weighted",
    "time_average_queue_length",
    "write_summary_table",
]

_EPS = 1e-9


@dataclass(frozen=True)
class KpiReport:
    avg_wait_per_vehicle: float
    avg_wait_per_queue_entry: float
    queue_entry_count: int
    per_vehicle_utilization: tuple[float, ...]
    avg_vehicle_utilization: float
    per_teleoperator_utilization: tuple[float, ...]
    avg_teleoperator_utilization: float
    makespan_sum: float
    completion_makespan: float
    baseline_makespan: float
    tour_completion_rate: float
    distance_completion_rate: float
    delay: float
    avg_queue_length: float
    max_queue_length: int
    max_wait: float
    n_vehicles: int
    n_teleoperators: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_vehicle_utilization"] = list(self.per_vehicle_utilization)
        d["per_teleoperator_utilization"] = list(self.per_teleoperator_utilization)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KpiReport":
        d = dict(d)
        d["per_vehicle_utilization"] = tuple(d["per_vehicle_utilization"])
        d["per_teleoperator_utilization"] = tuple(d["per_teleoperator_utilization"])
        return cls(**d)

    def scalar(self, name: str) -> float:
        if name not in SUMMARY_KPIS:
            raise KeyError(name)
        return float(getattr(self, name))


# Scalar KPIs carried into replication summaries, in report row order.
SUMMARY_KPIS = (
    "avg_vehicle_utilization",
    "avg_teleoperator_utilization",
    "avg_wait_per_vehicle",
    "avg_wait_per_queue_entry",
    "max_wait",
    "avg_queue_length",
    "max_queue_length",
    "delay",
    "tour_completion_rate",
    "distance_completion_rate",
    "queue_entry_count",
    "completion_makespan",
    "baseline_makespan",
    "makespan_sum",
    "n_vehicles",
    "n_teleoperators",
)
STATISTICS = ("mean", "std", "min", "p25", "p50", "p75", "max")


def time_average_queue_length(trace: SimulationTrace, horizon: float | None = None) -> float:
    """Exact time average of the queue-length step function over [start, start + horizon]."""
    if horizon is None:
        horizon = trace.completion_makespan
    if horizon <= 0:
        return 0.0
    end = trace.start_time + horizon
    area = 0.0
    changes = trace.queue_changes
    for (t0, q), (t1, _) in zip(changes, changes[1:] + [(end, 0)]):
        t0 = min(max(t0, trace.start_time), end)
        t1 = min(max(t1, trace.start_time), end)
        area += q * (t1 - t0)
    return area / horizon


def _check_same_tours(trace: SimulationTrace, baseline: SimulationTrace):
    if trace.tour_ids != baseline.tour_ids or trace.planned_distance != baseline.planned_distance:
        raise ValueError("trace and baseline were simulated on different tour sets")
    if trace.start_time != baseline.start_time:
        raise ValueError("trace and baseline start at different times")


def compute_kpis(trace: SimulationTrace, baseline: SimulationTrace, prorate_distance: bool = False) -> KpiReport:
    """Indicators of ``trace`` measured against the dedicated-driver ``baseline``.

    Completion rates are evaluated at the instant the baseline completes its
    last tour. Only queue entries with a strictly positive wait count as
    entering the queue. Utilizations divide by the run's own completion
    makespan; operator utilization includes takeover and rest time.
    """
    _check_same_tours(trace, baseline)
    K = trace.n_vehicles
    st = trace.completion_makespan
    base_ms = baseline.completion_makespan

    waits = np.array([r.wait for r in trace.trips], dtype=float)
    total_wait = float(waits.sum())
    nq = int((waits > 0).sum())
    wt_k = total_wait / K
    wt_q = total_wait / nq if nq else 0.0

    per_vehicle = tuple(trace.planned_driving[tid] / st for tid in trace.tour_ids)

    start, end = trace.start_time, trace.start_time + st
    occupied = [0.0] * trace.n_teleoperators
    for iv in trace.intervals:
        lo, hi = max(iv.start, start), min(iv.end, end)
        if hi > lo:
            occupied[iv.teleoperator] += hi - lo
    per_operator = tuple(min(o / st, 1.0) for o in occupied)

    makespan_sum = float(sum(r.travel_time + r.setup_time + r.wait for r in trace.trips))

    instant = baseline.start_time + base_ms
    done = sum(1 for t in trace.tour_completion.values() if t <= instant + _EPS)
    tcr = done / K
    total_distance = sum(trace.planned_distance.values())
    driven = 0.0
    for r in trace.trips:
        if r.drive_end <= instant + _EPS:
            driven += r.distance
        elif prorate_distance and r.drive_start < instant:
            driven += r.distance * (instant - r.drive_start) / (r.drive_end - r.drive_start)
    dcr = driven / total_distance

    return KpiReport(
        avg_wait_per_vehicle=wt_k,
        avg_wait_per_queue_entry=wt_q,
        queue_entry_count=nq,
        per_vehicle_utilization=per_vehicle,
        avg_vehicle_utilization=float(np.mean(per_vehicle)),
        per_teleoperator_utilization=per_operator,
        avg_teleoperator_utilization=float(np.mean(per_operator)),
        makespan_sum=makespan_sum,
        completion_makespan=st,
        baseline_makespan=base_ms,
        tour_completion_rate=tcr,
        distance_completion_rate=min(dcr, 1.0),
        delay=(st - base_ms) / base_ms,
        avg_queue_length=time_average_queue_length(trace, st),
        max_queue_length=max(q for _, q in trace.queue_changes),
        max_wait=float(waits.max()) if len(waits) else 0.0,
        n_vehicles=K,
        n_teleoperators=trace.n_teleoperators,
    )


# ---------------------------------------------------------------------------
# Gain ratios

def gain_simple(n_base: int, n_to: int) -> float:
    """Fraction of drivers saved when ``n_base`` drivers become ``n_to`` operators."""
    if n_base <= 0:
        raise ValueError("n_base must be positive")
    if n_to <= 0:
        raise ValueError("n_to must be positive")
    if n_to > n_base:
        raise ValueError(f"n_to ({n_to}) exceeds n_base ({n_base})")
    return (n_base - n_to) / n_base


@dataclass(frozen=True)
class GainInputs:
    n_base: float
    n_to: float
    ms_base: float
    ms_to: float
    wage_base: float = 1.0
    wage_to: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{f.name} must be positive, got {v}")


def gain_weighted(inputs: GainInputs) -> float:
    """Relative labor-cost saving: driver-hours times wage, baseline vs teleoperation."""
    base = inputs.n_base * inputs.ms_base * inputs.wage_base
    tele = inputs.n_to * inputs.ms_to * inputs.wage_to
    return (base - tele) / base


# ---------------------------------------------------------------------------
# Replication statistics

@dataclass(frozen=True)
class Stats:
    mean: float
    std: float
    min: float
    p25: float
    p50: float
    p75: float
    max: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "Stats":
        a = np.asarray(values, dtype=float)
        if a.size == 0:
            raise ValueError("no values")
        q = np.percentile(a, [0, 25, 50, 75, 100])
        return cls(
            mean=float(a.mean()),
            std=float(a.std(ddof=1)) if a.size > 1 else 0.0,
            min=float(q[0]), p25=float(q[1]), p50=float(q[2]), p75=float(q[3]), max=float(q[4]),
        )

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, s) for s in STATISTICS)


@dataclass(frozen=True)
class ReplicationSummary:
    n: int
    stats: dict[str, Stats]

    def __getitem__(self, kpi: str) -> Stats:
        return self.stats[kpi]

    def get(self, kpi: str, statistic: str = "mean") -> float:
        return getattr(self.stats[kpi], statistic)

    def to_dict(self) -> dict:
        return {"replications": self.n, "kpis": {k: asdict(s) for k, s in self.stats.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "ReplicationSummary":
        return cls(d["replications"], {k: Stats(**s) for k, s in d["kpis"].items()})


def aggregate(reports: Sequence[KpiReport]) -> ReplicationSummary:
    if not reports:
        raise ValueError("cannot aggregate an empty list of reports")
    stats = {k: Stats.of([r.scalar(k) for r in reports]) for k in SUMMARY_KPIS}
    return ReplicationSummary(len(reports), stats)


def write_summary_table(summaries: dict[str, ReplicationSummary], path, fmt: str = "{:.6f}") -> Path:
    """Long CSV: one row per (scenario, indicator) with the statistics as columns."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("scenario", "kpi", *STATISTICS))
        for name, summary in summaries.items():
            for kpi, s in summary.stats.items():
                w.writerow((name, kpi, *(fmt.format(x) for x in s.as_tuple())))
    tmp.replace(path)
    return path


def dump_json(obj, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    tmp.replace(path)
    return path


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
