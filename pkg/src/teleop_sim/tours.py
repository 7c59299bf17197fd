"""Tour and trip data model, file I/O, synthetic tour generation and sampling.

A tour is one vehicle's day: an ordered list of trips, each preceded by a
dwell (loading/unloading) interval during which the vehicle needs no driver.
Times are minutes; clock times are minutes since midnight.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CSV_HEADER",
    "Distribution",
    "GeneratorProfile",
    "Tour",
    "TourParseError",
    "TourSet",
    "TourValidationError",
    "Trip",
    "filter_window",
    "generate_tours",
    "load_tours",
    "sample_penetration",
    "write_tours",
]

CSV_HEADER = (
    "tour_id",
    "vehicle_id",
    "tour_start_min",
    "trip_index",
    "dwell_before_min",
    "travel_time_min",
    "distance_km",
)

DEFAULT_SPEED_KMH = 60.0

# Hourly departure weights, 0:00 .. 23:00. Morning peak between 5:00 and 9:00.
MORNING_PEAK = (
    0.5, 0.5, 0.5, 0.5, 2.0,
    8.0, 8.0, 8.0, 8.0,
    5.0, 5.0, 5.0,
    3.0, 3.0, 3.0, 3.0,
    1.5, 1.5, 1.5, 1.5,
    0.5, 0.5, 0.5, 0.5,
)


class TourValidationError(ValueError):
    """A tour, trip or tour set violates its invariants."""


class TourParseError(ValueError):
    """A tour file row could not be parsed."""

    def __init__(self, line: int, field_name: str, message: str):
        super().__init__(f"line {line}: field {field_name!r}: {message}")
        self.line = line
        self.field = field_name


@dataclass(frozen=True)
class Trip:
    index: int
    travel_time: float
    distance: float
    dwell_before: float = 0.0

    def __post_init__(self):
        if not self.travel_time > 0:
            raise TourValidationError(f"trip {self.index}: travel_time must be > 0, got {self.travel_time}")
        if not self.distance > 0:
            raise TourValidationError(f"trip {self.index}: distance must be > 0, got {self.distance}")
        if not self.dwell_before >= 0:
            raise TourValidationError(f"trip {self.index}: dwell_before must be >= 0, got {self.dwell_before}")


@dataclass(frozen=True)
class Tour:
    tour_id: str
    vehicle_id: str
    start_time: float
    trips: tuple[Trip, ...]

    def __post_init__(self):
        if not self.trips:
            raise TourValidationError(f"tour {self.tour_id}: no trips")
        if not self.start_time >= 0:
            raise TourValidationError(f"tour {self.tour_id}: negative start_time")
        for expected, trip in enumerate(self.trips):
            if trip.index != expected:
                raise TourValidationError(
                    f"tour {self.tour_id}: non-consecutive trip index {trip.index} (expected {expected})"
                )

    @property
    def duration(self) -> float:
        """Start of the first dwell to the end of the last trip."""
        return sum(t.dwell_before + t.travel_time for t in self.trips)

    @property
    def driving_time(self) -> float:
        return sum(t.travel_time for t in self.trips)

    @property
    def distance(self) -> float:
        return sum(t.distance for t in self.trips)


@dataclass(frozen=True)
class TourSet:
    tours: tuple[Tour, ...]
    provenance: str = "generated"

    def __post_init__(self):
        object.__setattr__(self, "tours", tuple(self.tours))
        seen_tours: set[str] = set()
        seen_vehicles: set[str] = set()
        for tour in self.tours:
            if tour.tour_id in seen_tours:
                raise TourValidationError(f"duplicate tour_id {tour.tour_id!r}")
            if tour.vehicle_id in seen_vehicles:
                raise TourValidationError(f"duplicate vehicle_id {tour.vehicle_id!r}")
            seen_tours.add(tour.tour_id)
            seen_vehicles.add(tour.vehicle_id)

    def __len__(self) -> int:
        return len(self.tours)

    def __iter__(self):
        return iter(self.tours)

    def __getitem__(self, i):
        return self.tours[i]

    @property
    def n_trips(self) -> int:
        return sum(len(t.trips) for t in self.tours)

    def stats(self) -> dict[str, float]:
        """Aggregate statistics comparable with the usual descriptive tour tables."""
        n = len(self.tours)
        if n == 0:
            return {"tours": 0, "trips": 0, "mean_trips_per_tour": 0.0,
                    "mean_tour_duration_h": 0.0, "mean_driving_time_h": 0.0}
        return {
            "tours": n,
            "trips": self.n_trips,
            "mean_trips_per_tour": self.n_trips / n,
            "mean_tour_duration_h": sum(t.duration for t in self.tours) / n / 60.0,
            "mean_driving_time_h": sum(t.driving_time for t in self.tours) / n / 60.0,
        }


# ---------------------------------------------------------------------------
# Generation

_DISTRIBUTIONS = {
    "lognormal": ("mean", "sigma"),
    "exponential": ("mean",),
    "gamma": ("mean", "shape"),
    "uniform": ("low", "high"),
    "constant": ("value",),
}


@dataclass(frozen=True)
class Distribution:
    """A named positive distribution. ``lognormal`` is parameterised by its
    arithmetic mean and the log-space sigma."""

    name: str
    params: tuple[tuple[str, float], ...]

    @classmethod
    def of(cls, name: str, **params: float) -> "Distribution":
        return cls(name, tuple(sorted(params.items())))

    def __post_init__(self):
        if self.name not in _DISTRIBUTIONS:
            raise TourValidationError(f"unknown distribution {self.name!r}")
        got = {k for k, _ in self.params}
        need = set(_DISTRIBUTIONS[self.name])
        if got != need:
            raise TourValidationError(f"{self.name} needs parameters {sorted(need)}, got {sorted(got)}")
        for k, v in self.params:
            if not (v > 0 and math.isfinite(v)):
                raise TourValidationError(f"{self.name} parameter {k} must be positive, got {v}")
        if self.name == "uniform" and self.param("low") >= self.param("high"):
            raise TourValidationError("uniform needs low < high")

    def param(self, key: str) -> float:
        return dict(self.params)[key]

    @property
    def mean(self) -> float:
        p = dict(self.params)
        if self.name == "uniform":
            return (p["low"] + p["high"]) / 2
        if self.name == "constant":
            return p["value"]
        return p["mean"]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        p = dict(self.params)
        if self.name == "lognormal":
            mu = math.log(p["mean"]) - p["sigma"] ** 2 / 2
            return rng.lognormal(mu, p["sigma"], size)
        if self.name == "exponential":
            return rng.exponential(p["mean"], size)
        if self.name == "gamma":
            return rng.gamma(p["shape"], p["mean"] / p["shape"], size)
        if self.name == "uniform":
            return rng.uniform(p["low"], p["high"], size)
        return np.full(size, p["value"])

    def to_dict(self) -> dict:
        return {"name": self.name, **dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "Distribution":
        d = dict(d)
        name = d.pop("name")
        return cls.of(name, **{k: float(v) for k, v in d.items()})


# 4 trips x (30 min dwell + 80.55 min driving) = 442.2 min = 7.37 h per tour.
_DEFAULT_TRIP_TIME = Distribution.of("lognormal", mean=80.55, sigma=0.5)
_DEFAULT_DWELL = Distribution.of("lognormal", mean=30.0, sigma=0.5)


@dataclass(frozen=True)
class GeneratorProfile:
    """Calibration of the synthetic tour generator.

    Trips per tour are ``1 + Poisson(mean - 1)`` (or shifted geometric with
    ``trip_count="geometric"``). Tours end within the day: a tour that would
    run past ``day_length`` starts earlier instead, and a tour longer than
    the whole day is redrawn.
    """

    mean_trips_per_tour: float = 4.0
    trip_time: Distribution = _DEFAULT_TRIP_TIME
    dwell: Distribution = _DEFAULT_DWELL
    departure_profile: tuple[float, ...] = MORNING_PEAK
    distance_speed: float = DEFAULT_SPEED_KMH
    trip_count: str = "poisson"
    day_length: float = 1440.0

    def __post_init__(self):
        object.__setattr__(self, "departure_profile", tuple(float(w) for w in self.departure_profile))
        if not self.mean_trips_per_tour >= 1:
            raise TourValidationError("mean_trips_per_tour must be >= 1 (at least one trip per tour)")
        if self.trip_count not in ("poisson", "geometric"):
            raise TourValidationError(f"trip_count must be poisson or geometric, got {self.trip_count!r}")
        if not self.distance_speed > 0:
            raise TourValidationError("distance_speed must be positive")
        if not self.day_length > self.expected_tour_duration:
            raise TourValidationError("day_length must exceed the expected tour duration")
        w = self.departure_profile
        if not w or any(x < 0 or not math.isfinite(x) for x in w) or sum(w) <= 0:
            raise TourValidationError("departure weights must be non-negative and not all zero")

    @property
    def expected_tour_duration(self) -> float:
        """Expected tour duration in minutes."""
        return self.mean_trips_per_tour * (self.trip_time.mean + self.dwell.mean)

    def draw_trip_counts(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.trip_count == "geometric":
            return rng.geometric(1.0 / self.mean_trips_per_tour, size)
        return 1 + rng.poisson(self.mean_trips_per_tour - 1.0, size)

    def to_dict(self) -> dict:
        return {
            "mean_trips_per_tour": self.mean_trips_per_tour,
            "trip_time": self.trip_time.to_dict(),
            "dwell": self.dwell.to_dict(),
            "departure_profile": list(self.departure_profile),
            "distance_speed": self.distance_speed,
            "trip_count": self.trip_count,
            "day_length": self.day_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorProfile":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise TourValidationError(f"unknown generator profile key(s): {sorted(unknown)}")
        kw = dict(d)
        for key in ("trip_time", "dwell"):
            if key in kw:
                kw[key] = Distribution.from_dict(kw[key])
        if "departure_profile" in kw:
            kw["departure_profile"] = tuple(kw["departure_profile"])
        for key in ("mean_trips_per_tour", "distance_speed", "day_length"):
            if key in kw:
                kw[key] = float(kw[key])
        return cls(**kw)


def _r3(a):
    return np.round(a, 3)


def _draw_trips(profile, rng, n_trips):
    total = int(n_trips.sum())
    travel = np.maximum(_r3(profile.trip_time.sample(rng, total)), 0.001)
    dwell = _r3(profile.dwell.sample(rng, total))
    offsets = np.concatenate(([0], np.cumsum(n_trips)))
    durations = np.add.reduceat(travel + dwell, offsets[:-1])
    return travel, dwell, offsets, durations


def generate_tours(profile: GeneratorProfile, count: int, seed: int) -> TourSet:
    """Draw ``count`` synthetic single-day tours.

    Start clock times follow the piecewise-constant departure weights
    (uniform within each bin). Durations are rounded to 1/1000 min so files
    written with :func:`write_tours` reload exactly.
    """
    if count < 1:
        raise TourValidationError("count must be >= 1")
    rng = np.random.default_rng(seed)
    weights = np.asarray(profile.departure_profile)
    bin_width = profile.day_length / len(weights)
    bins = rng.choice(len(weights), size=count, p=weights / weights.sum())
    starts = _r3((bins + rng.random(count)) * bin_width)

    n_trips = profile.draw_trip_counts(rng, count)
    travel, dwell, offsets, durations = _draw_trips(profile, rng, n_trips)
    per_tour = [None] * count
    redraw = np.flatnonzero(durations > profile.day_length)
    for _ in range(1000):
        if redraw.size == 0:
            break
        n_new = profile.draw_trip_counts(rng, redraw.size)
        t_new, d_new, o_new, dur_new = _draw_trips(profile, rng, n_new)
        ok = dur_new <= profile.day_length
        for k in np.flatnonzero(ok):
            i = redraw[k]
            sl = slice(o_new[k], o_new[k + 1])
            per_tour[i] = (t_new[sl], d_new[sl])
            durations[i] = dur_new[k]
        redraw = redraw[~ok]
    else:
        raise TourValidationError("could not draw tours that fit in one day; check the profile")

    width = max(6, len(str(count - 1)))
    tours = []
    for i in range(count):
        if per_tour[i] is None:
            tt, dw = travel[offsets[i]:offsets[i + 1]], dwell[offsets[i]:offsets[i + 1]]
        else:
            tt, dw = per_tour[i]
        start = min(float(starts[i]), round(profile.day_length - float(durations[i]), 3))
        trips = tuple(
            Trip(j, float(tt[j]), max(round(float(tt[j]) * profile.distance_speed / 60.0, 3), 0.001), float(dw[j]))
            for j in range(len(tt))
        )
        tours.append(Tour(f"T{i:0{width}d}", f"V{i:0{width}d}", max(start, 0.0), trips))
    return TourSet(tuple(tours), provenance="generated")


# ---------------------------------------------------------------------------
# Sampling and filtering

def sample_penetration(tours: TourSet, rate: float, seed: int) -> TourSet:
    """Select ``floor(rate * len(tours))`` tours uniformly at random, keeping input order."""
    if not (0 < rate <= 1):
        raise TourValidationError(f"penetration rate must be in (0, 1], got {rate}")
    if rate == 1:
        return tours
    n = len(tours)
    # 1e-9 guards against 0.29 * 100 = 28.999999999999996
    k = math.floor(rate * n + 1e-9)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    return TourSet(tuple(tours.tours[i] for i in idx), provenance=tours.provenance)


def filter_window(tours: TourSet, start: float, duration: float) -> TourSet:
    """Tours whose start_time lies in ``[start, start + duration*60)``; duration in hours."""
    if not duration > 0:
        raise TourValidationError(f"window duration must be positive, got {duration}")
    end = start + duration * 60.0
    kept = tuple(t for t in tours.tours if start <= t.start_time < end)
    if len(kept) == len(tours):
        return tours
    return TourSet(kept, provenance=tours.provenance)


# ---------------------------------------------------------------------------
# File I/O

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt:
        fmt = fmt.lower()
    else:
        fmt = "json" if path.suffix.lower() == ".json" else "csv"
    if fmt not in ("csv", "json"):
        raise ValueError(f"unsupported tour file format {fmt!r}")
    return fmt


def _parse_float(raw: str, line: int, name: str) -> float:
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise TourParseError(line, name, f"not a number: {raw!r}") from None
    if not math.isfinite(v):
        raise TourParseError(line, name, f"not finite: {raw!r}")
    return v


def _parse_int(raw: str, line: int, name: str) -> int:
    try:
        return int(raw)
    except (TypeError, ValueError):
        raise TourParseError(line, name, f"not an integer: {raw!r}") from None


def _build_tour(tour_id, vehicle_id, start, rows) -> Tour:
    rows = sorted(rows, key=lambda r: r[0])
    try:
        trips = tuple(Trip(i, tt, dist, dw) for i, dw, tt, dist in rows)
        return Tour(tour_id, vehicle_id, start, trips)
    except TourValidationError as exc:
        raise TourValidationError(f"tour {tour_id!r}: {exc}") from None


def _load_csv(path: Path, speed: float) -> TourSet:
    order: list[str] = []
    meta: dict[str, tuple[str, float]] = {}
    rows: dict[str, list] = {}
    last_id = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TourValidationError(f"{path}: empty tour file")
        header = [h.strip() for h in header]
        missing = [c for c in CSV_HEADER if c not in header and c != "distance_km"]
        if missing:
            raise TourParseError(1, missing[0], "missing column in header")
        col = {name: header.index(name) for name in CSV_HEADER if name in header}
        for line_no, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise TourParseError(line_no, "*", f"expected {len(header)} fields, got {len(rec)}")
            get = lambda name: rec[col[name]].strip()  # noqa: E731
            tid = get("tour_id")
            vid = get("vehicle_id")
            if not tid:
                raise TourParseError(line_no, "tour_id", "empty")
            if not vid:
                raise TourParseError(line_no, "vehicle_id", "empty")
            start = _parse_float(get("tour_start_min"), line_no, "tour_start_min")
            idx = _parse_int(get("trip_index"), line_no, "trip_index")
            dwell = _parse_float(get("dwell_before_min"), line_no, "dwell_before_min")
            tt = _parse_float(get("travel_time_min"), line_no, "travel_time_min")
            raw_d = get("distance_km") if "distance_km" in col else ""
            dist = _parse_float(raw_d, line_no, "distance_km") if raw_d else tt * speed / 60.0
            if tid in meta:
                if tid != last_id:
                    raise TourValidationError(f"duplicate tour_id {tid!r} (line {line_no})")
                if meta[tid] != (vid, start):
                    raise TourParseError(line_no, "vehicle_id/tour_start_min",
                                         f"inconsistent with earlier rows of tour {tid!r}")
                if any(r[0] == idx for r in rows[tid]):
                    raise TourValidationError(f"duplicate trip_index {idx} in tour {tid!r} (line {line_no})")
            else:
                meta[tid] = (vid, start)
                rows[tid] = []
                order.append(tid)
            rows[tid].append((idx, dwell, tt, dist))
            last_id = tid
    if not order:
        raise TourValidationError(f"{path}: empty tour file")
    return TourSet(tuple(_build_tour(t, *meta[t], rows[t]) for t in order), provenance="loaded")


def _load_json(path: Path, speed: float) -> TourSet:
    with open(path) as fh:
        text = fh.read()
    if not text.strip():
        raise TourValidationError(f"{path}: empty tour file")
    doc = json.loads(text)
    items = doc["tours"] if isinstance(doc, dict) else doc
    if not items:
        raise TourValidationError(f"{path}: empty tour file")
    tours = []
    for n, item in enumerate(items):
        where = n + 1
        try:
            tid = str(item["tour_id"])
            vid = str(item["vehicle_id"])
            start = float(item["tour_start_min"])
            rows = []
            for trip in item["trips"]:
                tt = float(trip["travel_time_min"])
                dist = trip.get("distance_km")
                rows.append((int(trip["trip_index"]), float(trip.get("dwell_before_min", 0.0)), tt,
                             float(dist) if dist is not None else tt * speed / 60.0))
        except KeyError as exc:
            raise TourParseError(where, exc.args[0], "missing") from None
        except (TypeError, ValueError) as exc:
            raise TourParseError(where, "*", str(exc)) from None
        if len({r[0] for r in rows}) != len(rows):
            raise TourValidationError(f"duplicate trip_index in tour {tid!r}")
        tours.append(_build_tour(tid, vid, start, rows))
    return TourSet(tuple(tours), provenance="loaded")


def load_tours(path, format: str | None = None, speed: float = DEFAULT_SPEED_KMH) -> TourSet:
    """Load a tour file. An empty ``distance_km`` is derived from travel time at ``speed`` km/h."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"tour file not found: {path}")
    fmt = _infer_format(path, format)
    return _load_csv(path, speed) if fmt == "csv" else _load_json(path, speed)


def _csv_rows(tours: Iterable[Tour]) -> list[list[str]]:
    rows = []
    for tour in sorted(tours, key=lambda t: t.tour_id):
        for trip in tour.trips:
            rows.append([tour.tour_id, tour.vehicle_id, _fmt(tour.start_time), str(trip.index),
                         _fmt(trip.dwell_before), _fmt(trip.travel_time), _fmt(trip.distance)])
    return rows


def write_tours(tours: TourSet | Sequence[Tour], path, format: str | None = None) -> Path:
    path = Path(path)
    fmt = _infer_format(path, format)
    items = tours.tours if isinstance(tours, TourSet) else tuple(tours)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        if fmt == "csv":
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            w.writerows(_csv_rows(items))
        else:
            doc = {
                "provenance": getattr(tours, "provenance", "loaded"),
                "tours": [
                    {
                        "tour_id": t.tour_id,
                        "vehicle_id": t.vehicle_id,
                        "tour_start_min": t.start_time,
                        "trips": [
                            {"trip_index": p.index, "dwell_before_min": p.dwell_before,
                             "travel_time_min": p.travel_time, "distance_km": p.distance}
                            for p in t.trips
                        ],
                    }
                    for t in sorted(items, key=lambda t: t.tour_id)
                ],
            }
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    tmp.replace(path)
    return path
