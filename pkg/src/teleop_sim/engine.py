"""Discrete-event core: a shared pool of teleoperators serving a fleet of trucks.

Vehicles alternate between dwelling (Idle), waiting for an operator
(InQueue), being taken over (Takeover) and being driven (Teleoperated) until
their tour ends (SignedOff). Teleoperators cycle through Idle, Takeover,
Busy and Resting. Requests are served first-in first-out by the
longest-idle eligible operator.

Events that occur at the same instant are processed in the order
TripComplete, RestComplete, TakeoverComplete, VehicleReady, then by the
order in which they were scheduled. Queued vehicles are matched to free
operators once every operator-freeing event of an instant has been handled,
so operators released together compete only on idle time and id.
"""

from __future__ import annotations

import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .tours import TourSet

__all__ = [
    "Event",
    "EventCalendar",
    "EventKind",
    "IntervalRecord",
    "LogEntry",
    "RestMode",
    "RestPolicy",
    "Simulation",
    "SimulationError",
    "SimulationTrace",
    "TeleoperatorState",
    "TripRecord",
    "VehicleState",
    "run_baseline",
    "run_simulation",
    "write_event_log",
    "write_snapshots",
]


class SimulationError(RuntimeError):
    pass


class VehicleState(Enum):
    IDLE = "Idle"
    IN_QUEUE = "InQueue"
    TAKEOVER = "Takeover"
    TELEOPERATED = "Teleoperated"
    SIGNED_OFF = "SignedOff"


class TeleoperatorState(Enum):
    IDLE = "Idle"
    TAKEOVER = "Takeover"
    BUSY = "Busy"
    RESTING = "Resting"


VEHICLE_STATES = tuple(VehicleState)
TELEOPERATOR_STATES = tuple(TeleoperatorState)

# Internal integer codes, positions in VEHICLE_STATES / TELEOPERATOR_STATES.
V_IDLE, V_QUEUE, V_TAKEOVER, V_DRIVEN, V_DONE = range(5)
T_IDLE, T_TAKEOVER, T_BUSY, T_RESTING = range(4)

_VEHICLE_MOVES = (
    frozenset({V_QUEUE, V_TAKEOVER}),
    frozenset({V_TAKEOVER}),
    frozenset({V_DRIVEN}),
    frozenset({V_IDLE, V_DONE}),
    frozenset(),
)
_OPERATOR_MOVES = (
    frozenset({T_TAKEOVER}),
    frozenset({T_BUSY}),
    frozenset({T_RESTING, T_IDLE}),
    frozenset({T_IDLE}),
)


class EventKind(IntEnum):
    """Value is the processing priority among events at the same time."""

    TRIP_COMPLETE = 0
    REST_COMPLETE = 1
    TAKEOVER_COMPLETE = 2
    VEHICLE_READY = 3

    @property
    def label(self) -> str:
        return _KIND_LABELS[self]


_KIND_LABELS = {
    EventKind.TRIP_COMPLETE: "TripComplete",
    EventKind.REST_COMPLETE: "RestComplete",
    EventKind.TAKEOVER_COMPLETE: "TakeoverComplete",
    EventKind.VEHICLE_READY: "VehicleReady",
}


class RestMode(Enum):
    NONE = "none"
    MONOLITHIC = "monolithic"
    SPLIT = "split"


@dataclass(frozen=True)
class RestPolicy:
    """Teleoperator rest rules, durations in minutes.

    ``monolithic``: once driving since the last long rest reaches
    ``max_drive`` at the end of a trip, rest ``long_rest`` and reset.
    ``split``: rest ``short_rest`` after every trip; short rests are credited
    against the long rest, and the remainder (at least one short rest) is
    taken when the driving cap is reached. ``none`` disables resting.
    """

    max_drive: float = 270.0
    long_rest: float = 45.0
    short_rest: float = 10.0
    mode: RestMode = RestMode.MONOLITHIC

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", RestMode(self.mode))
        if min(self.max_drive, self.long_rest, self.short_rest) <= 0:
            raise ValueError("rest policy durations must be positive")
        if self.short_rest > self.long_rest:
            raise ValueError("short_rest must not exceed long_rest")

    @classmethod
    def disabled(cls) -> "RestPolicy":
        return cls(mode=RestMode.NONE)

    @property
    def enabled(self) -> bool:
        return self.mode is not RestMode.NONE

    @property
    def longest_rest(self) -> float:
        return 0.0 if not self.enabled else max(self.long_rest, self.short_rest)

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "max_drive_min": self.max_drive,
                "long_rest_min": self.long_rest, "short_rest_min": self.short_rest}


class Event(NamedTuple):
    """Calendar entry; tuple order gives (time, kind priority, sequence) ordering."""

    time: float
    kind: EventKind
    seq: int
    vehicle: int = -1
    teleoperator: int = -1


class EventCalendar:
    """Future event list ordered by (time, kind priority, sequence number)."""

    def __init__(self, start: float = -math.inf):
        self._heap: list[Event] = []
        self._seq = 0
        self.now = start

    def __len__(self):
        return len(self._heap)

    def schedule(self, time: float, kind: EventKind, vehicle: int = -1, teleoperator: int = -1) -> Event:
        if time < self.now:
            raise SimulationError(f"event {kind.label} scheduled in the past ({time} < {self.now})")
        ev = Event(time, kind, self._seq, vehicle, teleoperator)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def peek(self) -> Event | None:
        return self._heap[0] if self._heap else None

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        return ev


# ---------------------------------------------------------------------------
# Trace records

class TripRecord(NamedTuple):
    """One served trip; ``wait`` is the time spent queued before assignment."""

    vehicle_id: str
    tour_id: str
    trip_index: int
    teleoperator: int
    request_time: float
    assign_time: float
    drive_start: float
    drive_end: float
    travel_time: float
    distance: float

    @property
    def wait(self) -> float:
        return self.assign_time - self.request_time

    @property
    def setup_time(self) -> float:
        return self.drive_start - self.assign_time


class IntervalRecord(NamedTuple):
    teleoperator: int
    state: TeleoperatorState
    start: float
    end: float
    vehicle_id: str = ""


class LogEntry(NamedTuple):
    time: float
    kind: str
    vehicle_id: str
    teleoperator: int
    detail: str


@dataclass
class SimulationTrace:
    start_time: float
    shift_duration: float
    n_vehicles: int
    n_teleoperators: int
    takeover_time: float
    rest: RestPolicy
    seed: int
    vehicle_ids: tuple[str, ...]
    tour_ids: tuple[str, ...]
    planned_driving: dict[str, float]
    planned_distance: dict[str, float]
    trips: list[TripRecord]
    intervals: list[IntervalRecord]
    tour_completion: dict[str, float]
    queue_changes: list[tuple[float, int]]
    log: list[LogEntry]
    snapshot_interval: float
    snapshot_times: np.ndarray
    vehicle_counts: np.ndarray
    teleoperator_counts: np.ndarray
    queue_lengths: np.ndarray
    end_time: float

    @property
    def completion_time(self) -> float:
        """Clock time of the last SignedOff."""
        return max(self.tour_completion.values())

    @property
    def completion_makespan(self) -> float:
        return self.completion_time - self.start_time

    @property
    def waits(self) -> list[float]:
        return [r.wait for r in self.trips]

    def snapshot_rows(self):
        for i, t in enumerate(self.snapshot_times):
            yield (float(t), *map(int, self.vehicle_counts[i]), *map(int, self.teleoperator_counts[i]),
                   int(self.queue_lengths[i]))


# ---------------------------------------------------------------------------
# Simulation

class _Vehicle:
    __slots__ = ("tour", "state", "next_trip", "request_time", "assign_time", "drive_start", "operator")

    def __init__(self, tour):
        self.tour = tour
        self.state = V_IDLE
        self.next_trip = 0
        self.request_time = 0.0
        self.assign_time = 0.0
        self.drive_start = 0.0
        self.operator = -1


class _Operator:
    __slots__ = ("state", "since", "idle_since", "driven", "rest_credit", "vehicle")

    def __init__(self, start):
        self.state = T_IDLE
        self.since = start
        self.idle_since = start
        self.driven = 0.0
        self.rest_credit = 0.0
        self.vehicle = -1


class Simulation:
    """Mutable state of one run. Use :func:`run_simulation` for the usual entry point."""

    def __init__(self, tours: TourSet, n_teleoperators: int, takeover_time: float = 0.0,
                 rest: RestPolicy | None = None, shift_start: float = 0.0, shift_duration: float = 24.0,
                 seed: int = 0, snapshot_interval: float | None = 1.0, record_log: bool = True,
                 time_cap: float | None = None):
        if len(tours) == 0:
            raise ValueError("cannot simulate an empty tour set")
        if n_teleoperators < 1:
            raise ValueError("n_teleoperators must be >= 1")
        if takeover_time < 0:
            raise ValueError("takeover_time must be non-negative")
        if snapshot_interval is not None and not snapshot_interval > 0:
            raise ValueError("snapshot_interval must be positive")
        first = min(t.start_time for t in tours)
        if first < shift_start:
            raise ValueError(f"tour starts at {first} before simulation start {shift_start}")
        self.tours = tours
        self.rest = rest if rest is not None else RestPolicy()
        self.takeover_time = float(takeover_time)
        self.start = float(shift_start)
        self.shift_duration = shift_duration
        self.seed = seed
        self.dt = snapshot_interval
        self.record_log = record_log

        if time_cap is None:
            work = sum(t.duration for t in tours) + tours.n_trips * (self.takeover_time + self.rest.longest_rest)
            time_cap = max(t.start_time for t in tours) - self.start + 10.0 * work
        self.time_cap = time_cap

        self.vehicles = [_Vehicle(t) for t in tours]
        self.operators = [_Operator(self.start) for _ in range(n_teleoperators)]
        self.calendar = EventCalendar(self.start)
        self.queue: deque[int] = deque()
        self.idle: list[tuple[float, int]] = [(self.start, j) for j in range(n_teleoperators)]
        self.vcount = [0] * len(VEHICLE_STATES)
        self.vcount[V_IDLE] = len(self.vehicles)
        self.tcount = [0] * len(TELEOPERATOR_STATES)
        self.tcount[T_IDLE] = n_teleoperators

        self.trips: list[TripRecord] = []
        self.intervals: list[IntervalRecord] = []
        self.completion: dict[str, float] = {}
        self.queue_changes: list[tuple[float, int]] = [(self.start, 0)]
        self.log: list[LogEntry] = []
        self._samples: list[tuple] = []
        self._next_sample = 0

    # -- state transitions ------------------------------------------------

    def _move_vehicle(self, v: _Vehicle, new: int):
        if new not in _VEHICLE_MOVES[v.state]:
            raise SimulationError(
                f"illegal vehicle transition {VEHICLE_STATES[v.state].value} -> {VEHICLE_STATES[new].value}")
        self.vcount[v.state] -= 1
        self.vcount[new] += 1
        v.state = new

    def _move_operator(self, j: int, new: int, now: float):
        op = self.operators[j]
        if new not in _OPERATOR_MOVES[op.state]:
            raise SimulationError(f"illegal teleoperator transition {TELEOPERATOR_STATES[op.state].value} "
                                  f"-> {TELEOPERATOR_STATES[new].value}")
        if op.state != T_IDLE and now > op.since:
            vid = self.vehicles[op.vehicle].tour.vehicle_id if op.state != T_RESTING else ""
            self.intervals.append(IntervalRecord(j, TELEOPERATOR_STATES[op.state], op.since, now, vid))
        self.tcount[op.state] -= 1
        self.tcount[new] += 1
        op.state = new
        op.since = now

    def _note(self, now, kind, vi, j, detail):
        if self.record_log:
            vid = self.vehicles[vi].tour.vehicle_id if vi >= 0 else ""
            self.log.append(LogEntry(now, kind, vid, j, detail))

    def _eligible(self, j: int) -> bool:
        return not self.rest.enabled or self.operators[j].driven < self.rest.max_drive

    def _pop_idle_operator(self) -> int:
        """Longest-idle eligible operator, ties by lower id; -1 if none."""
        skipped = []
        found = -1
        while self.idle:
            since, j = heapq.heappop(self.idle)
            if self._eligible(j):
                found = j
                break
            skipped.append((since, j))
        for item in skipped:
            heapq.heappush(self.idle, item)
        return found

    def _start_takeover(self, vi: int, j: int, now: float):
        v = self.vehicles[vi]
        v.assign_time = now
        v.operator = j
        self.operators[j].vehicle = vi
        self._move_vehicle(v, V_TAKEOVER)
        self._move_operator(j, T_TAKEOVER, now)
        self.calendar.schedule(now + self.takeover_time, EventKind.TAKEOVER_COMPLETE, vi, j)

    # -- event handlers ---------------------------------------------------

    def handle_vehicle_ready(self, vi: int, now: float):
        v = self.vehicles[vi]
        v.request_time = now
        j = -1 if self.queue else self._pop_idle_operator()
        if j >= 0:
            self._start_takeover(vi, j, now)
            self._note(now, "VehicleReady", vi, j, f"trip={v.next_trip} assigned wait=0")
        else:
            self._move_vehicle(v, V_QUEUE)
            self.queue.append(vi)
            self.queue_changes.append((now, len(self.queue)))
            self._note(now, "VehicleReady", vi, -1, f"trip={v.next_trip} queued len={len(self.queue)}")

    def handle_takeover_complete(self, vi: int, j: int, now: float):
        v = self.vehicles[vi]
        v.drive_start = now
        self._move_vehicle(v, V_DRIVEN)
        self._move_operator(j, T_BUSY, now)
        trip = v.tour.trips[v.next_trip]
        self.calendar.schedule(now + trip.travel_time, EventKind.TRIP_COMPLETE, vi, j)
        self._note(now, "TakeoverComplete", vi, j, f"trip={v.next_trip}")

    def handle_trip_complete(self, vi: int, j: int, now: float):
        v = self.vehicles[vi]
        tour = v.tour
        trip = tour.trips[v.next_trip]
        self.trips.append(TripRecord(tour.vehicle_id, tour.tour_id, trip.index, j, v.request_time,
                                     v.assign_time, v.drive_start, now, trip.travel_time, trip.distance))
        v.next_trip += 1
        v.operator = -1
        if v.next_trip < len(tour.trips):
            self._move_vehicle(v, V_IDLE)
            self.calendar.schedule(now + tour.trips[v.next_trip].dwell_before, EventKind.VEHICLE_READY, vi)
            vdetail = "vehicle Idle"
        else:
            self._move_vehicle(v, V_DONE)
            self.completion[tour.tour_id] = now
            vdetail = "vehicle SignedOff"

        op = self.operators[j]
        op.driven += trip.travel_time
        rest = self._rest_after_trip(op)
        if rest > 0:
            self._move_operator(j, T_RESTING, now)
            op.vehicle = -1
            self.calendar.schedule(now + rest, EventKind.REST_COMPLETE, -1, j)
            odetail = f"operator Resting {rest:g}"
        else:
            self._move_operator(j, T_IDLE, now)
            op.vehicle = -1
            op.idle_since = now
            heapq.heappush(self.idle, (now, j))
            odetail = "operator Idle"
        self._note(now, "TripComplete", vi, j, f"trip={trip.index} {vdetail}; {odetail}")

    def _rest_after_trip(self, op: _Operator) -> float:
        policy = self.rest
        if policy.mode is RestMode.NONE:
            return 0.0
        capped = op.driven >= policy.max_drive
        if policy.mode is RestMode.MONOLITHIC:
            if capped:
                op.driven = 0.0
                return policy.long_rest
            return 0.0
        # split
        if capped:
            rest = max(policy.short_rest, policy.long_rest - op.rest_credit)
            op.driven = 0.0
            op.rest_credit = 0.0
            return rest
        op.rest_credit += policy.short_rest
        return policy.short_rest

    def handle_rest_complete(self, j: int, now: float):
        op = self.operators[j]
        self._move_operator(j, T_IDLE, now)
        op.idle_since = now
        heapq.heappush(self.idle, (now, j))
        self._note(now, "RestComplete", -1, j, "operator Idle")

    def assign_from_queue(self, now: float):
        """Match queued vehicles (FIFO) with free operators (longest idle first)."""
        while self.queue:
            j = self._pop_idle_operator()
            if j < 0:
                return
            vi = self.queue.popleft()
            self.queue_changes.append((now, len(self.queue)))
            v = self.vehicles[vi]
            self._start_takeover(vi, j, now)
            self._note(now, "Assign", vi, j, f"trip={v.next_trip} wait={now - v.request_time:.6f}")

    # -- driver -----------------------------------------------------------

    def _record_samples(self, until: float, inclusive: bool):
        if self.dt is None:
            return
        while True:
            t = self.start + self._next_sample * self.dt
            if t > until or (t == until and not inclusive):
                return
            self._samples.append((t, *self.vcount, *self.tcount, len(self.queue)))
            self._next_sample += 1

    def run(self) -> SimulationTrace:
        cal = self.calendar
        for vi, v in enumerate(self.vehicles):
            cal.schedule(v.tour.start_time + v.tour.trips[0].dwell_before, EventKind.VEHICLE_READY, vi)
        limit = self.start + self.time_cap
        TRIP, READY, TAKEOVER = EventKind.TRIP_COMPLETE, EventKind.VEHICLE_READY, EventKind.TAKEOVER_COMPLETE
        now = self.start
        while cal:
            ev = cal.pop()
            if ev.time > limit:
                raise SimulationError(
                    f"simulated time exceeded safety cap of {self.time_cap:.1f} min after start "
                    f"({len(self.completion)}/{len(self.vehicles)} tours signed off, queue {len(self.queue)})"
                )
            self._record_samples(ev.time, inclusive=False)
            now, kind = ev.time, ev.kind
            if kind == TRIP:
                self.handle_trip_complete(ev.vehicle, ev.teleoperator, now)
            elif kind == READY:
                self.handle_vehicle_ready(ev.vehicle, now)
            elif kind == TAKEOVER:
                self.handle_takeover_complete(ev.vehicle, ev.teleoperator, now)
            else:
                self.handle_rest_complete(ev.teleoperator, now)
            if self.queue:
                nxt = cal.peek()
                # hold matching until every operator freed at this instant is back
                if nxt is None or nxt.time != now or nxt.kind > EventKind.REST_COMPLETE:
                    self.assign_from_queue(now)

        if len(self.completion) != len(self.vehicles) or self.queue:
            raise SimulationError("event calendar drained with unfinished tours")
        end = now
        if self.dt is not None:
            last = self.start + math.ceil((end - self.start) / self.dt) * self.dt
            self._record_samples(last, inclusive=True)
        # close open operator intervals
        for j, op in enumerate(self.operators):
            if op.state != T_IDLE:
                raise SimulationError(f"teleoperator {j} not idle at end of run")
        return self._trace(end)

    def _trace(self, end: float) -> SimulationTrace:
        samples = np.array(self._samples, dtype=float).reshape(-1, 1 + len(VEHICLE_STATES) + len(TELEOPERATOR_STATES) + 1)
        nv = len(VEHICLE_STATES)
        nt = len(TELEOPERATOR_STATES)
        return SimulationTrace(
            start_time=self.start,
            shift_duration=self.shift_duration,
            n_vehicles=len(self.vehicles),
            n_teleoperators=len(self.operators),
            takeover_time=self.takeover_time,
            rest=self.rest,
            seed=self.seed,
            vehicle_ids=tuple(t.vehicle_id for t in self.tours),
            tour_ids=tuple(t.tour_id for t in self.tours),
            planned_driving={t.tour_id: t.driving_time for t in self.tours},
            planned_distance={t.tour_id: t.distance for t in self.tours},
            trips=self.trips,
            intervals=self.intervals,
            tour_completion=self.completion,
            queue_changes=self.queue_changes,
            log=self.log,
            snapshot_interval=self.dt or 0.0,
            snapshot_times=samples[:, 0],
            vehicle_counts=samples[:, 1:1 + nv].astype(np.int64),
            teleoperator_counts=samples[:, 1 + nv:1 + nv + nt].astype(np.int64),
            queue_lengths=samples[:, -1].astype(np.int64),
            end_time=end,
        )


def run_simulation(tours: TourSet, n_teleoperators: int, takeover_time: float = 0.0,
                   rest: RestPolicy | None = None, shift_start: float = 0.0, shift_duration: float = 24.0,
                   seed: int = 0, snapshot_interval: float | None = 1.0, record_log: bool = True,
                   time_cap: float | None = None) -> SimulationTrace:
    """Simulate ``tours`` served by ``n_teleoperators`` until every tour has signed off.

    ``tours`` must already be sampled and window-filtered; tours admitted
    within the shift are served to completion even past the shift end. The
    run is deterministic: ``seed`` is recorded in the trace but nothing is
    drawn at random.
    """
    sim = Simulation(tours, n_teleoperators, takeover_time, rest, shift_start, shift_duration, seed,
                     snapshot_interval, record_log, time_cap)
    return sim.run()


def run_baseline(tours: TourSet, shift_start: float = 0.0, shift_duration: float = 24.0,
                 snapshot_interval: float | None = 1.0, record_log: bool = True) -> SimulationTrace:
    """Schedule playback: one dedicated driver per vehicle, no takeover, no operator rest."""
    return run_simulation(tours, len(tours), 0.0, RestPolicy.disabled(), shift_start, shift_duration,
                          snapshot_interval=snapshot_interval, record_log=record_log)


# ---------------------------------------------------------------------------
# Export

EVENT_LOG_HEADER = ("time_min", "kind", "vehicle_id", "teleoperator_id", "detail")
SNAPSHOT_HEADER = ("time_min", "veh_idle", "veh_inqueue", "veh_takeover", "veh_teleoperated", "veh_signedoff",
                   "to_idle", "to_takeover", "to_busy", "to_resting", "queue_len")


def _atomic_csv(path, header, rows):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)
    return path


def write_event_log(trace: SimulationTrace, path) -> Path:
    rows = ((f"{e.time:.6f}", e.kind, e.vehicle_id, "" if e.teleoperator < 0 else e.teleoperator, e.detail)
            for e in trace.log)
    return _atomic_csv(path, EVENT_LOG_HEADER, rows)


def write_snapshots(trace: SimulationTrace, path) -> Path:
    rows = ((f"{r[0]:.6f}", *r[1:]) for r in trace.snapshot_rows())
    return _atomic_csv(path, SNAPSHOT_HEADER, rows)
