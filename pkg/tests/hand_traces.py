"""Hand-traced engine fixtures shared by the engine and acceptance tests."""

import math

from conftest import make_tours, one_trip, policy
from teleop_sim.engine import run_baseline, run_simulation
from teleop_sim.kpi import compute_kpis

VR, TC, TRIP, REST, ASSIGN = "VehicleReady", "TakeoverComplete", "TripComplete", "RestComplete", "Assign"


# Hand-traced fixtures: tours, operators, takeover, rest, expected log, expected KPIs.
# Rest tuples are (mode, max_drive, long_rest, short_rest); distances equal travel minutes unless given.

REST_TOURS = [
    {"id": "A", "start": 0.0, "trips": [(0.0, 12.0, 12.0), (3.0, 12.0, 12.0)]},
    one_trip("B", 13.0, 5.0),
    one_trip("C", 33.0, 4.0),
]

HAND = {
    "one_operator_queue": dict(
        tours=[one_trip("A", 0.0, 10.0, 20.0), one_trip("B", 5.0, 10.0, 20.0)],
        n=1, takeover=1.0, rest=None,
        log=[(0, VR, "A", 0), (1, TC, "A", 0), (5, VR, "B", -1), (11, TRIP, "A", 0), (11, ASSIGN, "B", 0),
             (12, TC, "B", 0), (22, TRIP, "B", 0)],
        kpi=dict(avg_wait_per_vehicle=3.0, avg_wait_per_queue_entry=6.0, queue_entry_count=1,
                 avg_vehicle_utilization=10 / 22, avg_teleoperator_utilization=1.0, makespan_sum=28.0,
                 completion_makespan=22.0, baseline_makespan=15.0, tour_completion_rate=0.5,
                 distance_completion_rate=0.5, delay=7 / 15, max_wait=6.0),
    ),
    "two_operators": dict(
        tours=[one_trip("A", 0.0, 10.0, 20.0), one_trip("B", 5.0, 10.0, 20.0)],
        n=2, takeover=1.0, rest=None,
        log=[(0, VR, "A", 0), (1, TC, "A", 0), (5, VR, "B", 1), (6, TC, "B", 1), (11, TRIP, "A", 0),
             (16, TRIP, "B", 1)],
        kpi=dict(avg_wait_per_vehicle=0.0, avg_wait_per_queue_entry=0.0, queue_entry_count=0,
                 avg_vehicle_utilization=10 / 16, avg_teleoperator_utilization=11 / 16, makespan_sum=22.0,
                 completion_makespan=16.0, baseline_makespan=15.0, tour_completion_rate=0.5,
                 distance_completion_rate=0.5, delay=1 / 15, max_wait=0.0),
    ),
    "three_vehicle_fifo": dict(
        tours=[one_trip("A", 0.0, 10.0), one_trip("B", 5.0, 10.0), one_trip("C", 6.0, 10.0)],
        n=1, takeover=1.0, rest=None,
        log=[(0, VR, "A", 0), (1, TC, "A", 0), (5, VR, "B", -1), (6, VR, "C", -1), (11, TRIP, "A", 0),
             (11, ASSIGN, "B", 0), (12, TC, "B", 0), (22, TRIP, "B", 0), (22, ASSIGN, "C", 0),
             (23, TC, "C", 0), (33, TRIP, "C", 0)],
        kpi=dict(avg_wait_per_vehicle=22 / 3, avg_wait_per_queue_entry=11.0, queue_entry_count=2,
                 avg_vehicle_utilization=10 / 33, avg_teleoperator_utilization=1.0, makespan_sum=55.0,
                 completion_makespan=33.0, baseline_makespan=16.0, tour_completion_rate=1 / 3,
                 distance_completion_rate=1 / 3, delay=17 / 16, max_wait=16.0),
    ),
    # operator 1 frees first at t=10 but both have been idle equally long, so the lower id wins
    "simultaneous_free_tie": dict(
        tours=[one_trip("X", 0.0, 1.0), one_trip("Y", 0.5, 9.5), one_trip("Z", 2.0, 8.0), one_trip("W", 5.0, 5.0)],
        n=2, takeover=0.0, rest=None,
        log=[(0, VR, "X", 0), (0, TC, "X", 0), (0.5, VR, "Y", 1), (0.5, TC, "Y", 1), (1, TRIP, "X", 0),
             (2, VR, "Z", 0), (2, TC, "Z", 0), (5, VR, "W", -1), (10, TRIP, "Y", 1), (10, TRIP, "Z", 0),
             (10, ASSIGN, "W", 0), (10, TC, "W", 0), (15, TRIP, "W", 0)],
        kpi=dict(avg_wait_per_vehicle=5 / 4, avg_wait_per_queue_entry=5.0, queue_entry_count=1,
                 avg_vehicle_utilization=23.5 / 60, avg_teleoperator_utilization=23.5 / 30, makespan_sum=28.5,
                 completion_makespan=15.0, baseline_makespan=10.0, tour_completion_rate=0.75,
                 distance_completion_rate=18.5 / 23.5, delay=0.5, max_wait=5.0),
    ),
    "monolithic_rest": dict(
        tours=REST_TOURS, n=1, takeover=1.0, rest=("monolithic", 20.0, 15.0, 5.0),
        log=[(0, VR, "A", 0), (1, TC, "A", 0), (13, TRIP, "A", 0), (13, VR, "B", 0), (14, TC, "B", 0),
             (16, VR, "A", -1), (19, TRIP, "B", 0), (19, ASSIGN, "A", 0), (20, TC, "A", 0), (32, TRIP, "A", 0),
             (33, VR, "C", -1), (47, REST, "", 0), (47, ASSIGN, "C", 0), (48, TC, "C", 0), (52, TRIP, "C", 0)],
        kpi=dict(avg_wait_per_vehicle=17 / 3, avg_wait_per_queue_entry=8.5, queue_entry_count=2,
                 avg_vehicle_utilization=33 / 156, avg_teleoperator_utilization=1.0, makespan_sum=54.0,
                 completion_makespan=52.0, baseline_makespan=37.0, tour_completion_rate=2 / 3,
                 distance_completion_rate=29 / 33, delay=15 / 37, max_wait=14.0),
    ),
    "split_rest": dict(
        tours=REST_TOURS, n=1, takeover=1.0, rest=("split", 20.0, 15.0, 5.0),
        log=[(0, VR, "A", 0), (1, TC, "A", 0), (13, TRIP, "A", 0), (13, VR, "B", -1), (16, VR, "A", -1),
             (18, REST, "", 0), (18, ASSIGN, "B", 0), (19, TC, "B", 0), (24, TRIP, "B", 0), (29, REST, "", 0),
             (29, ASSIGN, "A", 0), (30, TC, "A", 0), (33, VR, "C", -1), (42, TRIP, "A", 0), (47, REST, "", 0),
             (47, ASSIGN, "C", 0), (48, TC, "C", 0), (52, TRIP, "C", 0), (57, REST, "", 0)],
        kpi=dict(avg_wait_per_vehicle=32 / 3, avg_wait_per_queue_entry=32 / 3, queue_entry_count=3,
                 avg_vehicle_utilization=33 / 156, avg_teleoperator_utilization=1.0, makespan_sum=69.0,
                 completion_makespan=52.0, baseline_makespan=37.0, tour_completion_rate=1 / 3,
                 distance_completion_rate=17 / 33, delay=15 / 37, max_wait=14.0),
    ),
    "dwell_between_trips": dict(
        tours=[{"id": "A", "start": 0.0, "trips": [(2.0, 5.0, 5.0), (4.0, 3.0, 3.0)]}, one_trip("B", 1.0, 4.0)],
        n=1, takeover=0.0, rest=None,
        log=[(1, VR, "B", 0), (1, TC, "B", 0), (2, VR, "A", -1), (5, TRIP, "B", 0), (5, ASSIGN, "A", 0),
             (5, TC, "A", 0), (10, TRIP, "A", 0), (14, VR, "A", 0), (14, TC, "A", 0), (17, TRIP, "A", 0)],
        kpi=dict(avg_wait_per_vehicle=1.5, avg_wait_per_queue_entry=3.0, queue_entry_count=1,
                 avg_vehicle_utilization=6 / 17, avg_teleoperator_utilization=12 / 17, makespan_sum=15.0,
                 completion_makespan=17.0, baseline_makespan=14.0, tour_completion_rate=0.5,
                 distance_completion_rate=0.75, delay=3 / 14, max_wait=3.0),
    ),
}


def engine_run(fx, **kw):
    tours = make_tours(fx["tours"])
    trace = run_simulation(tours, fx["n"], fx["takeover"], policy(fx["rest"]), 0.0, 24.0, **kw)
    base = run_baseline(tours, 0.0, 24.0)
    return trace, base, compute_kpis(trace, base)


def log_tuples(trace):
    return [(e.time, e.kind, e.vehicle_id, e.teleoperator) for e in trace.log]


def assert_log_equal(got, want):
    assert len(got) == len(want), f"{len(got)} events vs {len(want)}\n{got}\n{want}"
    for g, w in zip(got, want):
        assert g[1:] == w[1:], (g, w)
        assert math.isclose(g[0], w[0], abs_tol=1e-9), (g, w)


def assert_kpis(report, want):
    for k, v in want.items():
        got = getattr(report, k) if not isinstance(report, dict) else report[k]
        assert math.isclose(got, v, rel_tol=1e-9, abs_tol=1e-9), f"{k}: {got} != {v}"
