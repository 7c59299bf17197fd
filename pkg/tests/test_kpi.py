import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_tours, one_trip
from teleop_sim.engine import RestPolicy, run_baseline, run_simulation
from teleop_sim.kpi import (STATISTICS, SUMMARY_KPIS, GainInputs, KpiReport, ReplicationSummary, Stats,
                            aggregate, compute_kpis, gain_simple, gain_weighted, time_average_queue_length,
                            write_summary_table)
from teleop_sim.tours import GeneratorProfile, generate_tours

TWO = [one_trip("A", 0.0, 10.0, 20.0), one_trip("B", 5.0, 10.0, 20.0)]


def two_vehicle_report(**kw):
    ts = make_tours(TWO)
    trace = run_simulation(ts, 1, 1.0, RestPolicy.disabled())
    return compute_kpis(trace, run_baseline(ts), **kw)


# ---------------------------------------------------------------------------
# gains

def test_gain_simple_examples():
    assert gain_simple(100, 60) == 0.4
    assert gain_simple(250, 250) == 0.0
    assert gain_simple(800, 240) == pytest.approx(0.7)


@pytest.mark.parametrize("n_base,n_to", [(10, 11), (0, 1), (5, 0)])
def test_gain_simple_rejects(n_base, n_to):
    with pytest.raises(ValueError):
        gain_simple(n_base, n_to)


def test_gain_weighted_examples():
    assert gain_weighted(GainInputs(250, 125, 560.1859, 598.1721)) == pytest.approx(0.4661, abs=5e-5)
    assert gain_weighted(GainInputs(800, 250, 1472.246, 1530.855)) == pytest.approx(0.675, abs=5e-4)
    assert gain_weighted(GainInputs(10, 10, 100.0, 100.0)) == 0.0


def test_gain_weighted_wages():
    # teleoperators paid double cancel half the saving
    g = gain_weighted(GainInputs(100, 50, 60.0, 60.0, wage_base=20.0, wage_to=40.0))
    assert g == pytest.approx(0.0)


@pytest.mark.parametrize("field", ["n_base", "n_to", "ms_base", "ms_to", "wage_base", "wage_to"])
def test_gain_inputs_positive(field):
    kw = dict(n_base=1, n_to=1, ms_base=1.0, ms_to=1.0)
    kw[field] = 0
    with pytest.raises(ValueError):
        GainInputs(**kw)


positive = st.floats(min_value=1e-3, max_value=1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=300, deadline=None)
@given(n_base=positive, n_to=positive, ms_base=positive, ms_to=positive, wage=positive)
def test_equal_wage_form_is_weighted_form(n_base, n_to, ms_base, ms_to, wage):
    weighted = gain_weighted(GainInputs(n_base, n_to, ms_base, ms_to, wage, wage))
    equal = (n_base * ms_base - n_to * ms_to) / (n_base * ms_base)
    assert weighted == pytest.approx(equal, rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(n_base=st.integers(1, 10_000), frac=st.floats(0.001, 1.0))
def test_gain_simple_is_weighted_at_equal_makespans(n_base, frac):
    n_to = max(1, int(n_base * frac))
    assert gain_simple(n_base, n_to) == pytest.approx(gain_weighted(GainInputs(n_base, n_to, 1.0, 1.0)))


# ---------------------------------------------------------------------------
# aggregation

def _report(v):
    r = two_vehicle_report()
    d = r.to_dict()
    d["delay"] = v
    return KpiReport.from_dict(d)


def test_aggregate_single():
    s = aggregate([_report(0.25)])
    st_ = s["delay"]
    assert st_.mean == st_.min == st_.max == st_.p50 == 0.25 and st_.std == 0.0


def test_aggregate_one_to_five():
    s = aggregate([_report(v) for v in (1, 2, 3, 4, 5)])["delay"]
    assert (s.mean, s.p50, s.min, s.max, s.p25, s.p75) == (3.0, 3.0, 1.0, 5.0, 2.0, 4.0)
    assert s.std == pytest.approx(1.5811, abs=1e-4)


def test_aggregate_constant():
    s = aggregate([_report(2.0)] * 3)["delay"]
    assert s.std == 0.0 and {s.min, s.p25, s.p50, s.p75, s.max} == {2.0}


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=20))
def test_stats_order(values):
    s = Stats.of(values)
    assert s.min <= s.p25 <= s.p50 <= s.p75 <= s.max
    assert s.std >= 0


def test_summary_json_round_trip():
    s = aggregate([_report(v) for v in (0.1, 0.2)])
    assert ReplicationSummary.from_dict(s.to_dict()) == s
    assert set(s.stats) == set(SUMMARY_KPIS)


def test_summary_table_layout(tmp_path):
    s = aggregate([_report(v) for v in (0.1, 0.2, 0.3)])
    path = write_summary_table({"cell-a": s}, tmp_path / "t.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["scenario", "kpi", *STATISTICS]
    assert len(rows) == 1 + len(SUMMARY_KPIS)
    delay = next(r for r in rows if r[1] == "delay")
    assert delay[2] == "0.200000"


# ---------------------------------------------------------------------------
# indicators

def test_two_vehicle_kpis():
    r = two_vehicle_report()
    assert r.avg_wait_per_vehicle == 3.0
    assert r.avg_wait_per_queue_entry == 6.0
    assert r.baseline_makespan == 15.0
    assert r.tour_completion_rate == 0.5
    assert r.distance_completion_rate == 0.5
    assert r.delay == pytest.approx(7 / 15, abs=1e-12)
    assert r.avg_vehicle_utilization == pytest.approx(10 / 22)
    assert r.avg_teleoperator_utilization == 1.0


def test_distance_proration_flag():
    # B drives 12..22; at t=15 three of its ten minutes are done
    r = two_vehicle_report(prorate_distance=True)
    assert r.distance_completion_rate == pytest.approx((20 + 20 * 0.3) / 40)


def test_baseline_equivalent_scenario():
    ts = generate_tours(GeneratorProfile(), 300, 5)
    trace = run_simulation(ts, len(ts), 0.0, RestPolicy.disabled())
    r = compute_kpis(trace, run_baseline(ts))
    assert (r.avg_wait_per_vehicle, r.queue_entry_count, r.avg_wait_per_queue_entry) == (0.0, 0, 0.0)
    assert (r.tour_completion_rate, r.distance_completion_rate, r.delay) == (1.0, 1.0, 0.0)


def test_mismatched_tour_sets():
    a = make_tours(TWO)
    b = make_tours([one_trip("A", 0.0, 10.0, 20.0)])
    with pytest.raises(ValueError, match="different tour sets"):
        compute_kpis(run_baseline(a), run_baseline(b))


@pytest.fixture(scope="module")
def generated_runs():
    ts = generate_tours(GeneratorProfile(), 400, 9)
    base = run_baseline(ts, snapshot_interval=None)
    out = []
    for ratio in (0.25, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0):
        n = math.ceil(ratio * len(ts))
        trace = run_simulation(ts, n, 2.0, RestPolicy(), snapshot_interval=None)
        out.append((n, trace, compute_kpis(trace, base)))
    return ts, base, out


def test_total_wait_identity(generated_runs):
    for _, trace, r in generated_runs[2]:
        assert r.avg_wait_per_vehicle * r.n_vehicles == pytest.approx(
            r.avg_wait_per_queue_entry * r.queue_entry_count, rel=1e-9, abs=1e-9)
        assert r.queue_entry_count == sum(1 for w in trace.waits if w > 0)


def test_rates_in_range(generated_runs):
    for _, _, r in generated_runs[2]:
        for k in ("tour_completion_rate", "distance_completion_rate", "avg_teleoperator_utilization",
                  "avg_vehicle_utilization"):
            assert 0.0 <= getattr(r, k) <= 1.0
        assert all(0 <= u <= 1 for u in r.per_teleoperator_utilization + r.per_vehicle_utilization)
        assert r.delay >= 0


def test_completion_rates_monotone_in_instant(generated_runs):
    ts, base, runs = generated_runs
    _, trace, _ = runs[0]
    instants = np.linspace(trace.start_time, trace.completion_time, 25)
    tcr = [sum(1 for t in trace.tour_completion.values() if t <= x) for x in instants]
    dist = [sum(r.distance for r in trace.trips if r.drive_end <= x) for x in instants]
    assert tcr == sorted(tcr) and dist == sorted(dist)
    assert tcr[-1] == len(ts)
    # evaluated at its own completion, a run completes everything
    r = compute_kpis(trace, trace)
    assert (r.tour_completion_rate, r.distance_completion_rate, r.delay) == (1.0, 1.0, 0.0)


def test_operator_utilization_weakly_decreasing(generated_runs):
    utils = [r.avg_teleoperator_utilization for _, _, r in generated_runs[2]]
    assert all(b <= a + 1e-12 for a, b in zip(utils, utils[1:]))


def test_makespan_sum_literal(generated_runs):
    for _, trace, r in generated_runs[2]:
        want = sum(t.travel_time + (t.drive_start - t.assign_time) + t.wait for t in trace.trips)
        assert r.makespan_sum == pytest.approx(want)
        assert r.makespan_sum > r.completion_makespan


def test_time_average_queue_length():
    ts = make_tours(TWO)
    trace = run_simulation(ts, 1, 1.0, RestPolicy.disabled())
    # queue holds one vehicle over [5, 11) of a 22-minute run
    assert time_average_queue_length(trace) == pytest.approx(6 / 22)
    assert time_average_queue_length(trace, 11.0) == pytest.approx(6 / 11)
    assert time_average_queue_length(trace, 0.0) == 0.0


def test_report_json_round_trip():
    r = two_vehicle_report()
    assert KpiReport.from_dict(r.to_dict()) == r
    with pytest.raises(KeyError):
        r.scalar("per_vehicle_utilization")
