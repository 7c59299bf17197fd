import pytest

from teleop_sim.engine import RestMode, RestPolicy
from teleop_sim.tours import Tour, TourSet, Trip


def make_tours(layout):
    """TourSet from ``[{"id", "start", "trips": [(dwell, travel, distance), ...]}, ...]``."""
    tours = []
    for t in layout:
        trips = tuple(Trip(n, travel, dist, dwell) for n, (dwell, travel, dist) in enumerate(t["trips"]))
        tours.append(Tour(t["id"], t["id"], t["start"], trips))
    return TourSet(tuple(tours), "test")


def one_trip(name, ready, travel, distance=None):
    return {"id": name, "start": ready, "trips": [(0.0, travel, travel if distance is None else distance)]}


def policy(rest):
    """Engine RestPolicy for an oracle rest tuple."""
    if rest is None:
        return RestPolicy.disabled()
    mode, cap, long_rest, short_rest = rest
    return RestPolicy(cap, long_rest, short_rest, RestMode(mode))


@pytest.fixture
def two_vehicle_fixture():
    return [one_trip("A", 0.0, 10.0, 20.0), one_trip("B", 5.0, 10.0, 20.0)]


# ---------------------------------------------------------------------------
# acceptance verdicts: one PASS/FAIL line per criterion in the terminal summary

_verdicts = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed:
        _verdicts[number] = ("FAIL", title, str(rep.longrepr).strip().splitlines()[-1] if rep.longrepr else detail)
    elif number not in _verdicts:
        _verdicts[number] = ("PASS", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        status, title, detail = _verdicts[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}  [{detail}]")
