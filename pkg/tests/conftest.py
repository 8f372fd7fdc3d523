import math

import pytest

from dualdrive.actions import MetaAction
from dualdrive.harness import load_suite
from dualdrive.memory import ExperienceSample
from dualdrive.perception import CriticalObject, SceneDescription
from dualdrive.sim.scenario import build_world, parse_scenario

STRAIGHT_TOML = """
format_version = 1
id = "{id}"
town = "test_town"
cruise_speed = {cruise}

[ego]
position = [0.0, 0.0]
heading = 0.0
speed = {speed}

[route]
waypoints = [[0.0, 0.0], [{length}, 0.0]]

[[lanes]]
id = "main"
centerline = [[-20.0, 0.0], [{lane_end}, 0.0]]
left = "fast"

[[lanes]]
id = "fast"
centerline = [[-20.0, 3.5], [{lane_end}, 3.5]]
right = "main"
{extra}
"""


def straight_spec(length=200.0, cruise=8.0, speed=0.0, extra="", id="straight_test"):
    """Parsed spec for a two-lane straight road along +x."""
    return parse_scenario(STRAIGHT_TOML.format(
        id=id, cruise=cruise, speed=speed, length=length, lane_end=length + 50.0, extra=extra))


def straight_world(**kw):
    return build_world(straight_spec(**kw))


def obj(category="vehicle", lane="ego_lane", distance=10.0, motion="toward", view="front",
        state=None, source_id=None, position=None, reasoning="test reason"):
    return CriticalObject(category, lane, distance, view, (400, 400, 600, 600), motion,
                          reasoning, state, source_id, position)


def scene(*objects, speed=0.0, time=0.0):
    return SceneDescription(tuple(objects), time, speed)


def sample(description, action=MetaAction.IDLE, reasoning="because", provenance="analytic",
           source="test:0", timestamp=0.0):
    return ExperienceSample(description, reasoning, MetaAction(action), provenance, source, timestamp)


@pytest.fixture(scope="session")
def suite():
    return load_suite()


@pytest.fixture
def no_network(monkeypatch):
    """Any attempt to open a socket to a non-local address fails the test."""
    import socket

    real_connect = socket.socket.connect

    def guarded(self, address):
        host = address[0] if isinstance(address, tuple) else address
        if host not in ("127.0.0.1", "localhost", "::1"):
            raise AssertionError(f"network access attempted: {address!r}")
        return real_connect(self, address)

    calls = []

    def guarded_create(address, *a, **k):
        calls.append(address)
        raise AssertionError(f"network access attempted: {address!r}")

    monkeypatch.setattr(socket.socket, "connect", guarded)
    monkeypatch.setattr(socket, "create_connection", guarded_create)
    return calls


def close(a, b, tol=1e-9):
    return math.isclose(a, b, rel_tol=0.0, abs_tol=tol)


# acceptance criteria report: one line per criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
