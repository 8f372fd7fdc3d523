"""Deterministic 2D closed-loop traffic world.

The ego follows a kinematic bicycle model; other actors play back speed
scripts along fixed paths.  Collisions are fixed-radius disc overlaps.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from dualdrive.sim import geometry
from dualdrive.sim.lanes import LaneGraph, stop_line_frame

ACTOR_KINDS = ("vehicle", "cyclist", "pedestrian")

INFRACTION_KINDS = (
    "collision_pedestrian",
    "collision_vehicle",
    "collision_static",
    "red_light",
    "stop_sign",
    "route_deviation",
)


@dataclass(frozen=True)
class ControlSignal:
    steer: float = 0.0      # [-1, 1], fraction of the max steering angle
    throttle: float = 0.0   # [0, 1]
    brake: float = 0.0      # [0, 1]

    def __post_init__(self):
        if not -1.0 <= self.steer <= 1.0:
            raise ValueError(f"steer {self.steer} outside [-1, 1]")
        if not (0.0 <= self.throttle <= 1.0 and 0.0 <= self.brake <= 1.0):
            raise ValueError("throttle and brake must lie in [0, 1]")
        if self.throttle > 0.0 and self.brake > 0.0:
            raise ValueError("throttle and brake cannot both be active")


@dataclass(frozen=True)
class SimConfig:
    max_accel: float = 3.0          # m/s^2 at full throttle
    max_brake: float = 8.0          # m/s^2 at full brake
    max_steer: float = 0.5          # rad at |steer| = 1
    deviation_threshold: float = 3.0
    radii: dict = field(default_factory=lambda: {
        "vehicle": 1.0, "cyclist": 0.5, "pedestrian": 0.3})
    stop_speed: float = 0.1         # counts as a full stop below this
    stop_zone: float = 5.0          # ...when within this distance before the line
    progress_window: int = 40


@dataclass
class EgoState:
    x: float
    y: float
    heading: float
    speed: float = 0.0
    lane: str | None = None
    wheelbase: float = 2.5
    target_speed: float = 0.0

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("ego speed must be non-negative")
        if self.wheelbase <= 0:
            raise ValueError("wheelbase must be positive")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class SpeedCommand:
    t: float
    speed: float
    accel: float = 3.0   # m/s^2 used to reach ``speed``; 0 means instantaneous


@dataclass
class Actor:
    id: str
    kind: str
    path: np.ndarray
    s: float = 0.0
    speed: float = 0.0
    script: tuple[SpeedCommand, ...] = ()
    lane: str | None = None

    def __post_init__(self):
        if self.kind not in ACTOR_KINDS:
            raise ValueError(f"actor {self.id}: kind must be one of {ACTOR_KINDS}")
        self.path = geometry.as_points(self.path)
        self._cum = geometry.arc_lengths(self.path)
        self._update_pose()

    def _update_pose(self) -> None:
        p, h = geometry.point_at(self.path, self._cum, self.s)
        self.x, self.y = float(p[0]), float(p[1])
        self.heading = h

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return self.speed * np.array([math.cos(self.heading), math.sin(self.heading)])

    def advance(self, t: float, dt: float) -> None:
        cmd = None
        for c in self.script:
            if c.t <= t:
                cmd = c
        if cmd is not None:
            if cmd.accel <= 0:
                self.speed = cmd.speed
            else:
                dv = cmd.accel * dt
                self.speed += max(-dv, min(dv, cmd.speed - self.speed))
        self.s += self.speed * dt
        if self.s >= self._cum[-1]:
            self.s = float(self._cum[-1])
            self.speed = 0.0
        self._update_pose()


@dataclass(frozen=True)
class Obstacle:
    id: str
    x: float
    y: float
    radius: float = 0.5


@dataclass
class RouteSpec:
    waypoints: np.ndarray
    points: np.ndarray = None
    lane_ids: list = None

    def __post_init__(self):
        self.waypoints = geometry.as_points(self.waypoints)
        if self.points is None:
            self.points = geometry.densify(self.waypoints, 1.0)
        self._cum = geometry.arc_lengths(self.points)

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class InfractionEvent:
    kind: str
    time: float
    actor_id: str | None = None

    def __post_init__(self):
        if self.kind not in INFRACTION_KINDS:
            raise ValueError(f"unknown infraction kind {self.kind!r}")


class WorldInterface(Protocol):
    """What the agent loop needs from a world; a CARLA adapter would provide the same."""

    time: float
    ego: EgoState
    route: RouteSpec

    def step(self, control: ControlSignal, dt: float) -> list[InfractionEvent]: ...
    def route_progress(self) -> float: ...
    def light_state(self, light_id: str) -> str: ...


class World:
    def __init__(self, graph: LaneGraph, ego: EgoState, route: RouteSpec,
                 actors=(), obstacles=(), config: SimConfig | None = None,
                 scenario_id: str = "", town: str = "", cruise_speed: float = 8.0):
        self.graph = graph
        self.ego = ego
        self.route = route
        self.actors = list(actors)
        self.obstacles = list(obstacles)
        self.config = config or SimConfig()
        self.scenario_id = scenario_id
        self.town = town
        self.cruise_speed = cruise_speed
        self.time = 0.0
        self.ticks = 0
        if route.lane_ids is None:
            route.lane_ids = [graph.locate(p) for p in route.points]
        if ego.lane is None:
            ego.lane = graph.locate(ego.position)
        self.progress_index = 0
        self._update_progress()
        self._collided: set[str] = set()
        self._lights_crossed: set[str] = set()
        self._stops_done: set[str] = set()     # full stop observed
        self._stops_passed: set[str] = set()
        self._deviated = False
        self._frames = self._signal_frames()

    def copy(self) -> "World":
        return copy.deepcopy(self)

    # -- signals ---------------------------------------------------------

    def _signal_frames(self):
        frames = {}
        for light in self.graph.lights:
            frames[light.id] = [stop_line_frame(self.graph, light.position, lid) for lid in light.lanes]
        for sign in self.graph.stop_signs:
            frames[sign.id] = [stop_line_frame(self.graph, sign.position, sign.lane)]
        return frames

    def light_state(self, light_id: str) -> str:
        for light in self.graph.lights:
            if light.id == light_id:
                return light.state_at(self.time)
        raise KeyError(light_id)

    def stop_sign_cleared(self, sign_id: str) -> bool:
        return sign_id in self._stops_done or sign_id in self._stops_passed

    def _line_crossing(self, signal_id, position, prev, new):
        """True if the ego moved across a stop line in the lane direction."""
        heading = np.array([math.cos(self.ego.heading), math.sin(self.ego.heading)])
        p = np.asarray(position, dtype=float)
        for tangent, width in self._frames[signal_id]:
            if float(heading @ tangent) <= 0.0:
                continue
            s0 = float((prev - p) @ tangent)
            s1 = float((new - p) @ tangent)
            lat = abs(float(tangent[0] * (new - p)[1] - tangent[1] * (new - p)[0]))
            if s0 < 0.0 <= s1 and lat <= width / 2.0:
                return True
        return False

    def _near_line(self, signal_id, position, pos, zone):
        p = np.asarray(position, dtype=float)
        for tangent, width in self._frames[signal_id]:
            s = float((pos - p) @ tangent)
            lat = abs(float(tangent[0] * (pos - p)[1] - tangent[1] * (pos - p)[0]))
            if -zone <= s <= 0.0 and lat <= width / 2.0:
                return True
        return False

    # -- route -----------------------------------------------------------

    def _nearest_route_index(self):
        lo = max(0, self.progress_index - 5)
        hi = min(len(self.route), self.progress_index + self.config.progress_window)
        window = self.route.points[lo:hi]
        d = np.hypot(*(window - self.ego.position).T)
        j = int(np.argmin(d))
        return lo + j, float(d[j])

    def _update_progress(self) -> None:
        j, d = self._nearest_route_index()
        if d <= self.config.deviation_threshold and j > self.progress_index:
            self.progress_index = j

    def route_offset(self) -> float:
        """Distance from the ego to the route polyline around the current progress."""
        lo = max(0, self.progress_index - 5)
        hi = min(len(self.route), self.progress_index + self.config.progress_window)
        pts = self.route.points[lo:hi]
        if len(pts) < 2:
            return float(np.hypot(*(pts[0] - self.ego.position)))
        return geometry.project(pts, geometry.arc_lengths(pts), self.ego.position).distance

    def route_progress(self) -> float:
        return (self.progress_index + 1) / len(self.route)

    @property
    def route_complete(self) -> bool:
        return self.progress_index >= len(self.route) - 1

    # -- dynamics --------------------------------------------------------

    def step(self, control: ControlSignal, dt: float) -> list[InfractionEvent]:
        if not 0.0 < dt <= 0.1:
            raise ValueError(f"dt must lie in (0, 0.1], got {dt}")
        cfg = self.config
        ego = self.ego
        prev = ego.position
        v = ego.speed
        ego.heading = geometry.wrap_angle(
            ego.heading + v / ego.wheelbase * math.tan(control.steer * cfg.max_steer) * dt)
        ego.x += v * math.cos(ego.heading) * dt
        ego.y += v * math.sin(ego.heading) * dt
        accel = control.throttle * cfg.max_accel - control.brake * cfg.max_brake
        ego.speed = max(0.0, v + accel * dt)

        for actor in self.actors:
            actor.advance(self.time, dt)
        self.ticks += 1
        self.time = round(self.time + dt, 9)
        new = ego.position
        lane = self.graph.locate(new, prefer=ego.lane)
        if lane is not None:
            ego.lane = lane

        events: list[InfractionEvent] = []
        r_ego = cfg.radii["vehicle"]
        for actor in self.actors:
            if actor.id in self._collided:
                continue
            if math.hypot(actor.x - ego.x, actor.y - ego.y) < r_ego + cfg.radii[actor.kind]:
                self._collided.add(actor.id)
                kind = "collision_pedestrian" if actor.kind == "pedestrian" else "collision_vehicle"
                events.append(InfractionEvent(kind, self.time, actor.id))
        for ob in self.obstacles:
            if ob.id not in self._collided and math.hypot(ob.x - ego.x, ob.y - ego.y) < r_ego + ob.radius:
                self._collided.add(ob.id)
                events.append(InfractionEvent("collision_static", self.time, ob.id))

        for light in self.graph.lights:
            if light.id in self._lights_crossed:
                continue
            if self._line_crossing(light.id, light.position, prev, new):
                self._lights_crossed.add(light.id)
                if light.state_at(self.time) == "red":
                    events.append(InfractionEvent("red_light", self.time, light.id))
        for sign in self.graph.stop_signs:
            if sign.id in self._stops_passed:
                continue
            if ego.speed < cfg.stop_speed and self._near_line(sign.id, sign.position, new, cfg.stop_zone):
                self._stops_done.add(sign.id)
            if self._line_crossing(sign.id, sign.position, prev, new):
                self._stops_passed.add(sign.id)
                if sign.id not in self._stops_done:
                    events.append(InfractionEvent("stop_sign", self.time, sign.id))

        self._update_progress()
        if not self._deviated and self.route_offset() > cfg.deviation_threshold:
            self._deviated = True
            events.append(InfractionEvent("route_deviation", self.time, None))
        return events


def step(world: World, control: ControlSignal, dt: float):
    """Advance ``world`` in place; returns ``(world, events)``."""
    events = world.step(control, dt)
    return world, events


def route_progress(world: World) -> float:
    return world.route_progress()
