"""Rule-based scene description from ground-truth world state.

Stands in for a vision-language model: the same four-attribute object
descriptions are produced by thresholding the simulator state, and the text
rendering is the one a VLM adapter is expected to emit (and that
:func:`parse_description_text` reads back).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from dualdrive.sim import geometry
from dualdrive.sim.world import World

LANE_RELATIONS = ("ego_lane", "left_lane", "right_lane", "junction", "roadside")
MOTIONS = ("toward", "away", "crossing_left", "crossing_right", "static")
VIEWS = ("front", "left", "right")
NO_OBJECTS_TEXT = "There are no critical objects in the current scene."

REASONS = {
    ("traffic_light", "red"): "The red light controls the ego lane, which requires stopping at the intersection.",
    ("traffic_light", "yellow"): "The light is turning red; prepare to stop before the stop line.",
    ("traffic_light", "green"): "The green light allows the ego car to proceed through the intersection.",
    ("stop_sign", "pending"): "The stop sign requires a full stop before the stop line.",
    ("stop_sign", "cleared"): "The ego car has already stopped for this sign and may proceed when clear.",
    ("vehicle", "ego_lane"): "The vehicle is ahead in the ego lane; keep a safe following distance.",
    ("vehicle", "other"): "The vehicle is close to the ego car and may cut into its path.",
    ("cyclist", "ego_lane"): "The cyclist is ahead in the ego lane; slow down and keep a safe distance.",
    ("cyclist", "other"): "The cyclist is close to the road and may swerve into the ego lane.",
    ("pedestrian", "ego_lane"): "The pedestrian is on the ego car's path; yield to the pedestrian.",
    ("pedestrian", "other"): "The pedestrian is near the road and may cross in front of the ego car.",
}


@dataclass(frozen=True)
class PerceptionConfig:
    near_radius: float = 20.0        # vehicles and cyclists, any lane
    ego_lane_range: float = 60.0     # vehicles and cyclists in the ego lane
    pedestrian_radius: float = 40.0
    signal_range: float = 25.0       # lights and stop signs ahead on the route
    fov_half_angle: float = math.radians(135.0)
    static_speed: float = 0.5        # relative speeds below this read as static


@dataclass(frozen=True)
class CriticalObject:
    category: str                    # semantic attribute
    lane: str                        # spatial: lane relation
    distance: float                  # spatial: metres from the ego
    view: str                        # spatial: camera view
    box: tuple[int, int, int, int]   # spatial: normalised box, 0..1000
    motion: str                      # motion attribute
    reasoning: str                   # behavioural reasoning
    state: str | None = None         # light colour / stop-sign status
    source_id: str | None = None
    position: tuple[float, float] | None = None

    def __post_init__(self):
        if self.distance < 0:
            raise ValueError("distance must be non-negative")
        if self.lane not in LANE_RELATIONS:
            raise ValueError(f"lane relation must be one of {LANE_RELATIONS}")
        if self.motion not in MOTIONS:
            raise ValueError(f"motion must be one of {MOTIONS}")
        if not self.reasoning:
            raise ValueError("behavioural reasoning must be non-empty")

    @property
    def label(self) -> str:
        """Category qualified by state, e.g. ``traffic_light_red``."""
        return f"{self.category}_{self.state}" if self.state else self.category

    def to_dict(self) -> dict:
        return {
            "category": self.category, "lane": self.lane, "distance": self.distance,
            "view": self.view, "box": list(self.box), "motion": self.motion,
            "reasoning": self.reasoning, "state": self.state, "source_id": self.source_id,
            "position": None if self.position is None else list(self.position),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CriticalObject":
        d = dict(d)
        d["box"] = tuple(d["box"])
        if d.get("position") is not None:
            d["position"] = tuple(d["position"])
        return cls(**d)


@dataclass(frozen=True)
class SceneDescription:
    objects: tuple[CriticalObject, ...] = ()
    time: float = 0.0
    ego_speed: float = 0.0

    def __post_init__(self):
        keys = [(o.category, o.position) for o in self.objects if o.position is not None]
        if len(keys) != len(set(keys)):
            raise ValueError("duplicate (category, position) in scene description")

    def sorted_objects(self) -> list[CriticalObject]:
        return sorted(self.objects, key=lambda o: (o.distance, o.label))

    def to_dict(self) -> dict:
        return {"objects": [o.to_dict() for o in self.objects], "time": self.time,
                "ego_speed": self.ego_speed}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneDescription":
        return cls(tuple(CriticalObject.from_dict(o) for o in d["objects"]), d["time"], d["ego_speed"])


# -- geometry helpers ------------------------------------------------------

def _bearing(world: World, p) -> float:
    ego = world.ego
    return geometry.wrap_angle(math.atan2(p[1] - ego.y, p[0] - ego.x) - ego.heading)


def _view(bearing: float) -> str:
    if abs(bearing) <= math.pi / 4:
        return "front"
    return "left" if bearing > 0 else "right"


def _box(bearing: float, distance: float, category: str) -> tuple[int, int, int, int]:
    view = _view(bearing)
    center = {"front": 0.0, "left": math.pi / 2, "right": -math.pi / 2}[view]
    u = 500.0 - (bearing - center) / (math.pi / 4) * 500.0
    size = min(400.0, 3000.0 / max(distance, 1.0))
    w = size * (0.4 if category in ("pedestrian", "cyclist", "traffic_light", "stop_sign") else 1.0)
    box = (u - w / 2, 500.0 - size / 2, u + w / 2, 500.0 + size / 2)
    return tuple(int(min(1000, max(0, round(c)))) for c in box)


def ego_lane_ids(world: World, horizon: float = 60.0) -> set[str]:
    """Current ego lane plus the lanes the route uses over the next ``horizon`` metres."""
    lanes = {world.ego.lane} if world.ego.lane else set()
    i0 = world.progress_index
    i1 = min(len(world.route), i0 + int(horizon) + 1)
    lanes.update(l for l in world.route.lane_ids[i0:i1] if l is not None)
    return lanes


def lane_relation(world: World, p, ego_lanes: set[str]) -> str:
    lane = world.graph.locate(p, prefer=world.ego.lane)
    if lane is None:
        return "roadside"
    if lane in ego_lanes:
        return "ego_lane"
    info = world.graph.lanes[lane]
    if info.junction:
        return "junction"
    for eid in ego_lanes:
        e = world.graph.lanes[eid]
        if e.left == lane:
            return "left_lane"
        if e.right == lane:
            return "right_lane"
    return "left_lane" if _bearing(world, p) > 0 else "right_lane"


def motion_attribute(world: World, p, velocity, static_speed: float) -> str:
    ego = world.ego
    ego_v = ego.speed * np.array([math.cos(ego.heading), math.sin(ego.heading)])
    rel_v = np.asarray(velocity, dtype=float) - ego_v
    if math.hypot(*rel_v) < static_speed:
        return "static"
    offset = np.asarray(p, dtype=float) - ego.position
    dist = math.hypot(*offset)
    if dist == 0.0:
        return "static"
    radial = float(rel_v @ offset) / dist
    lateral = float(offset[0] * rel_v[1] - offset[1] * rel_v[0]) / dist
    if abs(radial) >= abs(lateral):
        return "toward" if radial < 0 else "away"
    # positive lateral = sweeping counter-clockwise as seen from the ego
    heading_left = np.array([-math.sin(ego.heading), math.cos(ego.heading)])
    return "crossing_left" if float(rel_v @ heading_left) > 0 else "crossing_right"


def _signal_ahead(world: World, position, lane_ids) -> bool:
    p = np.asarray(position, dtype=float)
    for lid in lane_ids:
        t = np.array(world.graph.lanes[lid].project(p).tangent)
        if float((world.ego.position - p) @ t) < 0.0:
            return True
    return False


# -- main rules ------------------------------------------------------------

def describe_scene(world: World, config: PerceptionConfig | None = None) -> SceneDescription:
    """Select critical objects and describe them.

    Vehicles and cyclists count within ``near_radius`` of the ego or within
    ``ego_lane_range`` in the ego lane; pedestrians within
    ``pedestrian_radius``; lights and stop signs when they control a lane on
    the ego's path and lie ahead within ``signal_range``.  Everything must
    be inside the front/left/right field of view.  Bounds are inclusive.
    """
    cfg = config or PerceptionConfig()
    ego = world.ego
    ego_lanes = ego_lane_ids(world, cfg.ego_lane_range)
    objects = []

    for actor in world.actors:
        p = actor.position
        dist = math.hypot(p[0] - ego.x, p[1] - ego.y)
        bearing = _bearing(world, p)
        if abs(bearing) > cfg.fov_half_angle:
            continue
        rel = lane_relation(world, p, ego_lanes)
        if actor.kind == "pedestrian":
            keep = dist <= cfg.pedestrian_radius
        else:
            keep = dist <= cfg.near_radius or (rel == "ego_lane" and dist <= cfg.ego_lane_range)
        if not keep:
            continue
        reason = REASONS[(actor.kind, "ego_lane" if rel == "ego_lane" else "other")]
        objects.append(CriticalObject(
            category=actor.kind, lane=rel, distance=dist, view=_view(bearing),
            box=_box(bearing, dist, actor.kind),
            motion=motion_attribute(world, p, actor.velocity, cfg.static_speed),
            reasoning=reason, source_id=actor.id, position=(float(p[0]), float(p[1])),
        ))

    signals = [(light, "traffic_light", light.lanes, light.state_at(world.time))
               for light in world.graph.lights]
    signals += [(sign, "stop_sign", (sign.lane,),
                 "cleared" if world.stop_sign_cleared(sign.id) else "pending")
                for sign in world.graph.stop_signs]
    for sig, category, lanes, state in signals:
        controlled = [l for l in lanes if l in ego_lanes]
        if not controlled:
            continue
        p = np.asarray(sig.position, dtype=float)
        dist = math.hypot(p[0] - ego.x, p[1] - ego.y)
        bearing = _bearing(world, p)
        if dist > cfg.signal_range or abs(bearing) > cfg.fov_half_angle:
            continue
        if not _signal_ahead(world, p, controlled):
            continue
        objects.append(CriticalObject(
            category=category, lane="ego_lane", distance=dist, view=_view(bearing),
            box=_box(bearing, dist, category),
            motion=motion_attribute(world, p, (0.0, 0.0), cfg.static_speed),
            reasoning=REASONS[(category, state)], state=state, source_id=sig.id,
            position=(float(p[0]), float(p[1])),
        ))
    return SceneDescription(tuple(objects), world.time, ego.speed)


# -- text rendering --------------------------------------------------------

LANE_PHRASES = {
    "ego_lane": "the ego lane", "left_lane": "the left lane", "right_lane": "the right lane",
    "junction": "the junction", "roadside": "the roadside",
}
_PHRASE_TO_LANE = {v: k for k, v in LANE_PHRASES.items()}

_LINE = re.compile(
    r"<ref>In the (?P<view>front|left|right) view, a (?P<category>[a-z_]+)"
    r"(?: \((?P<state>[a-z]+)\))? in (?P<lane>the [a-z ]+?), (?P<dist>\d+(?:\.\d+)?) m away, "
    r"motion (?P<motion>[a-z_]+)\. (?P<reason>.+?)</ref>"
    r"<box>\((?P<x1>\d+),(?P<y1>\d+)\),\((?P<x2>\d+),(?P<y2>\d+)\)</box>"
)


class DescriptionParseError(ValueError):
    def __init__(self, message: str, text: str):
        super().__init__(message)
        self.text = text


def render_object(o: CriticalObject) -> str:
    state = f" ({o.state})" if o.state else ""
    x1, y1, x2, y2 = o.box
    return (f"<ref>In the {o.view} view, a {o.category}{state} in {LANE_PHRASES[o.lane]}, "
            f"{o.distance:.2f} m away, motion {o.motion}. {o.reasoning}</ref>"
            f"<box>({x1},{y1}),({x2},{y2})</box>")


def render_description_text(d: SceneDescription) -> str:
    """One ref/box line per object, nearest first."""
    if not d.objects:
        return NO_OBJECTS_TEXT
    return "\n".join(render_object(o) for o in d.sorted_objects())


def parse_description_text(text: str, time: float = 0.0, ego_speed: float = 0.0) -> SceneDescription:
    """Inverse of :func:`render_description_text` (distances come back rounded)."""
    text = text.strip()
    if text == NO_OBJECTS_TEXT:
        return SceneDescription((), time, ego_speed)
    objects = []
    for n, line in enumerate(l for l in text.splitlines() if l.strip()):
        m = _LINE.fullmatch(line.strip())
        if m is None:
            raise DescriptionParseError(f"line {n + 1} is not a ref/box object description", text)
        lane = _PHRASE_TO_LANE.get(m["lane"])
        if lane is None or m["motion"] not in MOTIONS:
            raise DescriptionParseError(f"line {n + 1}: unknown lane or motion value", text)
        objects.append(CriticalObject(
            category=m["category"], lane=lane, distance=float(m["dist"]), view=m["view"],
            box=(int(m["x1"]), int(m["y1"]), int(m["x2"]), int(m["y2"])), motion=m["motion"],
            reasoning=m["reason"], state=m["state"],
        ))
    return SceneDescription(tuple(objects), time, ego_speed)


# -- VLM adapter -----------------------------------------------------------

@dataclass
class VlmAdapter:
    """Scene describer backed by a chat client that sees camera images.

    The client receives the VLM system prompt plus an image reference and
    must answer in the ref/box format; malformed answers raise
    :class:`DescriptionParseError`.
    """

    client: object
    prompt_vars: dict = field(default_factory=dict)

    def describe(self, image_ref: str, time: float = 0.0, ego_speed: float = 0.0) -> SceneDescription:
        from dualdrive.clients import ChatRequest
        from dualdrive.prompts import render_prompt

        req = ChatRequest(
            system=render_prompt("vlm_system", **self.prompt_vars),
            user=f"Image: {image_ref}\nDescribe the critical objects.",
            tag="scene",
        )
        reply = self.client.chat(req)
        return parse_description_text(reply.text, time, ego_speed)
