"""Scenario files: TOML documents describing lanes, signals, actors and a route.

Minimal example::

    format_version = 1
    id = "straight"
    town = "town_a"

    [ego]
    position = [0.0, 0.0]
    heading = 0.0

    [route]
    waypoints = [[0.0, 0.0], [200.0, 0.0]]

    [[lanes]]
    id = "main"
    centerline = [[-20.0, 0.0], [240.0, 0.0]]

Actors follow ``path`` (default: their lane's centreline) starting at arc
length ``start`` and play back ``script`` speed commands.  Command times are
jittered by ``randomization.time_jitter`` seconds using the run seed.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from dualdrive.sim.lanes import Lane, LaneGraph, StopSign, TrafficLight, ValidationError
from dualdrive.sim.world import (
    ACTOR_KINDS, Actor, EgoState, Obstacle, RouteSpec, SimConfig, SpeedCommand, World,
)

FORMAT_VERSION = 1


class ScenarioError(ValueError):
    """The file could not be parsed or a field is malformed."""


def _field(table: dict, key: str, where: str, kind=None, default=...):
    if key not in table:
        if default is ...:
            raise ScenarioError(f"{where}: missing required field {key!r}")
        return default
    value = table[key]
    if kind is not None and not isinstance(value, kind):
        raise ScenarioError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, "
                            f"got {type(value).__name__}")
    return value


def _points(value, where: str, min_len: int = 1) -> np.ndarray:
    try:
        pts = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: not a list of [x, y] pairs") from exc
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < min_len:
        raise ScenarioError(f"{where}: expected at least {min_len} [x, y] pairs")
    return pts


def parse_scenario(source: str | Path) -> dict:
    """Parse and type-check a scenario file into plain data.

    ``source`` may be a path or the TOML text itself.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                     and source.endswith(".toml")):
        path = Path(source)
        text = path.read_text()
        name = str(path)
    else:
        text, name = source, "<string>"
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{name}: {exc}") from exc

    version = _field(doc, "format_version", name, int)
    if version != FORMAT_VERSION:
        raise ScenarioError(f"{name}: unsupported format_version {version} (expected {FORMAT_VERSION})")

    out = {
        "id": _field(doc, "id", name, str),
        "town": _field(doc, "town", name, str, "default"),
        "cruise_speed": float(_field(doc, "cruise_speed", name, (int, float), 8.0)),
    }
    ego = _field(doc, "ego", name, dict)
    out["ego"] = {
        "position": _points([_field(ego, "position", "ego", list)], "ego.position")[0],
        "heading": float(_field(ego, "heading", "ego", (int, float), 0.0)),
        "speed": float(_field(ego, "speed", "ego", (int, float), 0.0)),
        "wheelbase": float(_field(ego, "wheelbase", "ego", (int, float), 2.5)),
    }
    route = _field(doc, "route", name, dict)
    out["route"] = _points(_field(route, "waypoints", "route", list), "route.waypoints", 2)

    lanes = []
    for i, lane in enumerate(_field(doc, "lanes", name, list)):
        where = f"lanes[{i}]"
        lanes.append({
            "id": _field(lane, "id", where, str),
            "centerline": _points(_field(lane, "centerline", where, list), f"{where}.centerline"),
            "width": float(_field(lane, "width", where, (int, float), 3.5)),
            "successors": tuple(_field(lane, "successors", where, list, [])),
            "left": _field(lane, "left", where, str, None),
            "right": _field(lane, "right", where, str, None),
            "junction": bool(_field(lane, "junction", where, bool, False)),
        })
    out["lanes"] = lanes

    lights = []
    for i, tl in enumerate(_field(doc, "traffic_lights", name, list, [])):
        where = f"traffic_lights[{i}]"
        phases = _field(tl, "phases", where, list)
        try:
            phases = tuple((str(s), float(d)) for s, d in phases)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}.phases: expected [[state, seconds], ...]") from exc
        lights.append({
            "id": _field(tl, "id", where, str),
            "position": tuple(_points([_field(tl, "position", where, list)], f"{where}.position")[0]),
            "lanes": tuple(_field(tl, "lanes", where, list)),
            "phases": phases,
            "offset": float(_field(tl, "offset", where, (int, float), 0.0)),
            "cycle": bool(_field(tl, "cycle", where, bool, True)),
        })
    out["traffic_lights"] = lights

    signs = []
    for i, ss in enumerate(_field(doc, "stop_signs", name, list, [])):
        where = f"stop_signs[{i}]"
        signs.append({
            "id": _field(ss, "id", where, str),
            "position": tuple(_points([_field(ss, "position", where, list)], f"{where}.position")[0]),
            "lane": _field(ss, "lane", where, str),
        })
    out["stop_signs"] = signs

    actors = []
    for i, a in enumerate(_field(doc, "actors", name, list, [])):
        where = f"actors[{i}]"
        kind = _field(a, "kind", where, str)
        if kind not in ACTOR_KINDS:
            raise ScenarioError(f"{where}.kind: expected one of {ACTOR_KINDS}, got {kind!r}")
        script = []
        for j, c in enumerate(_field(a, "script", where, list, [])):
            cw = f"{where}.script[{j}]"
            script.append((float(_field(c, "t", cw, (int, float))),
                           float(_field(c, "speed", cw, (int, float))),
                           float(_field(c, "accel", cw, (int, float), 3.0))))
        path = _field(a, "path", where, list, None)
        actors.append({
            "id": _field(a, "id", where, str),
            "kind": kind,
            "lane": _field(a, "lane", where, str, None),
            "path": None if path is None else _points(path, f"{where}.path", 2),
            "start": float(_field(a, "start", where, (int, float), 0.0)),
            "speed": float(_field(a, "speed", where, (int, float), 0.0)),
            "script": script,
        })
        if actors[-1]["lane"] is None and actors[-1]["path"] is None:
            raise ScenarioError(f"{where}: needs a lane or a path")
    out["actors"] = actors

    out["obstacles"] = [
        {"id": _field(o, "id", f"obstacles[{i}]", str),
         "position": _points([_field(o, "position", f"obstacles[{i}]", list)], f"obstacles[{i}]")[0],
         "radius": float(_field(o, "radius", f"obstacles[{i}]", (int, float), 0.5))}
        for i, o in enumerate(_field(doc, "obstacles", name, list, []))
    ]
    rnd = _field(doc, "randomization", name, dict, {})
    out["time_jitter"] = float(_field(rnd, "time_jitter", "randomization", (int, float), 0.0))
    return out


def build_world(spec: dict, seed: int = 0, config: SimConfig | None = None) -> World:
    """Instantiate a fresh world from parsed scenario data."""
    lanes = {
        d["id"]: Lane(d["id"], d["centerline"], d["width"], d["successors"],
                      d["left"], d["right"], d["junction"])
        for d in spec["lanes"]
    }
    graph = LaneGraph(
        lanes,
        [TrafficLight(**d) for d in spec["traffic_lights"]],
        [StopSign(**d) for d in spec["stop_signs"]],
    )
    graph.validate()

    rng = np.random.default_rng(seed)
    jitter = spec["time_jitter"]
    actors = []
    for d in spec["actors"]:
        if d["lane"] is not None and d["lane"] not in lanes:
            raise ValidationError(f"actor {d['id']}: references missing lane id {d['lane']!r}")
        path = d["path"] if d["path"] is not None else lanes[d["lane"]].centerline
        shift = float(rng.uniform(-jitter, jitter)) if jitter > 0 else 0.0
        script = tuple(SpeedCommand(max(0.0, t + shift), v, a) for t, v, a in d["script"])
        actors.append(Actor(d["id"], d["kind"], path, d["start"], d["speed"], script, d["lane"]))

    ids = [a.id for a in actors] + [o["id"] for o in spec["obstacles"]]
    if len(set(ids)) != len(ids):
        raise ValidationError("actor and obstacle ids must be unique")

    e = spec["ego"]
    ego = EgoState(float(e["position"][0]), float(e["position"][1]), e["heading"], e["speed"],
                   wheelbase=e["wheelbase"])
    obstacles = [Obstacle(o["id"], float(o["position"][0]), float(o["position"][1]), o["radius"])
                 for o in spec["obstacles"]]
    world = World(graph, ego, RouteSpec(spec["route"]), actors, obstacles, config,
                  scenario_id=spec["id"], town=spec["town"], cruise_speed=spec["cruise_speed"])
    return world


def load_scenario(path: str | Path, seed: int = 0, config: SimConfig | None = None) -> World:
    return build_world(parse_scenario(Path(path)), seed, config)
