"""Independent reference implementations used by the unit and acceptance tests."""

import math

import numpy as np

from dualdrive.sim.lanes import Lane, LaneGraph, TrafficLight
from dualdrive.sim.world import Actor, EgoState, RouteSpec, World

LANE_Y = {"right": -3.5, "main": 0.0, "left": 3.5}


def three_lane_world(actors=(), lights=(), heading=0.0, speed=5.0):
    lanes = {
        "main": Lane("main", [(-150, 0), (300, 0)], left="left", right="right"),
        "left": Lane("left", [(-150, 3.5), (300, 3.5)], right="main"),
        "right": Lane("right", [(-150, -3.5), (300, -3.5)], left="main"),
    }
    graph = LaneGraph(lanes, list(lights))
    ego = EgoState(0.0, 0.0, heading, speed)
    return World(graph, ego, RouteSpec([(0, 0), (200, 0)]), actors)


def actor_at(aid, kind, x, y, vx=0.0, vy=0.0):
    speed = math.hypot(vx, vy)
    d = (vx / speed, vy / speed) if speed > 0 else (1.0, 0.0)
    return Actor(aid, kind, [(x, y), (x + 500 * d[0], y + 500 * d[1])], 0.0, speed)


# -- threshold oracle ---------------------------------------------------------

def oracle_keep(kind, x, y, ego_heading, light_lane=None):
    """Expected inclusion, from first principles on the straight 3-lane layout."""
    dist = math.hypot(x, y)
    bearing = math.atan2(y, x) - ego_heading
    bearing = math.atan2(math.sin(bearing), math.cos(bearing))
    if abs(bearing) > math.radians(135):
        return False
    in_ego_lane = abs(y) <= 1.75
    if kind == "pedestrian":
        return dist <= 40.0
    if kind == "traffic_light":
        return light_lane == "main" and x > 0.0 and dist <= 25.0
    return dist <= 20.0 or (in_ego_lane and dist <= 60.0)


def oracle_lane(x, y):
    if abs(y) <= 1.75:
        return "ego_lane"
    if 1.75 < y <= 5.25:
        return "left_lane"
    if -5.25 <= y < -1.75:
        return "right_lane"
    return "roadside"


def oracle_view(x, y, heading):
    b = math.atan2(y, x) - heading
    b = math.atan2(math.sin(b), math.cos(b))
    if abs(b) <= math.pi / 4:
        return "front"
    return "left" if b > 0 else "right"


def scene_oracle_mismatches(n_scenes=1000, seed=1234):
    """Compare describe_scene with the threshold oracle on random 3-lane scenes."""
    from dualdrive.perception import describe_scene

    rng = np.random.default_rng(seed)
    mismatches = []
    kinds = ("vehicle", "cyclist", "pedestrian")
    world = three_lane_world()
    for n in range(n_scenes):
        heading = float(rng.uniform(-0.3, 0.3))
        actors, expected = [], {}
        for i in range(int(rng.integers(0, 7))):
            kind = kinds[int(rng.integers(0, 3))]
            x = float(rng.uniform(-90, 90))
            y = float(rng.uniform(-9, 9))
            aid = f"{kind}{i}"
            actors.append(actor_at(aid, kind, x, y, float(rng.normal(0, 4)), float(rng.normal(0, 1))))
            if oracle_keep(kind, x, y, heading):
                expected[aid] = (oracle_lane(x, y), oracle_view(x, y, heading), math.hypot(x, y))
        lights = []
        if rng.random() < 0.5:
            lane = "main" if rng.random() < 0.7 else "left"
            lx = float(rng.uniform(-40, 40))
            ly = LANE_Y[lane]
            lights.append(TrafficLight("tl", (lx, ly), (lane,), (("red", 10.0), ("green", 10.0))))
            if oracle_keep("traffic_light", lx, ly, heading, lane):
                expected["tl"] = ("ego_lane", oracle_view(lx, ly, heading), math.hypot(lx, ly))
        world.actors, world.graph.lights, world.ego.heading = actors, lights, heading
        d = describe_scene(world)
        got = {o.source_id: (o.lane, o.view, o.distance) for o in d.objects}
        if set(got) != set(expected):
            mismatches.append((n, sorted(got), sorted(expected)))
            continue
        for k, (lane, view, dist) in expected.items():
            g = got[k]
            if g[0] != lane or g[1] != view or not math.isclose(g[2], dist, abs_tol=1e-9):
                mismatches.append((n, k, g, expected[k]))
    return mismatches


def exhaustive_top_k(matrix, q, k):
    """Reference scan: cosine per row in plain Python, stable on ties."""
    qn = math.sqrt(sum(x * x for x in q))
    scored = []
    for i, row in enumerate(matrix):
        rn = math.sqrt(sum(x * x for x in row))
        s = 0.0 if rn == 0 or qn == 0 else sum(a * b for a, b in zip(row, q)) / (rn * qn)
        scored.append((-s, i))
    return [i for _, i in sorted(scored)[:k]]
