import pytest
from hypothesis import given, strategies as st

from conftest import obj, scene
from dualdrive.perception import (
    LANE_RELATIONS, MOTIONS, NO_OBJECTS_TEXT, VIEWS, CriticalObject, DescriptionParseError,
    SceneDescription, VlmAdapter, describe_scene, parse_description_text, render_description_text,
)
from dualdrive.clients import BackendConfig, ChatClient
from dualdrive.sim.lanes import TrafficLight
from oracles import actor_at, scene_oracle_mismatches, three_lane_world


def test_describe_scene_matches_threshold_oracle():
    assert scene_oracle_mismatches(1000) == []


@pytest.mark.parametrize("kind, x, y, included", [
    ("vehicle", 45.0, 0.0, True),       # ego lane, inside 60 m
    ("vehicle", 61.0, 0.0, False),
    ("pedestrian", 45.0, 0.0, False),   # outside 40 m
    ("pedestrian", 39.0, 6.0, True),
    ("vehicle", 25.0, 3.5, False),      # adjacent lane, outside 20 m
    ("cyclist", 19.0, 3.5, True),
    ("vehicle", 60.0, 0.0, True),       # bounds are inclusive
    ("vehicle", -15.0, 0.0, False),     # behind, outside the field of view
])
def test_threshold_examples(kind, x, y, included):
    d = describe_scene(three_lane_world([actor_at("a", kind, x, y)]))
    assert (len(d.objects) == 1) is included


@pytest.mark.parametrize("lead_v, motion", [(2.0, "toward"), (9.0, "away"), (5.0, "static")])
def test_motion_of_lead_vehicle(lead_v, motion):
    d = describe_scene(three_lane_world([actor_at("a", "vehicle", 15.0, 0.0, lead_v, 0.0)], speed=5.0))
    assert d.objects[0].motion == motion


def test_crossing_pedestrian():
    left = describe_scene(three_lane_world([actor_at("p", "pedestrian", 15.0, -4.0, 0.0, 1.5)], speed=0.0))
    right = describe_scene(three_lane_world([actor_at("p", "pedestrian", 15.0, 4.0, 0.0, -1.5)], speed=0.0))
    assert left.objects[0].motion == "crossing_left"
    assert right.objects[0].motion == "crossing_right"


def test_red_light_description():
    tl = TrafficLight("tl", (20.0, 0.0), ("main",), (("red", 10.0),))
    d = describe_scene(three_lane_world(lights=[tl]))
    o, = d.objects
    assert (o.category, o.state, o.lane, o.view) == ("traffic_light", "red", "ego_lane", "front")
    assert "stopping at the intersection" in o.reasoning
    assert o.label == "traffic_light_red"


# -- records ----------------------------------------------------------------

def test_object_invariants():
    with pytest.raises(ValueError):
        obj(distance=-1.0)
    with pytest.raises(ValueError):
        obj(lane="sidewalk")
    with pytest.raises(ValueError):
        obj(motion="teleporting")
    with pytest.raises(ValueError):
        obj(reasoning="")


def test_duplicate_positions_rejected():
    a = obj(position=(1.0, 2.0))
    with pytest.raises(ValueError):
        scene(a, obj(position=(1.0, 2.0)))
    scene(a, obj(category="cyclist", position=(1.0, 2.0)))


def test_dict_round_trip():
    d = scene(obj(state=None, source_id="x", position=(3.0, 4.0)),
              obj("traffic_light", state="red", distance=20.0), speed=3.0, time=1.5)
    assert SceneDescription.from_dict(d.to_dict()) == d


# -- text -------------------------------------------------------------------

def test_empty_scene_text():
    assert render_description_text(scene()) == NO_OBJECTS_TEXT
    assert parse_description_text(NO_OBJECTS_TEXT).objects == ()


def test_single_red_light_line():
    text = render_description_text(scene(obj("traffic_light", state="red", distance=12.345)))
    assert text.count("\n") == 0
    assert "traffic_light (red)" in text and "front view" in text and "12.35 m away" in text
    assert text.startswith("<ref>") and text.endswith("</box>")


def test_two_objects_nearest_first():
    text = render_description_text(scene(obj(distance=30.0), obj("pedestrian", distance=8.0)))
    lines = text.splitlines()
    assert len(lines) == 2
    assert "pedestrian" in lines[0] and "vehicle" in lines[1]


object_st = st.builds(
    CriticalObject,
    category=st.sampled_from(["vehicle", "cyclist", "pedestrian", "traffic_light", "stop_sign"]),
    lane=st.sampled_from(LANE_RELATIONS),
    distance=st.floats(0, 100).map(lambda v: round(v, 2)),
    view=st.sampled_from(VIEWS),
    box=st.tuples(*[st.integers(0, 1000)] * 4),
    motion=st.sampled_from(MOTIONS),
    reasoning=st.sampled_from(["Keep a safe distance.", "It may cross, so be careful."]),
    state=st.sampled_from([None, "red", "green", "pending"]),
)


@given(st.lists(object_st, max_size=5))
def test_render_parse_round_trip(objects):
    d = SceneDescription(tuple(objects))
    back = parse_description_text(render_description_text(d))
    assert back.sorted_objects() == d.sorted_objects()


def test_parse_rejects_garbage():
    with pytest.raises(DescriptionParseError) as err:
        parse_description_text("a car somewhere")
    assert err.value.text == "a car somewhere"


def test_vlm_adapter_parses_mock_reply():
    line = render_description_text(scene(obj(distance=7.5)))
    client = ChatClient(BackendConfig(), {"scene": line})
    d = VlmAdapter(client).describe("cam_front_0001.png", time=2.0, ego_speed=3.0)
    assert len(d.objects) == 1 and d.objects[0].distance == 7.5 and d.ego_speed == 3.0
    bad = VlmAdapter(ChatClient(BackendConfig(), {"scene": "I see a car."}))
    with pytest.raises(DescriptionParseError):
        bad.describe("x.png")
