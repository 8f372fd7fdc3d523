"""Closed-loop 2D traffic simulator."""

from dualdrive.sim.geometry import densify
from dualdrive.sim.lanes import Lane, LaneGraph, StopSign, TrafficLight, ValidationError
from dualdrive.sim.scenario import ScenarioError, build_world, load_scenario, parse_scenario
from dualdrive.sim.world import (
    ACTOR_KINDS, INFRACTION_KINDS, Actor, ControlSignal, EgoState, InfractionEvent, Obstacle,
    RouteSpec, SimConfig, SpeedCommand, World, WorldInterface, route_progress, step,
)

densify_route = densify
