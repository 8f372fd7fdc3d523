"""Lane graph, traffic signals and the validation rules applied to them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dualdrive.sim import geometry


class ValidationError(ValueError):
    """A scenario violates a structural invariant."""


@dataclass
class Lane:
    id: str
    centerline: np.ndarray
    width: float = 3.5
    successors: tuple[str, ...] = ()
    left: str | None = None
    right: str | None = None
    junction: bool = False

    def __post_init__(self):
        self.centerline = geometry.as_points(self.centerline)
        self._cum = geometry.arc_lengths(self.centerline)

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def project(self, p) -> geometry.Projection:
        return geometry.project(self.centerline, self._cum, p)


PHASES = ("green", "yellow", "red")


@dataclass
class TrafficLight:
    id: str
    position: tuple[float, float]   # stop-line centre
    lanes: tuple[str, ...]
    phases: tuple[tuple[str, float], ...]
    offset: float = 0.0
    cycle: bool = True

    def state_at(self, t: float) -> str:
        total = sum(d for _, d in self.phases)
        tau = t + self.offset
        if self.cycle:
            tau = math.fmod(tau, total)
            if tau < 0:
                tau += total
        acc = 0.0
        for state, dur in self.phases:
            acc += dur
            if tau < acc:
                return state
        return self.phases[-1][0]


@dataclass
class StopSign:
    id: str
    position: tuple[float, float]   # stop-line centre
    lane: str


@dataclass
class LaneGraph:
    lanes: dict[str, Lane]
    lights: list[TrafficLight] = field(default_factory=list)
    stop_signs: list[StopSign] = field(default_factory=list)

    def validate(self) -> None:
        for lane in self.lanes.values():
            pts = lane.centerline
            if len(pts) < 2:
                raise ValidationError(f"lane {lane.id}: centerline needs at least 2 points")
            if np.any(np.all(np.diff(pts, axis=0) == 0.0, axis=1)):
                raise ValidationError(f"lane {lane.id}: consecutive centerline points must be distinct")
            if lane.width <= 0:
                raise ValidationError(f"lane {lane.id}: width must be positive")
            for s in lane.successors:
                self._require(s, f"lane {lane.id}: successor")
            if lane.left is not None:
                self._require(lane.left, f"lane {lane.id}: left neighbor")
                if self.lanes[lane.left].right != lane.id:
                    raise ValidationError(
                        f"lane {lane.id}: neighbor references not symmetric "
                        f"({lane.left}.right != {lane.id})")
            if lane.right is not None:
                self._require(lane.right, f"lane {lane.id}: right neighbor")
                if self.lanes[lane.right].left != lane.id:
                    raise ValidationError(
                        f"lane {lane.id}: neighbor references not symmetric "
                        f"({lane.right}.left != {lane.id})")
        for light in self.lights:
            if not light.lanes:
                raise ValidationError(f"traffic light {light.id}: controls no lanes")
            for lid in light.lanes:
                self._require(lid, f"traffic light {light.id}: controlled lane")
            if not light.phases or any(d <= 0 or s not in PHASES for s, d in light.phases):
                raise ValidationError(f"traffic light {light.id}: phases must be (state, duration>0) "
                                      f"with state in {PHASES}")
        for sign in self.stop_signs:
            self._require(sign.lane, f"stop sign {sign.id}: controlled lane")

    def _require(self, lane_id: str, what: str) -> None:
        if lane_id not in self.lanes:
            raise ValidationError(f"{what} references missing lane id {lane_id!r}")

    def locate(self, p, prefer: str | None = None) -> str | None:
        """Lane whose corridor contains ``p``; ``prefer`` wins ties."""
        best, best_d = None, math.inf
        for lane in self.lanes.values():
            pr = lane.project(p)
            if pr.distance <= lane.width / 2.0 + 1e-9:
                d = pr.distance - (1e-6 if lane.id == prefer else 0.0)
                if d < best_d:
                    best, best_d = lane.id, d
        return best


def stop_line_frame(graph: LaneGraph, position, lane_id: str):
    """Tangent of the controlled lane at a stop line, plus the lane width."""
    lane = graph.lanes[lane_id]
    pr = lane.project(position)
    return np.array(pr.tangent), lane.width
