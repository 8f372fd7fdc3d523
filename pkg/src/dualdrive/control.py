"""Action executor: meta-actions to target speed, then PID/pure-pursuit to signals."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from dualdrive.actions import MetaAction
from dualdrive.sim import geometry
from dualdrive.sim.world import ControlSignal, EgoState

SPEED_STEP = 1.0


def meta_to_target_speed(meta: MetaAction, current: float, v_max: float = 8.0) -> float:
    """AC/DC move the target by 1 m/s, STOP zeroes it, IDLE holds; clamped to [0, v_max]."""
    meta = MetaAction(meta)
    if meta is MetaAction.AC:
        v = current + SPEED_STEP
    elif meta is MetaAction.DC:
        v = current - SPEED_STEP
    elif meta is MetaAction.STOP:
        v = 0.0
    else:
        v = current
    return min(max(v, 0.0), v_max)


# -- PID -------------------------------------------------------------------

@dataclass
class PIDState:
    kp: float
    ki: float
    kd: float
    buffer_len: int
    dt: float = 0.05
    errors: deque = field(default=None, repr=False)
    last_error: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(g) for g in (self.kp, self.ki, self.kd)):
            raise ValueError("PID gains must be finite")
        if self.buffer_len < 1:
            raise ValueError("buffer_len must be at least 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        self.errors = deque(self.errors or (), maxlen=self.buffer_len)

    @classmethod
    def longitudinal(cls, dt: float = 0.05) -> "PIDState":
        return cls(5.0, 0.5, 1.0, 40, dt)

    @classmethod
    def lateral(cls, dt: float = 0.05) -> "PIDState":
        return cls(1.0, 0.5, 0.2, 20, dt)

    def reset(self) -> None:
        self.errors.clear()
        self.last_error = 0.0


@dataclass(frozen=True)
class PIDTerms:
    p: float
    i: float
    d: float

    @property
    def output(self) -> float:
        return self.p + self.i + self.d


def pid_terms(state: PIDState, error: float) -> PIDTerms:
    """One PID evaluation; mutates ``state``.

    The integral sums the window of the last ``buffer_len`` errors
    including the current one; the derivative is a two-point difference
    against the previous error (0 before the first call).
    """
    state.errors.append(error)
    p = state.kp * error
    i = state.ki * sum(state.errors) * state.dt
    d = state.kd * (error - state.last_error) / state.dt
    state.last_error = error
    return PIDTerms(p, i, d)


def pid_step(state: PIDState, error: float) -> float:
    return pid_terms(state, error).output


# -- lateral geometry ------------------------------------------------------

def lookahead_steps(speed: float, v_max: float, near: int = 3, far: int = 7) -> int:
    frac = min(max(speed, 0.0), v_max) / v_max
    return int(math.floor(near + (far - near) * frac + 0.5))


def select_target_point(ego: EgoState, path, nearest: int = 0, v_max: float = 8.0,
                        near: int = 3, far: int = 7) -> tuple[int, np.ndarray]:
    """Path point 3..7 indices past ``nearest``, further out at higher speed.

    Falls back to the last point when fewer remain.
    """
    pts = np.asarray(path, dtype=float)
    if len(pts) == 0 or nearest >= len(pts):
        raise ValueError("no path points remain ahead of the ego")
    j = min(nearest + lookahead_steps(ego.speed, v_max, near, far), len(pts) - 1)
    return j, pts[j]


def heading_error(ego: EgoState, target) -> float:
    dx, dy = float(target[0]) - ego.x, float(target[1]) - ego.y
    return math.atan2(math.sin(math.atan2(dy, dx) - ego.heading),
                      math.cos(math.atan2(dy, dx) - ego.heading))


def pure_pursuit_steer(ego: EgoState, target) -> float:
    """Front-wheel angle (rad) that puts the rear axle on an arc through ``target``."""
    ld = math.hypot(float(target[0]) - ego.x, float(target[1]) - ego.y)
    if ld < 1e-9:
        raise ValueError("target point coincides with the ego position")
    alpha = heading_error(ego, target)
    return math.atan(2.0 * ego.wheelbase * math.sin(alpha) / ld)


# -- controller ------------------------------------------------------------

@dataclass(frozen=True)
class ControlConfig:
    dt: float = 0.05
    v_max: float = 8.0
    lon_gains: tuple = (5.0, 0.5, 1.0)
    lon_buffer: int = 40
    lat_gains: tuple = (1.0, 0.5, 0.2)
    lat_buffer: int = 20
    lon_scale: float = 10.0     # PID output per unit of throttle/brake
    max_steer: float = 0.5      # rad at |steer| = 1
    lateral_mode: str = "pid"   # or "pure_pursuit"
    search_window: int = 40

    def __post_init__(self):
        if self.lateral_mode not in ("pid", "pure_pursuit"):
            raise ValueError(f"unknown lateral mode {self.lateral_mode!r}")


@dataclass(frozen=True)
class TraceRow:
    t: float
    target_speed: float
    speed: float
    speed_error: float
    heading_error: float
    lateral_offset: float
    p: float
    i: float
    d: float
    steer: float
    throttle: float
    brake: float


TRACE_FIELDS = tuple(TraceRow.__dataclass_fields__)


class Controller:
    """Per-route controller: owns both PID states and the path cursor."""

    def __init__(self, config: ControlConfig | None = None):
        self.config = cfg = config or ControlConfig()
        self.lon = PIDState(*cfg.lon_gains, cfg.lon_buffer, cfg.dt)
        self.lat = PIDState(*cfg.lat_gains, cfg.lat_buffer, cfg.dt)
        self.cursor = 0
        self.trace: list[TraceRow] = []

    def _nearest(self, ego: EgoState, pts: np.ndarray) -> tuple[int, float]:
        lo = self.cursor
        hi = min(len(pts), lo + self.config.search_window)
        d = np.hypot(pts[lo:hi, 0] - ego.x, pts[lo:hi, 1] - ego.y)
        self.cursor = lo + int(np.argmin(d))
        seg = pts[max(0, self.cursor - 1):self.cursor + 2]
        if len(seg) < 2:
            return self.cursor, float(np.min(d))
        return self.cursor, abs(geometry.project(seg, geometry.arc_lengths(seg), ego.position).lateral)

    def control_step(self, ego: EgoState, path, target_speed: float, t: float = 0.0) -> ControlSignal:
        cfg = self.config
        pts = np.asarray(path, dtype=float)
        nearest, offset = self._nearest(ego, pts)

        e_v = target_speed - ego.speed
        terms = pid_terms(self.lon, e_v)
        u = terms.output / cfg.lon_scale
        throttle = min(max(u, 0.0), 1.0)
        brake = min(max(-u, 0.0), 1.0)

        _, target = select_target_point(ego, pts, nearest, cfg.v_max)
        if math.hypot(target[0] - ego.x, target[1] - ego.y) < 1e-6:
            alpha, steer = 0.0, 0.0
        elif cfg.lateral_mode == "pid":
            alpha = heading_error(ego, target)
            steer = pid_step(self.lat, alpha) / cfg.max_steer
        else:
            alpha = heading_error(ego, target)
            steer = pure_pursuit_steer(ego, target) / cfg.max_steer
        steer = min(max(steer, -1.0), 1.0)

        sig = ControlSignal(steer, throttle, brake)
        self.trace.append(TraceRow(t, target_speed, ego.speed, e_v, alpha, offset,
                                   terms.p, terms.i, terms.d, sig.steer, sig.throttle, sig.brake))
        return sig


def control_step(controller: Controller, ego: EgoState, path, target_speed: float) -> ControlSignal:
    return controller.control_step(ego, path, target_speed)
