"""Closed-loop route execution.

Each tick: the controller turns the latched target speed into a control
signal and the world advances by ``dt``.  Every ``decision_period`` ticks
the scene is described and a new meta-action chosen; every second the
(description, reasoning, decision) frame is pushed into the reflection
queue.  Collisions and route deviation end the route.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from dualdrive.clients import BackendConfig, ChatClient
from dualdrive.control import TRACE_FIELDS, ControlConfig, Controller, meta_to_target_speed
from dualdrive.decision import (
    Decision, PolicyBackend, PolicyConfig, analytic_decide, heuristic_decide,
)
from dualdrive.harness.metrics import DEFAULT_PENALTIES, RouteResult, canonical_json, compute_is
from dualdrive.memory import ExperienceSample, MemoryBank
from dualdrive.mocks import mock_analytic_client
from dualdrive.perception import PerceptionConfig, describe_scene, render_description_text
from dualdrive.reflection import MemoryQueue, ReflectionError, ReflectionResult, reflect
from dualdrive.sim.scenario import build_world, parse_scenario
from dualdrive.sim.world import SimConfig

log = logging.getLogger(__name__)

TERMINAL_KINDS = ("collision_pedestrian", "collision_vehicle", "collision_static",
                  "route_deviation")


@dataclass(frozen=True)
class AgentConfig:
    mode: str = "heuristic"                  # heuristic | analytic
    k: int = 3
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    analytic_policy: PolicyConfig = field(default_factory=PolicyConfig)
    heuristic_backend: BackendConfig | None = None   # None: built-in policy
    analytic_backend: BackendConfig | None = None    # None: offline mock analytic
    reflection: bool = True
    deterministic: bool = True
    dt: float = 0.05
    decision_period: int = 10                # ticks per decision (2 Hz)
    record_period: float = 1.0               # seconds between queue records
    timeout_factor: float = 3.0
    max_prompt_chars: int = 12000
    control: ControlConfig = field(default_factory=ControlConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    penalties: dict = field(default_factory=lambda: dict(DEFAULT_PENALTIES))
    write_traces: bool = True

    def __post_init__(self):
        if self.mode not in ("heuristic", "analytic"):
            raise ValueError(f"mode must be 'heuristic' or 'analytic', got {self.mode!r}")
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if self.decision_period < 1:
            raise ValueError("decision_period must be at least one tick")

    def with_(self, **kw) -> "AgentConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class RouteOutcome:
    result: RouteResult
    log: list[dict]
    samples: list[ExperienceSample]
    reflections: list[ReflectionResult]
    trace: list
    reflection_errors: list[str] = field(default_factory=list)


def make_analytic_client(agent: AgentConfig, cruise: float | None = None) -> ChatClient:
    if agent.analytic_backend is None:
        policy = agent.analytic_policy
        if cruise is not None:
            policy = dataclasses.replace(policy, cruise_speed=min(cruise, agent.control.v_max))
        return mock_analytic_client(policy)
    return ChatClient(agent.analytic_backend)


def _heuristic_backend(agent: AgentConfig, cruise: float):
    if agent.heuristic_backend is None:
        cruise = min(cruise, agent.control.v_max)
        return PolicyBackend(dataclasses.replace(agent.policy, cruise_speed=cruise))
    return ChatClient(agent.heuristic_backend)


def _scenario_spec(scenario) -> dict:
    return scenario if isinstance(scenario, dict) else parse_scenario(Path(scenario))


def run_route(scenario, agent: AgentConfig | None = None, seed: int = 0,
              bank: MemoryBank | None = None, analytic: ChatClient | None = None) -> RouteOutcome:
    """Drive one route to completion, a terminal infraction or the timeout."""
    agent = agent or AgentConfig()
    spec = _scenario_spec(scenario)
    world = build_world(spec, seed, agent.sim)
    route_id = world.scenario_id
    ctrl = Controller(dataclasses.replace(agent.control, dt=agent.dt))
    v_max = agent.control.v_max
    # the route's cruise speed acts as its speed limit for the commanded target
    v_cap = min(world.cruise_speed, v_max)
    queue = MemoryQueue(period=agent.record_period, eps=agent.dt)
    if analytic is None and (agent.mode == "analytic" or agent.reflection):
        analytic = make_analytic_client(agent, world.cruise_speed)
    heuristic = _heuristic_backend(agent, world.cruise_speed)
    snapshot = bank.snapshot() if bank is not None else None

    timeout = agent.timeout_factor * world.route.length / v_max
    target = min(world.ego.speed, v_cap)
    world.ego.target_speed = target
    records: list[dict] = []
    samples: list[ExperienceSample] = []
    reflections: list[ReflectionResult] = []
    refl_errors: list[str] = []
    events_all = []
    status = "timeout"
    tick = 0
    t_wall = time.perf_counter()

    while True:
        if tick % agent.decision_period == 0:
            d = describe_scene(world, agent.perception)
            if agent.mode == "analytic":
                dec: Decision = analytic_decide(d, world.ego, analytic)
            else:
                dec = heuristic_decide(d, world.ego, snapshot, agent.k, heuristic,
                                       agent.max_prompt_chars)
            target = meta_to_target_speed(dec.action, target, v_cap)
            world.ego.target_speed = target
            records.append({
                "t": world.time, "tick": tick, "description": render_description_text(d),
                "ego_speed": world.ego.speed, "k": agent.k if agent.mode == "heuristic" else 0,
                "shots": dec.shots, "exemplar_ids": list(dec.exemplar_ids),
                "reasoning": dec.reasoning, "action": dec.action.value, "process": dec.process,
                "latency_ms": 0.0 if agent.deterministic else dec.latency_ms,
                "target_speed": target,
            })
            if queue.due(world.time):
                sample = ExperienceSample(d, dec.reasoning, dec.action, "analytic",
                                          f"{route_id}:{seed}", world.time)
                queue.record(sample, world.time)
                samples.append(sample)

        sig = ctrl.control_step(world.ego, world.route.points, target, world.time)
        events = world.step(sig, agent.dt)
        tick += 1
        events_all.extend(events)
        for ev in events:
            records.append({"t": ev.time, "tick": tick, "event": ev.kind, "actor_id": ev.actor_id})
            if agent.reflection and len(queue):
                try:
                    reflections.append(reflect(queue, ev, analytic))
                except ReflectionError as exc:
                    log.error("%s seed %d: reflection on %s skipped: %s", route_id, seed, ev.kind, exc)
                    refl_errors.append(f"{ev.kind}@{ev.time}: {exc}")
        if any(ev.kind in TERMINAL_KINDS for ev in events):
            status = "terminated"
            break
        if world.route_complete:
            status = "completed"
            break
        if world.time >= timeout - 1e-9:
            break

    result = RouteResult(
        route_id, seed, world.route_progress(), compute_is(events_all, agent.penalties),
        tuple(events_all), sum(1 for r in records if "action" in r), world.time, status,
        time.perf_counter() - t_wall, world.town)
    return RouteOutcome(result, records, samples, reflections, ctrl.trace, refl_errors)


# -- run-directory output ---------------------------------------------------

def route_stem(result: RouteResult, cell: str = "") -> str:
    stem = f"{result.route_id}_s{result.seed}"
    return f"{cell.replace('=', '')}_{stem}" if cell else stem


def write_outcome(run_dir: Path, outcome: RouteOutcome, cell: str = "",
                  traces: bool = True) -> None:
    stem = route_stem(outcome.result, cell)
    (run_dir / "decisions").mkdir(parents=True, exist_ok=True)
    with (run_dir / "decisions" / f"{stem}.jsonl").open("w") as fh:
        for rec in outcome.log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if traces:
        (run_dir / "traces").mkdir(exist_ok=True)
        with (run_dir / "traces" / f"{stem}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_FIELDS)
            for row in outcome.trace:
                w.writerow([repr(float(v)) for v in dataclasses.astuple(row)])
    if outcome.reflections or outcome.reflection_errors:
        (run_dir / "reflections").mkdir(exist_ok=True)
        payload = {"reflections": [r.to_dict() for r in outcome.reflections],
                   "skipped": outcome.reflection_errors}
        (run_dir / "reflections" / f"{stem}.json").write_text(
            json.dumps(payload, sort_keys=True, indent=1))


def write_config(run_dir: Path, config: dict, fingerprint: str) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    doc = json.loads(canonical_json(config))
    doc["fingerprint"] = fingerprint
    (run_dir / "config.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
