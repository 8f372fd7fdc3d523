"""Dual-process decision making.

The analytic process prompts a (slow) chat backend with the full system
prompt and traffic rules.  The heuristic process retrieves the ``k`` most
similar stored experiences and either prompts a lightweight chat backend
with them or runs the deterministic built-in policy, which lets a close
enough stored experience override its own rules.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

from dualdrive.actions import MetaAction
from dualdrive.clients import (
    ChatClient, ChatRequest, ClientError, DecisionParseError, parse_decision, render_decision,
)
from dualdrive.memory import MemoryBank, ScoredSample
from dualdrive.perception import SceneDescription, render_description_text
from dualdrive.prompts import render_prompt

log = logging.getLogger(__name__)

PROCESSES = ("analytic", "heuristic", "fallback")
ROAD_USERS = ("vehicle", "cyclist", "pedestrian")
FALLBACK_REASONING = "The decision backend failed; stopping is the safe default."


@dataclass(frozen=True)
class Decision:
    reasoning: str
    action: MetaAction
    process: str
    latency_ms: float = 0.0
    shots: int = 0
    exemplar_ids: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.reasoning.strip():
            raise ValueError("reasoning must be non-empty")
        object.__setattr__(self, "action", MetaAction(self.action))
        if self.process not in PROCESSES:
            raise ValueError(f"process must be one of {PROCESSES}")
        if self.shots < 0:
            raise ValueError("shots must be non-negative")


def fallback_decision(latency_ms: float = 0.0, shots: int = 0) -> Decision:
    return Decision(FALLBACK_REASONING, MetaAction.STOP, "fallback", latency_ms, shots)


# -- built-in policy -------------------------------------------------------

@dataclass(frozen=True)
class PolicyConfig:
    cruise_speed: float = 8.0
    min_gap: float = 5.0            # never closer than this
    headway: float = 2.0            # DC inside max(min_gap, headway * v)
    reaction_time: float = 1.0      # STOP inside max(min_gap, reaction + braking distance)
    brake_decel: float = 6.0
    yellow_decel: float = 4.0       # comfortable deceleration for yellow lights
    stop_sign_zone: float = 4.5     # issue STOP this close to a pending stop sign
    creep_speed: float = 2.0        # approach speed for a pending stop sign
    memory_threshold: float = 0.9   # similarity above which a stored decision is reused
    memory_speed_tolerance: float = 2.0

    @classmethod
    def novice(cls, **kw) -> "PolicyConfig":
        """A driver that ignores how the safe distance scales with speed."""
        return cls(**{"headway": 0.0, "reaction_time": 0.0, "brake_decel": math.inf, **kw})

    def follow_gap(self, v: float) -> float:
        return max(self.min_gap, self.headway * v)

    def stop_gap(self, v: float) -> float:
        braking = 0.0 if math.isinf(self.brake_decel) else v * v / (2.0 * self.brake_decel)
        return max(self.min_gap, self.reaction_time * v + braking)


def _cascade(d: SceneDescription, v: float, cfg: PolicyConfig) -> tuple[str, MetaAction]:
    objs = d.sorted_objects()
    for o in objs:
        if o.category != "traffic_light" or o.lane != "ego_lane":
            continue
        if o.state == "red":
            return (f"The traffic light {o.distance:.2f} m ahead is red, so the ego car must "
                    f"stop before the stop line."), MetaAction.STOP
        if o.state == "yellow":
            need = v * v / (2.0 * cfg.yellow_decel) + v * cfg.reaction_time
            if o.distance > need:
                return (f"The light {o.distance:.2f} m ahead is yellow and there is room "
                        f"to stop ({need:.2f} m needed), so the ego car stops."), MetaAction.STOP

    for o in objs:
        if o.category == "stop_sign" and o.state == "pending" and o.lane == "ego_lane":
            if o.distance <= cfg.stop_sign_zone:
                return (f"The stop sign is {o.distance:.2f} m ahead and the ego car has not "
                        f"stopped yet; it must come to a full stop now."), MetaAction.STOP
            if v > cfg.creep_speed + 0.5:
                return (f"A stop sign is {o.distance:.2f} m ahead; slow down to approach "
                        f"the stop line."), MetaAction.DC
            if v < cfg.creep_speed - 0.5:
                return (f"A stop sign is {o.distance:.2f} m ahead; creep forward to the "
                        f"stop line."), MetaAction.AC
            return (f"A stop sign is {o.distance:.2f} m ahead; keep creeping toward the "
                    f"stop line."), MetaAction.IDLE

    lead = next((o for o in objs if o.category in ROAD_USERS and o.lane == "ego_lane"), None)
    if lead is not None:
        stop_gap, follow_gap = cfg.stop_gap(v), cfg.follow_gap(v)
        if lead.distance < stop_gap:
            return (f"The {lead.category} ahead in the ego lane is only {lead.distance:.2f} m "
                    f"away, inside the {stop_gap:.2f} m stopping distance at {v:.2f} m/s; "
                    f"the ego car must stop."), MetaAction.STOP
        if lead.distance < follow_gap:
            return (f"The {lead.category} ahead in the ego lane is {lead.distance:.2f} m away, "
                    f"closer than the {follow_gap:.2f} m safe gap at {v:.2f} m/s; "
                    f"decelerate."), MetaAction.DC

    for o in objs:
        if (o.category in ("pedestrian", "cyclist") and o.motion.startswith("crossing")
                and o.view == "front" and o.distance < cfg.follow_gap(v)):
            return (f"The {o.category} {o.distance:.2f} m ahead is crossing toward the ego "
                    f"car's path; decelerate and be ready to yield."), MetaAction.DC

    if v < cfg.cruise_speed - 0.5:
        return (f"No critical object constrains the ego car and its speed {v:.2f} m/s is "
                f"below the cruise speed; accelerate."), MetaAction.AC
    return (f"The road ahead is clear and the ego car is at cruise speed ({v:.2f} m/s); "
            f"keep the current speed."), MetaAction.IDLE


def builtin_policy(d: SceneDescription, ego_speed: float,
                   exemplars: Sequence[ScoredSample] = (),
                   config: PolicyConfig | None = None) -> tuple[str, MetaAction]:
    """Deterministic rule cascade with memory-first override.

    Rules, first match wins: red light (or a stoppable yellow) and pending
    stop signs; a road user in the ego lane inside the stopping gap (STOP)
    or the following gap (DC); a pedestrian or cyclist crossing ahead (DC);
    below cruise speed (AC); otherwise IDLE.

    Before the rules, the first exemplar whose similarity exceeds
    ``memory_threshold`` and whose recorded ego speed is within
    ``memory_speed_tolerance`` supplies the decision instead.
    """
    cfg = config or PolicyConfig()
    for ex in exemplars:
        if (ex.score > cfg.memory_threshold and abs(
                ex.sample.description.ego_speed - ego_speed) <= cfg.memory_speed_tolerance):
            return (f"A stored experience matches this scene (similarity {ex.score:.3f}) and "
                    f"chose {ex.sample.decision.value}: {ex.sample.reasoning}",
                    ex.sample.decision)
    return _cascade(d, ego_speed, cfg)


@dataclass(frozen=True)
class PolicyBackend:
    """Built-in policy as a heuristic backend (no prompt, no network)."""

    config: PolicyConfig = field(default_factory=PolicyConfig)
    backend_id: str = "builtin-policy"


def policy_responder(config: PolicyConfig | None = None):
    """Mock chat responder answering decision prompts with the built-in policy.

    Reads the structured ``context`` of the request (``description`` and
    ``ego_speed``); exemplars are ignored.
    """
    def respond(req: ChatRequest) -> str:
        ctx = req.context or {}
        r, s = builtin_policy(ctx["description"], ctx["ego_speed"], (), config)
        return render_decision(r, s)
    return respond


# -- prompts ---------------------------------------------------------------

@dataclass(frozen=True)
class PromptContext:
    description_text: str
    ego_text: str
    exemplars: tuple[ScoredSample, ...] = ()
    system_prompt_id: str = "heuristic_system"

    def __post_init__(self):
        scores = [e.score for e in self.exemplars]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("exemplars must be ordered by descending similarity")


def ego_text(speed: float, target_speed: float) -> str:
    return f"Ego state: speed {speed:.2f} m/s, target speed {target_speed:.2f} m/s."


def _exemplar_block(i: int, ex: ScoredSample) -> str:
    s = ex.sample
    return (f"### Experience {i + 1} (similarity {ex.score:.3f})\n"
            f"Scene:\n{render_description_text(s.description)}\n"
            f"Ego state: speed {s.description.ego_speed:.2f} m/s.\n"
            f"{render_decision(s.reasoning, s.decision)}")


def few_shot_sections(ctx: PromptContext, max_chars: int = 12000,
                      prompt_dir=None) -> tuple[str, str, int]:
    """System prompt, user message and the number of exemplars kept under the cap."""
    system = render_prompt(ctx.system_prompt_id, prompt_dir)
    current = f"### Current scene\n{ctx.description_text}\n{ctx.ego_text}"
    blocks = [_exemplar_block(i, e) for i, e in enumerate(ctx.exemplars)]
    keep = len(blocks)
    while keep > 0:
        user = "\n\n".join(blocks[:keep] + [current])
        if len(system) + 2 + len(user) <= max_chars:
            break
        keep -= 1
    user = "\n\n".join(blocks[:keep] + [current])
    return system, user, keep


def assemble_few_shot_prompt(ctx: PromptContext, max_chars: int = 12000, prompt_dir=None) -> str:
    """System prompt, then exemplars best-first, then the current scene.

    Over ``max_chars`` the lowest-similarity exemplars are dropped first.
    """
    system, user, _ = few_shot_sections(ctx, max_chars, prompt_dir)
    return system + "\n\n" + user


# -- processes -------------------------------------------------------------

def _ask(client: ChatClient, req: ChatRequest) -> tuple[str, MetaAction] | None:
    """Chat and parse, retrying once on an unparseable reply."""
    for attempt in range(2):
        try:
            reply = client.chat(req)
        except ClientError as exc:
            log.error("decision backend %s failed: %s", client.backend_id, exc)
            return None
        try:
            return parse_decision(reply.text)
        except DecisionParseError as exc:
            log.warning("unparseable decision reply (attempt %d): %s", attempt + 1, exc)
    return None


def analytic_decide(d: SceneDescription, ego, backend: ChatClient, prompt_dir=None) -> Decision:
    t0 = time.perf_counter()
    req = ChatRequest(
        system=render_prompt("analytic_system", prompt_dir),
        user=f"### Current scene\n{render_description_text(d)}\n{ego_text(ego.speed, ego.target_speed)}",
        tag="decision",
        context={"description": d, "ego_speed": ego.speed},
    )
    parsed = _ask(backend, req)
    ms = (time.perf_counter() - t0) * 1000.0
    if parsed is None:
        return fallback_decision(ms)
    r, s = parsed
    return Decision(r or "(no reasoning given)", s, "analytic", ms)


def heuristic_decide(d: SceneDescription, ego, bank: MemoryBank | None, k: int,
                     backend: PolicyBackend | ChatClient, max_chars: int = 12000,
                     prompt_dir=None) -> Decision:
    if k < 0:
        raise ValueError("k must be non-negative")
    t0 = time.perf_counter()
    hits: list[ScoredSample] = []
    if bank is not None and k > 0 and len(bank):
        hits = bank.query(bank.encode_scene(d), k)
    if isinstance(backend, PolicyBackend):
        r, s = builtin_policy(d, ego.speed, hits, backend.config)
        ms = (time.perf_counter() - t0) * 1000.0
        return Decision(r, s, "heuristic", ms, len(hits), tuple(h.index for h in hits))

    ctx = PromptContext(render_description_text(d), ego_text(ego.speed, ego.target_speed),
                        tuple(hits))
    system, user, kept = few_shot_sections(ctx, max_chars, prompt_dir)
    req = ChatRequest(system, user, tag="decision",
                      context={"description": d, "ego_speed": ego.speed, "exemplars": hits[:kept]})
    parsed = _ask(backend, req)
    ms = (time.perf_counter() - t0) * 1000.0
    if parsed is None:
        return fallback_decision(ms, kept)
    r, s = parsed
    return Decision(r or "(no reasoning given)", s, "heuristic", ms, kept,
                    tuple(h.index for h in hits[:kept]))
