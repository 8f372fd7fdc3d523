"""Pre-incident history and reflection on failures.

A fixed-size queue keeps the last ten (description, reasoning, decision)
frames at 1 Hz.  When an infraction occurs the analytic backend reviews
the queue, names the frame that went wrong and returns corrected samples
that are then written into the memory bank.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import deque
from dataclasses import dataclass, field

from dualdrive.actions import MetaAction
from dualdrive.clients import ChatClient, ChatRequest, ClientError
from dualdrive.decision import PolicyConfig, builtin_policy
from dualdrive.memory import ExperienceSample, MemoryBank
from dualdrive.perception import render_description_text
from dualdrive.prompts import render_prompt
from dualdrive.sim.world import InfractionEvent

log = logging.getLogger(__name__)

QUEUE_CAPACITY = 10


class QueueOrderError(ValueError):
    pass


class ReflectionError(RuntimeError):
    """The reflection was skipped; the route keeps going and the incident is logged."""


@dataclass(frozen=True)
class QueueEntry:
    t: float
    sample: ExperienceSample


@dataclass
class MemoryQueue:
    capacity: int = QUEUE_CAPACITY
    period: float = 1.0
    eps: float = 0.05          # one physics tick of slack
    entries: deque = field(default=None)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        self.entries = deque(self.entries or (), maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def last_time(self) -> float | None:
        return self.entries[-1].t if self.entries else None

    def due(self, t: float) -> bool:
        return not self.entries or t >= self.entries[-1].t + self.period - self.eps

    def record(self, sample: ExperienceSample, t: float) -> "MemoryQueue":
        if not self.due(t):
            raise QueueOrderError(
                f"record at t={t} is less than {self.period}s after t={self.entries[-1].t}")
        self.entries.append(QueueEntry(t, sample))
        return self

    def frames(self) -> list[tuple[int, QueueEntry]]:
        """(offset, entry) pairs oldest first; the newest has offset 0."""
        n = len(self.entries)
        return [(i - (n - 1), e) for i, e in enumerate(self.entries)]

    def at(self, offset: int) -> QueueEntry:
        n = len(self.entries)
        if not -(n - 1) <= offset <= 0:
            raise IndexError(f"frame offset {offset} outside [{-(n - 1)}, 0]")
        return self.entries[n - 1 + offset]


def record(queue: MemoryQueue, sample: ExperienceSample, t: float) -> MemoryQueue:
    return queue.record(sample, t)


@dataclass(frozen=True)
class Correction:
    frame: int
    sample: ExperienceSample
    original: MetaAction | None = None   # decision recorded at that frame


@dataclass(frozen=True)
class ReflectionResult:
    keyframe: int
    diagnosis: str
    corrections: tuple[Correction, ...]
    incident: InfractionEvent | None = None
    prompt: str = ""
    reply: str = ""

    def to_dict(self) -> dict:
        return {
            "keyframe": self.keyframe,
            "diagnosis": self.diagnosis,
            "incident": None if self.incident is None else {
                "kind": self.incident.kind, "time": self.incident.time,
                "actor_id": self.incident.actor_id},
            "corrections": [{"frame": c.frame, "reasoning": c.sample.reasoning,
                             "decision": c.sample.decision.value,
                             "original": None if c.original is None else c.original.value,
                             "description": c.sample.description.to_dict()}
                            for c in self.corrections],
            "prompt": self.prompt,
            "reply": self.reply,
        }


# -- prompt and reply ------------------------------------------------------

def render_reflection_user(queue: MemoryQueue, incident: InfractionEvent) -> str:
    parts = []
    for off, e in queue.frames():
        s = e.sample
        parts.append(f"### Frame {off} (t = {e.t:.2f} s, ego speed {s.description.ego_speed:.2f} m/s)\n"
                     f"{render_description_text(s.description)}\n"
                     f"Reasoning: {s.reasoning}\nDecision: {s.decision.value}")
    who = f" with {incident.actor_id}" if incident.actor_id else ""
    parts.append(f"### Incident\n{incident.kind}{who} at t = {incident.time:.2f} s")
    return "\n\n".join(parts)


_JSON_OBJECT = re.compile(r"\{.*\}", re.DOTALL)


def parse_reflection(text: str, queue: MemoryQueue) -> tuple[int, str, tuple[Correction, ...]]:
    m = _JSON_OBJECT.search(text)
    if not m:
        raise ReflectionError("reflection reply contains no JSON object")
    try:
        data = json.loads(m.group(0))
        keyframe = int(data["keyframe"])
        diagnosis = str(data.get("diagnosis", "")).strip()
        raw = data.get("corrections", [])
        corrections = []
        for c in raw:
            frame = int(c["frame"])
            entry = queue.at(frame)
            reasoning = str(c["reasoning"]).strip() or diagnosis or "corrected by reflection"
            corrections.append(Correction(frame, ExperienceSample(
                entry.sample.description, reasoning, MetaAction.parse(str(c["decision"])),
                provenance="reflection", source=entry.sample.source, timestamp=entry.t),
                entry.sample.decision))
        queue.at(keyframe)
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise ReflectionError(f"unusable reflection reply: {exc}") from exc
    return keyframe, diagnosis, tuple(corrections)


def reflect(queue: MemoryQueue, incident: InfractionEvent, backend: ChatClient,
            prompt_dir=None) -> ReflectionResult:
    if not len(queue):
        raise ValueError("cannot reflect on an empty queue")
    system = render_prompt("reflection_system", prompt_dir)
    user = render_reflection_user(queue, incident)
    req = ChatRequest(system, user, tag="reflection", max_tokens=1024,
                      context={"queue": queue.frames(), "incident": incident})
    try:
        reply = backend.chat(req).text
    except ClientError as exc:
        raise ReflectionError(f"reflection backend failed: {exc}") from exc
    keyframe, diagnosis, corrections = parse_reflection(reply, queue)
    return ReflectionResult(keyframe, diagnosis, corrections, incident, user, reply)


def integrate(bank: MemoryBank, result: ReflectionResult) -> int:
    """Insert the corrected samples; returns how many were actually added."""
    added = 0
    for c in result.corrections:
        sample = c.sample
        if sample.provenance != "reflection":
            sample = ExperienceSample(sample.description, sample.reasoning, sample.decision,
                                      "reflection", sample.source, sample.timestamp)
        if bank.insert(sample).inserted:
            added += 1
    return added


# -- offline analytic stand-in ----------------------------------------------

def _actor_distance(entry: QueueEntry, actor_id: str | None) -> float:
    ds = [o.distance for o in entry.sample.description.objects
          if actor_id is not None and o.source_id == actor_id]
    return min(ds) if ds else math.inf


def reflection_responder(config: PolicyConfig | None = None):
    """Mock reflection: compare each recorded decision with the built-in policy.

    The keyframe is the most recent frame where they disagree and every
    disagreeing frame is corrected to the policy's choice.  Without any
    disagreement the keyframe is the frame closest to the incident actor,
    corrected to STOP.
    """
    cfg = config or PolicyConfig()

    def respond(req: ChatRequest) -> str:
        frames = req.context["queue"]
        incident = req.context["incident"]
        corrections = []
        for off, e in frames:
            d = e.sample.description
            r, s = builtin_policy(d, d.ego_speed, (), cfg)
            if s != e.sample.decision:
                corrections.append({"frame": off, "reasoning": r, "decision": s.value})
        if corrections:
            key = corrections[-1]["frame"]
            recorded = dict(frames)[key].sample.decision.value
            diag = (f"At frame {key} the decision {recorded} "
                    f"ignored the safe distance for the ego speed; "
                    f"{corrections[-1]['decision']} was required.")
        else:
            best = min(frames, key=lambda fe: (_actor_distance(fe[1], incident.actor_id), -fe[0]))
            key = best[0]
            dist = _actor_distance(best[1], incident.actor_id)
            where = f"{dist:.2f} m away" if math.isfinite(dist) else "not listed as critical"
            diag = (f"No frame broke the rules, but at frame {key} the object involved in the "
                    f"{incident.kind} was {where}; stopping there would have avoided it.")
            corrections.append({"frame": key, "decision": MetaAction.STOP.value,
                                "reasoning": f"The object involved in the later {incident.kind} "
                                             f"is {where}; stop to keep a safe margin."})
        return json.dumps({"keyframe": key, "diagnosis": diag, "corrections": corrections},
                          sort_keys=True)
    return respond
