"""Chat-completion and embedding backends.

``mock`` backends answer from responders registered per prompt tag and never
touch the network.  ``http`` backends speak the common JSON chat API
(``/chat/completions`` with a ``messages`` array) and ``/embeddings``.
Credentials are read from the environment variable named in the config and
never stored.
"""

from __future__ import annotations

import json
import logging
import os
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Union

import httpx
import numpy as np

from dualdrive.actions import MetaAction

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


class ClientError(Exception):
    retryable = False


class BackendTimeout(ClientError):
    """No answer in time (includes unreachable endpoints)."""
    retryable = True


class BackendUnavailable(ClientError):
    """Server-side failure such as HTTP 429 or 5xx."""
    retryable = True


class AuthError(ClientError):
    retryable = False


class MalformedResponse(ClientError):
    retryable = False


class DecisionParseError(ValueError):
    def __init__(self, message: str, text: str):
        super().__init__(message)
        self.text = text


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    tag: str = "decision"
    temperature: float = 0.0
    max_tokens: int = 512
    # structured payload for mock responders; never sent over the wire
    context: dict | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.system.strip() or not self.user.strip():
            raise ValueError("system and user prompts must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")

    def wire_payload(self, model: str) -> dict:
        return {
            "model": model,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": self.user},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class ChatResponse:
    text: str
    latency_ms: float
    backend_id: str


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    endpoint: str | None = None
    model: str = "mock"
    auth_env: str | None = None
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.5

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ValueError(f"backend kind must be 'mock' or 'http', got {self.kind!r}")
        if self.kind == "http" and (not self.endpoint or not self.auth_env):
            raise ValueError("http backends need an endpoint and an auth_env variable name")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.retries < 0:
            raise ValueError("retries must be non-negative")

    @property
    def backend_id(self) -> str:
        return f"{self.kind}:{self.model}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackendConfig":
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path, section: str | None = None) -> "BackendConfig":
        path = Path(path)
        text = path.read_text()
        data = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        if section is not None:
            data = data[section]
        return cls.from_dict(data)


Responder = Union[str, Callable[[ChatRequest], str]]


def _api_key(cfg: BackendConfig) -> str:
    key = os.environ.get(cfg.auth_env or "")
    if not key:
        raise AuthError(f"environment variable {cfg.auth_env!r} is not set")
    return key


def _with_retries(cfg: BackendConfig, fn):
    attempt = 0
    while True:
        try:
            return fn()
        except ClientError as exc:
            if not exc.retryable or attempt >= cfg.retries:
                raise
            delay = cfg.backoff * (2 ** attempt)
            log.warning("%s failed (%s); retry %d/%d in %.2fs", cfg.backend_id, exc,
                        attempt + 1, cfg.retries, delay)
            time.sleep(delay)
            attempt += 1


def _post(client: httpx.Client, url: str, payload: dict, cfg: BackendConfig) -> dict:
    headers = {"Authorization": f"Bearer {_api_key(cfg)}"}
    try:
        resp = client.post(url, json=payload, headers=headers)
    except httpx.TimeoutException as exc:
        raise BackendTimeout(f"{url}: timed out after {cfg.timeout}s") from exc
    except httpx.TransportError as exc:
        raise BackendTimeout(f"{url}: unreachable ({exc})") from exc
    if resp.status_code in (401, 403):
        raise AuthError(f"{url}: HTTP {resp.status_code}")
    if resp.status_code == 429 or resp.status_code >= 500:
        raise BackendUnavailable(f"{url}: HTTP {resp.status_code}")
    if resp.status_code >= 400:
        raise MalformedResponse(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
    try:
        return resp.json()
    except ValueError as exc:
        raise MalformedResponse(f"{url}: response is not JSON") from exc


class ChatClient:
    def __init__(self, config: BackendConfig | None = None,
                 responders: dict[str, Responder] | None = None,
                 transport: httpx.BaseTransport | None = None):
        self.config = config or BackendConfig()
        self.responders: dict[str, Responder] = dict(responders or {})
        self._transport = transport

    @property
    def backend_id(self) -> str:
        return self.config.backend_id

    def register(self, tag: str, responder: Responder) -> None:
        self.responders[tag] = responder

    def chat(self, req: ChatRequest) -> ChatResponse:
        t0 = time.perf_counter()
        if self.config.kind == "mock":
            text = self._mock(req)
        else:
            text = _with_retries(self.config, lambda: self._http(req))
        return ChatResponse(text, (time.perf_counter() - t0) * 1000.0, self.backend_id)

    def _mock(self, req: ChatRequest) -> str:
        responder = self.responders.get(req.tag)
        if responder is None:
            raise MalformedResponse(f"no mock responder registered for tag {req.tag!r}")
        return responder if isinstance(responder, str) else responder(req)

    def _http(self, req: ChatRequest) -> str:
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        with httpx.Client(timeout=self.config.timeout, transport=self._transport) as client:
            body = _post(client, url, req.wire_payload(self.config.model), self.config)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"{url}: no choices[0].message.content in response") from exc
        if not isinstance(content, str):
            raise MalformedResponse(f"{url}: message content is not text")
        return content


def chat(cfg: BackendConfig, req: ChatRequest,
         responders: dict[str, Responder] | None = None) -> ChatResponse:
    return ChatClient(cfg, responders).chat(req)


class HttpEmbeddingEncoder:
    """Text encoder backed by an ``/embeddings`` endpoint; vectors are L2-normalised."""

    def __init__(self, config: BackendConfig, dim: int,
                 transport: httpx.BaseTransport | None = None):
        if config.kind != "http":
            raise ValueError("HttpEmbeddingEncoder needs an http backend config")
        self.config = config
        self.dim = dim
        self.encoder_id = f"http:{config.model}:{dim}"
        self._transport = transport

    def encode(self, text: str) -> np.ndarray:
        if not text.strip():
            return np.zeros(self.dim)
        url = self.config.endpoint.rstrip("/") + "/embeddings"

        def call():
            with httpx.Client(timeout=self.config.timeout, transport=self._transport) as client:
                return _post(client, url, {"model": self.config.model, "input": text}, self.config)

        body = _with_retries(self.config, call)
        try:
            v = np.asarray(body["data"][0]["embedding"], dtype=float)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"{url}: no data[0].embedding in response") from exc
        if v.shape != (self.dim,) or not np.all(np.isfinite(v)):
            raise MalformedResponse(f"{url}: expected {self.dim} finite floats, got shape {v.shape}")
        n = np.linalg.norm(v)
        return v / n if n > 0 else v


# -- decision reply grammar -------------------------------------------------

_DECISION = re.compile(r"decision\s*:\s*([A-Za-z_]+)", re.IGNORECASE)
_REASONING = re.compile(r"reasoning\s*:", re.IGNORECASE)


def render_decision(reasoning: str, action: MetaAction) -> str:
    return f"Reasoning: {reasoning.strip()}\nDecision: {MetaAction(action).value}"


def parse_decision(text: str) -> tuple[str, MetaAction]:
    """Split a ``Reasoning: ... Decision: X`` reply.

    The last ``Decision:`` label wins; the token is case-insensitive.
    """
    matches = list(_DECISION.finditer(text))
    if not matches:
        raise DecisionParseError("reply has no 'Decision:' field", text)
    last = matches[-1]
    try:
        action = MetaAction.parse(last.group(1))
    except ValueError:
        raise DecisionParseError(f"unknown meta-action {last.group(1)!r}", text) from None
    head = text[:last.start()]
    r = _REASONING.search(head)
    reasoning = head[r.end():] if r else head
    return reasoning.strip(), action
