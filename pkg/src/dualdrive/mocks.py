"""Offline analytic backend built from the deterministic policy."""

from __future__ import annotations

from dualdrive.clients import BackendConfig, ChatClient
from dualdrive.decision import PolicyConfig, policy_responder
from dualdrive.reflection import reflection_responder


def mock_analytic_client(config: PolicyConfig | None = None) -> ChatClient:
    """Mock chat client answering decision and reflection prompts offline."""
    client = ChatClient(BackendConfig(kind="mock", model="analytic-policy"))
    client.register("decision", policy_responder(config))
    client.register("reflection", reflection_responder(config))
    return client
