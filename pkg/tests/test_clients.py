import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualdrive.actions import MetaAction
from dualdrive.clients import (
    AuthError, BackendConfig, BackendTimeout, BackendUnavailable, ChatClient, ChatRequest,
    DecisionParseError, HttpEmbeddingEncoder, MalformedResponse, chat, parse_decision,
    render_decision,
)


class FakeServer:
    """Scripted OpenAI-style endpoint on localhost."""

    def __init__(self, replies):
        self.replies = list(replies)     # (status, body) consumed in order, last one repeats
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers["Content-Length"])
                outer.requests.append({"path": self.path, "auth": self.headers.get("Authorization"),
                                       "body": json.loads(self.rfile.read(n))})
                status, body = outer.replies[0] if len(outer.replies) == 1 else outer.replies.pop(0)
                data = body if isinstance(body, bytes) else json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *a):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"
        threading.Thread(target=self.httpd.serve_forever, args=(0.02,), daemon=True).start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


def completion(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


@pytest.fixture
def server_factory(monkeypatch):
    monkeypatch.setenv("TEST_API_KEY", "sekret")
    servers = []

    def make(replies):
        s = FakeServer(replies)
        servers.append(s)
        return s
    yield make
    for s in servers:
        s.close()


def http_config(url, **kw):
    return BackendConfig(kind="http", endpoint=url, model="test-model", auth_env="TEST_API_KEY",
                         timeout=kw.pop("timeout", 2.0), backoff=0.0, **kw)


REQ = ChatRequest("system text", "user text", tag="decision", temperature=0.3, max_tokens=64)


# -- mock -------------------------------------------------------------------

def test_mock_returns_canned_text():
    client = ChatClient(BackendConfig(), {"decision": "Reasoning: ok\nDecision: DC"})
    a, b = client.chat(REQ), client.chat(REQ)
    assert a.text == "Reasoning: ok\nDecision: DC" and a.text == b.text
    assert a.backend_id == "mock:mock"


def test_mock_callable_and_missing_tag():
    client = ChatClient()
    client.register("decision", lambda req: req.user.upper())
    assert client.chat(REQ).text == "USER TEXT"
    with pytest.raises(MalformedResponse):
        client.chat(ChatRequest("s", "u", tag="reflection"))


def test_module_chat_helper():
    assert chat(BackendConfig(), REQ, {"decision": "x"}).text == "x"


@pytest.mark.parametrize("kw", [dict(system=" "), dict(user=""), dict(temperature=2.5)])
def test_request_validation(kw):
    base = dict(system="s", user="u")
    base.update(kw)
    with pytest.raises(ValueError):
        ChatRequest(**base)


@pytest.mark.parametrize("kw", [dict(kind="grpc"), dict(kind="http", endpoint="http://x"),
                                dict(timeout=0), dict(retries=-1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        BackendConfig(**kw)


def test_config_from_files(tmp_path):
    toml = tmp_path / "b.toml"
    toml.write_text('[analytic]\nkind = "http"\nendpoint = "http://h/v1"\nmodel = "m"\nauth_env = "K"\n')
    cfg = BackendConfig.from_file(toml, "analytic")
    assert cfg.endpoint == "http://h/v1" and cfg.backend_id == "http:m"
    js = tmp_path / "b.json"
    js.write_text(json.dumps(cfg.to_dict()))
    assert BackendConfig.from_file(js) == cfg


# -- http -------------------------------------------------------------------

def test_http_wire_format(server_factory):
    srv = server_factory([(200, completion("Reasoning: clear\nDecision: AC"))])
    resp = ChatClient(http_config(srv.url)).chat(REQ)
    assert resp.text == "Reasoning: clear\nDecision: AC"
    req, = srv.requests
    assert req["path"] == "/v1/chat/completions"
    assert req["auth"] == "Bearer sekret"
    assert req["body"] == {"model": "test-model", "temperature": 0.3, "max_tokens": 64,
                           "messages": [{"role": "system", "content": "system text"},
                                        {"role": "user", "content": "user text"}]}


def test_http_retries_5xx(server_factory):
    srv = server_factory([(503, {}), (500, {}), (200, completion("Decision: IDLE"))])
    assert ChatClient(http_config(srv.url, retries=2)).chat(REQ).text == "Decision: IDLE"
    assert len(srv.requests) == 3


def test_http_gives_up_after_retries(server_factory):
    srv = server_factory([(503, {})])
    with pytest.raises(BackendUnavailable):
        ChatClient(http_config(srv.url, retries=1)).chat(REQ)
    assert len(srv.requests) == 2


def test_http_auth_failure_not_retried(server_factory):
    srv = server_factory([(401, {})])
    with pytest.raises(AuthError):
        ChatClient(http_config(srv.url, retries=3)).chat(REQ)
    assert len(srv.requests) == 1


def test_http_missing_key(monkeypatch):
    monkeypatch.delenv("NOPE_KEY", raising=False)
    cfg = BackendConfig(kind="http", endpoint="http://127.0.0.1:9", auth_env="NOPE_KEY")
    with pytest.raises(AuthError):
        ChatClient(cfg).chat(REQ)


@pytest.mark.parametrize("body", [{"choices": []}, {"nothing": 1}, b"not json",
                                  {"choices": [{"message": {"content": 3}}]}])
def test_http_malformed(server_factory, body):
    srv = server_factory([(200, body)])
    with pytest.raises(MalformedResponse):
        ChatClient(http_config(srv.url)).chat(REQ)


def test_http_timeout_after_retries(monkeypatch):
    monkeypatch.setenv("TEST_API_KEY", "k")
    # a listening socket that never answers
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    sock.listen(8)
    try:
        url = f"http://127.0.0.1:{sock.getsockname()[1]}/v1"
        with pytest.raises(BackendTimeout):
            ChatClient(http_config(url, timeout=0.2, retries=1)).chat(REQ)
    finally:
        sock.close()


def test_http_unreachable(monkeypatch):
    monkeypatch.setenv("TEST_API_KEY", "k")
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(BackendTimeout):
        ChatClient(http_config(f"http://127.0.0.1:{port}/v1", retries=0)).chat(REQ)


def test_http_embeddings(server_factory):
    srv = server_factory([(200, {"data": [{"embedding": [3.0, 4.0, 0.0]}]})])
    enc = HttpEmbeddingEncoder(http_config(srv.url), dim=3)
    v = enc.encode("vehicle|ego_lane")
    assert np.allclose(v, [0.6, 0.8, 0.0])
    assert srv.requests[0]["path"] == "/v1/embeddings"
    assert srv.requests[0]["body"] == {"model": "test-model", "input": "vehicle|ego_lane"}
    assert enc.encoder_id == "http:test-model:3"
    assert np.array_equal(enc.encode("  "), np.zeros(3))
    with pytest.raises(ValueError):
        HttpEmbeddingEncoder(BackendConfig(), 3)


def test_http_embeddings_wrong_dim(server_factory):
    srv = server_factory([(200, {"data": [{"embedding": [1.0, 0.0]}]})])
    with pytest.raises(MalformedResponse):
        HttpEmbeddingEncoder(http_config(srv.url), dim=3).encode("x")


# -- decision grammar -----------------------------------------------------------

def test_parse_examples():
    r, s = parse_decision("Reasoning: red light ahead, must stop. Decision: STOP")
    assert (r, s) == ("red light ahead, must stop.", MetaAction.STOP)
    assert parse_decision("Reasoning: fine\ndecision: ac")[1] is MetaAction.AC
    assert parse_decision("Decision: DC then later Decision: IDLE")[1] is MetaAction.IDLE


@pytest.mark.parametrize("text", ["Decision: SPEED_UP", "I would slow down", ""])
def test_parse_errors_keep_text(text):
    with pytest.raises(DecisionParseError) as err:
        parse_decision(text)
    assert err.value.text == text


reasoning_st = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=80).filter(
    lambda t: t.strip() and "decision" not in t.lower())


@given(reasoning_st, st.sampled_from(list(MetaAction)))
def test_render_parse_round_trip(reasoning, action):
    assert parse_decision(render_decision(reasoning, action)) == (reasoning.strip(), action)
