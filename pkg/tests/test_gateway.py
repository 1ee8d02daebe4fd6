from __future__ import annotations

import hashlib
import json

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from scopeguard.errors import CassetteMiss, EmptyCompletion, GatewayError, GatewayUnavailable
from scopeguard.gateway import (CassetteGateway, ChatRequest, MockGateway, OpenAIGateway, RecordingGateway,
                                TokenBucket, content_key, hash_embedding)
from scopeguard.matchers import cosine_similarity


def test_content_key_is_length_prefixed_sha256():
    expected = hashlib.sha256(b"\0" * 7 + b"\x01a" + b"\0" * 7 + b"\x02bc").hexdigest()
    assert content_key("a", "bc") == expected
    assert content_key("ab", "c") != content_key("a", "bc")


def test_mock_fixture_lookup_by_content_hash():
    table = {content_key("P_sys", "task A"): "fixture text"}
    gw = MockGateway(fixtures=table)
    assert gw.chat_complete(ChatRequest("P_sys", "task A")) == "fixture text"
    with pytest.raises(GatewayUnavailable):
        gw.chat_complete(ChatRequest("P_sys", "task B"))
    assert len(gw.chat_calls) == 2


def test_mock_rejects_empty():
    gw = MockGateway(responder=lambda req: "  ")
    with pytest.raises(ValueError):
        gw.chat_complete(ChatRequest("", "x"))
    with pytest.raises(EmptyCompletion):
        gw.chat_complete(ChatRequest("s", "x"))
    with pytest.raises(ValueError):
        gw.embed([""])


def test_mock_embedding_dissimilar_inputs():
    gw = MockGateway()
    x, y = gw.embed(["x", "y"])
    assert len(x) == len(y) == 256
    assert cosine_similarity(x, y) < 0.5


@settings(max_examples=40, deadline=None)
@given(st.text(alphabet="abcdefghij XYZ0189,-s", min_size=1, max_size=40).filter(lambda s: s.strip()))
def test_hash_embedding_matches_oracle(text):
    got = hash_embedding(text)
    want = oracles.embed(text)
    assert np.allclose(got, want, atol=1e-12)
    assert abs(float(np.linalg.norm(got)) - 1.0) < 1e-12


def test_hash_embedding_is_deterministic_and_seeded():
    assert np.array_equal(hash_embedding("list search services"), hash_embedding("list search services"))
    assert not np.array_equal(hash_embedding("a", seed=0), hash_embedding("a", seed=1))
    # plural folding: "services" and "service" embed identically
    assert np.array_equal(hash_embedding("services"), hash_embedding("service"))


def _gateway(handler, **kw):
    sleeps = []
    gw = OpenAIGateway("https://lm.example/v1", "sk-test", transport=httpx.MockTransport(handler),
                       sleep=sleeps.append, **kw)
    return gw, sleeps


def test_openai_chat_body_and_parse():
    seen = []

    def handler(request):
        seen.append((request.url.path, request.headers["authorization"], json.loads(request.content)))
        return httpx.Response(200, json={"choices": [{"message": {"content": '{"appropriate": true}'}}]})

    gw, _ = _gateway(handler)
    text = gw.chat_complete(ChatRequest("sys", "user", structured_flag=True))
    assert text == '{"appropriate": true}'
    path, auth, body = seen[0]
    assert path == "/v1/chat/completions" and auth == "Bearer sk-test"
    assert body["temperature"] == 0.0
    assert body["messages"] == [{"role": "system", "content": "sys"}, {"role": "user", "content": "user"}]
    schema = body["response_format"]["json_schema"]["schema"]
    assert schema["properties"]["appropriate"]["type"] == "boolean"


def test_openai_plain_chat_has_no_response_format():
    gw, _ = _gateway(lambda r: httpx.Response(200, json={}))
    assert "response_format" not in gw.chat_body(ChatRequest("s", "u"))


def test_openai_retries_then_succeeds():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(503 if len(calls) == 1 else 429)
        return httpx.Response(200, json={"data": [{"index": 1, "embedding": [0.0, 1.0]},
                                                  {"index": 0, "embedding": [1.0, 0.0]}]})

    gw, sleeps = _gateway(handler, backoff=0.5)
    a, b = gw.embed(["a", "b"])
    assert a.values == (1.0, 0.0) and b.values == (0.0, 1.0)
    assert a.model_id == "text-embedding-3-large"
    assert sleeps == [0.5, 1.0]


def test_openai_gives_up_after_retries():
    gw, _ = _gateway(lambda r: httpx.Response(500), retries=2)
    with pytest.raises(GatewayUnavailable):
        gw.chat_complete(ChatRequest("s", "u"))


def test_openai_transport_errors_retry():
    def handler(request):
        raise httpx.ConnectError("boom", request=request)

    gw, sleeps = _gateway(handler, retries=3)
    with pytest.raises(GatewayUnavailable):
        gw.embed(["a"])
    assert len(sleeps) == 2


def test_openai_client_errors_do_not_retry():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad")

    gw, _ = _gateway(handler)
    with pytest.raises(GatewayError):
        gw.chat_complete(ChatRequest("s", "u"))
    assert len(calls) == 1


def test_openai_empty_content():
    gw, _ = _gateway(lambda r: httpx.Response(200, json={"choices": [{"message": {"content": ""}}]}))
    with pytest.raises(EmptyCompletion):
        gw.chat_complete(ChatRequest("s", "u"))


def test_from_env():
    with pytest.raises(GatewayUnavailable):
        OpenAIGateway.from_env({})
    gw = OpenAIGateway.from_env({"LM_API_BASE": "https://x/v1/", "LM_API_KEY": "k", "LM_CHAT_MODEL": "m"})
    assert gw.api_base == "https://x/v1" and gw.chat_model == "m"


def test_token_bucket_waits():
    now = [0.0]
    sleeps = []

    def sleep(s):
        sleeps.append(s)
        now[0] += s

    bucket = TokenBucket(2.0, capacity=1.0, clock=lambda: now[0], sleep=sleep)
    bucket.acquire()
    bucket.acquire()
    assert sleeps == [pytest.approx(0.5)]
    with pytest.raises(ValueError):
        TokenBucket(0)


def test_record_and_replay(tmp_path):
    path = tmp_path / "cassette.jsonl"
    inner = MockGateway(responder=lambda req: f"echo {req.user_prompt}")
    rec = RecordingGateway(inner, path)
    req = ChatRequest("s", "hello")
    text = rec.chat_complete(req)
    vecs = rec.embed(["alpha", "beta"])
    replay = CassetteGateway(path)
    assert replay.chat_complete(req) == text
    assert replay.embed(["beta", "alpha"]) == [vecs[1], vecs[0]]
    assert replay.embed_model == inner.embed_model
    with pytest.raises(CassetteMiss):
        replay.chat_complete(ChatRequest("s", "other"))
    with pytest.raises(CassetteMiss):
        replay.embed(["gamma"])
