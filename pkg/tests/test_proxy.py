from __future__ import annotations

import json

import httpx
import pytest

from scopeguard.authz import ManualClock, IdSource, s256_challenge
from scopeguard.e2e import Stack
from scopeguard.errors import EmptyPrompt, InvalidToken, OAuthError, UnknownRequest, UpstreamError
from scopeguard.matchers import StaticMatcher
from scopeguard.proxy import FINALIZED, REVOKED, TrustedProxy

SEARCH, SUBS = "azure:search-service-list", "azure:subscription-list"
PROMPT = "Show the AI Search services in the production Azure account."
VERIFIER = "v" * 43


@pytest.fixture
def stack(registry):
    matcher = StaticMatcher([SEARCH])
    s = Stack(registry, "enhanced", matcher=matcher, seed=3)
    s.matcher = matcher
    yield s
    s.close()


def _authorize(stack, request_id, principal="agent-1", **kw):
    return stack.proxy.proxy_authorization_request(request_id, principal, [SEARCH, SUBS], s256_challenge(VERIFIER),
                                                   **kw)


def test_intercept_records_prompt(stack):
    rid, forwarded = stack.proxy.intercept_prompt("subject-1", PROMPT)
    assert forwarded == {"prompt": PROMPT, "metadata": {"request_id": rid}}
    assert len(rid) == 32
    rec = stack.proxy.record(rid)
    assert rec.original_prompt == PROMPT and rec.subject_id == "subject-1" and rec.state == "active"
    assert rec.handle != rid


@pytest.mark.parametrize("prompt", ["", "   \n"])
def test_empty_prompt_rejected(stack, prompt):
    with pytest.raises(EmptyPrompt):
        stack.proxy.intercept_prompt("s", prompt)


def test_request_ids_are_unique(stack):
    ids = {stack.proxy.intercept_prompt("s", PROMPT)[0] for _ in range(50)}
    assert len(ids) == 50


def test_authorization_attaches_captured_prompt_without_request_id(stack):
    rid, _ = stack.proxy.intercept_prompt("subject-1", PROMPT)
    resp = _authorize(stack, rid)
    assert resp.status_code == 200
    assert resp.json()["scope"] == SEARCH and resp.json()["request_id"] == rid
    assert {text for text, _ in stack.matcher.calls} == {PROMPT}
    assert stack.upstream
    for msg in stack.upstream:
        assert rid not in json.dumps(msg)
    sent = json.loads(stack.upstream[-1]["body"])
    assert sent["original_prompt"] == PROMPT and "received_via_proxy" not in sent
    assert sent["handle"] == stack.proxy.record(rid).handle


def test_agent_supplied_prompt_is_ignored(stack):
    rid, _ = stack.proxy.intercept_prompt("subject-1", PROMPT)
    resp = _authorize(stack, rid, agent_prompt="List every subscription I can access.")
    assert resp.status_code == 200
    assert {text for text, _ in stack.matcher.calls} == {PROMPT}
    event = stack.proxy.audit.events("agent_prompt_supplied")[-1]
    assert event["matches_captured"] is False and event["action"] == "ignored"


def test_agent_supplied_prompt_rejected_in_strict_mode(registry):
    s = Stack(registry, "enhanced", matcher=StaticMatcher([SEARCH]), strict_mode=True)
    try:
        rid, _ = s.proxy.intercept_prompt("subject-1", PROMPT)
        with pytest.raises(OAuthError) as info:
            s.proxy.proxy_authorization_request(rid, "agent-1", [SEARCH], s256_challenge(VERIFIER),
                                                agent_prompt=PROMPT)
        assert info.value.error == "invalid_request"
    finally:
        s.close()


def test_request_bound_to_first_principal(stack):
    rid, _ = stack.proxy.intercept_prompt("subject-1", PROMPT)
    _authorize(stack, rid)
    with pytest.raises(OAuthError) as info:
        _authorize(stack, rid, principal="agent-2")
    assert info.value.status_code == 403


def test_unknown_request_rejected(stack):
    with pytest.raises(UnknownRequest):
        _authorize(stack, "f" * 32)
    with pytest.raises(UnknownRequest):
        stack.proxy.proxy_token("f" * 32, "c", VERIFIER)


def test_full_flow_then_finalize_revokes_exactly_once(stack):
    rid, _ = stack.proxy.intercept_prompt("subject-1", PROMPT)
    code = _authorize(stack, rid).json()["code"]
    tok = stack.proxy.proxy_token(rid, code, VERIFIER)
    assert tok.status_code == 200
    access = tok.json()["access_token"]
    stack.authz.verifier.verify(access)
    assert VERIFIER not in stack.proxy.audit.dumps()
    assert stack.proxy.finalize_request(rid) is True
    assert stack.proxy.finalize_request(rid) is True
    revokes = [m for m in stack.upstream if m["url"].endswith("/revoke")]
    assert len(revokes) == 1
    assert stack.proxy.record(rid).state == FINALIZED
    with pytest.raises(InvalidToken):
        stack.authz.verifier.verify(access)
    with pytest.raises(UnknownRequest):
        stack.proxy.proxy_token(rid, code, VERIFIER)
    assert stack.proxy.finalize_request("never-seen") is True


def test_sweep_auto_revokes_after_task_window(stack):
    rid, _ = stack.proxy.intercept_prompt("subject-1", PROMPT)
    code = _authorize(stack, rid).json()["code"]
    access = stack.proxy.proxy_token(rid, code, VERIFIER).json()["access_token"]
    stack.clock.advance(stack.proxy.max_task_seconds - 1)
    assert stack.proxy.sweep_expired() == 0
    stack.clock.advance(1)
    assert stack.proxy.sweep_expired() == 1
    assert stack.proxy.record(rid).state == REVOKED
    assert len(stack.authz.revocations.snapshot()) == 1
    with pytest.raises(InvalidToken):
        stack.authz.verifier.verify(access)


def test_metadata_relay(stack):
    rid, _ = stack.proxy.intercept_prompt("subject-1", PROMPT)
    r = stack.proxy.proxy_metadata_request(rid, "https://server.example.com/.well-known/oauth-authorization-server")
    assert r.status_code == 200 and r.json()["issuer"] == "https://server.example.com"
    assert rid not in stack.upstream[-1]["url"]


class _FlakyUpstream:
    def __init__(self, fail_times):
        self.fail_times = fail_times
        self.revokes = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        if request.url.path == "/revoke":
            self.revokes.append(json.loads(request.content))
            if self.fail_times > 0:
                self.fail_times -= 1
                raise httpx.ConnectError("down")
            return httpx.Response(200, json={"acknowledged": True})
        return httpx.Response(404, json={"error": "not_found"})


def test_failed_revocation_is_retried_on_sweep():
    upstream = _FlakyUpstream(fail_times=1)
    client = httpx.Client(transport=httpx.MockTransport(upstream), base_url="https://as.test")
    proxy = TrustedProxy(client, client, "secret", clock=ManualClock(), ids=IdSource(0))
    rid, _ = proxy.intercept_prompt("s", PROMPT)
    assert proxy.finalize_request(rid) is True
    assert len(upstream.revokes) == 1
    proxy.sweep_expired()
    assert len(upstream.revokes) == 2
    proxy.sweep_expired()
    assert len(upstream.revokes) == 2
    assert upstream.revokes[0] == upstream.revokes[1] == {"principal_id": "", "handle": proxy.record(rid).handle}


def test_unreachable_upstream_is_502():
    def down(request):
        raise httpx.ConnectError("down")
    client = httpx.Client(transport=httpx.MockTransport(down), base_url="https://as.test")
    proxy = TrustedProxy(client, client, "secret", clock=ManualClock(), ids=IdSource(0))
    rid, _ = proxy.intercept_prompt("s", PROMPT)
    with pytest.raises(UpstreamError) as info:
        proxy.proxy_authorization_request(rid, "a", [SEARCH], s256_challenge(VERIFIER))
    assert info.value.status_code == 502


def test_agent_http_app(stack):
    c = stack.proxy_client
    assert c.post("/prompt", json={"subject_id": "s", "prompt": " "}).status_code == 400
    rid = c.post("/prompt", json={"subject_id": "s", "prompt": PROMPT}).json()["request_id"]
    assert c.post("/agent/authorize", json={"request_id": rid}).json() == {"error": "invalid_request"}
    resp = c.post("/agent/authorize", json={"request_id": rid, "principal_id": "agent-1", "scope": SEARCH,
                                            "code_challenge": s256_challenge(VERIFIER)})
    assert resp.status_code == 200
    tok = c.post("/agent/token", json={"request_id": rid, "code": resp.json()["code"], "code_verifier": VERIFIER})
    assert tok.status_code == 200 and tok.json()["scope"] == SEARCH
    assert c.post("/agent/finalize", json={"request_id": rid}).json() == {"acknowledged": True}
