"""Trusted proxy between the agent and the authorization server.

It captures the subject's prompt, tags the flow with a request id known only
to the agent and itself, and attaches the captured prompt to authorization
requests. Upstream messages never carry the request id.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple
from urllib.parse import urlsplit

import httpx
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .audit import AuditLog
from .authz import PROXY_SECRET_HEADER, AuthorizationContext, IdSource, SystemClock, read_body
from .errors import EmptyPrompt, OAuthError, UnknownRequest, UpstreamError

logger = logging.getLogger(__name__)

ACTIVE, FINALIZED, REVOKED = "active", "finalized", "revoked"
DEFAULT_MAX_TASK_SECONDS = 15 * 60


@dataclass
class RequestRecord:
    request_id: str
    original_prompt: str
    subject_id: str
    created_at: float
    handle: str
    state: str = ACTIVE
    principal_id: Optional[str] = None


@dataclass(frozen=True)
class Relayed:
    """An upstream response passed back to the agent byte for byte."""

    status_code: int
    content: bytes
    content_type: str = "application/json"

    def json(self) -> Any:
        return json.loads(self.content)


class TrustedProxy:
    def __init__(self, as_public: httpx.Client, as_proxy: httpx.Client, proxy_secret: str,
                 clock=None, ids: Optional[IdSource] = None, audit: Optional[AuditLog] = None,
                 max_task_seconds: float = DEFAULT_MAX_TASK_SECONDS, strict_mode: bool = False):
        self.as_public = as_public
        self.as_proxy = as_proxy
        self.proxy_secret = proxy_secret
        self.clock = clock or SystemClock()
        self.ids = ids or IdSource()
        self.audit = audit or AuditLog(clock=self.clock.now)
        self.max_task_seconds = max_task_seconds
        self.strict_mode = strict_mode
        self._records: Dict[str, RequestRecord] = {}
        self._pending_revocations: List[Tuple[str, str]] = []
        self._lock = threading.Lock()

    # records ---------------------------------------------------------------

    def intercept_prompt(self, subject_id: str, prompt: str) -> Tuple[str, Dict[str, Any]]:
        """Capture ``prompt`` and return (request_id, message forwarded to the agent)."""
        if not prompt or not prompt.strip():
            raise EmptyPrompt("prompt is empty")
        with self._lock:
            request_id = self.ids.hex128()
            while request_id in self._records:
                request_id = self.ids.hex128()
            handle = self.ids.hex128()
            self._records[request_id] = RequestRecord(request_id, prompt, subject_id, self.clock.now(), handle)
        self.audit.write("prompt_captured", request_id=request_id, subject=subject_id, prompt_chars=len(prompt))
        return request_id, {"prompt": prompt, "metadata": {"request_id": request_id}}

    def record(self, request_id: str) -> Optional[RequestRecord]:
        with self._lock:
            return self._records.get(request_id)

    def _active(self, request_id: str) -> RequestRecord:
        self.sweep_expired()
        with self._lock:
            rec = self._records.get(request_id)
            if rec is None or rec.state != ACTIVE:
                raise UnknownRequest(f"request {request_id!r} is not active")
            return rec

    # upstream plumbing -----------------------------------------------------

    def _send(self, client: httpx.Client, method: str, path: str, **kwargs: Any) -> httpx.Response:
        try:
            return client.request(method, path, **kwargs)
        except httpx.HTTPError as exc:
            raise UpstreamError(502, f"authorization server unreachable: {exc}") from None

    @staticmethod
    def _relay(resp: httpx.Response) -> Relayed:
        return Relayed(resp.status_code, resp.content, resp.headers.get("content-type", "application/json"))

    # brokered calls --------------------------------------------------------

    def proxy_metadata_request(self, request_id: str, target_url: str) -> Relayed:
        """Fetch AS metadata on the agent's behalf; the request id stays here."""
        self._active(request_id)
        parts = urlsplit(target_url)
        path = parts.path + (f"?{parts.query}" if parts.query else "")
        resp = self._send(self.as_public, "GET", path or "/.well-known/oauth-authorization-server")
        self.audit.write("metadata_relayed", request_id=request_id, path=path, status=resp.status_code)
        if resp.status_code >= 500:
            raise UpstreamError(resp.status_code, "metadata request failed upstream")
        return self._relay(resp)

    def proxy_authorization_request(self, request_id: str, principal_id: str, scopes: Sequence[str],
                                    code_challenge: str, method: str = "S256",
                                    agent_prompt: Optional[str] = None) -> Relayed:
        """Forward an authorization request with the captured prompt attached."""
        rec = self._active(request_id)
        if agent_prompt is not None:
            tampered = agent_prompt != rec.original_prompt
            self.audit.write("agent_prompt_supplied", request_id=request_id, principal=principal_id,
                             matches_captured=not tampered, action="rejected" if self.strict_mode else "ignored")
            if self.strict_mode:
                raise OAuthError("invalid_request", "agents may not supply the prompt")
        with self._lock:
            if rec.principal_id is None:
                rec.principal_id = principal_id
            elif rec.principal_id != principal_id:
                raise OAuthError("unauthorized_client", "request bound to another principal", 403)
        ctx = AuthorizationContext(principal_id=principal_id, requested_scopes=tuple(scopes),
                                   code_challenge=code_challenge, original_prompt=rec.original_prompt,
                                   challenge_method=method, handle=rec.handle)
        body = ctx.to_dict()
        del body["received_via_proxy"]
        resp = self._send(self.as_proxy, "POST", "/authorize", json=body,
                          headers={PROXY_SECRET_HEADER: self.proxy_secret})
        if resp.status_code >= 500:
            raise UpstreamError(resp.status_code, "authorization failed upstream")
        try:
            payload = resp.json()
        except ValueError:
            raise UpstreamError(502, "authorization server returned non-JSON") from None
        payload["request_id"] = request_id
        self.audit.write("authorization_relayed", request_id=request_id, principal=principal_id,
                         requested=list(ctx.requested_scopes), status=resp.status_code,
                         granted=payload.get("scope", "").split() if resp.status_code == 200 else [])
        return Relayed(resp.status_code, json.dumps(payload).encode("utf-8"))

    def proxy_token(self, request_id: str, code: str, code_verifier: str) -> Relayed:
        """Relay the code exchange opaquely; the verifier is never logged."""
        self._active(request_id)
        resp = self._send(self.as_public, "POST", "/token",
                          data={"grant_type": "authorization_code", "code": code, "code_verifier": code_verifier})
        self.audit.write("token_relayed", request_id=request_id, status=resp.status_code)
        if resp.status_code >= 500:
            raise UpstreamError(resp.status_code, "token exchange failed upstream")
        return self._relay(resp)

    # completion ------------------------------------------------------------

    def _revoke_upstream(self, principal_id: str, handle: str) -> bool:
        try:
            resp = self._send(self.as_proxy, "POST", "/revoke", json={"principal_id": principal_id, "handle": handle},
                              headers={PROXY_SECRET_HEADER: self.proxy_secret})
            ok = resp.status_code == 200
        except UpstreamError:
            ok = False
        if not ok:
            logger.error("revocation of handle %s failed; will retry", handle)
            with self._lock:
                self._pending_revocations.append((principal_id, handle))
        return ok

    def _close(self, rec: RequestRecord, state: str) -> bool:
        with self._lock:
            if rec.state != ACTIVE:
                return False
            rec.state = state
        self._revoke_upstream(rec.principal_id or "", rec.handle)
        self.audit.write("request_closed", request_id=rec.request_id, state=state)
        return True

    def finalize_request(self, request_id: str) -> bool:
        """End the flow and revoke what it was granted. Always acknowledges."""
        rec = self.record(request_id)
        if rec is not None:
            self._close(rec, FINALIZED)
        return True

    def sweep_expired(self) -> int:
        """Auto-revoke records older than the task window; retry failed revocations."""
        now = self.clock.now()
        with self._lock:
            stale = [r for r in self._records.values()
                     if r.state == ACTIVE and now - r.created_at >= self.max_task_seconds]
            pending, self._pending_revocations = self._pending_revocations, []
        closed = sum(self._close(r, REVOKED) for r in stale)
        for principal_id, handle in pending:
            self._revoke_upstream(principal_id, handle)
        return closed


# ---------------------------------------------------------------------------
# HTTP
# ---------------------------------------------------------------------------


def _require_str(body: Dict[str, Any], key: str) -> str:
    value = body.get(key)
    if not isinstance(value, str) or not value:
        raise OAuthError("invalid_request", f"{key} is required")
    return value


def create_proxy_agent_app(proxy: TrustedProxy) -> FastAPI:
    app = FastAPI(title="trusted proxy")

    @app.exception_handler(OAuthError)
    async def _oauth_error(request: Request, exc: OAuthError) -> JSONResponse:
        return JSONResponse({"error": exc.error}, status_code=exc.status_code)

    @app.exception_handler(EmptyPrompt)
    async def _empty(request: Request, exc: EmptyPrompt) -> JSONResponse:
        return JSONResponse({"error": "invalid_request"}, status_code=400)

    def relay(r: Relayed) -> Response:
        return Response(content=r.content, status_code=r.status_code, media_type=r.content_type)

    @app.post("/prompt")
    async def prompt(request: Request) -> JSONResponse:
        body = await read_body(request)
        request_id, forwarded = proxy.intercept_prompt(str(body.get("subject_id", "")), str(body.get("prompt", "")))
        return JSONResponse({"request_id": request_id, "forwarded": forwarded})

    @app.post("/agent/as-metadata")
    async def as_metadata(request: Request) -> Response:
        body = await read_body(request)
        return relay(proxy.proxy_metadata_request(_require_str(body, "request_id"), str(body.get("url", ""))))

    @app.post("/agent/authorize")
    async def authorize(request: Request) -> Response:
        body = await read_body(request)
        scope = body.get("scope", "")
        scopes = scope.split() if isinstance(scope, str) else [str(s) for s in scope]
        agent_prompt = body.get("prompt", body.get("original_prompt"))
        return relay(proxy.proxy_authorization_request(
            _require_str(body, "request_id"), _require_str(body, "principal_id"), scopes,
            _require_str(body, "code_challenge"), str(body.get("code_challenge_method", "S256")),
            agent_prompt=None if agent_prompt is None else str(agent_prompt)))

    @app.post("/agent/token")
    async def token(request: Request) -> Response:
        body = await read_body(request)
        return relay(proxy.proxy_token(_require_str(body, "request_id"), _require_str(body, "code"),
                                       _require_str(body, "code_verifier")))

    @app.post("/agent/finalize")
    async def finalize(request: Request) -> JSONResponse:
        body = await read_body(request)
        proxy.finalize_request(str(body.get("request_id", "")))
        return JSONResponse({"acknowledged": True})

    app.state.proxy = proxy
    return app
