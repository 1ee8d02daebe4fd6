"""Simulated protected resource server fronting registry tools.

Tools return canned fixture results; access requires a bearer token whose
scope claim covers the tool.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import httpx
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .authz import RevocationList, TokenVerifier, read_body
from .errors import InvalidToken, OAuthError, ToolNotRegistered
from .registry import Registry

logger = logging.getLogger(__name__)

WELL_KNOWN = "/.well-known/oauth-protected-resource"


@dataclass
class ProtectedResource:
    name: str
    resource: str
    authorization_servers: List[str]
    scopes_supported: List[str]
    bearer_methods_supported: List[str] = field(default_factory=lambda: ["header", "body"])
    resource_documentation: Optional[str] = None

    @classmethod
    def example(cls) -> "ProtectedResource":
        return cls(
            name="resource1",
            resource="https://resource.example.com/resource1",
            authorization_servers=["https://as1.example.com", "https://as2.example.net"],
            scopes_supported=["scope1", "scope7", "scope19"],
            resource_documentation="https://resource.example.com/resource1/resource_documentation.html",
        )

    def metadata(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {
            "resource": self.resource,
            "authorization_servers": list(self.authorization_servers),
            "bearer_methods_supported": list(self.bearer_methods_supported),
            "scopes_supported": list(self.scopes_supported),
        }
        if self.resource_documentation:
            doc["resource_documentation"] = self.resource_documentation
        return doc


class ResourceServer:
    def __init__(self, base_url: str, registry: Registry, verifier: TokenVerifier,
                 resources: Sequence[ProtectedResource] = (), fixtures: Optional[Dict[str, Any]] = None):
        self.base_url = base_url.rstrip("/")
        self.registry = registry
        self.verifier = verifier
        self.resources: Dict[str, ProtectedResource] = {}
        for res in resources:
            if res.name in self.resources:
                raise ValueError(f"duplicate resource {res.name!r}")
            self.resources[res.name] = res
        self.fixtures = dict(fixtures or {})
        self.calls: List[Dict[str, Any]] = []
        self._lock = threading.Lock()

    def challenge_header(self) -> str:
        return f'Bearer resource_metadata="{self.base_url}{WELL_KNOWN}"'

    def get_protected_resource_metadata(self, name: Optional[str] = None) -> Dict[str, Any]:
        if name is None:
            if not self.resources:
                raise KeyError("no resources registered")
            name = next(iter(self.resources))
        return self.resources[name].metadata()

    def fixture_result(self, scope: str, args: Dict[str, Any]) -> Dict[str, Any]:
        tool = self.registry.resolve(scope)
        data = self.fixtures.get(scope, {"message": f"{tool.name} completed", "items": []})
        return {"tool": tool.name, "server": tool.server_id, "scope": scope, "args": args, "result": data}

    def access_resource(self, token: Optional[str], scope: str, args: Optional[Dict[str, Any]] = None
                        ) -> Dict[str, Any]:
        """Run a tool: 401 for a bad token, then 404 for an unknown tool, then 403 for scope."""
        if not token:
            raise InvalidToken("missing bearer token")
        claims = self.verifier.verify(token)
        if scope not in self.registry:
            raise OAuthError("not_found", f"unknown tool {scope!r}", 404)
        if scope not in TokenVerifier.scopes(claims):
            raise OAuthError("insufficient_scope", f"token lacks {scope}", 403)
        with self._lock:
            self.calls.append({"sub": claims["sub"], "scope": scope})
        return self.fixture_result(scope, dict(args or {}))


def load_fixtures(path: os.PathLike) -> Dict[str, Any]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("tool fixtures must be a JSON object keyed by scope")
    return data


def _bearer(request: Request, body: Dict[str, Any]) -> Optional[str]:
    header = request.headers.get("authorization")
    if header is not None:
        parts = header.split(None, 1)
        if len(parts) != 2 or parts[0].lower() != "bearer" or not parts[1].strip():
            return None
        return parts[1].strip()
    token = body.get("access_token")
    return token if isinstance(token, str) and token else None


def create_resource_app(rs: ResourceServer) -> FastAPI:
    app = FastAPI(title="resource server")

    def challenge(error: str = "invalid_token") -> JSONResponse:
        return JSONResponse({"error": error}, status_code=401,
                            headers={"WWW-Authenticate": rs.challenge_header()})

    @app.get(WELL_KNOWN)
    async def default_metadata() -> JSONResponse:
        try:
            return JSONResponse(rs.get_protected_resource_metadata())
        except KeyError:
            return JSONResponse({"error": "not_found"}, status_code=404)

    @app.get(WELL_KNOWN + "/{name}")
    async def metadata(name: str) -> JSONResponse:
        if name not in rs.resources:
            return JSONResponse({"error": "not_found"}, status_code=404)
        return JSONResponse(rs.get_protected_resource_metadata(name))

    @app.post("/tools/{scope}")
    async def call_tool(scope: str, request: Request) -> JSONResponse:
        try:
            body = await read_body(request)
        except OAuthError:
            body = {}
        token = _bearer(request, body)
        args = body.get("args", {}) if isinstance(body.get("args", {}), dict) else {}
        try:
            return JSONResponse(rs.access_resource(token, scope, args))
        except InvalidToken:
            return challenge()
        except ToolNotRegistered:
            return JSONResponse({"error": "not_found"}, status_code=404)
        except OAuthError as exc:
            headers = {}
            if exc.status_code == 403:
                headers["WWW-Authenticate"] = f'Bearer error="insufficient_scope", scope="{scope}"'
            return JSONResponse({"error": exc.error}, status_code=exc.status_code, headers=headers)

    app.state.rs = rs
    return app


class RevocationPoller:
    """Mirrors a remote revocation list into a local one (multi-process mode)."""

    def __init__(self, url: str, revocations: RevocationList, period: float = 1.0,
                 client: Optional[httpx.Client] = None):
        self.url = url
        self.revocations = revocations
        self.period = period
        self.client = client or httpx.Client(timeout=5.0)
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def poll_once(self) -> bool:
        try:
            resp = self.client.get(self.url)
            resp.raise_for_status()
            self.revocations.replace(resp.json()["revoked"])
            return True
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            logger.warning("revocation poll failed: %s", exc)
            return False

    def _run(self) -> None:
        while not self._stop.is_set():
            self.poll_once()
            self._stop.wait(self.period)

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, name="revocation-poller", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=self.period + 1)
