"""Authorization server with semantic inspection of proxied requests.

The core (:class:`AuthorizationServer`) is transport-free; :func:`create_public_app`
and :func:`create_proxy_app` expose it over two FastAPI listeners. Only the
proxy listener accepts inspected authorization requests.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import logging
import math
import random
import secrets
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union
from urllib.parse import parse_qsl

import jwt
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .audit import AuditLog
from .domain import TaskSample
from .errors import InvalidGrant, InvalidToken, OAuthError, UnsupportedChallengeMethod
from .matchers import match_scope_set
from .registry import Registry

logger = logging.getLogger(__name__)

PROXY_SECRET_HEADER = "X-Proxy-Secret"
MAX_GRANT_TTL = 60
TOKEN_ALGORITHM = "HS256"


# ---------------------------------------------------------------------------
# clocks and ids
# ---------------------------------------------------------------------------


class SystemClock:
    def now(self) -> float:
        return time.time()


class ManualClock:
    """A clock that only moves when told to."""

    def __init__(self, start: float = 1_750_000_000.0):
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> float:
        with self._lock:
            self._now += seconds
            return self._now


class IdSource:
    """High-entropy identifiers; seeded instances are reproducible for tests."""

    def __init__(self, seed: Optional[Union[int, str]] = None, label: str = "ids"):
        self._rng = None if seed is None else random.Random(f"{label}:{seed}")
        self._lock = threading.Lock()

    def token(self, nbytes: int = 32) -> str:
        if self._rng is None:
            return secrets.token_urlsafe(nbytes)
        with self._lock:
            raw = self._rng.getrandbits(nbytes * 8).to_bytes(nbytes, "big")
        return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")

    def hex128(self) -> str:
        if self._rng is None:
            return secrets.token_hex(16)
        with self._lock:
            return f"{self._rng.getrandbits(128):032x}"


# ---------------------------------------------------------------------------
# PKCE
# ---------------------------------------------------------------------------


def s256_challenge(code_verifier: str) -> str:
    digest = hashlib.sha256(code_verifier.encode("ascii")).digest()
    return base64.urlsafe_b64encode(digest).rstrip(b"=").decode("ascii")


def verify_pkce(code_verifier: str, code_challenge: str, method: str = "S256") -> bool:
    """Check a verifier against its S256 challenge in constant time."""
    if method != "S256":
        raise UnsupportedChallengeMethod(f"code_challenge_method {method!r} is not supported")
    try:
        expected = s256_challenge(code_verifier)
    except UnicodeEncodeError:
        return False
    return hmac.compare_digest(expected.encode("ascii"), code_challenge.encode("utf-8"))


def new_code_verifier(ids: Optional[IdSource] = None) -> str:
    return (ids or IdSource()).token(32)


# ---------------------------------------------------------------------------
# configuration and metadata
# ---------------------------------------------------------------------------


@dataclass
class AuthzConfig:
    issuer: str = "https://server.example.com"
    authorization_endpoint: Optional[str] = None
    token_endpoint: Optional[str] = None
    token_endpoint_auth_methods_supported: Optional[List[str]] = field(
        default_factory=lambda: ["client_secret_basic", "private_key_jwt"])
    token_endpoint_auth_signing_alg_values_supported: Optional[List[str]] = field(
        default_factory=lambda: ["RS256", "ES256"])
    userinfo_endpoint: Optional[str] = "https://server.example.com/userinfo"
    jwks_uri: Optional[str] = "https://server.example.com/jwks.json"
    registration_endpoint: Optional[str] = "https://server.example.com/register"
    scopes_supported: List[str] = field(default_factory=lambda: ["scope1", "scope7", "scope19"])
    response_types_supported: List[str] = field(default_factory=lambda: ["code", "code token"])
    service_documentation: Optional[str] = "http://server.example.com/service_documentation.html"
    ui_locales_supported: Optional[List[str]] = field(
        default_factory=lambda: ["en-US", "en-GB", "en-CA", "fr-FR", "fr-CA"])
    code_challenge_methods_supported: List[str] = field(default_factory=lambda: ["S256"])

    signing_key: str = "dev-signing-key-change-me-0123456789"
    proxy_secret: str = "dev-proxy-secret"
    grant_ttl: int = MAX_GRANT_TTL
    token_ttl: int = 300
    strict_mode: bool = False
    mode: str = "enhanced"
    allowed_scopes: Optional[List[str]] = None

    _METADATA_KEYS = (
        "issuer", "authorization_endpoint", "token_endpoint", "token_endpoint_auth_methods_supported",
        "token_endpoint_auth_signing_alg_values_supported", "userinfo_endpoint", "jwks_uri",
        "registration_endpoint", "scopes_supported", "response_types_supported", "service_documentation",
        "ui_locales_supported", "code_challenge_methods_supported",
    )

    def __post_init__(self) -> None:
        if not 0 < self.grant_ttl <= MAX_GRANT_TTL:
            raise ValueError(f"grant_ttl must be in (0, {MAX_GRANT_TTL}]")
        if self.token_ttl <= 0:
            raise ValueError("token_ttl must be positive")
        if self.mode not in ("enhanced", "baseline"):
            raise ValueError(f"mode must be 'enhanced' or 'baseline', got {self.mode!r}")
        if self.code_challenge_methods_supported != ["S256"]:
            raise ValueError("only S256 is supported")
        if self.authorization_endpoint is None:
            self.authorization_endpoint = self.issuer.rstrip("/") + "/authorize"
        if self.token_endpoint is None:
            self.token_endpoint = self.issuer.rstrip("/") + "/token"

    @classmethod
    def example(cls, **overrides: Any) -> "AuthzConfig":
        """The fixture configuration; its metadata is the reference example document."""
        return cls(**overrides)

    @classmethod
    def minimal(cls, issuer: str, scopes: Sequence[str] = (), **overrides: Any) -> "AuthzConfig":
        """Only the fields a client needs; optional descriptive fields are dropped."""
        return cls(issuer=issuer, token_endpoint_auth_methods_supported=None,
                   token_endpoint_auth_signing_alg_values_supported=None, userinfo_endpoint=None,
                   jwks_uri=None, registration_endpoint=None, scopes_supported=list(scopes),
                   response_types_supported=["code"], service_documentation=None,
                   ui_locales_supported=None, **overrides)

    def metadata(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {}
        for key in self._METADATA_KEYS:
            value = getattr(self, key)
            if value is None or (key == "scopes_supported" and not value):
                continue
            doc[key] = list(value) if isinstance(value, list) else value
        return doc

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AuthzConfig":
        known = {f for f in cls.__dataclass_fields__ if not f.startswith("_")}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown authz config keys: {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuthorizationContext:
    principal_id: str
    requested_scopes: Tuple[str, ...]
    code_challenge: str
    original_prompt: str
    challenge_method: str = "S256"
    received_via_proxy: bool = True
    handle: str = ""

    def __post_init__(self) -> None:
        scopes = self.requested_scopes
        if isinstance(scopes, str):
            scopes = scopes.split()
        object.__setattr__(self, "requested_scopes", tuple(dict.fromkeys(scopes)))

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["requested_scopes"] = list(self.requested_scopes)
        return d

    @classmethod
    def from_dict(cls, data: Dict[str, Any], received_via_proxy: bool = True) -> "AuthorizationContext":
        try:
            return cls(
                principal_id=str(data["principal_id"]),
                requested_scopes=tuple(data["requested_scopes"]) if isinstance(data["requested_scopes"], list)
                else data["requested_scopes"],
                code_challenge=str(data["code_challenge"]),
                original_prompt=str(data.get("original_prompt", "")),
                challenge_method=str(data.get("challenge_method", "S256")),
                received_via_proxy=received_via_proxy,
                handle=str(data.get("handle", "")),
            )
        except KeyError as exc:
            raise OAuthError("invalid_request", f"missing field {exc.args[0]}") from None


@dataclass
class AuthorizationGrant:
    code: str
    granted_scopes: FrozenSet[str]
    principal_id: str
    code_challenge: str
    expires_at: float
    handle: str
    consumed: bool = False
    challenge_method: str = "S256"


@dataclass(frozen=True)
class AccessToken:
    token: str
    scopes: FrozenSet[str]
    subject: str
    expires_at: int
    handle: str
    jti: str

    def response(self, now: float) -> Dict[str, Any]:
        return {
            "access_token": self.token,
            "token_type": "Bearer",
            "expires_in": max(0, int(self.expires_at - now)),
            "scope": " ".join(sorted(self.scopes)),
        }


@dataclass(frozen=True)
class Denial:
    """A refusal. ``reason`` is a fixed code; matcher detail stays in the audit log."""

    error: str
    reason: str

    @property
    def status_code(self) -> int:
        return 403 if self.error in ("access_denied", "unauthorized_client") else 400

    def body(self) -> Dict[str, str]:
        return {"error": self.error, "error_description": self.reason}


# ---------------------------------------------------------------------------
# revocation and token checking
# ---------------------------------------------------------------------------


class RevocationList:
    def __init__(self, revoked: Iterable[str] = ()):
        self._revoked = set(revoked)
        self._lock = threading.Lock()

    def add(self, jti: str) -> None:
        with self._lock:
            self._revoked.add(jti)

    def replace(self, jtis: Iterable[str]) -> None:
        with self._lock:
            self._revoked = set(jtis)

    def __contains__(self, jti: object) -> bool:
        with self._lock:
            return jti in self._revoked

    def snapshot(self) -> List[str]:
        with self._lock:
            return sorted(self._revoked)


class TokenVerifier:
    """Validates signature, expiry against the injected clock, and revocation."""

    def __init__(self, signing_key: str, clock, revocations: RevocationList):
        self.signing_key = signing_key
        self.clock = clock
        self.revocations = revocations

    def verify(self, token: str) -> Dict[str, Any]:
        try:
            claims = jwt.decode(token, self.signing_key, algorithms=[TOKEN_ALGORITHM],
                                options={"verify_exp": False, "require": ["sub", "scope", "exp", "jti"]})
        except jwt.PyJWTError as exc:
            raise InvalidToken(f"malformed or unsigned token: {exc}") from None
        if self.clock.now() >= claims["exp"]:
            raise InvalidToken("token expired")
        if claims["jti"] in self.revocations:
            raise InvalidToken("token revoked")
        return claims

    @staticmethod
    def scopes(claims: Dict[str, Any]) -> FrozenSet[str]:
        return frozenset(str(claims.get("scope", "")).split())


# ---------------------------------------------------------------------------
# core server
# ---------------------------------------------------------------------------


class AuthorizationServer:
    def __init__(self, config: AuthzConfig, registry: Registry, matcher=None, clock=None,
                 ids: Optional[IdSource] = None, audit: Optional[AuditLog] = None,
                 revocations: Optional[RevocationList] = None, max_workers: int = 1):
        if config.mode == "enhanced" and matcher is None:
            raise ValueError("enhanced mode needs a matcher")
        self.config = config
        self.registry = registry
        self.matcher = matcher
        self.clock = clock or SystemClock()
        self.ids = ids or IdSource()
        self.audit = audit or AuditLog(clock=self.clock.now)
        self.revocations = revocations or RevocationList()
        self.verifier = TokenVerifier(config.signing_key, self.clock, self.revocations)
        self.max_workers = max_workers
        self._grants: Dict[str, AuthorizationGrant] = {}
        self._handle_tokens: Dict[str, List[str]] = {}
        self._handle_owner: Dict[str, str] = {}
        self._grant_tokens: Dict[str, str] = {}
        self._lock = threading.Lock()

    # metadata --------------------------------------------------------------

    def get_authorization_server_metadata(self) -> Dict[str, Any]:
        return self.config.metadata()

    # authorization ---------------------------------------------------------

    def _precheck(self, ctx: AuthorizationContext) -> Optional[Denial]:
        if not ctx.received_via_proxy:
            return Denial("unauthorized_client", "unauthorized_channel")
        if ctx.challenge_method != "S256":
            return Denial("invalid_request", "unsupported_challenge_method")
        if not ctx.code_challenge:
            return Denial("invalid_request", "missing_code_challenge")
        if not ctx.original_prompt.strip():
            return Denial("invalid_request", "empty_prompt")
        if not ctx.requested_scopes:
            return Denial("invalid_scope", "no_scopes_requested")
        if any(s not in self.registry for s in ctx.requested_scopes):
            return Denial("invalid_scope", "unknown_scope")
        return None

    def handle_authorization_request(self, ctx: AuthorizationContext) -> Union[AuthorizationGrant, Denial]:
        """Inspect a proxied request and grant only the scopes the task needs."""
        denial = self._precheck(ctx)
        if denial is not None:
            self.audit.write("inspection", principal=ctx.principal_id, handle=ctx.handle,
                             requested=list(ctx.requested_scopes), granted=[], verdicts=[],
                             outcome=denial.reason)
            return denial
        task = TaskSample.live(ctx.original_prompt, sample_id=ctx.handle or "live")
        tools = [self.registry.resolve(s) for s in ctx.requested_scopes]
        result = match_scope_set(task, tools, self.matcher, self.registry, max_workers=self.max_workers)
        granted = result.granted_scopes
        if self.config.strict_mode and not result.fully_granted:
            granted = frozenset()
        outcome = "granted" if granted else "no_scope_matches_task"
        self.audit.write("inspection", principal=ctx.principal_id, handle=ctx.handle,
                         requested=list(ctx.requested_scopes), granted=sorted(granted),
                         verdicts=result.verdicts(), strict=self.config.strict_mode, outcome=outcome)
        if not granted:
            return Denial("access_denied", "no_scope_matches_task")
        return self._issue_grant(ctx.principal_id, granted, ctx.code_challenge, ctx.handle)

    def authorize_static(self, principal_id: str, scopes: Sequence[str], code_challenge: str,
                         challenge_method: str = "S256") -> Union[AuthorizationGrant, Denial]:
        """Conventional policy: grant exactly what was asked if it is in the allowed set."""
        scopes = tuple(dict.fromkeys(scopes))
        allowed = (set(self.config.allowed_scopes) if self.config.allowed_scopes is not None
                   else {t.scope for t in self.registry})
        denial = None
        if challenge_method != "S256":
            denial = Denial("invalid_request", "unsupported_challenge_method")
        elif not code_challenge:
            denial = Denial("invalid_request", "missing_code_challenge")
        elif not scopes or any(s not in allowed for s in scopes):
            denial = Denial("invalid_scope", "scope_not_allowed")
        self.audit.write("static_authorization", principal=principal_id, requested=list(scopes),
                         granted=[] if denial else sorted(scopes),
                         outcome=denial.reason if denial else "granted")
        if denial is not None:
            return denial
        return self._issue_grant(principal_id, frozenset(scopes), code_challenge, "")

    def _issue_grant(self, principal_id: str, scopes: FrozenSet[str], challenge: str,
                     handle: str) -> AuthorizationGrant:
        handle = handle or self.ids.hex128()
        grant = AuthorizationGrant(
            code=self.ids.token(32), granted_scopes=frozenset(scopes), principal_id=principal_id,
            code_challenge=challenge, expires_at=self.clock.now() + self.config.grant_ttl, handle=handle)
        with self._lock:
            self._grants[grant.code] = grant
            self._handle_owner.setdefault(handle, principal_id)
        return grant

    # token exchange --------------------------------------------------------

    def exchange_code(self, code: str, code_verifier: str) -> AccessToken:
        """Trade a code for a token. Every failure surfaces as ``invalid_grant``."""
        with self._lock:
            grant = self._grants.get(code)
            reason = None
            if grant is None:
                reason = "unknown_code"
            elif grant.consumed:
                reason = "replayed_code"
            elif self.clock.now() >= grant.expires_at:
                reason = "expired_code"
            elif not verify_pkce(code_verifier, grant.code_challenge, grant.challenge_method):
                reason = "pkce_mismatch"
            if grant is not None:
                grant.consumed = True
            if reason is not None:
                if reason == "replayed_code" and code in self._grant_tokens:
                    # a replayed code suggests interception; kill what it produced
                    self.revocations.add(self._grant_tokens[code])
                self.audit.write("token_denied", reason=reason,
                                 principal=grant.principal_id if grant else None,
                                 handle=grant.handle if grant else None)
                raise InvalidGrant(reason)
            token = self._mint(grant)
            self._grant_tokens[code] = token.jti
            self._handle_tokens.setdefault(grant.handle, []).append(token.jti)
        self.audit.write("token_issued", principal=token.subject, handle=token.handle,
                         scopes=sorted(token.scopes), jti=token.jti, expires_at=token.expires_at)
        return token

    def _mint(self, grant: AuthorizationGrant) -> AccessToken:
        exp = int(math.floor(self.clock.now())) + self.config.token_ttl
        jti = self.ids.token(16)
        claims = {"sub": grant.principal_id, "scope": " ".join(sorted(grant.granted_scopes)),
                  "exp": exp, "jti": jti}
        encoded = jwt.encode(claims, self.config.signing_key, algorithm=TOKEN_ALGORITHM)
        return AccessToken(encoded, grant.granted_scopes, grant.principal_id, exp, grant.handle, jti)

    # revocation ------------------------------------------------------------

    def revoke(self, principal_id: str, handle: str) -> bool:
        """Invalidate every grant and token tied to ``handle``. Always acknowledges."""
        with self._lock:
            owner = self._handle_owner.get(handle)
            if owner is None or owner != principal_id:
                self.audit.write("revoke_noop", principal=principal_id, handle=handle)
                return True
            jtis = list(self._handle_tokens.get(handle, ()))
            for grant in self._grants.values():
                if grant.handle == handle:
                    grant.consumed = True
        for jti in jtis:
            self.revocations.add(jti)
        self.audit.write("revoked", principal=principal_id, handle=handle, tokens=len(jtis))
        return True

    def revoke_token(self, token: str) -> bool:
        """Token-based revocation; an invalid token is acknowledged and ignored."""
        try:
            claims = self.verifier.verify(token)
        except InvalidToken:
            return True
        self.revocations.add(claims["jti"])
        self.audit.write("revoked_token", principal=claims["sub"], jti=claims["jti"])
        return True

    def handle_of(self, jti: str) -> Optional[str]:
        with self._lock:
            for handle, jtis in self._handle_tokens.items():
                if jti in jtis:
                    return handle
        return None


# ---------------------------------------------------------------------------
# HTTP
# ---------------------------------------------------------------------------


async def read_body(request: Request) -> Dict[str, Any]:
    """Parse a JSON or form-encoded body into a dict."""
    raw = await request.body()
    if not raw:
        return {}
    ctype = request.headers.get("content-type", "")
    if "application/x-www-form-urlencoded" in ctype:
        return dict(parse_qsl(raw.decode("utf-8"), keep_blank_values=True))
    try:
        data = json.loads(raw)
    except ValueError:
        raise OAuthError("invalid_request", "body is not valid JSON") from None
    if not isinstance(data, dict):
        raise OAuthError("invalid_request", "body must be a JSON object")
    return data


def oauth_error_response(exc: OAuthError) -> JSONResponse:
    headers = {"Cache-Control": "no-store"}
    return JSONResponse({"error": exc.error}, status_code=exc.status_code, headers=headers)


def _install_error_handler(app: FastAPI) -> None:
    @app.exception_handler(OAuthError)
    async def _oauth_error(request: Request, exc: OAuthError) -> JSONResponse:
        return oauth_error_response(exc)


def _grant_body(server: AuthorizationServer, grant: AuthorizationGrant) -> Dict[str, Any]:
    return {"code": grant.code, "scope": " ".join(sorted(grant.granted_scopes)),
            "expires_in": int(grant.expires_at - server.clock.now())}


def _scopes_field(value: Any) -> List[str]:
    if isinstance(value, str):
        return value.split()
    if isinstance(value, list) and all(isinstance(s, str) for s in value):
        return value
    raise OAuthError("invalid_request", "scope must be a string or list of strings")


def _add_public_routes(app: FastAPI, server: AuthorizationServer, prefix: str, name: str) -> None:
    well_known = "/.well-known/oauth-authorization-server" + (f"/{name}" if name else "")

    @app.get(well_known)
    async def metadata() -> JSONResponse:
        return JSONResponse(server.get_authorization_server_metadata())

    @app.post(prefix + "/authorize")
    async def authorize(request: Request) -> JSONResponse:
        if server.config.mode != "baseline":
            server.audit.write("direct_authorize_rejected", client=request.client.host if request.client else None)
            d = Denial("unauthorized_client", "unauthorized_channel")
            return JSONResponse(d.body(), status_code=d.status_code)
        body = await read_body(request)
        result = server.authorize_static(
            str(body.get("principal_id") or body.get("client_id") or ""),
            _scopes_field(body.get("scope", body.get("requested_scopes", ""))),
            str(body.get("code_challenge", "")),
            str(body.get("code_challenge_method", body.get("challenge_method", "S256"))),
        )
        if isinstance(result, Denial):
            return JSONResponse(result.body(), status_code=result.status_code)
        return JSONResponse(_grant_body(server, result))

    @app.post(prefix + "/token")
    async def token(request: Request) -> JSONResponse:
        body = await read_body(request)
        if body.get("grant_type", "authorization_code") != "authorization_code":
            raise OAuthError("unsupported_grant_type")
        code, verifier = body.get("code"), body.get("code_verifier")
        if not isinstance(code, str) or not isinstance(verifier, str):
            raise OAuthError("invalid_request", "code and code_verifier are required")
        tok = server.exchange_code(code, verifier)
        return JSONResponse(tok.response(server.clock.now()), headers={"Cache-Control": "no-store"})

    @app.post(prefix + "/revoke")
    async def revoke(request: Request) -> JSONResponse:
        body = await read_body(request)
        server.revoke_token(str(body.get("token", "")))
        return JSONResponse({})

    @app.get(prefix + "/revocations")
    async def revocations() -> JSONResponse:
        return JSONResponse({"revoked": server.revocations.snapshot()})


def create_public_app(server: AuthorizationServer,
                      instances: Optional[Dict[str, AuthorizationServer]] = None) -> FastAPI:
    """Agent-facing listener: metadata, token exchange, token revocation.

    ``instances`` adds virtual servers addressed by a path segment, each with its
    own registry and state.
    """
    app = FastAPI(title="authorization server")
    _install_error_handler(app)
    _add_public_routes(app, server, "", "")
    for name, inst in (instances or {}).items():
        _add_public_routes(app, inst, f"/{name}", name)
    app.state.server = server
    return app


def _check_proxy_secret(server: AuthorizationServer, request: Request) -> None:
    supplied = request.headers.get(PROXY_SECRET_HEADER, "")
    if not hmac.compare_digest(supplied.encode("utf-8"), server.config.proxy_secret.encode("utf-8")):
        raise OAuthError("unauthorized_client", "bad proxy credentials", 401)


def _add_proxy_routes(app: FastAPI, server: AuthorizationServer, prefix: str) -> None:
    @app.post(prefix + "/authorize")
    async def authorize(request: Request) -> JSONResponse:
        _check_proxy_secret(server, request)
        body = await read_body(request)
        ctx = AuthorizationContext.from_dict(body, received_via_proxy=True)
        result = server.handle_authorization_request(ctx)
        if isinstance(result, Denial):
            return JSONResponse(result.body(), status_code=result.status_code)
        return JSONResponse(_grant_body(server, result))

    @app.post(prefix + "/revoke")
    async def revoke(request: Request) -> JSONResponse:
        _check_proxy_secret(server, request)
        body = await read_body(request)
        server.revoke(str(body.get("principal_id", "")), str(body.get("handle", "")))
        return JSONResponse({"acknowledged": True})


def create_proxy_app(server: AuthorizationServer,
                     instances: Optional[Dict[str, AuthorizationServer]] = None) -> FastAPI:
    """Listener reserved for the trusted proxy (shared-secret header)."""
    app = FastAPI(title="authorization server (proxy listener)")
    _install_error_handler(app)
    _add_proxy_routes(app, server, "")
    for name, inst in (instances or {}).items():
        _add_proxy_routes(app, inst, f"/{name}")
    app.state.server = server
    return app


def virtual_instances(base: AuthzConfig, registries: Dict[str, Registry], matcher, clock=None,
                      ids: Optional[IdSource] = None) -> Dict[str, AuthorizationServer]:
    """One lightweight server per registry, issuer suffixed with the instance name."""
    out = {}
    for name, reg in sorted(registries.items()):
        cfg = AuthzConfig(**{**{k: getattr(base, k) for k in base.__dataclass_fields__ if not k.startswith("_")},
                             "issuer": f"{base.issuer.rstrip('/')}/{name}",
                             "authorization_endpoint": None, "token_endpoint": None})
        out[name] = AuthorizationServer(cfg, reg, matcher, clock=clock, ids=ids)
    return out
