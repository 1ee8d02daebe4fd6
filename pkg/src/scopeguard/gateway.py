"""Chat-completion and embedding backends.

Three implementations share one surface (``chat_complete`` / ``embed``):

* :class:`MockGateway` - pure and offline. Chat output is looked up by content
  hash, falling back to a deterministic responder; embeddings are seeded
  hashed bag-of-words vectors on the unit sphere.
* :class:`OpenAIGateway` - an OpenAI-compatible HTTP client.
* :class:`CassetteGateway` / :class:`RecordingGateway` - replay and record.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import httpx
import numpy as np

from .errors import CassetteMiss, EmptyCompletion, GatewayError, GatewayUnavailable

logger = logging.getLogger(__name__)

MOCK_EMBED_DIM = 256
MAX_COMPLETION_TOKENS = 1024

VERDICT_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "properties": {"appropriate": {"type": "boolean"}},
    "required": ["appropriate"],
    "additionalProperties": False,
}


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    structured_flag: bool = False
    # JSON schema for list-shaped structured output (task generation)
    json_schema: Optional[Mapping[str, Any]] = None

    def key(self) -> str:
        return content_key(self.system_prompt, self.user_prompt)


@dataclass(frozen=True)
class EmbeddingVector:
    values: Tuple[float, ...]
    model_id: str

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("embedding must have positive length")

    def __len__(self) -> int:
        return len(self.values)


def content_key(*parts: str) -> str:
    h = hashlib.sha256()
    for part in parts:
        data = part.encode("utf-8")
        h.update(len(data).to_bytes(8, "big"))
        h.update(data)
    return h.hexdigest()


class Gateway:
    """Backend interface. Subclasses override both methods."""

    chat_model = "unknown"
    embed_model = "unknown"

    def chat_complete(self, req: ChatRequest) -> str:
        raise NotImplementedError

    def embed(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# hash embedding
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"[a-z0-9]+")


def embedding_tokens(text: str) -> List[str]:
    """Lower-cased alphanumeric runs, with a plain trailing-'s' plural strip."""
    out = []
    for tok in _TOKEN.findall(text.lower()):
        if len(tok) > 3 and tok.endswith("s") and not tok.endswith("ss"):
            tok = tok[:-1]
        out.append(tok)
    if not out and text.strip():
        out.append(text.strip())
    return out


@lru_cache(maxsize=65536)
def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    raw = hashlib.shake_256(f"{seed}:{token}".encode("utf-8")).digest(4 * dim)
    ints = np.frombuffer(raw, dtype="<u4").astype(np.float64)
    vec = ints / 2.0**32 * 2.0 - 1.0
    vec.setflags(write=False)
    return vec


def hash_embedding(text: str, dim: int = MOCK_EMBED_DIM, seed: int = 0) -> np.ndarray:
    """Sum of per-token pseudo-random vectors (weighted by count), unit-normalized."""
    counts = Counter(embedding_tokens(text))
    if not counts:
        raise ValueError("cannot embed empty text")
    acc = np.zeros(dim, dtype=np.float64)
    for tok in sorted(counts):
        acc += counts[tok] * _token_vector(tok, dim, seed)
    norm = float(np.linalg.norm(acc))
    return acc / norm


Responder = Callable[[ChatRequest], str]


class MockGateway(Gateway):
    """Deterministic offline backend.

    ``fixtures`` maps :func:`content_key` of (system, user) to completion text.
    Requests without a fixture go to ``responder``; with neither, the call
    fails with GatewayUnavailable. Call logs are kept for assertions only and
    never influence outputs.
    """

    def __init__(
        self,
        fixtures: Optional[Mapping[str, str]] = None,
        responder: Optional[Responder] = None,
        dim: int = MOCK_EMBED_DIM,
        seed: int = 0,
    ):
        self.fixtures = dict(fixtures or {})
        self.responder = responder
        self.dim = dim
        self.seed = seed
        self.chat_model = "mock-chat"
        self.embed_model = f"mock-hash-{dim}-s{seed}"
        self.chat_calls: List[ChatRequest] = []
        self.embed_calls: List[List[str]] = []
        self._lock = threading.Lock()

    def add_fixture(self, system_prompt: str, user_prompt: str, completion: str) -> None:
        self.fixtures[content_key(system_prompt, user_prompt)] = completion

    def chat_complete(self, req: ChatRequest) -> str:
        if not req.system_prompt or not req.user_prompt:
            raise ValueError("prompts must be non-empty")
        with self._lock:
            self.chat_calls.append(req)
        text = self.fixtures.get(req.key())
        if text is None:
            if self.responder is None:
                raise GatewayUnavailable("mock gateway has no fixture for this request")
            text = self.responder(req)
        if not text or not text.strip():
            raise EmptyCompletion("mock returned an empty completion")
        return text

    def embed(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        texts = list(texts)
        with self._lock:
            self.embed_calls.append(texts)
        out = []
        for text in texts:
            if not text:
                raise ValueError("cannot embed empty text")
            vec = hash_embedding(text, self.dim, self.seed)
            out.append(EmbeddingVector(tuple(vec.tolist()), self.embed_model))
        return out


# ---------------------------------------------------------------------------
# HTTP backend
# ---------------------------------------------------------------------------


class TokenBucket:
    """Blocking token bucket; ``rate`` tokens per second, burst ``capacity``."""

    def __init__(self, rate: float, capacity: Optional[float] = None,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


def _response_format(req: ChatRequest) -> Optional[Dict[str, Any]]:
    if req.json_schema is not None:
        return {"type": "json_schema",
                "json_schema": {"name": "tasks", "strict": True, "schema": dict(req.json_schema)}}
    if req.structured_flag:
        return {"type": "json_schema",
                "json_schema": {"name": "verdict", "strict": True, "schema": VERDICT_SCHEMA}}
    return None


class OpenAIGateway(Gateway):
    """Client for OpenAI-compatible ``/chat/completions`` and ``/embeddings``."""

    def __init__(
        self,
        api_base: str,
        api_key: str,
        chat_model: str = "gpt-4o",
        embed_model: str = "text-embedding-3-large",
        retries: int = 3,
        backoff: float = 0.25,
        timeout: float = 60.0,
        requests_per_second: Optional[float] = None,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.api_base = api_base.rstrip("/")
        self.chat_model = chat_model
        self.embed_model = embed_model
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep
        self._bucket = TokenBucket(requests_per_second, sleep=sleep) if requests_per_second else None
        self._client = httpx.Client(
            timeout=timeout,
            transport=transport,
            headers={"Authorization": f"Bearer {api_key}"},
        )

    @classmethod
    def from_env(cls, environ: Optional[Mapping[str, str]] = None, **kwargs: Any) -> "OpenAIGateway":
        env = os.environ if environ is None else environ
        try:
            base, key = env["LM_API_BASE"], env["LM_API_KEY"]
        except KeyError as exc:
            raise GatewayUnavailable(f"missing environment variable {exc.args[0]}") from None
        return cls(
            base,
            key,
            chat_model=env.get("LM_CHAT_MODEL", "gpt-4o"),
            embed_model=env.get("LM_EMBED_MODEL", "text-embedding-3-large"),
            **kwargs,
        )

    def chat_body(self, req: ChatRequest) -> Dict[str, Any]:
        body: Dict[str, Any] = {
            "model": self.chat_model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": MAX_COMPLETION_TOKENS,
        }
        fmt = _response_format(req)
        if fmt is not None:
            body["response_format"] = fmt
        return body

    def embed_body(self, texts: Sequence[str]) -> Dict[str, Any]:
        return {"model": self.embed_model, "input": list(texts)}

    def _post(self, path: str, body: Dict[str, Any]) -> Dict[str, Any]:
        url = f"{self.api_base}{path}"
        last: Optional[Exception] = None
        for attempt in range(self.retries):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            if self._bucket is not None:
                self._bucket.acquire()
            try:
                resp = self._client.post(url, json=body)
            except httpx.TransportError as exc:
                last = exc
                logger.warning("gateway transport error on %s (attempt %d): %s", path, attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = GatewayError(f"HTTP {resp.status_code}")
                logger.warning("gateway HTTP %d on %s (attempt %d)", resp.status_code, path, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return resp.json()
        raise GatewayUnavailable(f"{url} failed after {self.retries} attempts: {last}")

    def chat_complete(self, req: ChatRequest) -> str:
        if not req.system_prompt or not req.user_prompt:
            raise ValueError("prompts must be non-empty")
        data = self._post("/chat/completions", self.chat_body(req))
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise EmptyCompletion("response carried no message content") from None
        if not text or not text.strip():
            raise EmptyCompletion("model returned an empty completion")
        return text

    def embed(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        texts = list(texts)
        if not texts:
            return []
        if any(not t for t in texts):
            raise ValueError("cannot embed empty text")
        data = self._post("/embeddings", self.embed_body(texts))
        rows = sorted(data["data"], key=lambda r: r["index"])
        return [EmbeddingVector(tuple(float(x) for x in r["embedding"]), self.embed_model) for r in rows]

    def close(self) -> None:
        self._client.close()


# ---------------------------------------------------------------------------
# record / replay
# ---------------------------------------------------------------------------


def _embed_key(model: str, text: str) -> str:
    return content_key("embed", model, text)


class RecordingGateway(Gateway):
    """Pass-through that appends every exchange to a JSONL cassette."""

    def __init__(self, inner: Gateway, path: os.PathLike):
        self.inner = inner
        self.path = Path(path)
        self.chat_model = inner.chat_model
        self.embed_model = inner.embed_model
        self._lock = threading.Lock()

    def _write(self, record: Dict[str, Any]) -> None:
        line = json.dumps(record, sort_keys=True, ensure_ascii=False)
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def chat_complete(self, req: ChatRequest) -> str:
        text = self.inner.chat_complete(req)
        self._write({"kind": "chat", "key": req.key(), "response": text})
        return text

    def embed(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        vecs = self.inner.embed(texts)
        for text, vec in zip(texts, vecs):
            self._write({"kind": "embed", "key": _embed_key(self.embed_model, text),
                         "response": list(vec.values), "model_id": vec.model_id})
        return vecs


class CassetteGateway(Gateway):
    """Replays a cassette written by :class:`RecordingGateway`."""

    def __init__(self, path: os.PathLike, embed_model: Optional[str] = None):
        self.chat: Dict[str, str] = {}
        self.vectors: Dict[str, EmbeddingVector] = {}
        models = set()
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec["kind"] == "chat":
                    self.chat[rec["key"]] = rec["response"]
                else:
                    models.add(rec["model_id"])
                    self.vectors[rec["key"]] = EmbeddingVector(tuple(rec["response"]), rec["model_id"])
        self.chat_model = "cassette"
        self.embed_model = embed_model or (sorted(models)[0] if models else "cassette")

    def chat_complete(self, req: ChatRequest) -> str:
        try:
            return self.chat[req.key()]
        except KeyError:
            raise CassetteMiss(f"no recorded completion for {req.key()[:12]}") from None

    def embed(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        out = []
        for text in texts:
            try:
                out.append(self.vectors[_embed_key(self.embed_model, text)])
            except KeyError:
                raise CassetteMiss(f"no recorded embedding for {text[:40]!r}") from None
        return out
