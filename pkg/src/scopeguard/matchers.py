"""Semantic task-to-scope matchers.

``SemSimMatcher`` asks the model for an idealized tool description, embeds it
next to every available tool description and approves the requested tool
only if it is the nearest one and clears the similarity threshold.

``LlmResMatcher`` shows the model the task and the single requested tool and
parses a boolean verdict. It never looks at the rest of the registry.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import prompts
from .domain import MatchDecision, MatchRequest, TaskSample, ToolDescriptor
from .errors import (
    CalibrationUnderdetermined,
    DimensionMismatch,
    IdealDescriptionParseError,
    MatcherIndecision,
    ScopeGuardError,
    ToolNotRegistered,
    UnsupportedTaskArity,
    ZeroVector,
)
from .gateway import ChatRequest, EmbeddingVector, Gateway
from .registry import Registry

logger = logging.getLogger(__name__)

_TOOL_BLOCK = re.compile(r"<tool_assistant>(.*?)</tool_assistant>", re.S)
_TOOL_PREFIX = re.compile(r"^\s*tool\s*:\s*", re.I)

REPROMPT_SUFFIX = "\n\nAnswer with exactly one word: true or false."


def parse_ideal_description(completion: str) -> str:
    m = _TOOL_BLOCK.search(completion)
    if m is None:
        raise IdealDescriptionParseError(completion)
    text = _TOOL_PREFIX.sub("", m.group(1).strip(), count=1).strip()
    if not text:
        raise IdealDescriptionParseError(completion)
    return text


def generate_ideal_tool_description(task: TaskSample, gateway: Gateway) -> str:
    completion = gateway.chat_complete(ChatRequest(prompts.ideal_tool_system(), task.task_text))
    return parse_ideal_description(completion)


def _as_array(v) -> np.ndarray:
    if isinstance(v, EmbeddingVector):
        v = v.values
    return np.asarray(v, dtype=np.float64)


def cosine_similarity(a, b) -> float:
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise DimensionMismatch(f"{x.shape} vs {y.shape}")
    nx, ny = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


@dataclass(frozen=True)
class SemSimConfig:
    threshold: float = 0.5
    embed_model: str = ""
    calibrated: bool = False
    # "server": compare against the requested tool's own server; "global": whole registry
    tool_scope: str = "server"

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        if self.tool_scope not in ("server", "global"):
            raise ValueError("tool_scope must be 'server' or 'global'")

    @property
    def uncalibrated(self) -> bool:
        return not self.calibrated


@dataclass(frozen=True)
class SimilarityProfile:
    ideal_description: str
    fallback: bool
    similarities: Dict[ToolDescriptor, float]

    def winner(self) -> Tuple[ToolDescriptor, float]:
        best = max(self.similarities.values())
        tied = [t for t, s in self.similarities.items() if s == best]
        return min(tied, key=lambda t: (t.name, t.scope)), best


def _embed_text(tool: ToolDescriptor) -> str:
    return tool.description or tool.name


class SemSimMatcher:
    matcher_id = "semsim"

    def __init__(self, gateway: Gateway, config: Optional[SemSimConfig] = None):
        self.gateway = gateway
        self.config = config or SemSimConfig()
        self._cache: Dict[str, EmbeddingVector] = {}
        self._lock = threading.Lock()

    def with_threshold(self, threshold: float) -> "SemSimMatcher":
        cfg = SemSimConfig(threshold, self.config.embed_model, True, self.config.tool_scope)
        clone = SemSimMatcher(self.gateway, cfg)
        clone._cache = self._cache
        clone._lock = self._lock
        return clone

    def _tool_vectors(self, tools: Sequence[ToolDescriptor]) -> List[EmbeddingVector]:
        texts = [_embed_text(t) for t in tools]
        with self._lock:
            missing = sorted({t for t in texts if t not in self._cache})
        if missing:
            vecs = self.gateway.embed(missing)
            with self._lock:
                self._cache.update(zip(missing, vecs))
        with self._lock:
            return [self._cache[t] for t in texts]

    def profile(self, task: TaskSample, available: Sequence[ToolDescriptor]) -> SimilarityProfile:
        fallback = False
        try:
            ideal = generate_ideal_tool_description(task, self.gateway)
        except IdealDescriptionParseError as exc:
            logger.info("ideal description unparseable for %s; using raw completion", task.sample_id)
            ideal, fallback = exc.raw.strip(), True
        ideal_vec = self.gateway.embed([ideal])[0]
        tool_vecs = self._tool_vectors(available)
        sims = {t: cosine_similarity(ideal_vec, v) for t, v in zip(available, tool_vecs)}
        return SimilarityProfile(ideal, fallback, sims)

    def match(self, task: TaskSample, requested: ToolDescriptor,
              available: Sequence[ToolDescriptor]) -> MatchDecision:
        if task.n_tools > 1:
            raise UnsupportedTaskArity("SemSimM only evaluates single-tool tasks")
        if not available:
            raise ValueError("available tools must be non-empty")
        registered = {t.scope: t for t in available}.get(requested.scope)
        if registered is None:
            raise ToolNotRegistered(f"{requested.scope} is not among the available tools")
        prof = self.profile(task, available)
        winner, best = prof.winner()
        score = prof.similarities[registered]
        appropriate = winner.scope == requested.scope and best >= self.config.threshold
        return MatchDecision(
            appropriate=appropriate,
            matcher_id=self.matcher_id,
            score=min(1.0, max(0.0, score)),
            rationale=prof.ideal_description,
            fallback=prof.fallback,
        )

    def available_for(self, tool: ToolDescriptor, registry: Registry) -> List[ToolDescriptor]:
        registry.resolve(tool.scope)
        if self.config.tool_scope == "global":
            return registry.all_tools()
        return list(registry.tools_for(tool.server_id))

    def decide(self, task: TaskSample, tool: ToolDescriptor, registry: Registry) -> MatchDecision:
        return self.match(task, tool, self.available_for(tool, registry))


def semsim_match(task: TaskSample, requested: ToolDescriptor, available: Sequence[ToolDescriptor],
                 cfg: SemSimConfig, gateway: Gateway) -> MatchDecision:
    return SemSimMatcher(gateway, cfg).match(task, requested, available)


_FLAG_WORD = re.compile(r"^[\s`'\"*]*(true|false|yes|no)[\s`'\".!*]*$", re.I)


def parse_flag(text: str) -> Optional[bool]:
    """Read a boolean verdict from a completion; None when it is not one."""
    stripped = text.strip()
    try:
        data = json.loads(stripped)
    except ValueError:
        data = None
    if isinstance(data, bool):
        return data
    if isinstance(data, dict):
        for key in ("appropriate", "result", "answer", "flag"):
            if isinstance(data.get(key), bool):
                return data[key]
        return None
    m = _FLAG_WORD.match(stripped)
    if m is None:
        return None
    return m.group(1).lower() in ("true", "yes")


def guardrail_input(task_text: str, tool: ToolDescriptor) -> str:
    return json.dumps(
        {"original prompt": task_text, "tool name": tool.name, "tool description": tool.description},
        ensure_ascii=False,
    )


class LlmResMatcher:
    matcher_id = "llmres"

    def __init__(self, gateway: Gateway):
        self.gateway = gateway

    def match(self, task: TaskSample, requested: ToolDescriptor) -> MatchDecision:
        user = guardrail_input(task.task_text, requested)
        system = prompts.guardrail_system()
        completion = self.gateway.chat_complete(ChatRequest(system, user, structured_flag=True))
        flag = parse_flag(completion)
        if flag is None:
            logger.info("unparseable verdict for %s on %s; reprompting", requested.scope, task.sample_id)
            completion = self.gateway.chat_complete(
                ChatRequest(system, user + REPROMPT_SUFFIX, structured_flag=True))
            flag = parse_flag(completion)
        if flag is None:
            raise MatcherIndecision(f"no boolean verdict for {requested.scope}: {completion[:80]!r}")
        return MatchDecision(appropriate=flag, matcher_id=self.matcher_id, rationale=completion)

    def decide(self, task: TaskSample, tool: ToolDescriptor, registry: Optional[Registry] = None) -> MatchDecision:
        return self.match(task, tool)


def llm_res_match(task: TaskSample, requested: ToolDescriptor, gateway: Gateway) -> MatchDecision:
    return LlmResMatcher(gateway).match(task, requested)


class StaticMatcher:
    """Approves a fixed set of scopes. Stands in for a model in protocol tests."""

    matcher_id = "static"

    def __init__(self, approve: Iterable[str], fail: Iterable[str] = ()):
        self.approve = frozenset(approve)
        self.fail = frozenset(fail)
        self.calls: List[Tuple[str, str]] = []

    def decide(self, task: TaskSample, tool: ToolDescriptor, registry: Optional[Registry] = None) -> MatchDecision:
        self.calls.append((task.task_text, tool.scope))
        if tool.scope in self.fail:
            raise MatcherIndecision(f"scripted failure for {tool.scope}")
        return MatchDecision(appropriate=tool.scope in self.approve, matcher_id=self.matcher_id,
                             rationale="static policy")


@dataclass(frozen=True)
class ScopeGrantResult:
    per_tool: Dict[ToolDescriptor, MatchDecision]
    granted_scopes: FrozenSet[str]
    fully_granted: bool

    def verdicts(self) -> List[dict]:
        return [{"scope": t.scope, **d.to_dict()} for t, d in self.per_tool.items()]


def _safe_decide(matcher, task: TaskSample, tool: ToolDescriptor, registry) -> MatchDecision:
    try:
        return matcher.decide(task, tool, registry)
    except ScopeGuardError as exc:
        logger.warning("matcher error on %s: %s", tool.scope, exc)
        return MatchDecision(appropriate=False, matcher_id=matcher.matcher_id,
                             error=f"{type(exc).__name__}: {exc}")


def match_scope_set(task: TaskSample, requested: Sequence[ToolDescriptor], matcher, registry,
                    max_workers: int = 1) -> ScopeGrantResult:
    """Judge each requested tool on its own; errors become denials for that tool only."""
    requested = list(requested)
    if not requested:
        raise ValueError("requested must be non-empty")
    if len(set(requested)) != len(requested):
        raise ValueError("requested tools must be unique")
    if max_workers > 1 and len(requested) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            decisions = list(pool.map(lambda t: _safe_decide(matcher, task, t, registry), requested))
    else:
        decisions = [_safe_decide(matcher, task, t, registry) for t in requested]
    per_tool = dict(zip(requested, decisions))
    granted = frozenset(t.scope for t, d in per_tool.items() if d.appropriate)
    return ScopeGrantResult(per_tool, granted, all(d.appropriate for d in decisions))


# ---------------------------------------------------------------------------
# threshold calibration
# ---------------------------------------------------------------------------


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def sweep_threshold(scores: Sequence[float], labels: Sequence[bool],
                    eligible: Optional[Sequence[bool]] = None) -> Tuple[float, float]:
    """Best (threshold, F1) over the distinct observed scores.

    A request is accepted at threshold t when it is eligible (its tool is the
    nearest one) and its score is >= t. Ties on F1 go to the smallest t.
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    if eligible is None:
        eligible = [True] * len(scores)
    if all(labels) or not any(labels):
        raise CalibrationUnderdetermined("validation needs both positive and negative labels")
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    # start from "accept every eligible request" and walk the threshold upward
    tp = sum(1 for i in order if eligible[i] and labels[i])
    fp = sum(1 for i in order if eligible[i] and not labels[i])
    fn = sum(labels) - tp
    best_t, best_f1 = None, -1.0
    k = 0
    while k < len(order):
        t = scores[order[k]]
        f1 = _f1(tp, fp, fn)
        if f1 > best_f1:
            best_t, best_f1 = t, f1
        while k < len(order) and scores[order[k]] == t:
            i = order[k]
            if eligible[i]:
                if labels[i]:
                    tp, fn = tp - 1, fn + 1
                else:
                    fp -= 1
            k += 1
    return float(best_t), best_f1


def calibrate_threshold(validation: Sequence[MatchRequest], matcher: SemSimMatcher,
                        registry: Registry) -> float:
    """Threshold maximizing F1 of ``matcher`` on ``validation``."""
    labels = [r.positive for r in validation]
    if all(labels) or not any(labels):
        raise CalibrationUnderdetermined("validation needs both positive and negative labels")
    scores, eligible = [], []
    for req in validation:
        if req.task.n_tools > 1:
            raise UnsupportedTaskArity("SemSimM calibration needs single-tool tasks")
        available = matcher.available_for(req.requested_tool, registry)
        prof = matcher.profile(req.task, available)
        winner, _ = prof.winner()
        registered = next(t for t in available if t.scope == req.requested_tool.scope)
        scores.append(min(1.0, max(0.0, prof.similarities[registered])))
        eligible.append(winner.scope == req.requested_tool.scope)
    tau, f1 = sweep_threshold(scores, labels, eligible)
    logger.info("calibrated threshold %.6f (validation F1 %.4f)", tau, f1)
    return tau

