"""Core value types shared by the matchers, the data pipeline and the servers.

Every type here is an immutable dataclass and serializes to a flat JSON
record whose keys are exactly the dataclass field names.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Tuple

from .errors import InvalidIdentifier, LabelInvariantError

SOURCES = ("generated", "toucan", "live")
LABELS = ("correct", "wrong", "null")
MATCHER_IDS = ("semsim", "llmres", "static")

_CAMEL_1 = re.compile(r"([a-z0-9])([A-Z])")
_CAMEL_2 = re.compile(r"([A-Z]+)([A-Z][a-z])")
_NON_ALNUM = re.compile(r"[^a-z0-9]+")


def _kebab(identifier: str) -> str:
    text = unicodedata.normalize("NFKC", identifier).strip()
    text = _CAMEL_2.sub(r"\1-\2", text)
    text = _CAMEL_1.sub(r"\1-\2", text)
    text = _NON_ALNUM.sub("-", text.lower()).strip("-")
    return text


def canonical_scope(server_id: str, tool_name: str) -> str:
    """Return the scope string guarding ``tool_name`` on ``server_id``.

    Both parts are case-folded and hyphenated (``GetPage`` -> ``get-page``,
    ``search_service_list`` -> ``search-service-list``) and joined with a colon.
    """
    if not server_id or not tool_name:
        raise InvalidIdentifier("server_id and tool_name must be non-empty")
    for part in (server_id, tool_name):
        # non-ASCII letters would otherwise collapse to "-" and collide
        if any(c.isalnum() and not c.isascii() for c in unicodedata.normalize("NFKC", part)):
            raise InvalidIdentifier(f"non-ASCII identifier: {part!r}")
    server = _kebab(server_id)
    name = _kebab(tool_name)
    if not server or not name:
        raise InvalidIdentifier(f"identifier normalizes to nothing: {server_id!r}, {tool_name!r}")
    return f"{server}:{name}"


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    server_id: str
    scope: str = ""

    def __post_init__(self) -> None:
        if not self.name:
            raise InvalidIdentifier("tool name must be non-empty")
        expected = canonical_scope(self.server_id, self.name)
        if not self.scope:
            object.__setattr__(self, "scope", expected)
        elif self.scope != expected:
            raise InvalidIdentifier(f"scope {self.scope!r} does not match {expected!r}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "server_id": self.server_id,
            "scope": self.scope,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], server_id: Optional[str] = None) -> "ToolDescriptor":
        return cls(
            name=data["name"],
            description=data.get("description") or "",
            server_id=data.get("server_id") or server_id or "",
            scope=data.get("scope", ""),
        )


@dataclass(frozen=True)
class McpServerManifest:
    server_id: str
    tools: Tuple[ToolDescriptor, ...]
    language_tag: str = "en"

    def __post_init__(self) -> None:
        tools = tuple(sorted(self.tools, key=lambda t: t.name))
        names = [t.name for t in tools]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate tool names in server {self.server_id!r}")
        for tool in tools:
            if tool.server_id != self.server_id:
                raise ValueError(f"tool {tool.name!r} belongs to {tool.server_id!r}, not {self.server_id!r}")
        object.__setattr__(self, "tools", tools)

    def tool(self, name: str) -> ToolDescriptor:
        for t in self.tools:
            if t.name == name:
                return t
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "server_id": self.server_id,
            "tools": [t.to_dict() for t in self.tools],
            "language_tag": self.language_tag,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "McpServerManifest":
        server_id = data["server_id"]
        return cls(
            server_id=server_id,
            tools=tuple(ToolDescriptor.from_dict(t, server_id) for t in data["tools"]),
            language_tag=data.get("language_tag", "en"),
        )


@dataclass(frozen=True)
class TaskSample:
    """A natural-language task and the tools it needs.

    ``source="live"`` marks a prompt captured at runtime by the proxy. Its
    required tools are unknown, so it carries an empty set and ``n_tools == 0``.
    """

    task_text: str
    required_tools: FrozenSet[ToolDescriptor]
    n_tools: int
    source: str
    sample_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "required_tools", frozenset(self.required_tools))
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if not self.task_text:
            raise ValueError("task_text must be non-empty")
        if len(self.required_tools) != self.n_tools:
            raise ValueError("len(required_tools) must equal n_tools")
        if self.source == "live":
            if self.n_tools != 0:
                raise ValueError("live tasks carry no ground-truth tools")
            return
        if not 1 <= self.n_tools <= 3:
            raise ValueError(f"n_tools must be in 1..3, got {self.n_tools}")
        if len({t.server_id for t in self.required_tools}) != 1:
            raise ValueError("all required tools must come from one server")

    @classmethod
    def live(cls, prompt: str, sample_id: str = "live") -> "TaskSample":
        return cls(prompt, frozenset(), 0, "live", sample_id)

    @property
    def server_id(self) -> Optional[str]:
        for t in self.required_tools:
            return t.server_id
        return None

    def sorted_tools(self) -> List[ToolDescriptor]:
        return sorted(self.required_tools, key=lambda t: t.scope)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_text": self.task_text,
            "required_tools": [t.to_dict() for t in self.sorted_tools()],
            "n_tools": self.n_tools,
            "source": self.source,
            "sample_id": self.sample_id,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TaskSample":
        return cls(
            task_text=data["task_text"],
            required_tools=frozenset(ToolDescriptor.from_dict(t) for t in data["required_tools"]),
            n_tools=data["n_tools"],
            source=data["source"],
            sample_id=data["sample_id"],
        )


@dataclass(frozen=True)
class MatchRequest:
    task: TaskSample
    requested_tool: ToolDescriptor
    label: str

    def __post_init__(self) -> None:
        check_label(self)

    @property
    def positive(self) -> bool:
        return self.label == "correct"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task": self.task.to_dict(),
            "requested_tool": self.requested_tool.to_dict(),
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MatchRequest":
        return cls(
            task=TaskSample.from_dict(data["task"]),
            requested_tool=ToolDescriptor.from_dict(data["requested_tool"]),
            label=data["label"],
        )


def check_label(req: MatchRequest) -> None:
    """Raise LabelInvariantError unless ``req.label`` agrees with its tools."""
    task, tool = req.task, req.requested_tool
    if req.label not in LABELS:
        raise LabelInvariantError(f"unknown label {req.label!r}")
    if task.source == "live":
        raise LabelInvariantError("live tasks have no ground truth to label against")
    if req.label == "correct":
        ok = tool in task.required_tools
    elif req.label == "wrong":
        ok = tool not in task.required_tools and tool.server_id == task.server_id
    else:
        ok = tool.server_id != task.server_id
    if not ok:
        raise LabelInvariantError(f"{req.label} label violated for {tool.scope} on {task.sample_id}")


@dataclass(frozen=True)
class MatchDecision:
    appropriate: bool
    matcher_id: str
    score: Optional[float] = None
    rationale: Optional[str] = None
    fallback: bool = False
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "appropriate": self.appropriate,
            "matcher_id": self.matcher_id,
            "score": self.score,
            "rationale": self.rationale,
            "fallback": self.fallback,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MatchDecision":
        return cls(**{k: data.get(k) for k in ("appropriate", "matcher_id", "score", "rationale", "error")},
                   fallback=bool(data.get("fallback", False)))


@dataclass(frozen=True)
class DatasetConfig:
    n_tools: int
    tasks_per_set: int = 3
    wrong_ratio: float = 0.8
    null_ratio: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_tools not in (1, 2, 3):
            raise ValueError("n_tools must be 1, 2 or 3")
        if self.tasks_per_set < 1:
            raise ValueError("tasks_per_set must be >= 1")
        if abs(self.wrong_ratio + self.null_ratio - 1.0) > 1e-9:
            raise ValueError("wrong_ratio + null_ratio must equal 1.0")
        if self.wrong_ratio < 0 or self.null_ratio < 0:
            raise ValueError("ratios must be non-negative")


def scopes_of(tools: Iterable[ToolDescriptor]) -> List[str]:
    return [t.scope for t in tools]

