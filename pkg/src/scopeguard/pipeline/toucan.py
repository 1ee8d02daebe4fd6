"""Conversion of a Toucan-style corpus into manifests and task samples.

Expected input (a dict, or a path to a JSON file holding it)::

    {
      "servers": [{"server_id": str, "tools": [{"name": str, "description": str}, ...]}, ...],
      "tasks":   [{"sample_id": str, "task_text": str,
                   "tools": [{"server_id": str, "name": str}, ...]}, ...]
    }
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Union

from ..domain import McpServerManifest, TaskSample, ToolDescriptor
from ..errors import CorpusSchemaError, InvalidIdentifier

logger = logging.getLogger(__name__)

ENGLISH_ASCII_MIN = 0.95


class ToucanResult(NamedTuple):
    manifests: List[McpServerManifest]
    samples: List[TaskSample]
    report: Dict[str, int]


def ascii_letter_ratio(text: str) -> float:
    letters = [c for c in text if c.isalpha()]
    if not letters:
        return 1.0
    return sum(1 for c in letters if c.isascii()) / len(letters)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise CorpusSchemaError(message)


def _validate(corpus: Any) -> None:
    _require(isinstance(corpus, dict), "corpus must be a JSON object")
    _require(isinstance(corpus.get("servers"), list), "corpus needs a 'servers' list")
    _require(isinstance(corpus.get("tasks"), list), "corpus needs a 'tasks' list")
    for i, srv in enumerate(corpus["servers"]):
        _require(isinstance(srv, dict) and isinstance(srv.get("server_id"), str) and srv["server_id"],
                 f"servers[{i}] needs a string server_id")
        _require(isinstance(srv.get("tools"), list), f"servers[{i}] needs a 'tools' list")
        for j, tool in enumerate(srv["tools"]):
            _require(isinstance(tool, dict) and isinstance(tool.get("name"), str) and tool["name"],
                     f"servers[{i}].tools[{j}] needs a string name")
            desc = tool.get("description", "")
            _require(desc is None or isinstance(desc, str), f"servers[{i}].tools[{j}].description must be a string")
    for i, task in enumerate(corpus["tasks"]):
        _require(isinstance(task, dict) and isinstance(task.get("task_text"), str),
                 f"tasks[{i}] needs a string task_text")
        _require(isinstance(task.get("tools"), list) and task["tools"], f"tasks[{i}] needs a non-empty 'tools' list")
        for ref in task["tools"]:
            _require(isinstance(ref, dict) and isinstance(ref.get("server_id"), str)
                     and isinstance(ref.get("name"), str), f"tasks[{i}] has a malformed tool reference")


def preprocess_toucan(corpus: Union[Dict[str, Any], os.PathLike, str], n: int) -> ToucanResult:
    """Filter a raw corpus and keep its N-tool, single-server tasks.

    Filters run in this order: non-English servers, tools with empty
    descriptions, servers duplicating another server's exact tool set (the
    lexicographically first server_id survives), tasks spanning more than one
    retained server, and servers with fewer than ``2 * n`` tools.
    """
    if isinstance(corpus, (str, os.PathLike)):
        try:
            corpus = json.loads(Path(corpus).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise CorpusSchemaError(f"corpus is not valid JSON: {exc}") from None
    _validate(corpus)
    report: Dict[str, int] = {"servers_in": len(corpus["servers"]), "tasks_in": len(corpus["tasks"])}

    servers: Dict[str, List[Dict[str, str]]] = {}
    for srv in corpus["servers"]:
        tools = [{"name": t["name"], "description": t.get("description") or ""} for t in srv["tools"]]
        text = " ".join(t["name"] + " " + t["description"] for t in tools)
        if ascii_letter_ratio(text) < ENGLISH_ASCII_MIN:
            continue
        servers[srv["server_id"]] = tools
    report["dropped_non_english"] = report["servers_in"] - len(servers)

    dropped_tools = 0
    for sid, tools in servers.items():
        kept = [t for t in tools if t["description"].strip()]
        dropped_tools += len(tools) - len(kept)
        servers[sid] = kept
    report["dropped_empty_description_tools"] = dropped_tools

    survivors: Dict[frozenset, str] = {}
    for sid in sorted(servers):
        key = frozenset((t["name"], t["description"]) for t in servers[sid])
        survivors.setdefault(key, sid)
    retained = sorted(survivors.values())
    report["dropped_duplicate_servers"] = len(servers) - len(retained)
    servers = {sid: servers[sid] for sid in retained}

    candidates = []
    for task in corpus["tasks"]:
        owners = {ref["server_id"] for ref in task["tools"]}
        if len(owners) != 1:
            continue
        sid = owners.pop()
        names = {t["name"] for t in servers.get(sid, [])}
        refs = sorted({ref["name"] for ref in task["tools"]})
        if sid in servers and all(r in names for r in refs):
            candidates.append((task, sid, refs))
    report["dropped_multi_server_tasks"] = report["tasks_in"] - len(candidates)

    small = {sid for sid, tools in servers.items() if len(tools) < 2 * n}
    report["dropped_small_servers"] = len(small)
    manifests = []
    for sid in sorted(servers):
        if sid in small:
            continue
        try:
            manifests.append(McpServerManifest(
                sid, tuple(ToolDescriptor(t["name"], t["description"], sid) for t in servers[sid])))
        except (InvalidIdentifier, ValueError) as exc:
            raise CorpusSchemaError(f"server {sid!r}: {exc}") from None
    by_server = {m.server_id: m for m in manifests}

    samples = []
    for idx, (task, sid, refs) in enumerate(candidates):
        if sid not in by_server or len(refs) != n:
            continue
        tools = frozenset(by_server[sid].tool(r) for r in refs)
        sample_id = str(task.get("sample_id") or f"toucan-{idx}")
        samples.append(TaskSample(task["task_text"], tools, n, "toucan", sample_id))
    report["servers_out"] = len(manifests)
    report["tasks_out"] = len(samples)
    logger.info("toucan preprocessing: %s", report)
    return ToucanResult(manifests, samples, report)
