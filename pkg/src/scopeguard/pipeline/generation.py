from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

from .. import prompts
from ..domain import McpServerManifest, TaskSample, ToolDescriptor
from ..errors import TaskGenerationIncomplete
from ..gateway import ChatRequest, Gateway
from .sampling import ToolSet, sample_tool_sets
from .text import strip_argument_details

logger = logging.getLogger(__name__)

TASKS_SCHEMA = {
    "type": "object",
    "properties": {"tasks": {"type": "array", "items": {"type": "string"}}},
    "required": ["tasks"],
    "additionalProperties": False,
}

_LIST_MARK = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


def parse_tasks(completion: str) -> List[str]:
    """Task strings from a structured completion (plain lines as a fallback)."""
    try:
        data = json.loads(completion)
    except ValueError:
        data = None
    if isinstance(data, dict):
        data = data.get("tasks")
    if isinstance(data, list):
        items = [x for x in data if isinstance(x, str)]
    else:
        items = [_LIST_MARK.sub("", line) for line in completion.splitlines()]
    seen, out = set(), []
    for item in items:
        text = item.strip()
        if text and text not in seen:
            seen.add(text)
            out.append(text)
    return out


def generate_tasks(tool_set: Sequence[ToolDescriptor], m: int, gateway: Gateway,
                   set_id: str = "") -> List[TaskSample]:
    """Ask the model for ``m`` distinct tasks that need every tool in ``tool_set``."""
    tools = sorted(tool_set, key=lambda t: t.name)
    if not tools:
        raise ValueError("tool_set must be non-empty")
    system = prompts.task_generation_system([(t.name, t.description) for t in tools])
    req = ChatRequest(system, prompts.task_generation_user(m), json_schema=TASKS_SCHEMA)
    texts = parse_tasks(gateway.chat_complete(req))
    if len(texts) < m:
        raise TaskGenerationIncomplete(m, len(texts))
    set_id = set_id or "+".join(t.scope for t in tools)
    return [
        TaskSample(text, frozenset(tools), len(tools), "generated", f"{set_id}/t{i}")
        for i, text in enumerate(texts[:m])
    ]


def prepare_manifest(manifest: McpServerManifest) -> McpServerManifest:
    """Strip argument details from every description of ``manifest``."""
    return McpServerManifest(
        manifest.server_id,
        tuple(ToolDescriptor(t.name, strip_argument_details(t.description), t.server_id)
              for t in manifest.tools),
        manifest.language_tag,
    )


def generate_dataset(manifests: Sequence[McpServerManifest], n: int, m: int, seed: int,
                     gateway: Gateway, max_workers: int = 1,
                     sets_per_server: Optional[dict] = None) -> List[TaskSample]:
    """Tasks for every tool set of every server, in (server, set) order.

    Requests may run concurrently; assembly order never depends on timing.
    """
    jobs = []
    for manifest in sorted(manifests, key=lambda x: x.server_id):
        clean = prepare_manifest(manifest)
        sets: List[ToolSet] = sample_tool_sets(clean, n, seed)
        if sets_per_server is not None:
            sets_per_server[manifest.server_id] = len(sets)
        for k, tool_set in enumerate(sets):
            jobs.append((tool_set, f"{manifest.server_id}/N{n}/s{k:03d}"))
    logger.info("generating %d tasks for %d tool sets (N=%d)", len(jobs) * m, len(jobs), n)

    def run(job):
        tool_set, set_id = job
        return generate_tasks(tool_set, m, gateway, set_id)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            batches = list(pool.map(run, jobs))
    else:
        batches = [run(j) for j in jobs]
    return [task for batch in batches for task in batch]
