"""Reading and writing MCP server manifests.

Two on-disk layouts are accepted:

``*.json``
    One manifest object ``{"server_id", "tools": [{"name", "description"}], "language_tag"}``.
    ``server_id`` defaults to the file stem, so a raw MCP ``tools/list`` result also loads.
``*.jsonl``
    One tool object per line, optionally preceded by a header line carrying
    ``server_id`` / ``language_tag`` and no ``name``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from ..domain import McpServerManifest, ToolDescriptor
from ..errors import InvalidIdentifier, ManifestParseError


def _line_of(text: str, needle: str, occurrence: int = 1) -> Optional[int]:
    pos = -1
    for _ in range(occurrence):
        pos = text.find(needle, pos + 1)
        if pos < 0:
            return None
    return text.count("\n", 0, pos) + 1


def _tool(record: Any, server_id: str, line: Optional[int], path: str) -> ToolDescriptor:
    if not isinstance(record, dict):
        raise ManifestParseError("tool entry must be an object", line, path)
    name = record.get("name")
    if not isinstance(name, str) or not name:
        raise ManifestParseError("tool entry needs a non-empty string 'name'", line, path)
    description = record.get("description")
    if description is None:
        description = ""
    if not isinstance(description, str):
        raise ManifestParseError(f"description of {name!r} must be a string", line, path)
    try:
        return ToolDescriptor(name=name, description=description, server_id=server_id)
    except InvalidIdentifier as exc:
        raise ManifestParseError(str(exc), line, path) from None


def _build(server_id: Any, language_tag: Any, tools: List[Tuple[ToolDescriptor, Optional[int]]],
           path: str) -> McpServerManifest:
    if not isinstance(server_id, str) or not server_id:
        raise ManifestParseError("manifest needs a non-empty 'server_id'", None, path)
    seen: Dict[str, int] = {}
    for tool, line in tools:
        if tool.name in seen:
            raise ManifestParseError(f"duplicate tool name {tool.name!r}", line, path)
        seen[tool.name] = 1
    if not tools:
        raise ManifestParseError("manifest lists no tools", None, path)
    return McpServerManifest(server_id, tuple(t for t, _ in tools), str(language_tag or "en"))


def _ingest_jsonl(text: str, stem: str, path: str) -> McpServerManifest:
    header: Dict[str, Any] = {}
    records: List[Tuple[dict, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ManifestParseError(f"invalid JSON: {exc.msg}", lineno, path) from None
        if not isinstance(rec, dict):
            raise ManifestParseError("each line must be a JSON object", lineno, path)
        if "name" not in rec and not records and not header:
            header = rec
            continue
        records.append((rec, lineno))
    server_id = header.get("server_id") or next(
        (r.get("server_id") for r, _ in records if r.get("server_id")), stem)
    tools = [(_tool(r, server_id, ln, path), ln) for r, ln in records]
    return _build(server_id, header.get("language_tag"), tools, path)


def _ingest_json(text: str, stem: str, path: str) -> McpServerManifest:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None
    if not isinstance(data, dict) or not isinstance(data.get("tools"), list):
        raise ManifestParseError("expected an object with a 'tools' list", 1, path)
    server_id = data.get("server_id") or stem
    tools = []
    counts: Dict[str, int] = {}
    for rec in data["tools"]:
        name = rec.get("name") if isinstance(rec, dict) else None
        line = None
        if isinstance(name, str):
            counts[name] = counts.get(name, 0) + 1
            line = _line_of(text, json.dumps(name), counts[name])
        tools.append((_tool(rec, server_id, line, path), line))
    return _build(server_id, data.get("language_tag"), tools, path)


def ingest_mcp_manifest(path: os.PathLike) -> McpServerManifest:
    """Load one manifest file; tools come back sorted by name, descriptions untouched."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ManifestParseError(f"not UTF-8: {exc}", None, str(p)) from None
    if not text.strip():
        raise ManifestParseError("empty manifest", 1, str(p))
    if p.suffix == ".jsonl":
        return _ingest_jsonl(text, p.stem, str(p))
    return _ingest_json(text, p.stem, str(p))


def load_manifest_dir(path: os.PathLike) -> List[McpServerManifest]:
    p = Path(path)
    files = sorted(f for f in p.iterdir() if f.suffix in (".json", ".jsonl"))
    if not files:
        raise ManifestParseError("no manifest files found", None, str(p))
    return sorted((ingest_mcp_manifest(f) for f in files), key=lambda m: m.server_id)


def write_manifest(manifest: McpServerManifest, path: os.PathLike) -> None:
    text = json.dumps(manifest.to_dict(), indent=2, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")
