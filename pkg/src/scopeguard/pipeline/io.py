"""JSONL files with a leading header record.

The first line of every file written here is ``{"_header": {...}}`` holding
the seed and the knobs that produced it. Readers return it separately.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Tuple

from ..domain import McpServerManifest, MatchRequest, TaskSample

HEADER_KEY = "_header"


def dumps_jsonl(records: Iterable[Dict[str, Any]], header: Dict[str, Any]) -> str:
    lines = [json.dumps({HEADER_KEY: header}, ensure_ascii=False, sort_keys=True)]
    lines.extend(json.dumps(r, ensure_ascii=False) for r in records)
    return "\n".join(lines) + "\n"


def write_jsonl(path: os.PathLike, records: Iterable[Dict[str, Any]], header: Dict[str, Any]) -> None:
    Path(path).write_text(dumps_jsonl(records, header), encoding="utf-8")


def read_jsonl(path: os.PathLike) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    header: Dict[str, Any] = {}
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if HEADER_KEY in rec:
                header = rec[HEADER_KEY]
            else:
                records.append(rec)
    return header, records


def load_tasks(path: os.PathLike) -> Tuple[Dict[str, Any], List[TaskSample]]:
    header, records = read_jsonl(path)
    return header, [TaskSample.from_dict(r) for r in records]


def load_matches(path: os.PathLike) -> Tuple[Dict[str, Any], List[MatchRequest]]:
    header, records = read_jsonl(path)
    return header, [MatchRequest.from_dict(r) for r in records]


def load_manifests_jsonl(path: os.PathLike) -> List[McpServerManifest]:
    _, records = read_jsonl(path)
    return [McpServerManifest.from_dict(r) for r in records]
