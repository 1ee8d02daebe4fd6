"""Append-only JSONL audit log shared by the servers."""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional


class AuditLog:
    """Keeps records in memory and, when given a path, appends them to disk."""

    def __init__(self, path: Optional[os.PathLike] = None, clock: Optional[Callable[[], float]] = None):
        self.path = Path(path) if path is not None else None
        self.clock = clock
        self.records: List[Dict[str, Any]] = []
        self._lock = threading.Lock()

    def write(self, event: str, **fields: Any) -> Dict[str, Any]:
        record: Dict[str, Any] = {"event": event}
        if self.clock is not None:
            record["ts"] = self.clock()
        record.update(fields)
        line = json.dumps(record, sort_keys=False, default=str)
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
        return record

    def events(self, name: str) -> List[Dict[str, Any]]:
        with self._lock:
            return [r for r in self.records if r["event"] == name]

    def dumps(self) -> str:
        with self._lock:
            return "".join(json.dumps(r, default=str) + "\n" for r in self.records)
