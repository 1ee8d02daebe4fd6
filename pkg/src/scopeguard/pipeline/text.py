"""Cleanup of tool descriptions before they are shown to the task generator."""

from __future__ import annotations

import re
from typing import List

_HEADER = re.compile(
    r"^\s*(?:#{1,6}\s*)?[*_]*(?:args|arguments|parameters|params)[*_]*\s*(?::|$)", re.I
)
_HEADING_ONLY = re.compile(r"^\s*#{1,6}\s*[*_]*(?:args|arguments|parameters|params)[*_]*\s*:?\s*$", re.I)
_TYPED_ARG = re.compile(r"^\s*(?:[-*•]\s*)?`?[A-Za-z_][\w.\-]*`?\s*\([^()\n]{1,60}\)\s*:")
_BULLET = re.compile(r"^\s*[-*•]\s+\S")


def _is_header(line: str) -> bool:
    if _HEADING_ONLY.match(line):
        return True
    m = _HEADER.match(line)
    # a bare "Args" word with no colon only counts as a markdown heading
    return bool(m) and ":" in m.group(0)


def strip_argument_details(description: str) -> str:
    """Remove argument sections and ``name (type): ...`` bullet runs.

    A section starts at a line headed Args/Arguments/Parameters/Params and
    runs over indented, bulleted or blank lines until prose resumes at the
    left margin. Idempotent; text without argument details only has its
    blank-line runs collapsed and outer whitespace trimmed.
    """
    kept: List[str] = []
    in_block = False
    for line in description.splitlines():
        if _is_header(line):
            in_block = True
            continue
        if in_block:
            if not line.strip() or line[:1].isspace() or _BULLET.match(line) or _TYPED_ARG.match(line):
                continue
            in_block = False
        if _TYPED_ARG.match(line):
            continue
        kept.append(line.rstrip())
    out: List[str] = []
    for line in kept:
        if not line and (not out or not out[-1]):
            continue
        out.append(line)
    return "\n".join(out).strip()
