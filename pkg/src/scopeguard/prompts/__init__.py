"""Versioned prompt assets.

The text files in this directory are loaded byte-for-byte; do not reflow them.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from typing import Sequence

VERSION = "v1"


@lru_cache(maxsize=None)
def load(name: str, version: str = VERSION) -> str:
    data = resources.files(__name__).joinpath(f"{name}_{version}.txt").read_bytes()
    return data.decode("utf-8")


def ideal_tool_system() -> str:
    return load("ideal_tool_description")


def guardrail_system() -> str:
    return load("guardrail")


def format_tool_info(name: str, description: str) -> str:
    return f"**Tool Name:**\n`{name}`\n\n**Tool Description:**\n`{description}`"


def task_generation_system(tools: Sequence[tuple]) -> str:
    """System prompt for generating tasks that need every ``(name, description)`` in ``tools``."""
    if not tools:
        raise ValueError("at least one tool is required")
    if len(tools) == 1:
        name, description = tools[0]
        text = load("task_generation_single")
        return text.replace("[Tool Name]", name, 1).replace("[Tool Description]", description, 1)
    info = "\n\n".join(format_tool_info(n, d) for n, d in tools)
    return load("task_generation_multi").replace("[Tools Information]", info, 1)


def task_generation_user(n_tasks: int) -> str:
    return load("task_generation_user").replace("{n_tasks}", str(n_tasks))
