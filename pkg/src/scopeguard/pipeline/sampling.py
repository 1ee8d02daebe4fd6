from __future__ import annotations

import random
from typing import List, Tuple

from ..domain import McpServerManifest, ToolDescriptor
from ..errors import InsufficientTools

ToolSet = Tuple[ToolDescriptor, ...]


def sample_tool_sets(manifest: McpServerManifest, n: int, seed: int) -> List[ToolSet]:
    """Cover every tool of ``manifest`` with sets of ``n`` distinct tools.

    Tools are shuffled with a seeded RNG and cut into ceil(T/n) chunks. A
    short last chunk is filled with tools drawn uniformly from the earlier
    chunks, so the only repeats are those top-up draws.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    tools = list(manifest.tools)
    if len(tools) < n:
        raise InsufficientTools(f"{manifest.server_id} has {len(tools)} tools, need {n}")
    rng = random.Random(f"toolsets:{seed}:{manifest.server_id}:{n}")
    rng.shuffle(tools)
    chunks = [tools[i:i + n] for i in range(0, len(tools), n)]
    last = chunks[-1]
    if len(last) < n:
        earlier = tools[: len(tools) - len(last)]
        last.extend(rng.sample(earlier, n - len(last)))
    return [tuple(sorted(c, key=lambda t: t.name)) for c in chunks]
