from __future__ import annotations

import logging
import random
from typing import List, Sequence

from ..domain import DatasetConfig, MatchRequest, TaskSample, check_label
from ..errors import NullSamplingImpossible
from ..registry import Registry

logger = logging.getLogger(__name__)


def simulate_matches(samples: Sequence[TaskSample], cfg: DatasetConfig,
                     registry: Registry) -> List[MatchRequest]:
    """Emit correct, wrong and null match requests for ``samples``.

    Every required tool yields one ``correct`` request, and each task gets as
    many incorrect requests as it has correct ones. Which incorrect slots are
    ``null`` is drawn once over the whole dataset so the wrong/null split
    matches the configured ratio to within half a request. Wrong tools come
    from the task's own server (never a required tool); null tools come from
    one other server chosen uniformly among those large enough.
    """
    if len(registry.servers) < 2:
        raise NullSamplingImpossible("null matches need at least two servers in the registry")
    rng = random.Random(f"simulate:{cfg.seed}:{cfg.n_tools}")

    kept: List[TaskSample] = []
    for task in samples:
        server = task.server_id
        if server not in registry.servers:
            logger.warning("skipping %s: server %s not in registry", task.sample_id, server)
            continue
        if len(registry.tools_for(server)) < 2 * task.n_tools:
            logger.warning("skipping %s: %s has fewer than %d tools", task.sample_id, server, 2 * task.n_tools)
            continue
        kept.append(task)

    total = sum(t.n_tools for t in kept)
    n_null = int(cfg.null_ratio * total + 0.5)
    null_slots = set(rng.sample(range(total), n_null))

    out: List[MatchRequest] = []
    offset = 0
    for task in kept:
        k_null = sum(1 for s in range(offset, offset + task.n_tools) if s in null_slots)
        k_wrong = task.n_tools - k_null
        offset += task.n_tools
        required = {t.scope for t in task.required_tools}
        for tool in task.sorted_tools():
            out.append(MatchRequest(task, tool, "correct"))
        if k_wrong:
            pool = [t for t in registry.tools_for(task.server_id) if t.scope not in required]
            for tool in rng.sample(pool, k_wrong):
                out.append(MatchRequest(task, tool, "wrong"))
        if k_null:
            others = [s for s in registry.servers
                      if s != task.server_id and len(registry.tools_for(s)) >= k_null]
            if not others:
                raise NullSamplingImpossible(f"no other server has {k_null} tools for {task.sample_id}")
            server = rng.choice(others)
            for tool in rng.sample(list(registry.tools_for(server)), k_null):
                out.append(MatchRequest(task, tool, "null"))
    for req in out:
        check_label(req)
    if len(kept) < len(samples):
        logger.warning("simulated %d of %d tasks", len(kept), len(samples))
    return out
