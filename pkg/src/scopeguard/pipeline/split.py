from __future__ import annotations

import random
from collections import Counter
from typing import Any, Dict, List, Sequence, Tuple, TypeVar, Union

from ..domain import MatchRequest, TaskSample
from ..errors import SplitImpossible

Item = TypeVar("Item", TaskSample, MatchRequest)


def _server_of(item: Union[TaskSample, MatchRequest]) -> str:
    task = item.task if isinstance(item, MatchRequest) else item
    return task.server_id


def split_servers(samples: Sequence[Item], seed: int, val_fraction: float = 0.5) -> Tuple[List[str], List[str]]:
    """Partition the servers so validation holds roughly ``val_fraction`` of the samples."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    counts = Counter(_server_of(s) for s in samples)
    servers = sorted(counts)
    if len(servers) < 2:
        raise SplitImpossible("need samples from at least two servers")
    random.Random(f"split:{seed}").shuffle(servers)
    target = val_fraction * len(samples)
    best_k, best_gap, acc = 1, float("inf"), 0
    for k in range(1, len(servers)):
        acc += counts[servers[k - 1]]
        gap = abs(acc - target)
        if gap < best_gap:
            best_k, best_gap = k, gap
    return sorted(servers[:best_k]), sorted(servers[best_k:])


def split_dataset(samples: Sequence[Item], seed: int, val_fraction: float = 0.5) -> Tuple[List[Item], List[Item]]:
    """Server-disjoint (validation, test) split; input order is kept on each side."""
    val_servers, _ = split_servers(samples, seed, val_fraction)
    chosen = set(val_servers)
    validation = [s for s in samples if _server_of(s) in chosen]
    test = [s for s in samples if _server_of(s) not in chosen]
    return validation, test


def split_manifest(samples: Sequence[Item], seed: int, val_fraction: float = 0.5) -> Dict[str, Any]:
    val_servers, test_servers = split_servers(samples, seed, val_fraction)
    return {"seed": seed, "val_fraction": val_fraction, "validation": val_servers, "test": test_servers}
