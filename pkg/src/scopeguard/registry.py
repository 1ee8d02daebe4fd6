"""In-memory tool registry built from MCP server manifests."""

from __future__ import annotations

import os
from typing import Callable, Dict, Iterable, Iterator, List, Sequence, Tuple

from .domain import McpServerManifest, ToolDescriptor
from .errors import ToolNotRegistered


class Registry:
    def __init__(self, manifests: Iterable[McpServerManifest]):
        self._manifests: Dict[str, McpServerManifest] = {}
        self._by_scope: Dict[str, ToolDescriptor] = {}
        for m in sorted(manifests, key=lambda m: m.server_id):
            if m.server_id in self._manifests:
                raise ValueError(f"duplicate server {m.server_id!r}")
            self._manifests[m.server_id] = m
            for tool in m.tools:
                if tool.scope in self._by_scope:
                    raise ValueError(f"scope collision on {tool.scope!r}")
                self._by_scope[tool.scope] = tool

    @classmethod
    def from_dir(cls, path: os.PathLike) -> "Registry":
        from .pipeline.manifests import load_manifest_dir

        return cls(load_manifest_dir(path))

    @property
    def servers(self) -> List[str]:
        return list(self._manifests)

    @property
    def manifests(self) -> List[McpServerManifest]:
        return list(self._manifests.values())

    def manifest(self, server_id: str) -> McpServerManifest:
        return self._manifests[server_id]

    def tools_for(self, server_id: str) -> Tuple[ToolDescriptor, ...]:
        try:
            return self._manifests[server_id].tools
        except KeyError:
            raise ToolNotRegistered(f"unknown server {server_id!r}") from None

    def all_tools(self) -> List[ToolDescriptor]:
        return [self._by_scope[s] for s in sorted(self._by_scope)]

    def resolve(self, scope: str) -> ToolDescriptor:
        try:
            return self._by_scope[scope]
        except KeyError:
            raise ToolNotRegistered(f"unknown scope {scope!r}") from None

    def __contains__(self, scope: object) -> bool:
        return scope in self._by_scope

    def __iter__(self) -> Iterator[ToolDescriptor]:
        return iter(self.all_tools())

    def __len__(self) -> int:
        return len(self._by_scope)

    def subset(self, server_ids: Sequence[str]) -> "Registry":
        return Registry(self._manifests[s] for s in server_ids)

    def map_descriptions(self, fn: Callable[[str], str]) -> "Registry":
        return Registry(
            McpServerManifest(
                m.server_id,
                tuple(ToolDescriptor(t.name, fn(t.description), t.server_id) for t in m.tools),
                m.language_tag,
            )
            for m in self._manifests.values()
        )
