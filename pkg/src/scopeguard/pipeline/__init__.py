"""Dataset generation, match simulation and corpus preprocessing."""

from .generation import generate_dataset, generate_tasks, parse_tasks, prepare_manifest
from .io import dumps_jsonl, load_matches, load_tasks, read_jsonl, write_jsonl
from .manifests import ingest_mcp_manifest, load_manifest_dir, write_manifest
from .sampling import sample_tool_sets
from .simulation import simulate_matches
from .split import split_dataset, split_manifest, split_servers
from .text import strip_argument_details
from .toucan import preprocess_toucan

__all__ = [
    "dumps_jsonl",
    "generate_dataset",
    "generate_tasks",
    "ingest_mcp_manifest",
    "load_manifest_dir",
    "load_matches",
    "load_tasks",
    "parse_tasks",
    "prepare_manifest",
    "preprocess_toucan",
    "read_jsonl",
    "sample_tool_sets",
    "simulate_matches",
    "split_dataset",
    "split_manifest",
    "split_servers",
    "strip_argument_details",
    "write_jsonl",
    "write_manifest",
]
