from __future__ import annotations

import json
import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from scopeguard.domain import DatasetConfig, McpServerManifest, TaskSample, ToolDescriptor
from scopeguard.errors import (CorpusSchemaError, InsufficientTools, ManifestParseError, NullSamplingImpossible,
                               SplitImpossible, TaskGenerationIncomplete)
from scopeguard.gateway import MockGateway
from scopeguard.mockllm import synthetic_responder
from scopeguard.pipeline import (dumps_jsonl, generate_dataset, generate_tasks, ingest_mcp_manifest,
                                 load_manifest_dir, load_tasks, parse_tasks, preprocess_toucan, read_jsonl,
                                 sample_tool_sets, simulate_matches, split_dataset, split_manifest,
                                 strip_argument_details, write_jsonl, write_manifest)
from scopeguard.registry import Registry


def _manifest(server, n_tools, prefix="tool"):
    return McpServerManifest(server, tuple(ToolDescriptor(f"{prefix}_{i:02d}", f"Does thing number {i} on {server}.",
                                                          server) for i in range(n_tools)))


# -- description cleanup -------------------------------------------------------


@pytest.mark.parametrize("case", json.loads((FIXTURES / "strip_golden.json").read_text()))
def test_strip_golden(case):
    assert strip_argument_details(case["input"]) == case["expected"]


@pytest.mark.parametrize("case", json.loads((FIXTURES / "strip_golden.json").read_text()))
def test_strip_idempotent_on_golden(case):
    once = strip_argument_details(case["input"])
    assert strip_argument_details(once) == once


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet=st.characters(blacklist_categories=["Cs"]), max_size=200))
def test_strip_idempotent(text):
    once = strip_argument_details(text)
    assert strip_argument_details(once) == once


def test_strip_parameters_block_mid_text():
    text = "Search pages.\nParameters:\n  query (str): words\n  limit (int): max\nReturns the best hits."
    assert strip_argument_details(text) == "Search pages.\nReturns the best hits."


# -- manifests -----------------------------------------------------------------


def test_ingest_ten_tool_wikipedia_manifest(manifests_dir):
    m = ingest_mcp_manifest(manifests_dir / "wikipedia.json")
    assert m.server_id == "wikipedia"
    assert len(m.tools) == 10
    assert all(isinstance(t, ToolDescriptor) for t in m.tools)


def test_bundled_manifests(manifests_dir):
    manifests = load_manifest_dir(manifests_dir)
    assert len(manifests) == 12
    assert sum(len(m.tools) for m in manifests) == 352


def test_manifest_round_trip(tmp_path):
    m = _manifest("demo", 3)
    write_manifest(m, tmp_path / "demo.json")
    assert ingest_mcp_manifest(tmp_path / "demo.json") == m


def test_raw_tools_list_uses_file_stem(tmp_path):
    (tmp_path / "weather.json").write_text(json.dumps({"tools": [{"name": "getForecast", "description": "x"}]}))
    m = ingest_mcp_manifest(tmp_path / "weather.json")
    assert m.server_id == "weather" and m.tools[0].scope == "weather:get-forecast"


def test_jsonl_manifest(tmp_path):
    path = tmp_path / "srv.jsonl"
    path.write_text('{"server_id": "srv", "language_tag": "en"}\n{"name": "a", "description": "A"}\n'
                    '{"name": "b"}\n')
    m = ingest_mcp_manifest(path)
    assert [t.name for t in m.tools] == ["a", "b"] and m.tools[1].description == ""


@pytest.mark.parametrize("content,line", [
    ('{"server_id": "s", "tools": [\n{"name": "a"},\n{"name": "a"}\n]}', 3),
    ('{"server_id": "s", "tools": [\n{"name": "a", "description": 5}\n]}', 2),
    ('{"server_id": "s", "tools": [\n{"nope": 1}\n]}', None),
    ('{"server_id": "s",\n "tools": [', 2),
    ('{"server_id": "s", "tools": []}', None),
])
def test_manifest_parse_errors(tmp_path, content, line):
    path = tmp_path / "bad.json"
    path.write_text(content)
    with pytest.raises(ManifestParseError) as info:
        ingest_mcp_manifest(path)
    assert info.value.line == line
    assert str(path) in str(info.value)


def test_jsonl_parse_error_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"name": "a"}\n{oops\n')
    with pytest.raises(ManifestParseError) as info:
        ingest_mcp_manifest(path)
    assert info.value.line == 2


# -- tool-set sampling ---------------------------------------------------------


def test_ten_tools_n3_gives_four_sets_two_repeats():
    sets = sample_tool_sets(_manifest("w", 10), 3, seed=0)
    assert len(sets) == 4
    counts = Counter(t for s in sets for t in s)
    assert len(counts) == 10
    assert sorted(counts.values()).count(2) == 2
    assert max(counts.values()) == 2


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(1, 3), st.integers(0, 1000))
def test_sampling_covers_every_tool(n_tools, n, seed):
    m = _manifest("s", n_tools)
    if n_tools < n:
        with pytest.raises(InsufficientTools):
            sample_tool_sets(m, n, seed)
        return
    sets = sample_tool_sets(m, n, seed)
    assert len(sets) == math.ceil(n_tools / n)
    assert all(len(set(s)) == n for s in sets)
    counts = Counter(t for s in sets for t in s)
    assert set(counts) == set(m.tools)
    assert sum(counts.values()) - n_tools == len(sets) * n - n_tools
    assert sample_tool_sets(m, n, seed) == sets


# -- task generation -----------------------------------------------------------


@pytest.mark.parametrize("completion,expected", [
    ('{"tasks": ["a", "b", "a"]}', ["a", "b"]),
    ('["x", " y "]', ["x", "y"]),
    ("1. first\n2) second\n- third\n\n", ["first", "second", "third"]),
])
def test_parse_tasks(completion, expected):
    assert parse_tasks(completion) == expected


def test_generate_three_distinct_tasks():
    m = _manifest("demo", 2)
    tasks = generate_tasks(m.tools[:1], 3, MockGateway(responder=synthetic_responder))
    assert len(tasks) == 3 == len({t.task_text for t in tasks})
    assert all(t.n_tools == 1 and t.source == "generated" for t in tasks)


def test_generate_shortfall():
    gw = MockGateway(responder=lambda r: '{"tasks": ["only one"]}')
    with pytest.raises(TaskGenerationIncomplete) as info:
        generate_tasks(_manifest("demo", 1).tools, 3, gw)
    assert info.value.shortfall == 2


def test_full_run_task_counts(raw_registry):
    gw = MockGateway(responder=synthetic_responder)
    tasks = generate_dataset(raw_registry.manifests, 1, 3, seed=7, gateway=gw)
    assert len(tasks) == 352 * 3 == 1056
    per_server = {}
    generate_dataset(raw_registry.manifests, 3, 3, seed=7, gateway=gw, sets_per_server=per_server)
    assert per_server == {s: math.ceil(len(raw_registry.tools_for(s)) / 3) for s in raw_registry.servers}


def test_generation_prompt_sees_stripped_descriptions():
    tool = ToolDescriptor("get_page", "Fetch a page.\nArgs:\n  title (str): page title", "wiki")
    gw = MockGateway(responder=synthetic_responder)
    generate_dataset([McpServerManifest("wiki", (tool,))], 1, 1, seed=0, gateway=gw)
    assert "title (str)" not in gw.chat_calls[0].system_prompt


def test_parallel_generation_is_order_stable(raw_registry):
    sub = [raw_registry.manifest(s) for s in ("arxiv", "wikipedia", "postgres")]
    seq = generate_dataset(sub, 2, 3, 5, MockGateway(responder=synthetic_responder))
    par = generate_dataset(sub, 2, 3, 5, MockGateway(responder=synthetic_responder), max_workers=8)
    assert seq == par


# -- simulation ----------------------------------------------------------------


def test_ten_correct_pairs_give_eight_wrong_two_null():
    reg = Registry([_manifest("a", 20), _manifest("b", 20)])
    tools = reg.tools_for("a")
    tasks = [TaskSample(f"task {i}", frozenset({tools[i]}), 1, "generated", f"s{i}") for i in range(10)]
    out = simulate_matches(tasks, DatasetConfig(1, seed=3), reg)
    labels = Counter(r.label for r in out)
    assert labels == {"correct": 10, "wrong": 8, "null": 2}


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10_000), st.integers(5, 40))
def test_simulation_invariants(n, seed, n_tasks):
    reg = Registry([_manifest("a", 12), _manifest("b", 9), _manifest("c", 7)])
    tools = reg.tools_for("a")
    tasks = [TaskSample(f"t{i}", frozenset(tools[(i + k) % 12] for k in range(n)), n, "generated", f"s{i}")
             for i in range(n_tasks)]
    out = simulate_matches(tasks, DatasetConfig(n, seed=seed), reg)
    labels = Counter(r.label for r in out)
    assert labels["correct"] == n * n_tasks == labels["wrong"] + labels["null"]
    assert labels["null"] == int(0.2 * n * n_tasks + 0.5)
    for r in out:
        if r.label == "wrong":
            assert r.requested_tool.server_id == "a" and r.requested_tool not in r.task.required_tools
        if r.label == "null":
            assert r.requested_tool.server_id != "a"
    assert simulate_matches(tasks, DatasetConfig(n, seed=seed), reg) == out


def test_simulation_needs_two_servers():
    reg = Registry([_manifest("a", 5)])
    task = TaskSample("t", frozenset({reg.tools_for("a")[0]}), 1, "generated", "s")
    with pytest.raises(NullSamplingImpossible):
        simulate_matches([task], DatasetConfig(1), reg)


def test_simulation_skips_small_servers():
    reg = Registry([_manifest("a", 3), _manifest("b", 10)])
    tools = reg.tools_for("a")
    task = TaskSample("t", frozenset(tools[:2]), 2, "generated", "s")
    assert simulate_matches([task], DatasetConfig(2), reg) == []


# -- splits --------------------------------------------------------------------


def _tasks_over(servers):
    out = []
    for s, n in servers.items():
        m = _manifest(s, n)
        out += [TaskSample(f"{s} {t.name}", frozenset({t}), 1, "generated", f"{s}/{t.name}") for t in m.tools]
    return out


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.sampled_from(list("abcdefgh")), st.integers(1, 12), min_size=2), st.integers(0, 99),
       st.sampled_from([0.3, 0.5, 0.7]))
def test_split_is_server_disjoint_and_complete(servers, seed, frac):
    tasks = _tasks_over(servers)
    val, test = split_dataset(tasks, seed, frac)
    assert val and test
    assert {t.server_id for t in val}.isdisjoint({t.server_id for t in test})
    assert len(val) + len(test) == len(tasks)
    man = split_manifest(tasks, seed, frac)
    assert sorted(man["validation"] + man["test"]) == sorted(servers)


def test_split_errors():
    with pytest.raises(SplitImpossible):
        split_dataset(_tasks_over({"a": 3}), 0)
    with pytest.raises(ValueError):
        split_dataset(_tasks_over({"a": 3, "b": 3}), 0, 1.0)


# -- jsonl ---------------------------------------------------------------------


def test_jsonl_header_round_trip(tmp_path):
    tasks = _tasks_over({"a": 2})
    path = tmp_path / "t.jsonl"
    write_jsonl(path, (t.to_dict() for t in tasks), {"seed": 1, "kind": "tasks"})
    first = path.read_text().splitlines()[0]
    assert json.loads(first) == {"_header": {"kind": "tasks", "seed": 1}}
    header, loaded = load_tasks(path)
    assert header["seed"] == 1 and loaded == tasks
    assert dumps_jsonl([], {"a": 1}) == '{"_header": {"a": 1}}\n'
    assert read_jsonl(path)[1][0]["sample_id"] == "a/tool_00"


# -- toucan --------------------------------------------------------------------


def _server(sid, n_tools, desc="Handles {i} for the {sid} service.", prefix="op"):
    return {"server_id": sid, "tools": [{"name": f"{prefix}_{i}", "description": desc.format(i=i, sid=sid)}
                                        for i in range(n_tools)]}


def _replica_corpus():
    servers = [_server(f"srv{k:03d}", 4 + k % 5) for k in range(118)]
    # exact duplicate tool sets: only the lexicographically first id survives
    servers += [{"server_id": "srv000-copy", "tools": servers[0]["tools"]},
                {"server_id": "srv001-mirror", "tools": servers[1]["tools"]}]
    # non-English
    servers += [_server(f"jp{k}", 6, desc="検索サービスを一覧表示します {i}") for k in range(3)]
    # too small at N=2 (need 4 tools), including one pushed under by empty descriptions
    servers += [_server("tiny", 3)]
    servers += [{"server_id": "hollow", "tools": _server("hollow", 3)["tools"] + [{"name": "x", "description": ""},
                                                                                 {"name": "y"}]}]
    tasks = [
        {"sample_id": "ok", "task_text": "do two things",
         "tools": [{"server_id": "srv005", "name": "op_0"}, {"server_id": "srv005", "name": "op_1"}]},
        {"sample_id": "cross", "task_text": "spans servers",
         "tools": [{"server_id": "srv005", "name": "op_0"}, {"server_id": "srv006", "name": "op_0"}]},
        {"sample_id": "one", "task_text": "only one tool", "tools": [{"server_id": "srv007", "name": "op_0"}]},
        {"sample_id": "small", "task_text": "tiny server",
         "tools": [{"server_id": "tiny", "name": "op_0"}, {"server_id": "tiny", "name": "op_1"}]},
    ]
    return {"servers": servers, "tasks": tasks}


def test_toucan_replica_retains_118_servers(tmp_path):
    path = tmp_path / "corpus.json"
    path.write_text(json.dumps(_replica_corpus()))
    res = preprocess_toucan(path, n=2)
    assert len(res.manifests) == 118
    assert res.report["dropped_duplicate_servers"] == 2
    assert res.report["dropped_non_english"] == 3
    assert res.report["dropped_small_servers"] == 2
    assert res.report["dropped_empty_description_tools"] == 2
    assert [s.sample_id for s in res.samples] == ["ok"]
    assert res.samples[0].source == "toucan" and res.samples[0].n_tools == 2


def test_toucan_duplicate_keeps_one():
    corpus = {"servers": [_server("b", 4), {"server_id": "a", "tools": _server("b", 4)["tools"]}], "tasks": []}
    assert [m.server_id for m in preprocess_toucan(corpus, 1).manifests] == ["a"]


def test_toucan_drops_three_tool_server_at_n2():
    corpus = {"servers": [_server("small", 3), _server("big", 4)], "tasks": []}
    assert [m.server_id for m in preprocess_toucan(corpus, 2).manifests] == ["big"]


@pytest.mark.parametrize("corpus", [[], {"servers": []}, {"servers": [{"tools": []}], "tasks": []},
                                    {"servers": [], "tasks": [{"task_text": "x", "tools": []}]}])
def test_toucan_schema_errors(corpus):
    with pytest.raises(CorpusSchemaError):
        preprocess_toucan(corpus, 1)


def test_toucan_bad_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{nope")
    with pytest.raises(CorpusSchemaError):
        preprocess_toucan(path, 1)
