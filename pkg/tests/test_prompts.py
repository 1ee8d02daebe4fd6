from __future__ import annotations

import hashlib

import pytest

from scopeguard import prompts

# frozen digests of the verbatim prompt assets; any edit to the text fails here
DIGESTS = {
    "guardrail": "09a5398ff15b7452bcbb3e106bcd6b18c98b75c4f6b8917b342f8be20d4beccb",
    "ideal_tool_description": "ca96c080d75ad7ef4a65271377ecc14b2a8a5a95dbb1ae3253b92a9e3d7e4fe0",
    "task_generation_multi": "412f51bda757c6c6eb784f5a93b0094629d192d4c1964569a23cf12d86f99327",
    "task_generation_single": "3465a98851344f0483e6c1603d6642356edaf7c10967a4db49f993669282a55e",
    "task_generation_user": "8aafaafacc25731051a7a066de04e0457ca57b77d3b44af5344761277873ef3e",
}


@pytest.mark.parametrize("name", sorted(DIGESTS))
def test_prompt_assets_are_frozen(name):
    assert hashlib.sha256(prompts.load(name).encode("utf-8")).hexdigest() == DIGESTS[name]


def test_ideal_tool_prompt_requests_tagged_block():
    text = prompts.ideal_tool_system()
    assert "<tool_assistant>\ntool: [describe the tool functionality]\n</tool_assistant>" in text


def test_single_tool_generation_prompt_fills_placeholders():
    text = prompts.task_generation_system([("get-page", "Fetch a page.")])
    assert "[Tool Name]" not in text and "[Tool Description]" not in text
    assert "get-page" in text and "Fetch a page." in text


def test_multi_tool_generation_prompt_lists_every_tool():
    tools = [("a-tool", "Does A."), ("b-tool", "Does B.")]
    text = prompts.task_generation_system(tools)
    assert "[Tools Information]" not in text
    assert prompts.format_tool_info("a-tool", "Does A.") + "\n\n" + prompts.format_tool_info("b-tool", "Does B.") in text
    with pytest.raises(ValueError):
        prompts.task_generation_system([])


def test_user_prompt_substitutes_count():
    assert prompts.task_generation_user(3).startswith("Execute the user request and generate 3 corresponding")


def test_unknown_version():
    with pytest.raises(FileNotFoundError):
        prompts.load("guardrail", "v9")
