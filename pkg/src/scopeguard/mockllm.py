"""Deterministic stand-in for the chat model, used with :class:`MockGateway`.

It recognizes the three prompt families shipped in :mod:`scopeguard.prompts`
and answers each with a pure function of the request text:

* task generation -> ``{"tasks": [...]}`` built from the tools' descriptions
* ideal-tool reformulation -> a ``<tool_assistant>`` block echoing the task
* guardrail -> a verdict based on word overlap between prompt and tool
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import List, Set, Tuple

from . import prompts
from .gateway import ChatRequest

_TOOL_INFO = re.compile(r"\*\*Tool Name:\*\*\n`(.*?)`\n\n\*\*Tool Description:\*\*\n`(.*?)`", re.S)
_N_TASKS = re.compile(r"generate (\d+) corresponding")
_WORD = re.compile(r"[a-z0-9]+")

STOPWORDS = frozenset(
    "a an and are as at be by for from get in into is it its of on or our the this to with "
    "we you your i me my us all any can could please need needs want would should will "
    "using use used via up out about so that which what when where who how list lists".split()
)

_PROJECTS = [
    "Q3 marketing campaign", "Atlas migration", "PROJ-456 rollout", "bug-fix/login-error branch",
    "Fabrikam onboarding", "quarterly compliance audit", "Helios data refresh", "Northwind launch",
    "release 2.4 retrospective", "customer churn study", "Orion platform upgrade", "spring sale readiness",
]

_TEMPLATES = [
    "Ahead of the {project}, I have to {phrase} before Friday's sync.",
    "For the {project}, could you take care of this: {phrase}.",
    "Our team is blocked on the {project} until someone can {phrase}.",
    "As part of the {project}, please make sure we {phrase} and report back.",
]


def content_words(text: str) -> Set[str]:
    words = set()
    for w in _WORD.findall(text.lower()):
        if len(w) > 3 and w.endswith("s") and not w.endswith("ss"):
            w = w[:-1]
        if w not in STOPWORDS:
            words.add(w)
    return words


def _first_sentence(description: str, name: str) -> str:
    text = description.strip().split("\n")[0].strip()
    if not text:
        text = " ".join(_WORD.findall(re.sub(r"([a-z])([A-Z])", r"\1 \2", name).lower()))
    text = re.split(r"(?<=[.!?])\s", text, maxsplit=1)[0].rstrip(".!? ")
    return text[:1].lower() + text[1:]


def _pick(seq: List[str], *parts: str) -> str:
    digest = hashlib.sha256("\x1f".join(parts).encode()).digest()
    return seq[int.from_bytes(digest[:4], "big") % len(seq)]


def synthesize_tasks(tools: List[Tuple[str, str]], n_tasks: int) -> List[str]:
    phrase = " and also ".join(_first_sentence(d, n) for n, d in tools)
    names = "|".join(n for n, _ in tools)
    tasks = []
    for i in range(n_tasks):
        template = _TEMPLATES[i % len(_TEMPLATES)]
        project = _pick(_PROJECTS, names, str(i))
        tasks.append(template.format(project=project, phrase=phrase))
    return tasks


def guardrail_verdict(prompt: str, tool_name: str, tool_description: str, cutoff: float = 0.5) -> bool:
    tool_words = content_words(_first_sentence(tool_description, tool_name))
    if not tool_words:
        tool_words = content_words(tool_name.replace("_", " "))
    if not tool_words:
        return False
    overlap = len(tool_words & content_words(prompt)) / len(tool_words)
    return overlap >= cutoff


def synthetic_responder(req: ChatRequest) -> str:
    system = req.system_prompt
    if system == prompts.ideal_tool_system():
        return f"<tool_assistant>\ntool: {req.user_prompt.strip()}\n</tool_assistant>"
    if system == prompts.guardrail_system():
        payload = json.loads(req.user_prompt)
        verdict = guardrail_verdict(payload["original prompt"], payload["tool name"], payload["tool description"])
        if req.structured_flag:
            return json.dumps({"appropriate": verdict})
        return "true" if verdict else "false"
    tools = _TOOL_INFO.findall(system)
    m = _N_TASKS.search(req.user_prompt)
    if tools and m:
        return json.dumps({"tasks": synthesize_tasks(tools, int(m.group(1)))})
    digest = hashlib.sha256((system + "\x00" + req.user_prompt).encode()).hexdigest()[:16]
    return f"mock-response-{digest}"
