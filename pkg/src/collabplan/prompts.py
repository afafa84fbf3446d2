"""Prompt templates for remote agents, tools and the trajectory judge.

Each template fixes the ``##key: value`` reply grammar the parsers in
:mod:`collabplan.core` expect. Bump ``TEMPLATE_VERSION`` whenever a template
changes so run logs can tell prompt revisions apart.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

from .core import (
    CANONICAL_TOOLS,
    FINE_BROWSER,
    SPACE_TOOL,
    Plan,
    Query,
    ToolGroup,
)

TEMPLATE_VERSION = "1"

_TOOL_NOTES = {
    "Global Sampling": "evenly spaced frames over the whole video; for broad questions",
    "Video Retrieval": "picks the one of six equal clips that best matches the key info",
    "Time Stamp Retrieval": "a 60 s window around a time the question mentions",
    "Image Retrieval": "top-scoring single frames (2 fps candidates) for objects or scenes",
    "Rough Browser": "reads 16 frames and summarises them; enough for most questions",
    "Fine Browser": "reads 32 frames of one clip; for small or fast details",
    "Space Tool": "spatial layout questions (relative position, direction, order)",
    "Grounding Tool": "returns the start/end time of the described moment",
}


def _tool_menu(tools: Iterable[str]) -> str:
    tools = list(tools)
    out = []
    for group, title in ((ToolGroup.SELECTION, "Frame selection"), (ToolGroup.BROWSING, "Browsing")):
        out.append(f"{title} tools:")
        for t in tools:
            if CANONICAL_TOOLS.get(t) is group:
                out.append(f"  - {t}: {_TOOL_NOTES.get(t, '')}")
    return "\n".join(out)


def _question(query: Query) -> str:
    text = f"Question: {query.text}"
    if query.options:
        text += "\nOptions: " + ", ".join(f"{l}: {t}" for l, t in query.options)
    return text


def generation_prompt(query: Query, tools: Iterable[str]) -> str:
    return f"""You plan how to answer a question about a video by calling tools in order.

{_tool_menu(tools)}

Rules: use at least one frame selection tool, then at least one browsing tool.
Write a short key info string naming what the tools should look for.

Task: {query.task.value}
{_question(query)}

Reply with exactly these two lines:
##key info: <what to look for>
##tool use: <Tool A>, <Tool B>"""


def communication_prompt(query: Query, own_memory: str, peers_memory: str, remaining: Plan) -> str:
    rest = ", ".join(f"<{t}>" for t in remaining.tools) or "(none)"
    return f"""You decide the next step of your own tool plan after reading what the other agents found.

{_question(query)}
Your memory:
{own_memory}
Other agents:
{peers_memory or "(no visible agents)"}
Remaining plan: {rest}

Keep going unless another agent's results show your plan misses something.
To keep going reply:
##tool call: continue()
To insert one tool before your remaining steps reply:
##tool call: add tool <Tool Name>
##key info: <what the new tool should look for>"""


def answer_prompt(query: Query, memory: str) -> str:
    if query.task.value == "TemporalGrounding":
        fmt = "##Timestamp: [<start>s - <end>s]\n##Reason: <one sentence>"
    elif query.options:
        fmt = "##Answer: <option letter>\n##Reason: <one sentence>"
    else:
        fmt = "##Answer: <short answer>\n##Reason: <one sentence>"
    return f"""Answer the question using only the memory below. Do not guess beyond it.
If the memory gives no basis for an answer, reply "##Answer: abstain".

Task: {query.task.value}
{_question(query)}
Memory:
{memory}

Format:
{fmt}"""


def summary_prompt(query: Query, reasons: Sequence[tuple[str, str, str]], consensus: str | None) -> str:
    listing = "\n".join(f"- {name} answered {ans}: {why}" for name, ans, why in reasons)
    if consensus is not None:
        rule = f"The group settled on {consensus}. Summarise only the agents that chose it."
    else:
        rule = "Combine every agent's answer, weighting answers that agree with each other."
    return f"""{_question(query)}
Agent answers:
{listing}

{rule}

Format:
##Final Answer: <answer>
##Reason Summary: <one paragraph>"""


def scoring_prompt(query: Query, candidates: Mapping[str, str], memory: str) -> str:
    listing = "\n".join(f"- {label}: {why}" for label, why in candidates.items())
    lines = "\n".join(f"##Score {label}: <0 to 1>" for label in candidates)
    return f"""Rate how well the evidence in memory supports each candidate answer.

{_question(query)}
Memory:
{memory}
Candidates:
{listing}

Format:
{lines}"""


def browser_prompt(tool: str, query: Query, key_info: str, frames: str) -> str:
    n = 32 if tool in (FINE_BROWSER, SPACE_TOOL) else 16
    focus = "spatial layout of the objects named in" if tool == SPACE_TOOL else "events described by"
    return f"""You are shown up to {n} video frames, each listed with the things visible in it.
{frames}

{_question(query)}
Key info: {key_info}

Summarise the frames around the {focus} the key info in a few sentences.
Give an answer only if the frames support one.

Format:
##Answer: <answer or abstain>
##Summary: <summary>"""


def grounding_prompt(key_info: str, frames: str) -> str:
    return f"""Find the time segment in the video that matches: {key_info}
Frames (with timestamps and visible things):
{frames}

Format:
##Timestamp: [<start>s - <end>s]
##Reason: <one sentence>"""


def judge_prompt(query: Query, memory: str) -> str:
    return f"""Judge whether this agent's tool trajectory is coherent: the plan is feasible,
each tool call fits the question, and steps are not repeated without cause.

{_question(query)}
Trajectory:
{memory}

Reply with one line, 1 for coherent and 0 otherwise:
##Score: <0 or 1>"""
