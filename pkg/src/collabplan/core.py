"""Domain types shared across the package and the agent-output grammars.

Every value here is immutable once built. Parsers are pure functions that
raise a :class:`GrammarError` subclass when a completion does not follow the
line-anchored ``##key: value`` grammar the agents are prompted with.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Union


# ---------------------------------------------------------------------------
# Tools
# ---------------------------------------------------------------------------

GLOBAL_SAMPLING = "Global Sampling"
VIDEO_RETRIEVAL = "Video Retrieval"
TIMESTAMP_RETRIEVAL = "Time Stamp Retrieval"
IMAGE_RETRIEVAL = "Image Retrieval"
ROUGH_BROWSER = "Rough Browser"
FINE_BROWSER = "Fine Browser"
SPACE_TOOL = "Space Tool"
GROUNDING_TOOL = "Grounding Tool"


class ToolGroup(str, Enum):
    SELECTION = "Selection"
    BROWSING = "Browsing"


CANONICAL_TOOLS: Mapping[str, ToolGroup] = MappingProxyType(
    {
        GLOBAL_SAMPLING: ToolGroup.SELECTION,
        VIDEO_RETRIEVAL: ToolGroup.SELECTION,
        TIMESTAMP_RETRIEVAL: ToolGroup.SELECTION,
        IMAGE_RETRIEVAL: ToolGroup.SELECTION,
        ROUGH_BROWSER: ToolGroup.BROWSING,
        FINE_BROWSER: ToolGroup.BROWSING,
        SPACE_TOOL: ToolGroup.BROWSING,
        GROUNDING_TOOL: ToolGroup.BROWSING,
    }
)

# Names models are known to use for a registered tool.
TOOL_ALIASES: Mapping[str, str] = MappingProxyType({"uniform sampling": GLOBAL_SAMPLING})

DEFAULT_MAX_PLAN_LEN = 5


def normalize_tool_name(name: str) -> str:
    return " ".join(name.split()).lower()


def resolve_tool(name: str, registry: Iterable[str]) -> str:
    """Map a model-written tool name onto its registered spelling.

    Matching ignores case and collapses whitespace. Raises UnknownTool when
    nothing in ``registry`` matches.
    """
    table = {normalize_tool_name(n): n for n in registry}
    key = normalize_tool_name(name)
    if key in table:
        return table[key]
    alias = TOOL_ALIASES.get(key)
    if alias is not None and normalize_tool_name(alias) in table:
        return table[normalize_tool_name(alias)]
    raise UnknownTool(name.strip())


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class GrammarError(ValueError):
    """A completion that does not follow the expected output grammar."""


class MissingKeyInfo(GrammarError):
    pass


class MissingToolUse(GrammarError):
    pass


class UnknownTool(GrammarError):
    def __init__(self, name: str):
        super().__init__(f"unknown tool: {name!r}")
        self.name = name


class EmptyPlan(GrammarError):
    pass


class UnparsableDecision(GrammarError):
    pass


class AddToolMissingKeyInfo(GrammarError):
    pass


class MissingAnswer(GrammarError):
    pass


class LabelOutOfRange(GrammarError):
    pass


class MalformedTimestamp(GrammarError):
    pass


class PlanError(ValueError):
    """A syntactically valid plan that breaks the planning workflow rules."""


# ---------------------------------------------------------------------------
# Queries and videos
# ---------------------------------------------------------------------------


class Task(str, Enum):
    MULTIPLE_CHOICE = "MultipleChoice"
    OPEN_ENDED = "OpenEnded"
    TEMPORAL_GROUNDING = "TemporalGrounding"
    SPATIAL = "Spatial"


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    options: tuple[tuple[str, str], ...] = ()
    task: Task = Task.OPEN_ENDED

    def __post_init__(self) -> None:
        object.__setattr__(self, "options", tuple((str(l), str(t)) for l, t in self.options))
        object.__setattr__(self, "task", Task(self.task))
        labels = [label for label, _ in self.options]
        expected = [chr(ord("A") + i) for i in range(len(labels))]
        if labels != expected:
            raise ValueError(f"option labels must run contiguously from 'A', got {labels}")
        if (self.task is Task.MULTIPLE_CHOICE) != bool(self.options):
            raise ValueError("a query has options exactly when it is multiple choice")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.options)

    @property
    def forced_choice(self) -> bool:
        return self.task is Task.MULTIPLE_CHOICE


@dataclass(frozen=True)
class VideoHandle:
    id: str
    duration: float
    fps: float
    frame_count: int

    def __post_init__(self) -> None:
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if abs(self.frame_count - math.floor(self.duration * self.fps)) > 1:
            raise ValueError("frame_count disagrees with duration * fps")

    def frame_at(self, t: float) -> int:
        return math.floor(t * self.fps + 1e-9)


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanStep:
    tool: str
    key_info: str


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...]
    key_info: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def tools(self) -> tuple[str, ...]:
        return tuple(s.tool for s in self.steps)

    def __len__(self) -> int:
        return len(self.steps)

    @classmethod
    def of(cls, tools: Iterable[str], key_info: str) -> "Plan":
        return cls(tuple(PlanStep(t, key_info) for t in tools), key_info)


def check_plan(
    plan: Plan,
    groups: Mapping[str, ToolGroup] = CANONICAL_TOOLS,
    max_len: int = DEFAULT_MAX_PLAN_LEN,
) -> Plan:
    """Enforce the workflow rules a generated plan must meet.

    Parsing only checks syntax; this adds the length bound and the rule that a
    plan selects frames at least once and browses at least once.
    """
    if not 1 <= len(plan) <= max_len:
        raise PlanError(f"plan length {len(plan)} outside [1, {max_len}]")
    kinds = {groups.get(t) for t in plan.tools}
    if ToolGroup.SELECTION not in kinds:
        raise PlanError("plan has no frame-selection tool")
    if ToolGroup.BROWSING not in kinds:
        raise PlanError("plan has no browsing tool")
    return plan


# ---------------------------------------------------------------------------
# Answers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Choice:
    label: str


@dataclass(frozen=True)
class FreeText:
    text: str


@dataclass(frozen=True)
class Span:
    start: float
    end: float

    def __post_init__(self) -> None:
        if not self.start <= self.end:
            raise ValueError(f"span start {self.start} after end {self.end}")


@dataclass(frozen=True)
class Abstain:
    pass


Answer = Union[Choice, FreeText, Span, Abstain]


@dataclass(frozen=True)
class AnswerRecord:
    answer: Answer
    reason: str = ""

    @property
    def abstained(self) -> bool:
        return isinstance(self.answer, Abstain)


ABSTAIN = AnswerRecord(Abstain(), "")


class InvalidSpan(ValueError):
    """Interval whose start lies after its end."""


def compute_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Temporal IoU of two closed intervals.

    A zero-length union only happens for two points; identical points count
    as a perfect match, distinct ones as none.
    """
    (s1, e1), (s2, e2) = a, b
    if s1 > e1 or s2 > e2:
        raise InvalidSpan(f"inverted interval in {a} / {b}")
    union = max(e1, e2) - min(s1, s2)
    if union <= 0:
        return 1.0 if (s1, e1) == (s2, e2) else 0.0
    inter = max(0.0, min(e1, e2) - max(s1, s2))
    return inter / union


# ---------------------------------------------------------------------------
# Tool outputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameSet:
    frames: tuple[int, ...]

    def __post_init__(self) -> None:
        frames = tuple(int(f) for f in self.frames)
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("frame indices must be strictly increasing")
        object.__setattr__(self, "frames", frames)


@dataclass(frozen=True)
class ClipSpan:
    start: float
    end: float
    clip_index: int | None = None
    frames: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.start <= self.end:
            raise ValueError(f"bad clip span ({self.start}, {self.end})")
        object.__setattr__(self, "frames", tuple(int(f) for f in self.frames))


@dataclass(frozen=True)
class TimeSpanResult:
    start: float
    end: float
    reason: str = ""
    frames: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.start <= self.end:
            raise ValueError(f"bad time span ({self.start}, {self.end})")
        object.__setattr__(self, "frames", tuple(int(f) for f in self.frames))


@dataclass(frozen=True)
class BrowseResult:
    answer: Answer | None
    summary: str
    frames: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(int(f) for f in self.frames))


@dataclass(frozen=True)
class ToolFailure:
    reason: str


ToolOutput = Union[FrameSet, ClipSpan, TimeSpanResult, BrowseResult, ToolFailure]


# ---------------------------------------------------------------------------
# Communication and memory
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Continue:
    pass


@dataclass(frozen=True)
class AddTool:
    tool: str
    key_info: str

    def __post_init__(self) -> None:
        if not self.key_info.strip():
            raise ValueError("AddTool needs key info")


CommDecision = Union[Continue, AddTool]


@dataclass(frozen=True)
class TurnRecord:
    turn_index: int
    executed_tool: str
    key_info: str
    tool_output: ToolOutput
    decision: CommDecision = Continue()
    next_tool: str | None = None

    def __post_init__(self) -> None:
        if self.turn_index < 1:
            raise ValueError("turn indices are 1-based")


@dataclass(frozen=True)
class AgentMemory:
    agent_name: str
    initial_plan: Plan
    key_info: str
    turns: tuple[TurnRecord, ...] = ()
    answer: AnswerRecord | None = None
    summary: str | None = None
    plan_finished: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        if self.plan_finished and self.answer is None and self.summary is None:
            raise ValueError("a finished plan must carry an answer or a summary")

    @property
    def tool_calls(self) -> int:
        return len(self.turns)


@dataclass(frozen=True, eq=True)
class MemoryBuffer:
    entries: Mapping[str, AgentMemory] = field(default_factory=dict)

    def __post_init__(self) -> None:
        entries = dict(sorted(self.entries.items()))
        for name, mem in entries.items():
            if mem.agent_name != name:
                raise ValueError(f"entry {name!r} holds memory of {mem.agent_name!r}")
        object.__setattr__(self, "entries", MappingProxyType(entries))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MemoryBuffer):
            return NotImplemented
        return dict(self.entries) == dict(other.entries)

    __hash__ = None  # type: ignore[assignment]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, name: str) -> AgentMemory:
        return self.entries[name]

    def restrict(self, names: Iterable[str]) -> "MemoryBuffer":
        keep = set(names)
        return MemoryBuffer({k: v for k, v in self.entries.items() if k in keep})


# ---------------------------------------------------------------------------
# Parsers
# ---------------------------------------------------------------------------

_FLAGS = re.IGNORECASE | re.MULTILINE


def grammar_line(raw: str, key: str) -> str | None:
    m = re.search(rf"^[ \t]*##[ \t]*{key}[ \t]*:[ \t]*(.*?)[ \t]*$", raw, _FLAGS)
    return None if m is None else m.group(1)


def _block(raw: str, keys: Iterable[str]) -> str | None:
    """Value of the first ``##key:`` line plus continuation lines."""
    alternation = "|".join(keys)
    m = re.search(rf"^[ \t]*##[ \t]*(?:{alternation})[ \t]*:[ \t]*(.*)$", raw, _FLAGS)
    if m is None:
        return None
    lines = [m.group(1)]
    for nxt in raw[m.end():].splitlines()[1:]:
        if nxt.lstrip().startswith("##"):
            break
        lines.append(nxt)
    return "\n".join(lines).strip()


_BRACKETED = re.compile(r"<([^<>]*)>")


def parse_plan(raw: str, registry: Iterable[str]) -> Plan:
    registry = list(registry)
    key_info = grammar_line(raw, r"key[ \t]*info")
    if key_info is None or not key_info:
        raise MissingKeyInfo("no '##key info:' line")
    tool_line = grammar_line(raw, r"tool[ \t]*use")
    if tool_line is None:
        raise MissingToolUse("no '##tool use:' line")
    names = [n for n in _BRACKETED.findall(tool_line)]
    if not names:
        raise EmptyPlan("'##tool use:' names no tools")
    tools = [resolve_tool(n, registry) for n in names]
    return Plan.of(tools, key_info)


def render_plan(plan: Plan) -> str:
    tools = ", ".join(f"<{t}>" for t in plan.tools)
    return f"##key info: {plan.key_info}\n##tool use: {tools}"


_CONTINUE = re.compile(r"^continue\s*\(\s*\)\s*\.?$", re.IGNORECASE)
_ADD_TOOL = re.compile(r"^add[ _]?tool\b\s*(.*)$", re.IGNORECASE)
_TOOL_NAME_KW = re.compile(r"tool[ _]?name\s*=\s*['\"]?<?([^'\"<>)]+)>?['\"]?", re.IGNORECASE)


def parse_comm_decision(raw: str, registry: Iterable[str]) -> CommDecision:
    call = grammar_line(raw, r"tool[ \t]*call")
    if call is None:
        raise UnparsableDecision("no '##tool call:' line")
    if _CONTINUE.match(call):
        return Continue()
    m = _ADD_TOOL.match(call)
    if m is None:
        raise UnparsableDecision(f"unrecognised tool call {call!r}")
    rest = m.group(1)
    bracketed = _BRACKETED.findall(rest)
    if bracketed:
        name = bracketed[0]
    else:
        kw = _TOOL_NAME_KW.search(rest)
        if kw is None:
            raise UnparsableDecision(f"add tool without a tool name: {call!r}")
        name = kw.group(1)
    tool = resolve_tool(name, registry)
    key_info = grammar_line(raw, r"key[ \t]*info")
    if not key_info:
        raise AddToolMissingKeyInfo(f"add tool <{tool}> without '##key info:'")
    return AddTool(tool, key_info)


def render_decision(decision: CommDecision) -> str:
    if isinstance(decision, AddTool):
        return f"##tool call: add tool <{decision.tool}>\n##key info: {decision.key_info}"
    return "##tool call: continue()"


_NUM = r"(\d+(?:\.\d+)?)"
_TIMESTAMP = re.compile(rf"^\[?\s*{_NUM}\s*s?\s*-\s*{_NUM}\s*s?\s*\]?$", re.IGNORECASE)
_LABEL = re.compile(r"^\(?([A-Za-z])\)?(?=$|[\s:.),\-])")
_ABSTAIN_WORDS = {"abstain", "none", "n/a", "unknown"}


def parse_timestamp(text: str) -> Span:
    m = _TIMESTAMP.match(text.strip())
    if m is None:
        raise MalformedTimestamp(f"cannot read a time span from {text!r}")
    start, end = float(m.group(1)), float(m.group(2))
    if start > end:
        raise MalformedTimestamp(f"span start after end in {text!r}")
    return Span(start, end)


def parse_answer(raw: str, query: Query) -> AnswerRecord:
    reason = _block(raw, [r"reason[ \t]*summary", "reason", "summary"]) or ""
    value = grammar_line(raw, "answer")
    if value is not None and value.strip().lower() in _ABSTAIN_WORDS:
        return AnswerRecord(Abstain(), reason)

    if query.task is Task.TEMPORAL_GROUNDING:
        stamp = grammar_line(raw, "timestamp")
        if stamp is None:
            raise MissingAnswer("no '##Timestamp:' line")
        return AnswerRecord(parse_timestamp(stamp), reason)

    if value is None or not value:
        raise MissingAnswer("no '##Answer:' line")
    if query.task is Task.MULTIPLE_CHOICE:
        m = _LABEL.match(value)
        label = m.group(1).upper() if m else value
        if label not in query.labels:
            raise LabelOutOfRange(f"{label!r} is not one of {list(query.labels)}")
        return AnswerRecord(Choice(label), reason)
    return AnswerRecord(FreeText(value), reason)


def render_answer(record: AnswerRecord) -> str:
    a = record.answer
    if isinstance(a, Span):
        head = f"##Timestamp: [{fmt_num(a.start)}s - {fmt_num(a.end)}s]"
    elif isinstance(a, Choice):
        head = f"##Answer: {a.label}"
    elif isinstance(a, FreeText):
        head = f"##Answer: {a.text}"
    else:
        head = "##Answer: abstain"
    return f"{head}\n##Reason: {record.reason}"


# ---------------------------------------------------------------------------
# Memory rendering
# ---------------------------------------------------------------------------


def fmt_num(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def describe_answer(answer: Answer | None) -> str:
    if answer is None or isinstance(answer, Abstain):
        return "none"
    if isinstance(answer, Choice):
        return answer.label
    if isinstance(answer, Span):
        return f"[{fmt_num(answer.start)}s - {fmt_num(answer.end)}s]"
    return answer.text


def _frames(frames: Iterable[int]) -> str:
    return "[" + ", ".join(str(f) for f in frames) + "]"


def describe_output(out: ToolOutput) -> str:
    if isinstance(out, FrameSet):
        return f"Sampled {len(out.frames)} frames. The frame index list is {_frames(out.frames)}"
    if isinstance(out, ClipSpan):
        where = "" if out.clip_index is None else f" on clip {out.clip_index + 1}"
        return (
            f"Sample {len(out.frames)} frames{where} of the video, "
            f"[{fmt_num(out.start)}s - {fmt_num(out.end)}s]. "
            f"The frame index list is {_frames(out.frames)}"
        )
    if isinstance(out, TimeSpanResult):
        return (
            f"Timestamp [{fmt_num(out.start)}s - {fmt_num(out.end)}s] from "
            f"{len(out.frames)} frames. Reason: {out.reason}"
        )
    if isinstance(out, BrowseResult):
        return (
            f"Browsed {len(out.frames)} frames {_frames(out.frames)}. "
            f"Answer: {describe_answer(out.answer)}. Summary: {out.summary}"
        )
    return f"Tool failed: {out.reason}"


def describe_decision(decision: CommDecision, next_tool: str | None) -> str:
    if isinstance(decision, AddTool):
        return f"Add tool {decision.tool} with key info: {decision.key_info}"
    if next_tool is None:
        return "Continue with the plan"
    return f"Continue with the plan, execute {next_tool}"


def _render_entry(mem: AgentMemory) -> str:
    plan = mem.initial_plan
    steps = []
    for s in plan.steps:
        note = "" if s.key_info == plan.key_info else f" (key info: {s.key_info})"
        steps.append(f"<{s.tool}>{note}")
    lines = [
        f"Agent Name: {mem.agent_name}",
        f"The initial plan is: {', '.join(steps)}",
        f"Plan key info: {plan.key_info}",
        f"Key info: {mem.key_info}",
    ]
    for turn in mem.turns:
        lines += [
            f"Turn {turn.turn_index}:",
            f"Executing Tool: {turn.executed_tool} (key info: {turn.key_info})",
            f"Tool Output: {describe_output(turn.tool_output)}",
            f"Communication Decision: {describe_decision(turn.decision, turn.next_tool)}",
        ]
    if mem.answer is not None:
        lines.append(f"Answer: {describe_answer(mem.answer.answer)}")
        lines.append(f"Reason: {mem.answer.reason}")
    if mem.summary is not None:
        lines.append(f"Summary: {mem.summary}")
    lines.append("Plan Finished" if mem.plan_finished else "Plan In Progress")
    return "\n".join(lines)


def render_memory(buffer: MemoryBuffer) -> str:
    """Render every agent's trajectory as text, agents in ascending name order."""
    return "\n\n".join(_render_entry(buffer.entries[name]) for name in sorted(buffer.entries))


# ---------------------------------------------------------------------------
# Serialization (log records, trace replay)
# ---------------------------------------------------------------------------


def answer_to_dict(a: Answer | None) -> dict[str, Any] | None:
    if a is None:
        return None
    if isinstance(a, Choice):
        return {"type": "choice", "label": a.label}
    if isinstance(a, FreeText):
        return {"type": "text", "text": a.text}
    if isinstance(a, Span):
        return {"type": "span", "start": a.start, "end": a.end}
    return {"type": "abstain"}


def answer_from_dict(d: Mapping[str, Any] | None) -> Answer | None:
    if d is None:
        return None
    kind = d["type"]
    if kind == "choice":
        return Choice(d["label"])
    if kind == "text":
        return FreeText(d["text"])
    if kind == "span":
        return Span(float(d["start"]), float(d["end"]))
    if kind == "abstain":
        return Abstain()
    raise ValueError(f"unknown answer type {kind!r}")


def record_to_dict(r: AnswerRecord | None) -> dict[str, Any] | None:
    if r is None:
        return None
    return {"answer": answer_to_dict(r.answer), "reason": r.reason}


def record_from_dict(d: Mapping[str, Any] | None) -> AnswerRecord | None:
    if d is None:
        return None
    return AnswerRecord(answer_from_dict(d["answer"]), d.get("reason", ""))


def output_to_dict(out: ToolOutput) -> dict[str, Any]:
    if isinstance(out, FrameSet):
        return {"type": "frames", "frames": list(out.frames)}
    if isinstance(out, ClipSpan):
        return {
            "type": "clip",
            "start": out.start,
            "end": out.end,
            "clip_index": out.clip_index,
            "frames": list(out.frames),
        }
    if isinstance(out, TimeSpanResult):
        return {
            "type": "time_span",
            "start": out.start,
            "end": out.end,
            "reason": out.reason,
            "frames": list(out.frames),
        }
    if isinstance(out, BrowseResult):
        return {
            "type": "browse",
            "answer": answer_to_dict(out.answer),
            "summary": out.summary,
            "frames": list(out.frames),
        }
    return {"type": "failure", "reason": out.reason}


def output_from_dict(d: Mapping[str, Any]) -> ToolOutput:
    kind = d["type"]
    if kind == "frames":
        return FrameSet(tuple(d["frames"]))
    if kind == "clip":
        return ClipSpan(d["start"], d["end"], d["clip_index"], tuple(d["frames"]))
    if kind == "time_span":
        return TimeSpanResult(d["start"], d["end"], d["reason"], tuple(d["frames"]))
    if kind == "browse":
        return BrowseResult(answer_from_dict(d["answer"]), d["summary"], tuple(d["frames"]))
    if kind == "failure":
        return ToolFailure(d["reason"])
    raise ValueError(f"unknown tool output type {kind!r}")


def decision_to_dict(dec: CommDecision) -> dict[str, Any]:
    if isinstance(dec, AddTool):
        return {"type": "add_tool", "tool": dec.tool, "key_info": dec.key_info}
    return {"type": "continue"}


def decision_from_dict(d: Mapping[str, Any]) -> CommDecision:
    if d["type"] == "add_tool":
        return AddTool(d["tool"], d["key_info"])
    return Continue()


def plan_to_dict(plan: Plan) -> dict[str, Any]:
    return {
        "key_info": plan.key_info,
        "steps": [{"tool": s.tool, "key_info": s.key_info} for s in plan.steps],
    }


def plan_from_dict(d: Mapping[str, Any]) -> Plan:
    return Plan(tuple(PlanStep(s["tool"], s["key_info"]) for s in d["steps"]), d["key_info"])


def query_to_dict(q: Query) -> dict[str, Any]:
    return {
        "id": q.id,
        "text": q.text,
        "options": [[l, t] for l, t in q.options],
        "task": q.task.value,
    }


def query_from_dict(d: Mapping[str, Any]) -> Query:
    return Query(d["id"], d["text"], tuple(tuple(o) for o in d.get("options", ())), Task(d["task"]))


# ---------------------------------------------------------------------------
# Seeds
# ---------------------------------------------------------------------------


def derive_seed(*parts: object) -> int:
    """Stable 63-bit seed from arbitrary parts; independent of PYTHONHASHSEED."""
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1
