"""Trajectory rewards: result, format and collaboration terms.

Every agent trajectory in a session gets its own scalar reward
``total = res + format + col``. The collaboration term is a binary coherence
judgement, replaced by a fixed penalty once an agent makes more than five
tool calls. In simulation the judgement comes from a deterministic rubric;
live runs can ask a remote judge instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from . import prompts
from .client import ChatClient, RemoteConfig
from .core import (
    CANONICAL_TOOLS,
    Abstain,
    AddTool,
    AgentMemory,
    AnswerRecord,
    Choice,
    FreeText,
    GrammarError,
    MemoryBuffer,
    PlanError,
    PlanStep,
    Query,
    Span,
    Task,
    ToolGroup,
    check_plan,
    compute_iou,
    grammar_line,
    parse_answer,
    parse_comm_decision,
    parse_plan,
    render_memory,
)
from .toolkit import BackendError, tokens

logger = logging.getLogger(__name__)

MAX_TOOL_CALLS = 5
GROUNDING_HIT_IOU = 0.5


class TaskMismatch(ValueError):
    """Ground truth (or answer) type does not fit the task."""


class EvaluatorUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    res_correct: float = 1.0
    res_wrong: float = -1.0
    fmt_ok: float = 0.2
    fmt_bad: float = -0.2
    col_coherent: float = 1.0
    col_incoherent: float = 0.0
    overlong_penalty: float = -1.0

    def __post_init__(self) -> None:
        if not self.res_correct > self.res_wrong:
            raise ValueError("res_correct must exceed res_wrong")
        if not self.fmt_ok > self.fmt_bad:
            raise ValueError("fmt_ok must exceed fmt_bad")


@dataclass(frozen=True)
class RewardBreakdown:
    res: float
    format: float
    col: float
    total: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "total", self.res + self.format + self.col)

    def as_dict(self) -> dict[str, float]:
        return {"res": self.res, "format": self.format, "col": self.col, "total": self.total}


# ---------------------------------------------------------------------------
# Result reward
# ---------------------------------------------------------------------------

_GT_TYPE = {
    Task.MULTIPLE_CHOICE: Choice,
    Task.TEMPORAL_GROUNDING: Span,
    Task.OPEN_ENDED: FreeText,
    Task.SPATIAL: FreeText,
}


def _check_gt(gt: AnswerRecord, task: Task) -> None:
    if not isinstance(gt.answer, _GT_TYPE[Task(task)]):
        raise TaskMismatch(f"{type(gt.answer).__name__} ground truth for a {Task(task).value} task")


def text_matches(answer: str, gt: str) -> bool:
    """Open-ended match: every ground-truth token appears in the answer."""
    want = tokens(gt)
    return bool(want) and want <= tokens(answer)


def reward_result(final: AnswerRecord, gt: AnswerRecord, task: Task, weights: RewardWeights = RewardWeights()) -> float:
    task = Task(task)
    _check_gt(gt, task)
    ans = final.answer
    if isinstance(ans, Abstain):
        return weights.res_wrong
    if task is Task.TEMPORAL_GROUNDING:
        if not isinstance(ans, Span):
            return weights.res_wrong
        iou = compute_iou((ans.start, ans.end), (gt.answer.start, gt.answer.end))
        return weights.res_wrong if iou == 0 else weights.res_correct * iou
    if task is Task.MULTIPLE_CHOICE:
        ok = isinstance(ans, Choice) and ans.label == gt.answer.label
    else:
        ok = isinstance(ans, FreeText) and text_matches(ans.text, gt.answer.text)
    return weights.res_correct if ok else weights.res_wrong


def is_correct(final: AnswerRecord, gt: AnswerRecord, task: Task) -> bool:
    """Hit/miss view of the result: grounding counts as a hit at IoU >= 0.5."""
    task = Task(task)
    _check_gt(gt, task)
    ans = final.answer
    if task is Task.TEMPORAL_GROUNDING:
        return isinstance(ans, Span) and compute_iou((ans.start, ans.end), (gt.answer.start, gt.answer.end)) >= GROUNDING_HIT_IOU
    if task is Task.MULTIPLE_CHOICE:
        return isinstance(ans, Choice) and ans.label == gt.answer.label
    return isinstance(ans, FreeText) and text_matches(ans.text, gt.answer.text)


# ---------------------------------------------------------------------------
# Format reward
# ---------------------------------------------------------------------------


def output_parses(kind: str, raw: str, query: Query | None = None, registry: Iterable[str] = CANONICAL_TOOLS) -> bool:
    """Whether one raw agent output meets the grammar of its kind.

    Kinds are ``plan``, ``comm`` and ``answer``; without a kind every grammar
    is tried.
    """
    registry = list(registry)
    groups = {t: CANONICAL_TOOLS[t] for t in registry if t in CANONICAL_TOOLS}
    try:
        if kind == "plan":
            check_plan(parse_plan(raw, registry), groups)
        elif kind == "comm":
            parse_comm_decision(raw, registry)
        elif kind == "answer":
            if query is not None:
                parse_answer(raw, query)
            elif grammar_line(raw, "answer") is None and grammar_line(raw, "timestamp") is None:
                return False
        else:
            return any(output_parses(k, raw, query, registry) for k in ("plan", "comm", "answer"))
    except (GrammarError, PlanError):
        return False
    return True


def reward_format(
    raw_outputs: Sequence[tuple[str, str]] | Sequence[str],
    weights: RewardWeights = RewardWeights(),
    *,
    query: Query | None = None,
    registry: Iterable[str] = CANONICAL_TOOLS,
) -> float:
    """fmt_ok when every output parses; an empty trajectory passes vacuously."""
    for item in raw_outputs:
        kind, raw = item if isinstance(item, tuple) else ("", item)
        if not output_parses(kind, raw, query, registry):
            return weights.fmt_bad
    return weights.fmt_ok


# ---------------------------------------------------------------------------
# Collaboration reward
# ---------------------------------------------------------------------------

Evaluator = Callable[[AgentMemory, Query], int]


def rubric_evaluator(
    memory: AgentMemory, query: Query | None = None, groups: Mapping[str, ToolGroup] = CANONICAL_TOOLS
) -> int:
    """Deterministic coherence judgement over one agent's trajectory.

    Coherent iff (a) replaying the initial plan, with each recorded AddTool
    inserted after the step that triggered it, predicts every executed call;
    (b) some frame-selection call precedes some browsing call; (c) no
    (tool, key info) call repeats.
    """
    steps = list(memory.initial_plan.steps)
    cursor = -1
    for turn in memory.turns:
        if cursor + 1 >= len(steps):
            return 0
        expected = steps[cursor + 1]
        if (expected.tool, expected.key_info) != (turn.executed_tool, turn.key_info):
            return 0
        cursor += 1
        if isinstance(turn.decision, AddTool):
            steps.insert(cursor + 1, PlanStep(turn.decision.tool, turn.decision.key_info))

    kinds = [groups.get(t.executed_tool) for t in memory.turns]
    first_sel = next((i for i, k in enumerate(kinds) if k is ToolGroup.SELECTION), None)
    if first_sel is None or ToolGroup.BROWSING not in kinds[first_sel + 1:]:
        return 0

    calls = [(t.executed_tool, t.key_info) for t in memory.turns]
    if len(set(calls)) != len(calls):
        return 0
    return 1


@dataclass
class RemoteJudge:
    """Collaboration judge backed by a chat-completion endpoint (0/1 reply)."""

    client: ChatClient
    config: RemoteConfig

    def __call__(self, memory: AgentMemory, query: Query) -> int:
        text = render_memory(MemoryBuffer({memory.agent_name: memory}))
        try:
            raw = self.client.complete(self.config, [{"role": "user", "content": prompts.judge_prompt(query, text)}])
        except BackendError as exc:
            raise EvaluatorUnavailable(str(exc)) from exc
        value = (grammar_line(raw, "score") or "").strip()
        if value not in ("0", "1"):
            raise EvaluatorUnavailable(f"judge reply is not 0/1: {value!r}")
        return int(value)


def reward_collab(
    memory: AgentMemory,
    evaluator: Evaluator | None = None,
    weights: RewardWeights = RewardWeights(),
    query: Query | None = None,
) -> float:
    if memory.tool_calls > MAX_TOOL_CALLS:
        return weights.overlong_penalty
    score = rubric_evaluator(memory, query) if evaluator is None else evaluator(memory, query)
    if score not in (0, 1):
        raise ValueError(f"evaluator returned {score!r}, expected 0 or 1")
    return weights.col_coherent if score else weights.col_incoherent


# ---------------------------------------------------------------------------
# Totals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """One agent's slice of a session: what the reward model scores."""

    query: Query
    memory: AgentMemory
    answer: AnswerRecord
    raw_outputs: tuple[tuple[str, str], ...] = ()

    @property
    def tool_calls(self) -> int:
        return self.memory.tool_calls


def trajectories(result) -> dict[str, Trajectory]:
    """Per-agent trajectories of a session result."""
    return {
        name: Trajectory(result.query, result.buffer[name], result.per_agent[name], tuple(result.raw_outputs[name]))
        for name in result.buffer.entries
    }


def total_reward(
    trajectory: Trajectory,
    gt: AnswerRecord,
    weights: RewardWeights = RewardWeights(),
    evaluator: Evaluator | None = None,
    registry: Iterable[str] = CANONICAL_TOOLS,
) -> RewardBreakdown:
    """Reward of one agent's trajectory, scored on that agent's own answer."""
    return RewardBreakdown(
        res=reward_result(trajectory.answer, gt, trajectory.query.task, weights),
        format=reward_format(trajectory.raw_outputs, weights, query=trajectory.query, registry=registry),
        col=reward_collab(trajectory.memory, evaluator, weights, trajectory.query),
    )
