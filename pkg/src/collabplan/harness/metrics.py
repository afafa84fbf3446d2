"""Suite evaluation: accuracy, mIoU, frames, tool calls and latency."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

from ..agents import AgentSpec
from ..core import AnswerRecord, InvalidSpan, Query, Span, Task, compute_iou
from ..orchestrator import AllAgentsFailed, SessionConfig, SessionResult, TopologyDAG, run_session
from ..rewards import is_correct
from ..toolkit import ToolRegistry
from .suite import SuiteItem

logger = logging.getLogger(__name__)

__all__ = [
    "EmptySuite",
    "InvalidSpan",
    "ItemOutcome",
    "MetricsReport",
    "aggregate",
    "compute_iou",
    "evaluate_suite",
    "outcome_of",
    "run_ablations",
]


class EmptySuite(ValueError):
    pass


@dataclass(frozen=True)
class ItemOutcome:
    """Scored view of one session."""

    query_id: str
    task: str
    correct: bool
    iou: float | None
    frames: int
    tool_calls: float
    latency_s: float
    per_agent_correct: Mapping[str, bool] = field(default_factory=dict)
    failed: bool = False


def outcome_of(query: Query, final: AnswerRecord, per_agent: Mapping[str, AnswerRecord], gt: AnswerRecord,
               frames: int, tool_calls: Mapping[str, int], latency_s: float, failed: bool = False) -> ItemOutcome:
    iou = None
    if query.task is Task.TEMPORAL_GROUNDING:
        pred = final.answer
        iou = compute_iou((pred.start, pred.end), (gt.answer.start, gt.answer.end)) if isinstance(pred, Span) else 0.0
    calls = sum(tool_calls.values()) / len(tool_calls) if tool_calls else 0.0
    return ItemOutcome(
        query_id=query.id,
        task=query.task.value,
        correct=is_correct(final, gt, query.task),
        iou=iou,
        frames=frames,
        tool_calls=calls,
        latency_s=latency_s,
        per_agent_correct={n: is_correct(a, gt, query.task) for n, a in sorted(per_agent.items())},
        failed=failed,
    )


def _result_outcome(result: SessionResult, gt: AnswerRecord, failed: bool = False) -> ItemOutcome:
    s = result.stats
    return outcome_of(result.query, result.final_answer, result.per_agent, gt, s.frames_used, s.tool_calls, s.wall_time, failed)


@dataclass(frozen=True)
class MetricsReport:
    """Suite-level aggregates.

    ``accuracy`` is over forced-choice items and ``miou`` over grounding
    items; either is None when the suite has no such items. ``per_task`` holds
    hit rates for every task present, ``per_agent`` each agent's own hit rate.
    """

    n_items: int
    accuracy: float | None
    miou: float | None
    avg_frames: float
    avg_tool_calls: float
    avg_latency_s: float
    failures: int = 0
    per_task: Mapping[str, float] = field(default_factory=dict)
    per_agent: Mapping[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["per_task"] = dict(self.per_task)
        d["per_agent"] = dict(self.per_agent)
        return d


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs)


def aggregate(outcomes: Iterable[ItemOutcome]) -> MetricsReport:
    # sort first so the float sums do not depend on item order
    outs = sorted(outcomes, key=lambda o: o.query_id)
    if not outs:
        raise EmptySuite("no items to aggregate")
    choice = [o for o in outs if o.task == Task.MULTIPLE_CHOICE.value]
    ground = [o for o in outs if o.task == Task.TEMPORAL_GROUNDING.value]
    tasks = sorted({o.task for o in outs})
    agents = sorted({n for o in outs for n in o.per_agent_correct})
    return MetricsReport(
        n_items=len(outs),
        accuracy=_mean([float(o.correct) for o in choice]) if choice else None,
        miou=_mean([o.iou or 0.0 for o in ground]) if ground else None,
        avg_frames=_mean([float(o.frames) for o in outs]),
        avg_tool_calls=_mean([o.tool_calls for o in outs]),
        avg_latency_s=_mean([o.latency_s for o in outs]),
        failures=sum(o.failed for o in outs),
        per_task={t: _mean([float(o.correct) for o in outs if o.task == t]) for t in tasks},
        per_agent={
            n: _mean([float(o.per_agent_correct[n]) for o in outs if n in o.per_agent_correct]) for n in agents
        },
    )


def run_item(item: SuiteItem, group: Sequence[AgentSpec], config: SessionConfig, registry: ToolRegistry,
             **kw: Any) -> tuple[SessionResult, bool]:
    """One session; a session where every agent gave up still yields its result."""
    try:
        return run_session(item.query, item.video, group, registry, config, **kw), False
    except AllAgentsFailed as exc:
        if exc.result is None:
            raise
        logger.info("all agents failed on %s", item.query.id)
        return exc.result, True


def evaluate_suite(
    suite: Sequence[SuiteItem],
    group: Sequence[AgentSpec],
    config: SessionConfig = SessionConfig(),
    registry: ToolRegistry | None = None,
    **kw: Any,
) -> MetricsReport:
    if not suite:
        raise EmptySuite("suite has no items")
    registry = registry or ToolRegistry.default()
    outcomes = []
    for item in suite:
        result, failed = run_item(item, group, config, registry, **kw)
        outcomes.append(_result_outcome(result, item.video.gt_answer, failed))
    return aggregate(outcomes)


# ---------------------------------------------------------------------------
# Ablations: group size, consensus mode, communication
# ---------------------------------------------------------------------------


def _subgroup(group: Sequence[AgentSpec], names: Sequence[str]) -> list[AgentSpec]:
    from ..agents import SUMMARIZER

    chosen = [a for a in group if a.name in names]
    lead = next((a.name for a in chosen if a.is_summarizer), chosen[0].name)
    return [replace(a, role_tag=SUMMARIZER if a.name == lead else None) for a in chosen]


def run_ablations(
    suite: Sequence[SuiteItem],
    group: Sequence[AgentSpec],
    config: SessionConfig = SessionConfig(),
    registry: ToolRegistry | None = None,
    designated: str | None = None,
) -> list[tuple[str, float]]:
    """Accuracy rows for single agents, growing groups, consensus modes and no communication.

    Groups grow in the given agent order (first k agents). ``designated`` is
    the agent trusted under decide-by-agent; it defaults to the last agent.
    """
    registry = registry or ToolRegistry.default()
    names = [a.name for a in group]

    def acc(agents: Sequence[AgentSpec], cfg: SessionConfig) -> float:
        rep = evaluate_suite(suite, agents, cfg, registry)
        return rep.accuracy if rep.accuracy is not None else rep.per_task.get(suite[0].query.task.value, 0.0)

    rows: list[tuple[str, float]] = []
    for n in names:
        rows.append((f"single:{n}", acc(_subgroup(group, [n]), config)))
    for k in range(2, len(names) + 1):
        rows.append((f"group:{k}", acc(_subgroup(group, names[:k]), config)))
    full = list(group)
    rows.append(("consensus:best-score", acc(full, replace(config, consensus="best-score"))))
    rows.append(("consensus:decide", acc(full, replace(config, consensus="decide", designated=designated or names[-1]))))
    rows.append(("comm:off", acc(full, replace(config, topology=TopologyDAG.empty(names)))))
    return rows
