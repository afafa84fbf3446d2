"""Collaborative planning sessions: plan, execute, communicate, then agree.

A session runs every agent's plan in lock-step rounds. In each round every
unfinished agent executes one tool call; the results are merged into the
shared memory buffer at a barrier (agent-name order) and each agent then
decides, from the entries its topology lets it see, whether to keep going or
insert a tool. After the last round agents answer from memory, the group
reaches consensus and the summarizer writes the reason summary.

Simulation time is modeled from fixed per-tool costs, which keeps traces
byte-identical across runs; live mode records wall time instead.
"""

from __future__ import annotations

import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Sequence, TypeVar, Union

from .agents import (
    AgentContext,
    AgentSpec,
    decide,
    draft_policy,
    respond,
    score_candidates,
    summarize,
    validate_group,
)
from .client import ChatClient
from .core import (
    ABSTAIN,
    AddTool,
    AgentMemory,
    AnswerRecord,
    BrowseResult,
    Choice,
    MemoryBuffer,
    Plan,
    PlanError,
    PlanStep,
    Query,
    Task,
    TimeSpanResult,
    TurnRecord,
    ToolOutput,
    GrammarError,
    check_plan,
    parse_plan,
    decision_from_dict,
    decision_to_dict,
    output_from_dict,
    output_to_dict,
    plan_from_dict,
    plan_to_dict,
    record_from_dict,
    record_to_dict,
    render_plan,
)
from .toolkit import (
    DEFAULT_THRESHOLDS,
    BackendError,
    SyntheticVideo,
    ToolEnv,
    ToolRegistry,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")


class ConsensusMode(str, Enum):
    VOTE = "vote"
    BEST_SCORE = "best-score"
    DECIDE_BY_AGENT = "decide"


class Mode(str, Enum):
    SIMULATION = "sim"
    LIVE = "live"


class NoVotes(ValueError):
    """Every agent abstained, so there is nothing to aggregate."""


class DesignatedAbstained(ValueError):
    pass


class AllAgentsFailed(RuntimeError):
    """No agent produced an answer on a task without forced choice.

    The finished session is attached as ``result`` so callers can still log
    and score it.
    """

    def __init__(self, query_id: str, result: "SessionResult | None" = None):
        super().__init__(f"every agent abstained on {query_id}")
        self.result = result


# ---------------------------------------------------------------------------
# Topologies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FullyConnected:
    def visible(self, name: str, names: Sequence[str]) -> list[str]:
        return [n for n in sorted(names) if n != name]


@dataclass(frozen=True)
class TopologyDAG:
    """Communication graph whose edges only point forward in ``agent_order``.

    An edge (a, b) lets b read a's memory entry.
    """

    agent_order: tuple[str, ...]
    edges: frozenset[tuple[str, str]] = frozenset()

    def __post_init__(self) -> None:
        order = tuple(self.agent_order)
        object.__setattr__(self, "agent_order", order)
        object.__setattr__(self, "edges", frozenset((str(a), str(b)) for a, b in self.edges))
        if len(set(order)) != len(order):
            raise ValueError("agent_order repeats a name")
        pos = {n: i for i, n in enumerate(order)}
        for a, b in self.edges:
            if a not in pos or b not in pos:
                raise ValueError(f"edge {(a, b)} names an agent outside the order")
            if pos[a] >= pos[b]:
                raise ValueError(f"edge {(a, b)} does not point forward")

    @classmethod
    def empty(cls, names: Iterable[str]) -> "TopologyDAG":
        return cls(tuple(sorted(names)), frozenset())

    @classmethod
    def full(cls, order: Sequence[str]) -> "TopologyDAG":
        order = tuple(order)
        return cls(order, frozenset((order[i], order[j]) for i in range(len(order)) for j in range(i + 1, len(order))))

    def visible(self, name: str, names: Sequence[str]) -> list[str]:
        return sorted(a for a, b in self.edges if b == name)


Topology = Union[FullyConnected, TopologyDAG]


def topology_to_dict(topo: Topology) -> dict[str, Any]:
    if isinstance(topo, FullyConnected):
        return {"type": "full"}
    return {"type": "dag", "order": list(topo.agent_order), "edges": sorted(map(list, topo.edges))}


def topology_from_dict(d: Mapping[str, Any]) -> Topology:
    if d["type"] == "full":
        return FullyConnected()
    return TopologyDAG(tuple(d["order"]), frozenset(tuple(e) for e in d["edges"]))


# ---------------------------------------------------------------------------
# Configuration and results
# ---------------------------------------------------------------------------

# Modeled seconds per call. Browsing tools cost most since they read frames.
DEFAULT_TOOL_COSTS: Mapping[str, float] = {
    "Global Sampling": 0.5,
    "Video Retrieval": 2.0,
    "Time Stamp Retrieval": 0.2,
    "Image Retrieval": 1.5,
    "Rough Browser": 3.0,
    "Fine Browser": 5.0,
    "Space Tool": 4.0,
    "Grounding Tool": 4.0,
}
DEFAULT_LLM_COST_S = 1.0


@dataclass(frozen=True)
class SessionConfig:
    max_turns: int = 5
    consensus: ConsensusMode = ConsensusMode.VOTE
    topology: Topology = field(default_factory=FullyConnected)
    mode: Mode = Mode.SIMULATION
    seed: int = 0
    designated: str | None = None
    max_workers: int = 1
    tool_costs: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_TOOL_COSTS))
    llm_cost_s: float = DEFAULT_LLM_COST_S
    thresholds: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    grounding_noise_s: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "consensus", ConsensusMode(self.consensus))
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.max_turns < 1:
            raise ValueError("max_turns must be at least 1")
        if self.max_workers < 1:
            raise ValueError("max_workers must be at least 1")


@dataclass(frozen=True)
class SessionStats:
    frames_used: int
    tool_calls: Mapping[str, int]
    wall_time: float


@dataclass(frozen=True)
class SessionResult:
    query: Query
    final_answer: AnswerRecord
    summary: str
    per_agent: Mapping[str, AnswerRecord]
    buffer: MemoryBuffer
    trace: tuple[dict[str, Any], ...]
    stats: SessionStats
    raw_outputs: Mapping[str, tuple[tuple[str, str], ...]]
    format_ok: Mapping[str, bool]

    @property
    def query_id(self) -> str:
        return self.query.id


# ---------------------------------------------------------------------------
# Consensus
# ---------------------------------------------------------------------------


def _as_items(answers: Mapping[str, AnswerRecord] | Sequence[tuple[str, AnswerRecord]]) -> list[tuple[str, AnswerRecord]]:
    items = list(answers.items()) if isinstance(answers, Mapping) else list(answers)
    return sorted(items, key=lambda kv: kv[0])


def _representative(items: list[tuple[str, AnswerRecord]], label: str, prefer: str | None) -> AnswerRecord:
    holders = [(n, r) for n, r in items if isinstance(r.answer, Choice) and r.answer.label == label]
    for n, r in holders:
        if n == prefer:
            return r
    return holders[0][1]


def _break_tie(tied: Iterable[str], items: list[tuple[str, AnswerRecord]], summarizer: str | None) -> str:
    tied = sorted(tied)
    own = dict(items).get(summarizer) if summarizer else None
    if own is not None and isinstance(own.answer, Choice) and own.answer.label in tied:
        return own.answer.label
    return tied[0]


def consensus_vote(
    answers: Mapping[str, AnswerRecord] | Sequence[tuple[str, AnswerRecord]],
    summarizer: str | None = None,
) -> AnswerRecord:
    """Majority label; ties go to the summarizer's own label, else the lowest label."""
    items = _as_items(answers)
    counts = Counter(r.answer.label for _, r in items if isinstance(r.answer, Choice))
    if not counts:
        raise NoVotes("no agent chose an option")
    top = max(counts.values())
    label = _break_tie([l for l, c in counts.items() if c == top], items, summarizer)
    return _representative(items, label, summarizer)


def consensus_best_score(
    answers: Mapping[str, AnswerRecord] | Sequence[tuple[str, AnswerRecord]],
    scores: Mapping[str, Mapping[str, float]],
    summarizer: str | None = None,
) -> AnswerRecord:
    """Candidate with the highest score summed over scoring agents."""
    items = _as_items(answers)
    candidates = sorted({r.answer.label for _, r in items if isinstance(r.answer, Choice)})
    if not candidates:
        raise NoVotes("no agent chose an option")
    totals = {c: sum(float(s.get(c, 0.0)) for s in scores.values()) for c in candidates}
    best = max(totals.values())
    label = _break_tie([c for c in candidates if totals[c] >= best - 1e-12], items, summarizer)
    return _representative(items, label, summarizer)


def consensus_decide_by_agent(
    answers: Mapping[str, AnswerRecord] | Sequence[tuple[str, AnswerRecord]],
    designated: str,
    summarizer: str | None = None,
) -> AnswerRecord:
    """The designated agent's answer; falls back to a vote if it abstained."""
    items = dict(_as_items(answers))
    if designated not in items:
        raise ValueError(f"designated agent {designated!r} is not in the group")
    own = items[designated]
    if isinstance(own.answer, Choice):
        return own
    logger.info("designated agent %s abstained; falling back to vote", designated)
    return consensus_vote(items, summarizer)


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------


class Trace:
    """Append-only event list with a modeled (or wall) clock."""

    def __init__(self, live: bool):
        self.events: list[dict[str, Any]] = []
        self.live = live
        self._t0 = time.perf_counter()
        self.sim_t = 0.0

    @property
    def now(self) -> float:
        if self.live:
            return round(time.perf_counter() - self._t0, 6)
        return round(self.sim_t, 6)

    def emit(self, kind: str, agent: str | None, turn: int | None, **payload: Any) -> None:
        self.events.append(
            {"seq": len(self.events), "t": self.now, "kind": kind, "agent": agent, "turn": turn, "payload": payload}
        )


def buffer_from_trace(trace: Sequence[Mapping[str, Any]]) -> MemoryBuffer:
    """Rebuild the final memory buffer from a session's trace events."""
    plans: dict[str, Plan] = {}
    pending: dict[str, dict[str, Any]] = {}
    turns: dict[str, list[TurnRecord]] = {}
    answers: dict[str, tuple[AnswerRecord, bool]] = {}
    for ev in trace:
        kind, name, p = ev["kind"], ev["agent"], ev["payload"]
        if kind == "plan":
            plans[name] = plan_from_dict(p["plan"])
            turns[name] = []
        elif kind == "tool_call":
            pending[name] = {"tool": p["tool"], "key_info": p["key_info"], "turn": ev["turn"]}
        elif kind == "tool_output":
            c = pending.pop(name)
            turns[name].append(TurnRecord(c["turn"], c["tool"], c["key_info"], output_from_dict(p["output"])))
        elif kind == "comm_decision":
            last = turns[name][-1]
            turns[name][-1] = replace(last, decision=decision_from_dict(p["decision"]), next_tool=p["next_tool"])
        elif kind == "answer":
            answers[name] = (record_from_dict(p["answer"]), p["plan_finished"])
    entries = {}
    for name, plan in plans.items():
        ans, finished = answers.get(name, (ABSTAIN, False))
        entries[name] = AgentMemory(name, plan, plan.key_info, tuple(turns[name]), ans, None, finished)
    return MemoryBuffer(entries)


# ---------------------------------------------------------------------------
# Session
# ---------------------------------------------------------------------------


@dataclass
class _AgentState:
    spec: AgentSpec
    plan: Plan | None
    steps: list[PlanStep]
    cursor: int = -1
    turns: list[TurnRecord] = field(default_factory=list)
    outputs: list[ToolOutput] = field(default_factory=list)
    raw: list[tuple[str, str]] = field(default_factory=list)
    format_ok: bool = True

    @property
    def failed(self) -> bool:
        return self.plan is None

    @property
    def has_next(self) -> bool:
        return not self.failed and self.cursor + 1 < len(self.steps)

    def memory(self, answer: AnswerRecord | None = None, finished: bool | None = None) -> AgentMemory:
        plan = self.plan or Plan((), "")
        done = (not self.has_next and not self.failed) if finished is None else finished
        if done and answer is None:
            done = False
        return AgentMemory(self.spec.name, plan, plan.key_info, tuple(self.turns), answer, None, done)


def _pmap(fn: Callable[[Any], T], items: Sequence[Any], workers: int) -> list[T]:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def run_session(
    query: Query,
    video: SyntheticVideo,
    group: Sequence[AgentSpec],
    registry: ToolRegistry,
    config: SessionConfig = SessionConfig(),
    *,
    initial_plans: Mapping[str, Plan] | None = None,
    client: ChatClient | None = None,
    endpoints: Mapping[str, Any] | None = None,
) -> SessionResult:
    """Run one collaborative session and return its answers, memory and trace.

    ``initial_plans`` overrides plan generation for the named agents (used by
    training, where plans are sampled from toy policies).
    """
    lead = validate_group(group)
    names = sorted(a.name for a in group)
    specs = {a.name: a for a in group}
    topo = config.topology
    if isinstance(topo, TopologyDAG) and set(topo.agent_order) != set(names):
        raise ValueError("topology agent_order must list exactly the group's agents")
    live = config.mode is Mode.LIVE
    env = ToolEnv(
        video,
        query,
        thresholds=dict(config.thresholds),
        grounding_noise_s=config.grounding_noise_s,
        live=live,
        client=client,
        endpoints=dict(endpoints or {}),
    )
    ctx = AgentContext(query, registry, env, client)
    trace = Trace(live)
    workers = config.max_workers

    # 1. initial plans
    def make_plan(name: str) -> tuple[str, Plan | None]:
        if initial_plans and name in initial_plans:
            plan = initial_plans[name]
            return render_plan(plan), plan
        try:
            raw = draft_policy(specs[name], ctx)
        except BackendError as exc:
            logger.warning("agent %s could not plan: %s", name, exc)
            return "", None
        try:
            return raw, check_plan(parse_plan(raw, registry), registry.groups)
        except (GrammarError, PlanError) as exc:
            logger.warning("agent %s produced no usable plan: %s", name, exc)
            return raw, None

    states: dict[str, _AgentState] = {}
    for name, (raw, plan) in zip(names, _pmap(make_plan, names, workers)):
        st = _AgentState(specs[name], plan, list(plan.steps) if plan else [])
        st.raw.append(("plan", raw))
        st.format_ok = plan is not None
        states[name] = st
        trace.emit("plan", name, 0, plan=None if plan is None else plan_to_dict(plan), ok=plan is not None)
    trace.sim_t += config.llm_cost_s

    # 2. rounds
    for turn in range(1, config.max_turns + 1):
        active = [n for n in names if states[n].has_next]
        if not active:
            break

        def execute(name: str) -> tuple[PlanStep, ToolOutput]:
            st = states[name]
            step = st.steps[st.cursor + 1]
            return step, env.call(registry, step.tool, step.key_info, st.outputs)

        results = _pmap(execute, active, workers)
        round_cost = 0.0
        for name, (step, out) in zip(active, results):
            st = states[name]
            st.cursor += 1
            st.outputs.append(out)
            st.turns.append(TurnRecord(turn, step.tool, step.key_info, out))
            trace.emit("tool_call", name, turn, tool=step.tool, key_info=step.key_info)
            trace.emit("tool_output", name, turn, output=output_to_dict(out))
            round_cost = max(round_cost, float(config.tool_costs.get(step.tool, 1.0)))
        trace.sim_t += round_cost

        snapshot = MemoryBuffer({n: states[n].memory() for n in names})

        def talk(name: str) -> tuple[list[str], str, Any, bool]:
            st = states[name]
            peers = topo.visible(name, names)
            visible = snapshot.restrict([name, *peers])
            plan_now = Plan(tuple(st.steps), st.plan.key_info)
            raw, dec, ok = decide(st.spec, ctx, visible, plan_now, st.cursor)
            return peers, raw, dec, ok

        for name, (peers, raw, dec, ok) in zip(active, _pmap(talk, active, workers)):
            st = states[name]
            st.raw.append(("comm", raw))
            st.format_ok &= ok
            if isinstance(dec, AddTool):
                st.steps.insert(st.cursor + 1, PlanStep(dec.tool, dec.key_info))
            next_tool = st.steps[st.cursor + 1].tool if st.has_next else None
            st.turns[-1] = replace(st.turns[-1], decision=dec, next_tool=next_tool)
            trace.emit(
                "comm_decision", name, turn,
                decision=decision_to_dict(dec), next_tool=next_tool, visible=peers, ok=ok,
            )
        trace.sim_t += config.llm_cost_s

    # 3. answers
    def answer(name: str) -> tuple[str, AnswerRecord, bool]:
        st = states[name]
        if st.failed:
            return "", ABSTAIN, False
        return respond(st.spec, ctx, st.memory())

    per_agent: dict[str, AnswerRecord] = {}
    for name, (raw, rec, ok) in zip(names, _pmap(answer, names, workers)):
        st = states[name]
        if not st.failed:
            st.raw.append(("answer", raw))
            st.format_ok &= ok
        per_agent[name] = rec
        trace.emit(
            "answer", name, None,
            answer=record_to_dict(rec), plan_finished=not st.has_next and not st.failed, ok=ok,
        )
    trace.sim_t += config.llm_cost_s

    buffer = MemoryBuffer(
        {n: states[n].memory(per_agent[n], not states[n].has_next and not states[n].failed) for n in names}
    )

    # 4. consensus and 5. summary
    items = [(n, per_agent[n]) for n in names]
    scores: dict[str, dict[str, float]] = {}
    consensus: AnswerRecord | None = None
    if query.task is Task.MULTIPLE_CHOICE:
        try:
            if config.consensus is ConsensusMode.VOTE:
                consensus = consensus_vote(items, lead.name)
            elif config.consensus is ConsensusMode.BEST_SCORE:
                scorers = [n for n in names if not states[n].failed]
                got = _pmap(lambda n: score_candidates(specs[n], ctx, buffer, per_agent), scorers, workers)
                scores = dict(zip(scorers, got))
                consensus = consensus_best_score(items, scores, lead.name)
            else:
                consensus = consensus_decide_by_agent(items, config.designated or lead.name, lead.name)
        except NoVotes:
            consensus = ABSTAIN
    final, summary = summarize(lead, query, items, buffer, consensus, ctx)
    trace.emit(
        "consensus", lead.name, None,
        mode=config.consensus.value, answer=record_to_dict(final), summary=summary, scores=scores,
    )
    trace.sim_t += config.llm_cost_s

    frames: set[int] = set()
    for st in states.values():
        for out in st.outputs:
            if isinstance(out, (BrowseResult, TimeSpanResult)):
                frames.update(out.frames)
    stats = SessionStats(len(frames), {n: len(states[n].turns) for n in names}, trace.now)
    result = SessionResult(
        query=query,
        final_answer=final,
        summary=summary,
        per_agent=per_agent,
        buffer=buffer,
        trace=tuple(trace.events),
        stats=stats,
        raw_outputs={n: tuple(states[n].raw) for n in names},
        format_ok={n: states[n].format_ok for n in names},
    )
    if final.abstained and not query.forced_choice and all(r.abstained for r in per_agent.values()):
        raise AllAgentsFailed(query.id, result)
    return result
