"""Policy agents: plan generation, communication, answering and summarising.

Two backends share one surface. A scripted backend is a deterministic stand-in
for an LLM whose behaviour is set by a :class:`ScriptedProfile`; a remote
backend fills a prompt template and sends it to a chat-completion endpoint.
Both produce raw text in the agent grammar, which is then parsed, so format
checks apply to scripted and remote agents alike.
"""

from __future__ import annotations

import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

from . import prompts
from .client import ChatClient, RemoteConfig
from .core import (
    ABSTAIN,
    FINE_BROWSER,
    GROUNDING_TOOL,
    ROUGH_BROWSER,
    SPACE_TOOL,
    TIMESTAMP_RETRIEVAL,
    Abstain,
    AddTool,
    AgentMemory,
    AnswerRecord,
    BrowseResult,
    Choice,
    ClipSpan,
    CommDecision,
    Continue,
    FrameSet,
    FreeText,
    GrammarError,
    MemoryBuffer,
    Plan,
    PlanError,
    Query,
    Span,
    Task,
    TimeSpanResult,
    ToolGroup,
    TurnRecord,
    ToolOutput,
    check_plan,
    compute_iou,
    derive_seed,
    describe_answer,
    grammar_line,
    parse_answer,
    parse_comm_decision,
    parse_plan,
    parse_timestamp,
    render_answer,
    render_decision,
    render_memory,
    render_plan,
)
from .toolkit import SyntheticVideo, ToolEnv, ToolRegistry, find_timestamp, tokens

logger = logging.getLogger(__name__)

SUMMARIZER = "summarizer"


@dataclass(frozen=True)
class ScriptedProfile:
    """Behaviour knobs of a scripted agent.

    plan_bias ranks tools the agent likes to plan with. comm_responsiveness is
    the chance of adopting a peer's retrieval step when that peer has seen
    answer clues this agent has not. error_rate is the chance of answering a
    wrong option when browsing produced no answer; otherwise the agent guesses
    uniformly (forced_choice) or abstains.
    """

    plan_bias: tuple[str, ...]
    comm_responsiveness: float = 1.0
    error_rate: float = 0.0
    seed: int = 0
    forced_choice: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "plan_bias", tuple(self.plan_bias))
        for name in ("comm_responsiveness", "error_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


Backend = Union[ScriptedProfile, RemoteConfig]


@dataclass(frozen=True)
class AgentSpec:
    name: str
    backend: Backend
    role_tag: str | None = None

    @property
    def is_summarizer(self) -> bool:
        return self.role_tag == SUMMARIZER

    @property
    def scripted(self) -> bool:
        return isinstance(self.backend, ScriptedProfile)


def validate_group(group: Sequence[AgentSpec]) -> AgentSpec:
    """Check names are unique and exactly one summarizer exists; return it."""
    if not group:
        raise ValueError("agent group is empty")
    names = [a.name for a in group]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate agent names in {names}")
    leads = [a for a in group if a.is_summarizer]
    if len(leads) != 1:
        raise ValueError(f"group needs exactly one summarizer, found {len(leads)}")
    return leads[0]


@dataclass
class AgentContext:
    """What an agent may consult during a session.

    Scripted agents read the synthetic video through ``env``; remote agents
    only see text and need ``client``.
    """

    query: Query
    registry: ToolRegistry
    env: ToolEnv | None = None
    client: ChatClient | None = None

    @property
    def video(self) -> SyntheticVideo:
        if self.env is None:
            raise RuntimeError("scripted agents need a simulation environment")
        return self.env.video


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

_STOPWORDS = frozenset(
    """a an the of in on at to is are was were be been do does did what which who whom whose
    when where why how happens happen happened after before during while this that these those
    it its and or with by for from about into near video clip moment shown show scene
    question options option answer please""".split()
)


def extract_key_info(query: Query) -> str:
    """Query text with option text and question boilerplate removed."""
    text = query.text
    option_words = set()
    for _, opt in query.options:
        option_words |= tokens(opt)
    words = re.findall(r"[A-Za-z0-9_:]+", text)
    kept = [w for w in words if w.lower() not in _STOPWORDS and w.lower() not in option_words]
    return " ".join(kept) or text.strip()


def frames_of_output(out: ToolOutput) -> tuple[int, ...]:
    if isinstance(out, (FrameSet, ClipSpan, TimeSpanResult, BrowseResult)):
        return out.frames
    return ()


def observed_clues(memory: AgentMemory, video: SyntheticVideo) -> frozenset[str]:
    seen: set[int] = set()
    for t in memory.turns:
        seen.update(frames_of_output(t.tool_output))
    return video.clues_in(seen)


def _rng(profile: ScriptedProfile, query: Query, *parts: object) -> random.Random:
    return random.Random(derive_seed(profile.seed, query.id, *parts))


def _complete(ctx: AgentContext, cfg: RemoteConfig, prompt: str) -> str:
    if ctx.client is None:
        raise RuntimeError("remote agent without a chat client")
    return ctx.client.complete(cfg, [{"role": "user", "content": prompt}])


# ---------------------------------------------------------------------------
# Policy generation
# ---------------------------------------------------------------------------


def _ranked(profile: ScriptedProfile, registry: ToolRegistry) -> list[str]:
    ranked: list[str] = []
    for name in profile.plan_bias:
        try:
            tool = registry.resolve(name)
        except GrammarError:
            continue
        if tool not in ranked:
            ranked.append(tool)
    return ranked + [t for t in registry if t not in ranked]


def _pick(ranked: Sequence[str], allowed: Sequence[str], avoid: set[str]) -> str | None:
    for t in ranked:
        if t in allowed and t not in avoid:
            return t
    for t in ranked:
        if t in allowed:
            return t
    return None


def scripted_plan(profile: ScriptedProfile, query: Query, registry: ToolRegistry) -> Plan:
    ranked = _ranked(profile, registry)
    selection = registry.of_group(ToolGroup.SELECTION)
    browsing = registry.of_group(ToolGroup.BROWSING)
    if not selection or not browsing:
        raise PlanError("registry lacks a selection or a browsing tool")

    timed = find_timestamp(query.text) is not None
    if timed and TIMESTAMP_RETRIEVAL in selection:
        sel = TIMESTAMP_RETRIEVAL
    else:
        sel = _pick(ranked, selection, {TIMESTAMP_RETRIEVAL})

    required = {Task.TEMPORAL_GROUNDING: GROUNDING_TOOL, Task.SPATIAL: SPACE_TOOL}.get(query.task)
    if required in browsing:
        brw = required
    else:
        brw = _pick(ranked, browsing, {GROUNDING_TOOL, SPACE_TOOL})
    return check_plan(Plan.of([sel, brw], extract_key_info(query)), registry.groups)


def draft_policy(agent: AgentSpec, ctx: AgentContext) -> str:
    """Raw plan text in the ``##key info`` / ``##tool use`` grammar."""
    if isinstance(agent.backend, ScriptedProfile):
        return render_plan(scripted_plan(agent.backend, ctx.query, ctx.registry))
    prompt = prompts.generation_prompt(ctx.query, ctx.registry)
    return _complete(ctx, agent.backend, prompt)


def propose(agent: AgentSpec, ctx: AgentContext) -> tuple[str, Plan]:
    """Draft and parse a plan; returns the raw text with it."""
    if not ctx.registry:
        raise ValueError("empty tool registry")
    raw = draft_policy(agent, ctx)
    return raw, check_plan(parse_plan(raw, ctx.registry), ctx.registry.groups)


def generate_policy(agent: AgentSpec, query: Query, registry: ToolRegistry, ctx: AgentContext | None = None) -> Plan:
    return propose(agent, ctx or AgentContext(query, registry))[1]


# ---------------------------------------------------------------------------
# Communication
# ---------------------------------------------------------------------------


def _follow_up_browse(
    profile: ScriptedProfile, ctx: AgentContext, memory: MemoryBuffer, own: AgentMemory, plan: Plan, cursor: int
) -> str | None:
    """Browsing tool to run after an adopted retrieval step, if none is ahead.

    Prefers the browsing tool the peer itself ran after that retrieval, so the
    adopted frames are read the way the peer read them.
    """
    if len(own.turns) < 2:
        return None
    prev, last = own.turns[-2], own.turns[-1]
    adopted = isinstance(prev.decision, AddTool) and prev.decision.tool == last.executed_tool
    if not adopted or ctx.registry.groups.get(last.executed_tool) is not ToolGroup.SELECTION:
        return None
    ahead = plan.tools[cursor + 1:]
    if any(ctx.registry.groups.get(t) is ToolGroup.BROWSING for t in ahead):
        return None
    browsing = ctx.registry.of_group(ToolGroup.BROWSING)
    required = {Task.TEMPORAL_GROUNDING: GROUNDING_TOOL, Task.SPATIAL: SPACE_TOOL}.get(ctx.query.task)
    if required in browsing:
        return required
    for name in sorted(memory.entries):
        if name == own.agent_name:
            continue
        peer = memory[name].turns
        for i, t in enumerate(peer):
            if (t.executed_tool, t.key_info) != (last.executed_tool, last.key_info):
                continue
            for later in peer[i + 1:]:
                if later.executed_tool in browsing and later.executed_tool not in (GROUNDING_TOOL, SPACE_TOOL):
                    return later.executed_tool
    return _pick(_ranked(profile, ctx.registry), browsing, {GROUNDING_TOOL, SPACE_TOOL})


def retrieval_evidence(memory: AgentMemory, video: SyntheticVideo, registry: ToolRegistry) -> list[tuple[TurnRecord, frozenset[str]]]:
    """Answer clues each frame-selection step led to.

    A selection step is credited with the answer clues in its own output and
    in the outputs of the browsing steps that read from it (those run before
    the next selection step).
    """
    out: list[tuple[TurnRecord, frozenset[str]]] = []
    for t in memory.turns:
        shown = video.clues_in(frames_of_output(t.tool_output)) & video.answer_clues
        if registry.groups.get(t.executed_tool) is ToolGroup.SELECTION or not out:
            out.append((t, shown))
        else:
            head, seen = out[-1]
            out[-1] = (head, seen | shown)
    return out


def scripted_decision(
    agent: AgentSpec, ctx: AgentContext, memory: MemoryBuffer, plan: Plan, cursor: int
) -> CommDecision:
    """Adopt a visible peer's retrieval step when it led to answer clues we lack.

    Each selection step is scored by :func:`retrieval_evidence`. A peer step
    qualifies when its evidence holds answer clues we have not seen and
    outnumbers the evidence of every selection step of ours; the largest
    qualifying step wins (peers in ascending name order, earlier turns first).
    It is skipped when the same tool is already ahead in our plan or we ran it
    with the same key info. The adoption draw is seeded by (profile seed,
    query id, turn). An agent whose browsing already produced an answer keeps
    its plan; one that just ran an adopted retrieval with no browsing left
    appends a browsing step.
    """
    profile = agent.backend
    assert isinstance(profile, ScriptedProfile)
    video, registry = ctx.video, ctx.registry
    own = memory[agent.name]
    turn = len(own.turns)
    if any(isinstance(t.tool_output, BrowseResult) and t.tool_output.answer is not None for t in own.turns):
        return Continue()

    mine = observed_clues(own, video)
    own_best = max((len(e) for _, e in retrieval_evidence(own, video, registry)), default=0)
    best: tuple[int, str, str] | None = None
    for name in sorted(memory.entries):
        if name == agent.name:
            continue
        for step, evidence in retrieval_evidence(memory[name], video, registry):
            if step.executed_tool not in registry or registry.group(step.executed_tool) is not ToolGroup.SELECTION:
                continue
            if not (evidence - mine) or len(evidence) <= own_best:
                continue
            if best is None or len(evidence) > best[0]:
                best = (len(evidence), step.executed_tool, step.key_info)

    if best is not None:
        _, tool, key = best
        ahead = plan.tools[cursor + 1:]
        done = {(t.executed_tool, t.key_info) for t in own.turns}
        if tool not in ahead and (tool, key) not in done:
            if _rng(profile, ctx.query, turn, "comm").random() < profile.comm_responsiveness:
                return AddTool(tool, key)
            return Continue()

    follow = _follow_up_browse(profile, ctx, memory, own, plan, cursor)
    if follow is not None:
        return AddTool(follow, own.key_info)
    return Continue()


def draft_decision(
    agent: AgentSpec, ctx: AgentContext, memory: MemoryBuffer, plan: Plan, cursor: int
) -> str:
    if isinstance(agent.backend, ScriptedProfile):
        return render_decision(scripted_decision(agent, ctx, memory, plan, cursor))
    own = render_memory(memory.restrict([agent.name]))
    peers = render_memory(memory.restrict(n for n in memory.entries if n != agent.name))
    remaining = Plan(plan.steps[cursor + 1:], plan.key_info)
    prompt = prompts.communication_prompt(ctx.query, own, peers, remaining)
    return _complete(ctx, agent.backend, prompt)


def communicate(
    agent: AgentSpec,
    query: Query,
    registry: ToolRegistry,
    memory: MemoryBuffer,
    plan: Plan,
    cursor: int,
    ctx: AgentContext | None = None,
) -> CommDecision:
    return decide(agent, ctx or AgentContext(query, registry), memory, plan, cursor)[1]


def decide(
    agent: AgentSpec, ctx: AgentContext, memory: MemoryBuffer, plan: Plan, cursor: int
) -> tuple[str, CommDecision, bool]:
    """(raw text, decision, parsed ok); unparsable text degrades to Continue."""
    if not 0 <= cursor < len(plan):
        raise ValueError(f"cursor {cursor} outside plan of length {len(plan)}")
    raw = draft_decision(agent, ctx, memory, plan, cursor)
    try:
        return raw, parse_comm_decision(raw, ctx.registry), True
    except GrammarError as exc:
        logger.warning("agent %s: unparsable communication turn, continuing (%s)", agent.name, exc)
        return raw, Continue(), False


# ---------------------------------------------------------------------------
# Answers
# ---------------------------------------------------------------------------


def _span_of_clues(video: SyntheticVideo, frames: Sequence[int]) -> Span | None:
    hits = [f for f in frames if video.frames[f] & video.answer_clues]
    if not hits:
        return None
    return Span(hits[0] / video.fps, min(video.duration, (hits[-1] + 1) / video.fps))


def scripted_answer(agent: AgentSpec, ctx: AgentContext, entry: AgentMemory) -> AnswerRecord:
    profile = agent.backend
    assert isinstance(profile, ScriptedProfile)
    query, video = ctx.query, ctx.video
    for turn in reversed(entry.turns):
        out = turn.tool_output
        if isinstance(out, TimeSpanResult) and query.task is Task.TEMPORAL_GROUNDING:
            return AnswerRecord(Span(out.start, out.end), out.reason)
        if isinstance(out, BrowseResult) and out.answer is not None:
            if query.task is Task.TEMPORAL_GROUNDING:
                span = _span_of_clues(video, out.frames)
                if span is not None:
                    return AnswerRecord(span, out.summary)
                continue
            return AnswerRecord(out.answer, out.summary)

    if query.task is not Task.MULTIPLE_CHOICE:
        return ABSTAIN
    rng = _rng(profile, query, "answer")
    labels = list(query.labels)
    truth = video.gt_answer.answer
    wrong = [l for l in labels if not (isinstance(truth, Choice) and truth.label == l)]
    if wrong and rng.random() < profile.error_rate:
        return AnswerRecord(Choice(rng.choice(wrong)), "no clear evidence; best guess")
    if profile.forced_choice:
        return AnswerRecord(Choice(rng.choice(labels)), "no clear evidence; guessed")
    return ABSTAIN


def draft_answer(agent: AgentSpec, ctx: AgentContext, entry: AgentMemory) -> str:
    if isinstance(agent.backend, ScriptedProfile):
        return render_answer(scripted_answer(agent, ctx, entry))
    memory = render_memory(MemoryBuffer({entry.agent_name: entry}))
    return _complete(ctx, agent.backend, prompts.answer_prompt(ctx.query, memory))


def answer_from_memory(agent: AgentSpec, query: Query, memory_entry: AgentMemory, ctx: AgentContext | None = None) -> AnswerRecord:
    return respond(agent, ctx or AgentContext(query, ToolRegistry.default()), memory_entry)[1]


def respond(agent: AgentSpec, ctx: AgentContext, entry: AgentMemory) -> tuple[str, AnswerRecord, bool]:
    """(raw text, answer, parsed ok); unparsable text records an abstention."""
    raw = draft_answer(agent, ctx, entry)
    try:
        return raw, parse_answer(raw, ctx.query), True
    except GrammarError as exc:
        logger.warning("agent %s: unparsable answer, abstaining (%s)", agent.name, exc)
        return raw, ABSTAIN, False


# ---------------------------------------------------------------------------
# Candidate scoring (best-score consensus)
# ---------------------------------------------------------------------------


def score_candidates(
    agent: AgentSpec,
    ctx: AgentContext,
    memory: MemoryBuffer,
    answers: Mapping[str, AnswerRecord],
) -> dict[str, float]:
    """This agent's score for every proposed option label.

    Scripted agents rate a candidate by the best evidence behind it: the share
    of their own key-info tokens found among the clues some proposer observed.
    """
    proposers: dict[str, list[str]] = {}
    for name, rec in sorted(answers.items()):
        if isinstance(rec.answer, Choice):
            proposers.setdefault(rec.answer.label, []).append(name)
    if not proposers:
        return {}
    if isinstance(agent.backend, ScriptedProfile):
        wanted = tokens(memory[agent.name].key_info) if agent.name in memory.entries else tokens(ctx.query.text)
        scores = {}
        for label, names in proposers.items():
            best = 0.0
            for n in names:
                seen = observed_clues(memory[n], ctx.video)
                best = max(best, len(wanted & seen) / max(1, len(wanted)))
            scores[label] = best
        return scores
    reasons = {label: answers[names[0]].reason for label, names in proposers.items()}
    raw = _complete(ctx, agent.backend, prompts.scoring_prompt(ctx.query, reasons, render_memory(memory)))
    scores = {}
    for label in proposers:
        value = grammar_line(raw, rf"score[ \t]+{re.escape(label)}")
        try:
            scores[label] = min(1.0, max(0.0, float(value))) if value else 0.0
        except ValueError:
            scores[label] = 0.0
    return scores


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


def cluster_spans(spans: Sequence[Span], min_iou: float = 0.5) -> Span:
    """Agreement-weighted centroid of the largest cluster of spans.

    A span's agreement count is how many spans (itself included) overlap it
    with IoU >= ``min_iou``. Spans with the top count form the cluster and
    their endpoints are averaged with those counts as weights.
    """
    weights = [sum(compute_iou((a.start, a.end), (b.start, b.end)) >= min_iou for b in spans) for a in spans]
    top = max(weights)
    members = [(w, s) for w, s in zip(weights, spans) if w == top]
    total = sum(w for w, _ in members)
    start = sum(w * s.start for w, s in members) / total
    end = sum(w * s.end for w, s in members) / total
    return Span(start, end)


def _majority_text(answers: Sequence[tuple[str, AnswerRecord]], preferred: str) -> AnswerRecord:
    counts = Counter(" ".join(sorted(tokens(r.answer.text))) for _, r in answers)
    top = max(counts.values())
    tied = {k for k, c in counts.items() if c == top}
    for name, r in answers:
        if name == preferred and " ".join(sorted(tokens(r.answer.text))) in tied:
            return r
    for _, r in answers:
        if " ".join(sorted(tokens(r.answer.text))) in tied:
            return r
    raise AssertionError("unreachable")


def summarize(
    designated: AgentSpec,
    query: Query,
    answers: Sequence[tuple[str, AnswerRecord]],
    memory: MemoryBuffer,
    consensus: AnswerRecord | None = None,
    ctx: AgentContext | None = None,
) -> tuple[AnswerRecord, str]:
    """Final answer plus reason summary from the designated agent.

    Multiple choice keeps the consensus answer and summarises only the agents
    that chose it. Other tasks consolidate every non-abstaining answer.
    """
    if not designated.is_summarizer:
        raise ValueError(f"{designated.name} is not the group's summarizer")
    ctx = ctx or AgentContext(query, ToolRegistry.default())
    live = [(n, r) for n, r in answers if not r.abstained]

    if query.task is Task.MULTIPLE_CHOICE:
        if consensus is None or consensus.abstained:
            return ABSTAIN, ""
        agreeing = [(n, r) for n, r in live if r.answer == consensus.answer]
        if isinstance(designated.backend, RemoteConfig) and agreeing:
            rows = [(n, describe_answer(r.answer), r.reason) for n, r in agreeing]
            raw = _complete(ctx, designated.backend, prompts.summary_prompt(query, rows, describe_answer(consensus.answer)))
            summary = grammar_line(raw, r"reason[ \t]*summary") or raw.strip()
        else:
            summary = " ".join(f"{n}: {r.reason}" for n, r in agreeing)
        return AnswerRecord(consensus.answer, summary), summary

    if not live:
        return ABSTAIN, ""
    if len(live) == 1:
        return live[0][1], live[0][1].reason

    if isinstance(designated.backend, RemoteConfig):
        rows = [(n, describe_answer(r.answer), r.reason) for n, r in live]
        raw = _complete(ctx, designated.backend, prompts.summary_prompt(query, rows, None))
        summary = grammar_line(raw, r"reason[ \t]*summary") or ""
        final = grammar_line(raw, r"final[ \t]*answer") or ""
        try:
            if query.task is Task.TEMPORAL_GROUNDING:
                return AnswerRecord(parse_timestamp(final), summary), summary
            if final:
                return AnswerRecord(FreeText(final), summary), summary
        except GrammarError as exc:
            logger.warning("summarizer %s: unparsable final answer (%s)", designated.name, exc)
        return ABSTAIN, summary

    if query.task is Task.TEMPORAL_GROUNDING:
        spans = [r.answer for _, r in live if isinstance(r.answer, Span)]
        final = cluster_spans(spans)
        summary = " ".join(f"{n}: {r.reason}" for n, r in live)
        return AnswerRecord(final, summary), summary
    texts = [(n, r) for n, r in live if isinstance(r.answer, FreeText)]
    if not texts:
        return ABSTAIN, ""
    chosen = _majority_text(texts, designated.name)
    agreeing = [n for n, r in texts if tokens(r.answer.text) == tokens(chosen.answer.text)]
    summary = " ".join(f"{n}: {dict(texts)[n].reason}" for n in agreeing)
    return AnswerRecord(chosen.answer, summary), summary
