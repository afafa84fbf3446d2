from __future__ import annotations

import random

import pytest

from collabplan.agents import (
    SUMMARIZER,
    AgentContext,
    AgentSpec,
    ScriptedProfile,
    answer_from_memory,
    cluster_spans,
    communicate,
    extract_key_info,
    generate_policy,
    score_candidates,
    summarize,
    validate_group,
)
from collabplan.core import (
    AddTool,
    AgentMemory,
    AnswerRecord,
    BrowseResult,
    Choice,
    ClipSpan,
    Continue,
    FrameSet,
    FreeText,
    MemoryBuffer,
    Plan,
    Query,
    Span,
    Task,
    TimeSpanResult,
    TurnRecord,
    derive_seed,
)
from collabplan.toolkit import ToolEnv, ToolRegistry

from conftest import make_video, mc_query

REG = ToolRegistry.default()


def agent(name="a1", bias=("Video Retrieval", "Rough Browser"), lead=False, **kw):
    return AgentSpec(name, ScriptedProfile(bias, **kw), SUMMARIZER if lead else None)


class TestGeneratePolicy:
    def test_multiple_choice(self):
        plan = generate_policy(agent(), mc_query(), REG)
        assert plan.tools == ("Video Retrieval", "Rough Browser")
        assert plan.key_info == extract_key_info(mc_query())

    def test_spatial_uses_space_tool(self):
        q = Query("s", "Where is the lamp relative to the bed?", task=Task.SPATIAL)
        assert "Space Tool" in generate_policy(agent(), q, REG).tools

    def test_grounding_uses_grounding_tool(self):
        q = Query("g", "When does the man open the door?", task=Task.TEMPORAL_GROUNDING)
        assert generate_policy(agent(), q, REG).tools == ("Video Retrieval", "Grounding Tool")

    def test_timestamp_in_text(self):
        q = mc_query(text="What does the dog hold at 2:10?")
        assert generate_policy(agent(), q, REG).tools[0] == "Time Stamp Retrieval"

    def test_restricted_registry_forces_plan(self):
        reg = REG.restricted(["Image Retrieval", "Fine Browser"])
        assert generate_policy(agent(), mc_query(), reg).tools == ("Image Retrieval", "Fine Browser")

    def test_key_info_drops_options_and_boilerplate(self):
        key = extract_key_info(mc_query(text="What colour is the kite the dog carries? red or blue"))
        assert "dog" in key and "kite" in key
        assert "red" not in key and "What" not in key


def _scene():
    """60 s video; answer clues on frames 31-32, key tokens across clip 3."""
    frames = [set() for _ in range(60)]
    for j in range(30, 40):
        frames[j] |= {"dog", "kite"}
    frames[31].add("clue1")
    frames[32].add("clue2")
    return make_video(frames)


def _turn(i, tool, out, key="dog kite", dec=Continue()):
    return TurnRecord(i, tool, key, out, dec)


class TestCommunicate:
    def setup_method(self):
        self.video = _scene()
        self.q = mc_query()
        self.ctx = AgentContext(self.q, REG, ToolEnv(self.video, self.q))
        self.mine = AgentMemory("a1", Plan.of(["Global Sampling", "Rough Browser"], "dog kite"), "dog kite",
                                (_turn(1, "Global Sampling", FrameSet((0, 1, 2))),))
        peer_out = ClipSpan(30, 40, 3, tuple(range(30, 40)))
        self.peer = AgentMemory("b1", Plan.of(["Video Retrieval", "Rough Browser"], "kite dog"), "kite dog",
                                (_turn(1, "Video Retrieval", peer_out, key="kite dog"),))

    def decide(self, spec, memory, plan):
        return communicate(spec, self.q, REG, memory, plan, 0, self.ctx)

    def test_no_peers(self):
        mem = MemoryBuffer({"a1": self.mine})
        assert self.decide(agent(), mem, self.mine.initial_plan) == Continue()

    def test_adopts_peer_retrieval(self):
        mem = MemoryBuffer({"a1": self.mine, "b1": self.peer})
        assert self.decide(agent(comm_responsiveness=1.0), mem, self.mine.initial_plan) == AddTool(
            "Video Retrieval", "kite dog"
        )

    def test_unresponsive_agent_continues(self):
        mem = MemoryBuffer({"a1": self.mine, "b1": self.peer})
        assert self.decide(agent(comm_responsiveness=0.0), mem, self.mine.initial_plan) == Continue()

    def test_step_already_ahead(self):
        mem = MemoryBuffer({"a1": self.mine, "b1": self.peer})
        plan = Plan.of(["Global Sampling", "Video Retrieval", "Rough Browser"], "dog kite")
        assert self.decide(agent(), mem, plan) == Continue()

    def test_answered_agent_keeps_plan(self):
        done = AgentMemory("a1", self.mine.initial_plan, "dog kite", self.mine.turns + (
            _turn(2, "Rough Browser", BrowseResult(Choice("A"), "ok", (31, 32))),))
        mem = MemoryBuffer({"a1": done, "b1": self.peer})
        plan = Plan.of(["Global Sampling", "Rough Browser", "Fine Browser"], "dog kite")
        assert communicate(agent(), self.q, REG, mem, plan, 1, self.ctx) == Continue()

    def test_cursor_bounds(self):
        with pytest.raises(ValueError):
            self.decide(agent(), MemoryBuffer({"a1": self.mine}), Plan(tuple(), "x"))


class TestAnswer:
    def setup_method(self):
        self.q = mc_query()
        self.video = _scene()
        self.ctx = AgentContext(self.q, REG, ToolEnv(self.video, self.q))

    def mem(self, *turns):
        return AgentMemory("a1", Plan.of(["Global Sampling", "Rough Browser"], "k"), "k", turns)

    def test_browser_answer_passes_through(self):
        m = self.mem(_turn(1, "Rough Browser", BrowseResult(Choice("C"), "saw it", (31,))))
        rec = answer_from_memory(agent(), self.q, m, self.ctx)
        assert rec == AnswerRecord(Choice("C"), "saw it")

    def test_seeded_guess(self):
        m = self.mem(_turn(1, "Global Sampling", FrameSet((0,))))
        spec = agent(error_rate=0.0)
        rng = random.Random(derive_seed(0, self.q.id, "answer"))
        rng.random()
        expected = rng.choice(["A", "B", "C", "D"])
        rec = answer_from_memory(spec, self.q, m, self.ctx)
        assert rec.answer == Choice(expected)
        assert rec == answer_from_memory(spec, self.q, m, self.ctx)

    def test_error_rate_one_is_always_wrong(self):
        m = self.mem()
        for seed in range(20):
            spec = AgentSpec("a1", ScriptedProfile(("Global Sampling",), error_rate=1.0, seed=seed))
            assert answer_from_memory(spec, self.q, m, self.ctx).answer != Choice("A")

    def test_grounding_span(self):
        q = Query("g", "when", task=Task.TEMPORAL_GROUNDING)
        m = self.mem(_turn(1, "Grounding Tool", TimeSpanResult(12, 20, "found", (12,))))
        ctx = AgentContext(q, REG, ToolEnv(self.video, q))
        assert answer_from_memory(agent(), q, m, ctx).answer == Span(12, 20)

    def test_open_ended_abstains_without_evidence(self):
        q = Query("o", "what happens")
        ctx = AgentContext(q, REG, ToolEnv(self.video, q))
        assert answer_from_memory(agent(), q, self.mem(), ctx).abstained


class TestSummarize:
    def test_reasons_of_agreeing_agents(self):
        lead = agent("a", lead=True)
        answers = [
            ("a", AnswerRecord(Choice("A"), "cord tripped her")),
            ("b", AnswerRecord(Choice("A"), "she fell over the cord")),
            ("c", AnswerRecord(Choice("B"), "looked like a slip")),
        ]
        final, summary = summarize(lead, mc_query(), answers, MemoryBuffer({}), answers[0][1])
        assert final.answer == Choice("A")
        assert "cord tripped her" in summary and "fell over the cord" in summary
        assert "slip" not in summary

    def test_grounding_cluster(self):
        q = Query("g", "when", task=Task.TEMPORAL_GROUNDING)
        answers = [(n, AnswerRecord(s, n)) for n, s in zip("abc", [Span(10, 20), Span(10, 20), Span(40, 50)])]
        final, _ = summarize(agent("a", lead=True), q, answers, MemoryBuffer({}))
        assert final.answer == Span(10, 20)

    def test_single_agent(self):
        q = Query("o", "what happens")
        rec = AnswerRecord(FreeText("it rains"), "clouds")
        final, summary = summarize(agent("a", lead=True), q, [("a", rec)], MemoryBuffer({}))
        assert final == rec and summary == "clouds"

    def test_only_summarizer_may_summarize(self):
        with pytest.raises(ValueError):
            summarize(agent("a"), mc_query(), [], MemoryBuffer({}))


def test_cluster_spans_weights():
    spans = [Span(0, 10), Span(1, 11), Span(50, 60)]
    out = cluster_spans(spans)
    assert (out.start, out.end) == pytest.approx((0.5, 10.5))


def test_validate_group():
    with pytest.raises(ValueError):
        validate_group([agent("a"), agent("b")])
    with pytest.raises(ValueError):
        validate_group([agent("a", lead=True), agent("a")])
    assert validate_group([agent("a"), agent("b", lead=True)]).name == "b"


def test_score_candidates_prefers_evidence():
    video = _scene()
    q = mc_query()
    ctx = AgentContext(q, REG, ToolEnv(video, q))
    seen = AgentMemory("a", Plan.of(["Video Retrieval", "Rough Browser"], "dog kite"), "dog kite",
                       (_turn(1, "Video Retrieval", ClipSpan(30, 40, 3, tuple(range(30, 40)))),))
    blind = AgentMemory("b", seen.initial_plan, "dog kite", (_turn(1, "Global Sampling", FrameSet((0,))),))
    answers = {"a": AnswerRecord(Choice("A")), "b": AnswerRecord(Choice("B"))}
    scores = score_candidates(agent("a"), ctx, MemoryBuffer({"a": seen, "b": blind}), answers)
    assert scores == {"A": 1.0, "B": 0.0}


def test_profile_validation():
    with pytest.raises(ValueError):
        ScriptedProfile(("Global Sampling",), comm_responsiveness=1.5)
