from __future__ import annotations

import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from collabplan.core import (
    AddTool,
    AgentMemory,
    AnswerRecord,
    Choice,
    Continue,
    FrameSet,
    FreeText,
    Plan,
    Query,
    Span,
    Task,
    TurnRecord,
    render_plan,
)
from collabplan.rewards import (
    RewardWeights,
    TaskMismatch,
    Trajectory,
    is_correct,
    reward_collab,
    reward_format,
    reward_result,
    rubric_evaluator,
    text_matches,
    total_reward,
)

from conftest import mc_query

W = RewardWeights()
GT_A = AnswerRecord(Choice("A"), "")
GOOD_PLAN = ("plan", "##key info: k\n##tool use: <Video Retrieval>, <Rough Browser>")
GOOD_COMM = ("comm", "##tool call: continue()")
GOOD_ANSWER = ("answer", "##Answer: A\n##Reason: seen")


def memory(tools, key="k", decisions=None, plan_tools=None):
    plan = Plan.of(plan_tools or tools, key)
    decisions = decisions or [Continue()] * len(tools)
    turns = tuple(TurnRecord(i + 1, t, key, FrameSet(()), d) for i, (t, d) in enumerate(zip(tools, decisions)))
    return AgentMemory("a1", plan, key, turns)


class TestResult:
    def test_choice(self):
        assert reward_result(AnswerRecord(Choice("A")), GT_A, Task.MULTIPLE_CHOICE) == 1.0
        assert reward_result(AnswerRecord(Choice("B")), GT_A, Task.MULTIPLE_CHOICE) == -1.0

    def test_span_scaled_by_iou(self):
        gt = AnswerRecord(Span(15, 25))
        assert reward_result(AnswerRecord(Span(10, 20)), gt, Task.TEMPORAL_GROUNDING) == pytest.approx(1 / 3)

    def test_free_text(self):
        gt = AnswerRecord(FreeText("red kite"))
        assert reward_result(AnswerRecord(FreeText("The red kite.")), gt, Task.OPEN_ENDED) == 1.0
        assert text_matches("a red kite", "red kite")
        assert not text_matches("blue kite", "red kite")

    def test_task_mismatch(self):
        with pytest.raises(TaskMismatch):
            reward_result(AnswerRecord(Choice("A")), AnswerRecord(Span(0, 1)), Task.MULTIPLE_CHOICE)

    def test_is_correct_grounding_threshold(self):
        gt = AnswerRecord(Span(0, 10))
        assert is_correct(AnswerRecord(Span(0, 6)), gt, Task.TEMPORAL_GROUNDING)
        assert not is_correct(AnswerRecord(Span(0, 4)), gt, Task.TEMPORAL_GROUNDING)


class TestFormat:
    def test_all_grammatical(self):
        assert reward_format([GOOD_PLAN, GOOD_COMM, GOOD_ANSWER], query=mc_query()) == 0.2

    def test_one_malformed(self):
        assert reward_format([GOOD_PLAN, ("comm", "sure, proceeding"), GOOD_ANSWER], query=mc_query()) == -0.2

    def test_empty_passes(self):
        assert reward_format([]) == 0.2

    def test_plan_rules_apply(self):
        assert reward_format([("plan", "##key info: k\n##tool use: <Rough Browser>")]) == -0.2


class TestCollab:
    def test_coherent(self):
        assert reward_collab(memory(["Video Retrieval", "Rough Browser", "Fine Browser"])) == 1.0

    def test_six_calls(self):
        tools = ["Video Retrieval", "Rough Browser", "Image Retrieval", "Fine Browser", "Global Sampling", "Space Tool"]
        assert rubric_evaluator(memory(tools)) == 1
        assert reward_collab(memory(tools)) == -1.0

    def test_duplicate_call(self):
        assert reward_collab(memory(["Video Retrieval", "Rough Browser", "Rough Browser"])) == 0.0

    def test_off_plan_call(self):
        m = memory(["Video Retrieval", "Fine Browser"], plan_tools=["Video Retrieval", "Rough Browser"])
        assert reward_collab(m) == 0.0

    def test_recorded_add_tool_is_coherent(self):
        tools = ["Global Sampling", "Image Retrieval", "Rough Browser"]
        m = memory(tools, decisions=[AddTool("Image Retrieval", "k"), Continue(), Continue()],
                   plan_tools=["Global Sampling", "Rough Browser"])
        assert reward_collab(m) == 1.0

    def test_browse_before_select_is_incoherent(self):
        assert reward_collab(memory(["Rough Browser", "Video Retrieval"])) == 0.0

    def test_custom_evaluator(self):
        assert reward_collab(memory(["Video Retrieval", "Rough Browser"]), evaluator=lambda m, q: 0) == 0.0
        with pytest.raises(ValueError):
            reward_collab(memory(["Video Retrieval", "Rough Browser"]), evaluator=lambda m, q: 2)

    @given(st.integers(1, 8), st.booleans())
    def test_penalty_replaces_coherence(self, n, coherent):
        tools = [f"t{i}" for i in range(n)]
        score = reward_collab(memory(tools), evaluator=lambda m, q: int(coherent))
        if n > 5:
            assert score == W.overlong_penalty
        else:
            assert score == (W.col_coherent if coherent else W.col_incoherent)


def _traj(answer, tools, raw):
    q = mc_query()
    return Trajectory(q, memory(tools), AnswerRecord(Choice(answer)), tuple(raw))


class TestTotal:
    def test_correct_grammatical_coherent(self):
        b = total_reward(_traj("A", ["Video Retrieval", "Rough Browser"], [GOOD_PLAN, GOOD_COMM, GOOD_ANSWER]), GT_A)
        assert (b.res, b.format, b.col, b.total) == pytest.approx((1, 0.2, 1, 2.2))

    def test_correct_but_six_calls(self):
        tools = ["Video Retrieval", "Rough Browser", "Image Retrieval", "Fine Browser", "Global Sampling", "Space Tool"]
        b = total_reward(_traj("A", tools, [GOOD_PLAN, GOOD_ANSWER]), GT_A)
        assert (b.res, b.format, b.col, b.total) == pytest.approx((1, 0.2, -1, 0.2))

    def test_wrong_malformed_incoherent(self):
        b = total_reward(_traj("B", ["Rough Browser", "Rough Browser"], [("comm", "ok")]), GT_A)
        assert (b.res, b.format, b.col, b.total) == pytest.approx((-1, -0.2, 0, -1.2))

    def test_weights_apply(self):
        w = RewardWeights(res_correct=2.0, fmt_ok=0.5, col_coherent=0.0)
        b = total_reward(_traj("A", ["Video Retrieval", "Rough Browser"], [GOOD_PLAN]), GT_A, w)
        assert b.total == pytest.approx(2.5)


def test_exhaustive_overlong_penalty():
    """Every trace of 1..8 calls over a small tool set, with both judge verdicts."""
    pool = ["Video Retrieval", "Rough Browser", "Fine Browser"]
    for n in range(1, 9):
        for tools in itertools.islice(itertools.product(pool, repeat=n), 200):
            for verdict in (0, 1):
                got = reward_collab(memory(list(tools)), evaluator=lambda m, q: verdict)
                want = W.overlong_penalty if n > 5 else (W.col_coherent if verdict else W.col_incoherent)
                assert got == want
