from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from collabplan.core import (
    AnswerRecord,
    Choice,
    ClipSpan,
    FrameSet,
    FreeText,
    Query,
    Span,
    Task,
    ToolFailure,
    ToolGroup,
)
from collabplan.toolkit import (
    EmptyVideo,
    NoSpanAnnotation,
    SpanOutOfRange,
    TimestampOutOfRange,
    ToolEnv,
    ToolRegistry,
    clip_bounds,
    clip_similarities,
    find_timestamp,
    fine_browser,
    global_sampling,
    grounding_tool,
    image_candidates,
    image_retrieval,
    merge_clips,
    rough_browser,
    similarity,
    space_tool,
    timestamp_retrieval,
    timestamp_window,
    video_retrieval,
    video_retrieval_merged,
)

from conftest import clip_video, make_video, mc_query

KEY10 = " ".join(f"k{i}" for i in range(10))


def _sims_video(counts, duration=60):
    """Clip c shows the first counts[c] of ten key tokens, so its similarity is counts[c] / 10."""
    return clip_video(duration, {c: {f"k{i}" for i in range(n)} for c, n in enumerate(counts)}, clues={"k0"})


class TestSimilarity:
    def test_examples(self):
        v = make_video([{"a", "b"}, {"a"}, set()], clues={"a"})
        assert similarity("a b", range(0, 1), v) == 1.0
        assert similarity("a b", range(1, 2), v) == 0.5
        assert similarity("a b", range(0, 0), v) == 0.0

    def test_out_of_range(self):
        v = make_video([{"a"}], clues={"a"})
        with pytest.raises(SpanOutOfRange):
            similarity("a", range(0, 3), v)


class TestGlobalSampling:
    @pytest.mark.parametrize(
        "n_frames, expected",
        [(16, list(range(16))), (32, list(range(0, 32, 2))), (8, list(range(8)))],
    )
    def test_examples(self, n_frames, expected):
        v = make_video([{"clue"}] + [set()] * (n_frames - 1))
        assert list(global_sampling(v, 16).frames) == expected

    def test_empty_video(self):
        v = make_video([], clues=set())
        with pytest.raises(EmptyVideo):
            global_sampling(v)


class TestClips:
    @given(st.floats(min_value=1.0, max_value=1e5, allow_nan=False))
    def test_partition_covers_duration(self, duration):
        bounds = clip_bounds(duration)
        assert len(bounds) == 6
        assert bounds[0][0] == 0.0 and bounds[-1][1] == duration
        assert all(a[1] == b[0] for a, b in zip(bounds, bounds[1:]))
        assert all(s < e for s, e in bounds)

    def test_retrieval_finds_clip(self):
        v = clip_video(60, {3: {"clue1", "clue2"}})
        out = video_retrieval(v, "clue1 clue2")
        assert (out.start, out.end, out.clip_index) == (30, 40, 3)
        assert set(out.frames) <= set(range(30, 40)) and len(out.frames) == 10

    def test_ties_go_to_first_clip(self):
        assert video_retrieval(clip_video(60, {3: {"clue"}}), "nothing").clip_index == 0
        uniform = clip_video(60, {c: {"clue"} for c in range(6)})
        assert video_retrieval(uniform, "clue").clip_index == 0

    def test_similarities(self):
        v = _sims_video([1, 5, 9, 5, 1, 0])
        assert clip_similarities(v, KEY10) == pytest.approx([0.1, 0.5, 0.9, 0.5, 0.1, 0.0])


class TestMerge:
    @pytest.mark.parametrize(
        "counts, lo, hi",
        [([1, 5, 9, 5, 1, 0], 1, 3), ([0, 0, 10, 2, 0, 0], 2, 2), ([4] * 6, 0, 2)],
    )
    def test_hand_derived_cases(self, counts, lo, hi):
        assert merge_clips([c / 10 for c in counts]) == (lo, hi)
        out = video_retrieval_merged(_sims_video(counts), KEY10)
        assert (out.start, out.end) == (lo * 10, (hi + 1) * 10)

    def test_threshold_is_strict(self):
        assert merge_clips([0, 0.35, 1.0, 0.35, 0, 0]) == (2, 2)

    @given(st.lists(st.floats(0, 1), min_size=6, max_size=6))
    def test_run_contains_argmax_and_respects_cap(self, sims):
        lo, hi = merge_clips(sims)
        best = max(range(6), key=lambda i: (sims[i], -i))
        assert lo <= best <= hi
        assert 1 <= hi - lo + 1 <= 3
        assert all(sims[i] > 0.35 for i in range(lo, hi + 1) if i != best)


class TestTimestamp:
    @pytest.mark.parametrize("t, expected", [(100, (70, 130)), (10, (0, 40)), (300, (270, 300))])
    def test_windows(self, t, expected):
        assert timestamp_window(300, t) == expected

    def test_out_of_range(self):
        with pytest.raises(TimestampOutOfRange):
            timestamp_window(300, 301)

    def test_retrieval_span(self):
        v = make_video([{"clue"}] * 120)
        out = timestamp_retrieval(v, 100)
        assert (out.start, out.end) == (70, 120)

    @pytest.mark.parametrize(
        "text, t",
        [("what happens at 1:05?", 65.0), ("around 0:01:30 the dog", 90.0), ("after 42 seconds", 42.0), ("no time", None)],
    )
    def test_find_timestamp(self, text, t):
        assert find_timestamp(text) == t


class TestImageRetrieval:
    def _video(self, hits):
        # 4 fps for 20 s: candidates at 2 fps are the even frames
        frames = [{"clue"} if j in hits else set() for j in range(80)]
        return make_video(frames, fps=4.0, clues={"clue"})

    def test_candidates_at_two_fps(self):
        assert image_candidates(self._video({0})) == tuple(range(0, 80, 2))
        one_fps = make_video([{"clue"}] * 10)
        assert image_candidates(one_fps) == tuple(range(10))

    def test_exact_hits(self):
        hits = set(range(10, 74, 4))
        assert len(hits) == 16
        assert set(image_retrieval(self._video(hits), "clue").frames) == hits

    def test_odd_frames_are_never_candidates(self):
        assert 11 not in image_retrieval(self._video({11}), "clue").frames

    def test_ties_go_to_earliest(self):
        assert image_retrieval(self._video({0}), "zzz").frames == tuple(range(0, 32, 2))

    def test_short_video(self):
        v = make_video([{"clue"}] * 5)
        assert image_retrieval(v, "clue", k=32).frames == (0, 1, 2, 3, 4)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            image_retrieval(self._video({0}), "clue", k=8)


class TestBrowsers:
    def _video(self, n_clues=2):
        clues = [f"clue{i}" for i in range(n_clues)]
        frames = [set() for _ in range(40)]
        for i, c in enumerate(clues):
            frames[10 + i].add(c)
        return make_video(frames)

    def test_rough_full_and_none(self):
        v = self._video()
        full = rough_browser(v, FrameSet((10, 11)), mc_query(), "k")
        assert full.answer == Choice("A") and full.summary
        assert rough_browser(v, FrameSet((0, 1)), mc_query(), "k").answer is None

    def test_rough_half_coverage(self):
        out = rough_browser(self._video(), FrameSet((10,)), mc_query(), "k")
        assert out.answer is None
        assert "clue0" in out.summary and "clue1" not in out.summary

    def test_fine_clip_and_threshold(self):
        v = self._video(5)
        assert fine_browser(v, ClipSpan(0, 40, None), mc_query(), "k").answer == Choice("A")
        assert fine_browser(v, ClipSpan(20, 40, None), mc_query(), "k").answer is None
        assert fine_browser(v, FrameSet((10, 11, 12, 13)), mc_query(), "k").answer == Choice("A")
        assert fine_browser(v, FrameSet((10, 11, 12)), mc_query(), "k").answer is None

    def test_space_tool(self):
        spatial = Query("s", "where is the lamp", task=Task.SPATIAL)
        v = make_video([{"clue"}, set()], gt=AnswerRecord(FreeText("left of the bed")))
        assert space_tool(v, FrameSet((0,)), spatial, "lamp").answer is not None
        assert space_tool(v, FrameSet((0,)), mc_query(), "lamp").answer is None
        assert space_tool(v, FrameSet((1,)), spatial, "lamp").answer is None


class TestGrounding:
    def _video(self):
        return make_video([{"clue"}] * 120, gt=AnswerRecord(Span(12, 20)), gt_span=(12, 20))

    def test_examples(self):
        v = self._video()
        out = grounding_tool(v, ClipSpan(0, 30, 0), "k")
        assert (out.start, out.end) == (12, 20)
        out = grounding_tool(v, ClipSpan(60, 90, 3), "k")
        assert (out.start, out.end) == (70, 80)
        out = grounding_tool(v, None, "k")
        assert (out.start, out.end) == (12, 20)

    def test_clamped_to_clip(self):
        out = grounding_tool(self._video(), ClipSpan(15, 40, None), "k")
        assert (out.start, out.end) == (15, 20)

    def test_noise_is_seeded(self):
        v = self._video()
        a = grounding_tool(v, None, "k", noise_s=2.0)
        assert a == grounding_tool(v, None, "k", noise_s=2.0)
        assert (a.start, a.end) != (12, 20)

    def test_needs_annotation(self):
        with pytest.raises(NoSpanAnnotation):
            grounding_tool(make_video([{"clue"}]), None, "k")


class TestRegistryAndEnv:
    def test_default_groups(self):
        reg = ToolRegistry.default()
        assert len(reg) == 8
        assert set(reg.of_group(ToolGroup.SELECTION)) == {
            "Global Sampling", "Video Retrieval", "Time Stamp Retrieval", "Image Retrieval",
        }
        assert reg.resolve("fine  BROWSER") == "Fine Browser"

    def test_restricted(self):
        reg = ToolRegistry.default().restricted(["video retrieval", "Rough Browser"])
        assert list(reg) == ["Video Retrieval", "Rough Browser"]

    def test_chain_through_env(self, query):
        v = clip_video(60, {2: {"clue1", "clue2", "dog"}})
        env = ToolEnv(v, query)
        reg = ToolRegistry.default()
        clip = env.call(reg, "Video Retrieval", "dog", [])
        assert isinstance(clip, ClipSpan) and clip.clip_index == 2
        seen = env.call(reg, "Rough Browser", "dog", [clip])
        assert seen.answer == Choice("A")

    def test_failure_is_recorded(self, query):
        env = ToolEnv(make_video([{"clue"}] * 10), query)
        out = env.call(ToolRegistry.default(), "Grounding Tool", "k", [])
        assert isinstance(out, ToolFailure) and "NoSpanAnnotation" in out.reason

    def test_time_stamp_tool_reads_query(self):
        q = Query("t", "what happens at 0:50?", (("A", "x"), ("B", "y")), Task.MULTIPLE_CHOICE)
        env = ToolEnv(make_video([{"clue"}] * 120), q)
        out = env.call(ToolRegistry.default(), "Time Stamp Retrieval", "what happens", [])
        assert isinstance(out, ClipSpan) and (out.start, out.end) == (20, 80)
