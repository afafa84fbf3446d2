"""Perception tools over a synthetic clue-token video.

A synthetic video is a list of frames where each frame carries a small set of
clue tokens. Retrieval tools score spans with a token-overlap similarity that
stands in for a CLIP-style relevance model, and browsing tools "see" the clue
tokens on the frames they are handed.
"""

from __future__ import annotations

import logging
import math
import random
import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import TYPE_CHECKING, Any, Callable, Iterable, Iterator, Mapping, Sequence

from . import prompts
from .core import (
    CANONICAL_TOOLS,
    FINE_BROWSER,
    GLOBAL_SAMPLING,
    GROUNDING_TOOL,
    IMAGE_RETRIEVAL,
    ROUGH_BROWSER,
    SPACE_TOOL,
    TIMESTAMP_RETRIEVAL,
    VIDEO_RETRIEVAL,
    AnswerRecord,
    BrowseResult,
    ClipSpan,
    FrameSet,
    GrammarError,
    Query,
    Task,
    TimeSpanResult,
    ToolFailure,
    ToolGroup,
    ToolOutput,
    VideoHandle,
    derive_seed,
    fmt_num,
    grammar_line,
    parse_answer,
    parse_timestamp,
    record_from_dict,
    record_to_dict,
    resolve_tool,
)

if TYPE_CHECKING:
    from .client import ChatClient

logger = logging.getLogger(__name__)

NUM_CLIPS = 6
MERGE_THRESHOLD = 0.35
MAX_MERGED_CLIPS = 3
IMAGE_RETRIEVAL_FPS = 2.0
TIMESTAMP_WINDOW_S = 60.0
ROUGH_FRAMES = 16
FINE_FRAMES = 32


class ToolError(ValueError):
    pass


class SpanOutOfRange(ToolError):
    pass


class EmptyVideo(ToolError):
    pass


class TimestampOutOfRange(ToolError):
    pass


class NoSpanAnnotation(ToolError):
    pass


class BackendError(RuntimeError):
    """A remote model call failed."""


# ---------------------------------------------------------------------------
# Synthetic video
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"[a-z0-9_]+")


def tokens(text: str) -> frozenset[str]:
    return frozenset(_TOKEN.findall(text.lower()))


@dataclass(frozen=True)
class SyntheticVideo:
    handle: VideoHandle
    frames: tuple[frozenset[str], ...]
    answer_clues: frozenset[str]
    gt_answer: AnswerRecord
    gt_span: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        frames = tuple(frozenset(f) for f in self.frames)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "answer_clues", frozenset(self.answer_clues))
        if len(frames) != self.handle.frame_count:
            raise ValueError("one clue set per frame is required")
        if self.gt_span is not None:
            s, e = self.gt_span
            if not 0 <= s <= e <= self.handle.duration:
                raise ValueError("gt_span outside the video")
            object.__setattr__(self, "gt_span", (float(s), float(e)))
        seen = frozenset().union(*frames) if frames else frozenset()
        if not self.answer_clues <= seen:
            raise ValueError("every answer clue must appear in some frame")

    @property
    def id(self) -> str:
        return self.handle.id

    @property
    def duration(self) -> float:
        return self.handle.duration

    @property
    def fps(self) -> float:
        return self.handle.fps

    @property
    def frame_count(self) -> int:
        return self.handle.frame_count

    def clues_in(self, frames: Iterable[int]) -> frozenset[str]:
        out: set[str] = set()
        for f in frames:
            out |= self.frames[f]
        return frozenset(out)


def video_to_record(video: SyntheticVideo) -> dict[str, Any]:
    return {
        "id": video.id,
        "fps": video.fps,
        "duration": video.duration,
        "frames": [sorted(f) for f in video.frames],
        "answer_clues": sorted(video.answer_clues),
        "gt_answer": record_to_dict(video.gt_answer),
        "gt_span": None if video.gt_span is None else list(video.gt_span),
        "seed": video.seed,
    }


def video_from_record(rec: Mapping[str, Any]) -> SyntheticVideo:
    frames = tuple(frozenset(f) for f in rec["frames"])
    handle = VideoHandle(rec["id"], float(rec["duration"]), float(rec["fps"]), len(frames))
    span = rec.get("gt_span")
    return SyntheticVideo(
        handle=handle,
        frames=frames,
        answer_clues=frozenset(rec["answer_clues"]),
        gt_answer=record_from_dict(rec["gt_answer"]),
        gt_span=None if span is None else (float(span[0]), float(span[1])),
        seed=int(rec.get("seed", 0)),
    )


# ---------------------------------------------------------------------------
# Spans and sampling helpers
# ---------------------------------------------------------------------------


def frames_in_span(video: SyntheticVideo, start: float, end: float) -> range:
    """Frames whose interval [j/fps, (j+1)/fps) overlaps [start, end)."""
    lo = max(0, math.floor(start * video.fps + 1e-9))
    hi = min(video.frame_count, math.ceil(end * video.fps - 1e-9))
    return range(lo, max(lo, hi))


def clip_bounds(duration: float, n: int = NUM_CLIPS) -> list[tuple[float, float]]:
    edges = [duration * i / n for i in range(n)] + [duration]
    return list(zip(edges[:-1], edges[1:]))


def uniform_indices(lo: int, hi: int, n: int) -> tuple[int, ...]:
    """``n`` evenly spaced indices in ``[lo, hi)``, deduplicated."""
    count = hi - lo
    if count <= 0:
        return ()
    seen: dict[int, None] = {}
    for i in range(n):
        seen[lo + (i * count) // n] = None
    return tuple(seen)


def subsample(frames: Sequence[int], n: int) -> tuple[int, ...]:
    if len(frames) <= n:
        return tuple(frames)
    return tuple(frames[i] for i in uniform_indices(0, len(frames), n))


def similarity(key_info: str, frames: Iterable[int], video: SyntheticVideo) -> float:
    """Share of key-info tokens visible somewhere in ``frames``."""
    if isinstance(frames, range):
        if len(frames) and (frames.start < 0 or frames[-1] >= video.frame_count):
            raise SpanOutOfRange(f"{frames} outside 0..{video.frame_count - 1}")
    else:
        frames = list(frames)
        if any(not 0 <= f < video.frame_count for f in frames):
            raise SpanOutOfRange(f"frames outside 0..{video.frame_count - 1}")
    wanted = tokens(key_info)
    seen = video.clues_in(frames)
    return len(wanted & seen) / max(1, len(wanted))


# ---------------------------------------------------------------------------
# Selection tools
# ---------------------------------------------------------------------------


def global_sampling(video: SyntheticVideo, n: int = 16) -> FrameSet:
    if video.frame_count < 1:
        raise EmptyVideo(video.id)
    if n < 1:
        raise ValueError("n must be positive")
    return FrameSet(uniform_indices(0, video.frame_count, n))


def clip_similarities(video: SyntheticVideo, key_info: str) -> list[float]:
    return [similarity(key_info, frames_in_span(video, s, e), video) for s, e in clip_bounds(video.duration)]


def _argmax(values: Sequence[float]) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def _clip_output(video: SyntheticVideo, start: float, end: float, index: int | None) -> ClipSpan:
    span = frames_in_span(video, start, end)
    return ClipSpan(start, end, index, uniform_indices(span.start, span.stop, ROUGH_FRAMES))


def video_retrieval(video: SyntheticVideo, key_info: str) -> ClipSpan:
    if video.duration <= 0 or video.frame_count < 1:
        raise EmptyVideo(video.id)
    sims = clip_similarities(video, key_info)
    best = _argmax(sims)
    start, end = clip_bounds(video.duration)[best]
    return _clip_output(video, start, end, best)


def merge_clips(
    sims: Sequence[float],
    threshold: float = MERGE_THRESHOLD,
    cap: int = MAX_MERGED_CLIPS,
) -> tuple[int, int]:
    """Grow a run of clips outward from the best one.

    A neighbour joins when its similarity is strictly above ``threshold``; when
    both sides qualify the higher one goes first (left on ties). Returns the
    inclusive clip index range.
    """
    lo = hi = _argmax(sims)
    while hi - lo + 1 < cap:
        left = sims[lo - 1] if lo > 0 and sims[lo - 1] > threshold else None
        right = sims[hi + 1] if hi + 1 < len(sims) and sims[hi + 1] > threshold else None
        if left is None and right is None:
            break
        if right is None or (left is not None and left >= right):
            lo -= 1
        else:
            hi += 1
    return lo, hi


def video_retrieval_merged(video: SyntheticVideo, key_info: str) -> ClipSpan:
    if video.duration <= 0 or video.frame_count < 1:
        raise EmptyVideo(video.id)
    sims = clip_similarities(video, key_info)
    lo, hi = merge_clips(sims)
    bounds = clip_bounds(video.duration)
    # clip_index names the best clip inside the merged run
    return _clip_output(video, bounds[lo][0], bounds[hi][1], _argmax(sims))


def timestamp_window(duration: float, t: float) -> tuple[float, float]:
    if not 0 <= t <= duration:
        raise TimestampOutOfRange(f"t={t} outside [0, {duration}]")
    half = TIMESTAMP_WINDOW_S / 2
    return max(0.0, t - half), min(duration, t + half)


def timestamp_retrieval(video: SyntheticVideo, t: float) -> ClipSpan:
    start, end = timestamp_window(video.duration, t)
    return _clip_output(video, start, end, None)


def image_candidates(video: SyntheticVideo) -> tuple[int, ...]:
    """Frame indices visited when sampling the video at 2 fps."""
    seen: dict[int, None] = {}
    n = math.ceil(video.duration * IMAGE_RETRIEVAL_FPS - 1e-9)
    for j in range(n):
        idx = math.floor(j * video.fps / IMAGE_RETRIEVAL_FPS + 1e-9)
        if idx < video.frame_count:
            seen[idx] = None
    return tuple(seen)


def image_retrieval(video: SyntheticVideo, key_info: str, k: int = 16) -> FrameSet:
    if k not in (16, 32):
        raise ValueError("k must be 16 or 32")
    if video.duration <= 0 or video.frame_count < 1:
        raise EmptyVideo(video.id)
    cands = image_candidates(video)
    scored = [(similarity(key_info, (f,), video), f) for f in cands]
    # sort by score descending, earlier frame first on ties
    scored.sort(key=lambda sf: (-sf[0], sf[1]))
    return FrameSet(tuple(sorted(f for _, f in scored[:k])))


# ---------------------------------------------------------------------------
# Browsing tools (simulation)
# ---------------------------------------------------------------------------

DEFAULT_THRESHOLDS: Mapping[str, float] = MappingProxyType(
    {ROUGH_BROWSER: 1.0, FINE_BROWSER: 0.75, SPACE_TOOL: 1.0}
)


def coverage(video: SyntheticVideo, frames: Iterable[int]) -> float:
    if not video.answer_clues:
        return 1.0
    return len(video.answer_clues & video.clues_in(frames)) / len(video.answer_clues)


def _summary(video: SyntheticVideo, frames: Sequence[int]) -> str:
    seen = sorted(video.clues_in(frames))
    return "observed: " + (", ".join(seen) if seen else "nothing")


def _browse(video: SyntheticVideo, frames: Sequence[int], threshold: float) -> BrowseResult:
    c = coverage(video, frames)
    answer = video.gt_answer.answer if c >= threshold - 1e-12 else None
    return BrowseResult(answer, _summary(video, frames), tuple(frames))


def rough_browser(
    video: SyntheticVideo,
    frames: FrameSet,
    query: Query,
    key_info: str,
    threshold: float = DEFAULT_THRESHOLDS[ROUGH_BROWSER],
) -> BrowseResult:
    return _browse(video, subsample(frames.frames, ROUGH_FRAMES), threshold)


def fine_browser(
    video: SyntheticVideo,
    source: ClipSpan | FrameSet,
    query: Query,
    key_info: str,
    threshold: float = DEFAULT_THRESHOLDS[FINE_BROWSER],
) -> BrowseResult:
    """Read up to 32 frames: evenly spread over a clip, or the picked frames themselves."""
    return _browse(video, fine_frames(video, source), threshold)


def fine_frames(video: SyntheticVideo, source: ClipSpan | FrameSet) -> tuple[int, ...]:
    if isinstance(source, FrameSet):
        return subsample(source.frames, FINE_FRAMES)
    span = frames_in_span(video, source.start, source.end)
    return uniform_indices(span.start, span.stop, FINE_FRAMES)


def space_tool(
    video: SyntheticVideo,
    frames: FrameSet,
    query: Query,
    key_info: str,
    threshold: float = DEFAULT_THRESHOLDS[SPACE_TOOL],
) -> BrowseResult:
    picked = subsample(frames.frames, ROUGH_FRAMES)
    if query.task is not Task.SPATIAL:
        return BrowseResult(None, _summary(video, picked), picked)
    return _browse(video, picked, threshold)


def grounding_tool(
    video: SyntheticVideo,
    clip: ClipSpan | None,
    key_info: str,
    noise_s: float = 0.0,
) -> TimeSpanResult:
    if video.gt_span is None:
        raise NoSpanAnnotation(video.id)
    lo, hi = (0.0, video.duration) if clip is None else (clip.start, clip.end)
    frames = tuple(frames_in_span(video, lo, hi))
    gs, ge = video.gt_span
    if gs < hi and ge > lo:
        if noise_s > 0:
            rng = random.Random(derive_seed(video.seed, key_info, lo, hi))
            gs += rng.uniform(-noise_s, noise_s)
            ge += rng.uniform(-noise_s, noise_s)
        s = min(max(gs, lo), hi)
        e = min(max(ge, lo), hi)
        s, e = min(s, e), max(s, e)
        return TimeSpanResult(s, e, "segment matches the key info", frames)
    third = (hi - lo) / 3
    return TimeSpanResult(lo + third, lo + 2 * third, "no matching segment; middle of clip", frames)


# ---------------------------------------------------------------------------
# Registry and tool environments
# ---------------------------------------------------------------------------

ToolFn = Callable[["ToolEnv", str, "ToolOutput | None"], ToolOutput]


@dataclass(frozen=True)
class ToolSpec:
    group: ToolGroup
    fn: ToolFn


class ToolRegistry(Mapping[str, ToolSpec]):
    """Read-only map of tool name to (group, implementation)."""

    def __init__(self, entries: Mapping[str, ToolSpec]):
        self._entries = dict(entries)

    def __getitem__(self, name: str) -> ToolSpec:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def resolve(self, name: str) -> str:
        return resolve_tool(name, self._entries)

    def group(self, name: str) -> ToolGroup:
        return self._entries[name].group

    @property
    def groups(self) -> dict[str, ToolGroup]:
        return {n: s.group for n, s in self._entries.items()}

    def of_group(self, group: ToolGroup) -> list[str]:
        return [n for n, s in self._entries.items() if s.group is group]

    def restricted(self, names: Iterable[str]) -> "ToolRegistry":
        keep = [self.resolve(n) for n in names]
        return ToolRegistry({n: self._entries[n] for n in keep})

    @classmethod
    def default(cls) -> "ToolRegistry":
        return cls({name: ToolSpec(CANONICAL_TOOLS[name], fn) for name, fn in _DEFAULT_FNS.items()})


_TIME_PATTERNS = [
    re.compile(r"\b(\d{1,2}):(\d{2}):(\d{2})\b"),
    re.compile(r"\b(\d{1,3}):(\d{2})\b"),
    re.compile(r"\b(\d+(?:\.\d+)?)\s*(?:s|sec|secs|seconds)\b", re.IGNORECASE),
]


def find_timestamp(text: str) -> float | None:
    """First time reference in ``text`` in seconds (``h:mm:ss``, ``mm:ss`` or ``Ns``)."""
    m = _TIME_PATTERNS[0].search(text)
    if m:
        h, mi, s = (int(g) for g in m.groups())
        return float(h * 3600 + mi * 60 + s)
    m = _TIME_PATTERNS[1].search(text)
    if m:
        return float(int(m.group(1)) * 60 + int(m.group(2)))
    m = _TIME_PATTERNS[2].search(text)
    if m:
        return float(m.group(1))
    return None


def visual_source(history: Sequence[ToolOutput]) -> ToolOutput | None:
    """Most recent output that picked frames or a span; browsing tools consume it."""
    for out in reversed(history):
        if isinstance(out, (FrameSet, ClipSpan, TimeSpanResult)):
            return out
    return None


@dataclass
class ToolEnv:
    """Everything a tool call needs: the video, the query and tool settings.

    ``client`` and ``endpoints`` are only used in live mode, where browsing
    tools delegate to chat-completion endpoints instead of the clue oracle.
    """

    video: SyntheticVideo
    query: Query
    thresholds: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    grounding_noise_s: float = 0.0
    live: bool = False
    client: "ChatClient | None" = None
    endpoints: Mapping[str, Any] = field(default_factory=dict)

    def frames_of(self, source: ToolOutput | None) -> FrameSet:
        if isinstance(source, FrameSet):
            return source
        if isinstance(source, ClipSpan) and source.frames:
            return FrameSet(source.frames)
        if isinstance(source, (ClipSpan, TimeSpanResult)):
            span = frames_in_span(self.video, source.start, source.end)
            return FrameSet(uniform_indices(span.start, span.stop, ROUGH_FRAMES))
        return global_sampling(self.video, ROUGH_FRAMES)

    def clip_of(self, source: ToolOutput | None) -> ClipSpan | None:
        if isinstance(source, ClipSpan):
            return source
        if isinstance(source, TimeSpanResult):
            return ClipSpan(source.start, source.end, None)
        if isinstance(source, FrameSet) and source.frames:
            fps = self.video.fps
            end = min(self.video.duration, (source.frames[-1] + 1) / fps)
            return ClipSpan(source.frames[0] / fps, end, None)
        return None

    def call(self, registry: ToolRegistry, tool: str, key_info: str, history: Sequence[ToolOutput]) -> ToolOutput:
        try:
            return registry[tool].fn(self, key_info, visual_source(history))
        except (ToolError, BackendError) as exc:
            logger.warning("tool %s failed: %s", tool, exc)
            return ToolFailure(f"{type(exc).__name__}: {exc}")


def _t_global(env: ToolEnv, key_info: str, prev: ToolOutput | None) -> ToolOutput:
    return global_sampling(env.video, ROUGH_FRAMES)


def _t_video(env: ToolEnv, key_info: str, prev: ToolOutput | None) -> ToolOutput:
    if env.query.task is Task.TEMPORAL_GROUNDING:
        return video_retrieval_merged(env.video, key_info)
    return video_retrieval(env.video, key_info)


def _t_timestamp(env: ToolEnv, key_info: str, prev: ToolOutput | None) -> ToolOutput:
    t = find_timestamp(key_info)
    if t is None:
        t = find_timestamp(env.query.text)
    if t is None:
        raise TimestampOutOfRange("no time reference in key info or query")
    return timestamp_retrieval(env.video, t)


def _t_image(env: ToolEnv, key_info: str, prev: ToolOutput | None) -> ToolOutput:
    return image_retrieval(env.video, key_info, 16)


def _t_rough(env: ToolEnv, key_info: str, prev: ToolOutput | None) -> ToolOutput:
    frames = env.frames_of(prev)
    if env.live:
        return _live_browse(env, ROUGH_BROWSER, subsample(frames.frames, ROUGH_FRAMES), key_info)
    return rough_browser(env.video, frames, env.query, key_info, env.thresholds[ROUGH_BROWSER])


def _t_fine(env: ToolEnv, key_info: str, prev: ToolOutput | None) -> ToolOutput:
    source = prev if isinstance(prev, FrameSet) else env.clip_of(prev) or ClipSpan(0.0, env.video.duration, None)
    if env.live:
        return _live_browse(env, FINE_BROWSER, fine_frames(env.video, source), key_info)
    return fine_browser(env.video, source, env.query, key_info, env.thresholds[FINE_BROWSER])


def _t_space(env: ToolEnv, key_info: str, prev: ToolOutput | None) -> ToolOutput:
    frames = env.frames_of(prev)
    if env.live:
        return _live_browse(env, SPACE_TOOL, subsample(frames.frames, ROUGH_FRAMES), key_info)
    return space_tool(env.video, frames, env.query, key_info, env.thresholds[SPACE_TOOL])


def _t_grounding(env: ToolEnv, key_info: str, prev: ToolOutput | None) -> ToolOutput:
    clip = env.clip_of(prev)
    if env.live:
        return _live_ground(env, clip, key_info)
    return grounding_tool(env.video, clip, key_info, env.grounding_noise_s)


_DEFAULT_FNS: dict[str, ToolFn] = {
    GLOBAL_SAMPLING: _t_global,
    VIDEO_RETRIEVAL: _t_video,
    TIMESTAMP_RETRIEVAL: _t_timestamp,
    IMAGE_RETRIEVAL: _t_image,
    ROUGH_BROWSER: _t_rough,
    FINE_BROWSER: _t_fine,
    SPACE_TOOL: _t_space,
    GROUNDING_TOOL: _t_grounding,
}


# ---------------------------------------------------------------------------
# Live browsing: frames are described by their clue tokens
# ---------------------------------------------------------------------------


def describe_frames(video: SyntheticVideo, frames: Sequence[int]) -> str:
    lines = []
    for f in frames:
        t = fmt_num(round(f / video.fps, 3))
        lines.append(f"frame {f} (t={t}s): {', '.join(sorted(video.frames[f])) or '-'}")
    return "\n".join(lines)


def _endpoint(env: ToolEnv, tool: str):
    if env.client is None:
        raise BackendError("live mode without a chat client")
    cfg = env.endpoints.get(tool) or env.endpoints.get("default")
    if cfg is None:
        raise BackendError(f"no endpoint configured for {tool}")
    return cfg


def _live_browse(env: ToolEnv, tool: str, frames: Sequence[int], key_info: str) -> BrowseResult:
    cfg = _endpoint(env, tool)
    prompt = prompts.browser_prompt(tool, env.query, key_info, describe_frames(env.video, frames))
    raw = env.client.complete(cfg, [{"role": "user", "content": prompt}])
    try:
        rec = parse_answer(raw, env.query)
        answer = None if rec.abstained else rec.answer
        summary = rec.reason
    except GrammarError:
        # a browser may legitimately return only a summary
        answer, summary = None, raw.strip()
    return BrowseResult(answer, summary, tuple(frames))


def _live_ground(env: ToolEnv, clip: ClipSpan | None, key_info: str) -> TimeSpanResult:
    cfg = _endpoint(env, GROUNDING_TOOL)
    lo, hi = (0.0, env.video.duration) if clip is None else (clip.start, clip.end)
    span = frames_in_span(env.video, lo, hi)
    frames = uniform_indices(span.start, span.stop, FINE_FRAMES)
    prompt = prompts.grounding_prompt(key_info, describe_frames(env.video, frames))
    raw = env.client.complete(cfg, [{"role": "user", "content": prompt}])
    stamp = grammar_line(raw, "timestamp")
    try:
        if stamp is None:
            raise BackendError("grounding reply has no timestamp")
        sp = parse_timestamp(stamp)
    except GrammarError as exc:
        raise BackendError(str(exc)) from exc
    s = min(max(sp.start, 0.0), env.video.duration)
    e = min(max(sp.end, 0.0), env.video.duration)
    return TimeSpanResult(s, e, grammar_line(raw, "reason") or "", tuple(frames))
