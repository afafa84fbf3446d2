from __future__ import annotations

from typing import Iterable, Sequence

import pytest

from collabplan.core import AnswerRecord, Choice, Query, Task, VideoHandle
from collabplan.toolkit import SyntheticVideo

OPTIONS = (("A", "red"), ("B", "blue"), ("C", "green"), ("D", "white"))


def mc_query(qid: str = "q1", text: str = "What colour is the kite the dog carries?") -> Query:
    return Query(qid, text, OPTIONS, Task.MULTIPLE_CHOICE)


def make_video(
    frames: Sequence[Iterable[str]],
    *,
    clues: Iterable[str] | None = None,
    gt: AnswerRecord = AnswerRecord(Choice("A"), "seen"),
    fps: float = 1.0,
    gt_span: tuple[float, float] | None = None,
    vid: str = "v",
) -> SyntheticVideo:
    """Video whose frame j shows ``frames[j]``; answer clues default to tokens starting with 'clue'."""
    frames = [frozenset(f) for f in frames]
    if clues is None:
        clues = {t for f in frames for t in f if t.startswith("clue")}
    n = len(frames)
    return SyntheticVideo(VideoHandle(vid, n / fps, fps, n), tuple(frames), frozenset(clues), gt, gt_span)


def clip_video(duration: int, clip_tokens: dict[int, set[str]], **kw) -> SyntheticVideo:
    """1 fps video split into six clips; ``clip_tokens[c]`` fills every frame of clip c."""
    per = duration // 6
    frames = [set(clip_tokens.get(j // per, set())) for j in range(duration)]
    return make_video(frames, **kw)


@pytest.fixture
def query() -> Query:
    return mc_query()


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts, one line per criterion, at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
