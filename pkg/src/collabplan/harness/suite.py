"""Seeded synthetic benchmark suites.

Each item pairs a query with a synthetic video. Frames are sets of clue
tokens; the described event's tokens fill a target window inside one of the
six clips, and the answer clues sit in runs inside that window. Other clips
carry partial or full copies of the event as decoys, which is what makes each
retrieval strategy fallible in its own way (see :class:`SuiteSpec`).
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from ..core import (
    AnswerRecord,
    Choice,
    FreeText,
    Query,
    Span,
    Task,
    VideoHandle,
    derive_seed,
    query_from_dict,
    query_to_dict,
)
from ..toolkit import NUM_CLIPS, SyntheticVideo, clip_bounds, video_from_record, video_to_record

SUBJECTS = "chef dog child woman man cyclist robot farmer painter dancer pilot nurse".split()
ACTIONS = "opens lifts throws cuts drops paints cleans carries fixes kicks folds pours".split()
OBJECTS = "box ball door bread kite chair bottle ladder bucket guitar basket lamp".split()
FILLER = "tree wall sky road table window grass car cloud shelf floor light bench sign".split()
OUTCOMES = "laughs waves sits runs jumps falls leaves claps turns shouts bows rests".split()
DIRECTIONS = ["left of", "right of", "behind", "in front of"]


@dataclass(frozen=True)
class SuiteSpec:
    """Recipe for a suite; regenerating from the same spec is bit-identical.

    Difficulty knobs: ``clue_run`` is the (min, max) length in frames of each
    answer-clue run, ``event_density`` the (min, max) range of the chance an
    event token shows in a window frame, ``distractors`` the (min, max)
    number of clips carrying scattered event tokens, each frame drawing them
    at a per-item density from the ``distractor_density`` range. A distractor
    clip carries a random non-empty subset of the event tokens.
    Items come in two kinds. In a *glimpse* item (chance ``glimpse_rate``)
    the answer shows in brief ``clue_run`` flashes that always co-occur with
    the full event, and an earlier clip replays the whole event as a decoy:
    frame-level retrieval finds it, clip-level retrieval is fooled. In a
    *scene* item the answer unfolds over longer ``scene_run`` stretches that
    show the full event only with chance ``clue_event_overlap``, and decoy
    clips carry strict subsets of the event: clip retrieval finds the
    right clip while frame retrieval chases event frames without the answer.
    """

    seed: int = 0
    count: int = 200
    task_mix: Mapping[str, float] = field(default_factory=lambda: {"MultipleChoice": 1.0})
    duration_s: tuple[int, int] = (180, 600)
    fps: float = 1.0
    n_clues: int = 4
    clue_run: tuple[int, int] = (1, 3)
    window_frac: tuple[float, float] = (0.3, 0.7)
    event_density: tuple[float, float] = (0.1, 0.4)
    distractors: tuple[int, int] = (1, 3)
    distractor_density: tuple[float, float] = (0.1, 0.5)
    clue_event_overlap: float = 0.1
    glimpse_rate: float = 0.5
    scene_run: tuple[int, int] = (3, 6)
    timestamp_rate: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(self, "task_mix", dict(self.task_mix))
        for key in ("duration_s", "clue_run", "scene_run", "window_frac", "event_density", "distractors", "distractor_density"):
            object.__setattr__(self, key, tuple(getattr(self, key)))
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if not self.task_mix or any(w < 0 for w in self.task_mix.values()) or sum(self.task_mix.values()) <= 0:
            raise ValueError("task_mix needs non-negative weights with a positive sum")
        for name in self.task_mix:
            Task(name)
        if not 0 <= self.glimpse_rate <= 1 or not 0 <= self.clue_event_overlap <= 1:
            raise ValueError("glimpse_rate and clue_event_overlap are probabilities")
        if self.duration_s[0] < NUM_CLIPS * 2 or self.duration_s[0] > self.duration_s[1]:
            raise ValueError("duration range too short or inverted")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["task_mix"] = dict(self.task_mix)
        for key in ("duration_s", "clue_run", "scene_run", "window_frac", "event_density", "distractors", "distractor_density"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SuiteSpec":
        return cls(**dict(d))


@dataclass(frozen=True)
class SuiteItem:
    query: Query
    video: SyntheticVideo

    def to_record(self) -> dict[str, Any]:
        return {"query": query_to_dict(self.query), "video": video_to_record(self.video)}

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "SuiteItem":
        return cls(query_from_dict(rec["query"]), video_from_record(rec["video"]))


def _pick_task(rng: random.Random, mix: Mapping[str, float]) -> Task:
    names = sorted(mix)
    return Task(rng.choices(names, weights=[mix[n] for n in names])[0])


def _fmt_clock(t: int) -> str:
    return f"{t // 60}:{t % 60:02d}"


def _clip_frames(bounds: tuple[float, float], fps: float, n_frames: int) -> tuple[int, int]:
    """Half-open frame range whose timestamps fall inside the clip."""
    return min(n_frames, math.ceil(bounds[0] * fps - 1e-9)), min(n_frames, math.ceil(bounds[1] * fps - 1e-9))


def generate_item(spec: SuiteSpec, index: int) -> SuiteItem:
    rng = random.Random(derive_seed(spec.seed, "item", index))
    task = _pick_task(rng, spec.task_mix)
    item_id = f"q{index:05d}"

    duration = rng.randint(*spec.duration_s)
    n_frames = int(duration * spec.fps)
    frames: list[set[str]] = [set(rng.sample(FILLER, rng.randint(1, 2))) for _ in range(n_frames)]

    subj, act, obj = rng.choice(SUBJECTS), rng.choice(ACTIONS), rng.choice(OBJECTS)
    event = [subj, act, obj]
    clips = clip_bounds(duration)
    glimpse = rng.random() < spec.glimpse_rate
    # a glimpse item needs room for the decoy replay before the target clip
    target = rng.randrange(1, NUM_CLIPS) if glimpse else rng.randrange(NUM_CLIPS - 1)
    c0, c1 = _clip_frames(clips[target], spec.fps, n_frames)
    clip_len = max(1, c1 - c0)
    run_range = spec.clue_run if glimpse else spec.scene_run
    w_len = max(run_range[1] + 1, int(clip_len * rng.uniform(*spec.window_frac)))
    w_len = min(w_len, clip_len)
    w0 = c0 + rng.randrange(clip_len - w_len + 1)
    w1 = w0 + w_len

    event_density = rng.uniform(*spec.event_density)
    distractor_density = rng.uniform(*spec.distractor_density)
    for f in range(w0, w1):
        for tok in event:
            if rng.random() < event_density:
                frames[f].add(tok)
    # every event token shows at least once inside the window
    for tok in event:
        frames[rng.randrange(w0, w1)].add(tok)

    others = [c for c in range(NUM_CLIPS) if c != target]
    for c in rng.sample(others, min(len(others), rng.randint(*spec.distractors))):
        d0, d1 = _clip_frames(clips[c], spec.fps, n_frames)
        decoy = rng.sample(event, rng.randint(1, len(event) - 1))
        for f in range(d0, d1):
            for tok in decoy:
                if rng.random() < distractor_density:
                    frames[f].add(tok)
    # the full replay sits before the target in glimpse items, after it in scene items
    c = rng.randrange(target) if glimpse else rng.randrange(target + 1, NUM_CLIPS)
    d0, d1 = _clip_frames(clips[c], spec.fps, n_frames)
    for f in range(d0, d1):
        for tok in event:
            if rng.random() < distractor_density:
                frames[f].add(tok)
    for tok in event:
        frames[rng.randrange(d0, d1)].add(tok)

    clue_tag = f"x{derive_seed(spec.seed, 'tag', index) % 10**6:06d}"
    if task is Task.TEMPORAL_GROUNDING:
        clues = frozenset(event)
    else:
        clues = frozenset(f"{clue_tag}c{k}" for k in range(spec.n_clues))
        for tok in sorted(clues):
            run = rng.randint(*run_range)
            s = rng.randrange(w0, max(w0 + 1, w1 - run + 1))
            with_event = glimpse or rng.random() < spec.clue_event_overlap
            for f in range(s, min(w1, s + run)):
                frames[f].add(tok)
                if with_event:
                    frames[f].update(event)

    text_event = f"the {subj} {act} the {obj}"
    options: tuple[tuple[str, str], ...] = ()
    if task is Task.MULTIPLE_CHOICE:
        outcomes = rng.sample(OUTCOMES, 4)
        options = tuple((chr(ord("A") + i), f"they {o}") for i, o in enumerate(outcomes))
        correct = rng.randrange(4)
        gt = AnswerRecord(Choice(chr(ord("A") + correct)), "answer clues seen in the target window")
        text = f"What happens after {text_event}?"
    elif task is Task.TEMPORAL_GROUNDING:
        gt = AnswerRecord(Span(w0 / spec.fps, w1 / spec.fps), "event window")
        text = f"When does {text_event}?"
    elif task is Task.SPATIAL:
        gt = AnswerRecord(FreeText(f"{rng.choice(DIRECTIONS)} the {rng.choice(FILLER)}"), "layout clues")
        text = f"Where is the {obj} when {text_event}?"
    else:
        gt = AnswerRecord(FreeText(f"{rng.choice(OUTCOMES)} {clue_tag}"), "answer clues seen in the target window")
        text = f"What does the {subj} do after {text_event}?"
    if task is not Task.TEMPORAL_GROUNDING and rng.random() < spec.timestamp_rate:
        text = text[:-1] + f" around {_fmt_clock(int(rng.randrange(w0, w1) / spec.fps))}?"

    handle = VideoHandle(f"v{index:05d}", float(duration), spec.fps, n_frames)
    video = SyntheticVideo(
        handle=handle,
        frames=tuple(frozenset(f) for f in frames),
        answer_clues=clues,
        gt_answer=gt,
        gt_span=(w0 / spec.fps, w1 / spec.fps),
        seed=derive_seed(spec.seed, "video", index),
    )
    return SuiteItem(Query(item_id, text, options, task), video)


def generate_suite(spec: SuiteSpec) -> list[SuiteItem]:
    return [generate_item(spec, i) for i in range(spec.count)]


# ---------------------------------------------------------------------------
# Suite files: a header line with the SuiteSpec, then one item per line
# ---------------------------------------------------------------------------

SUITE_SCHEMA = "collabplan.suite/1"


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_suite(path: str | Path, spec: SuiteSpec, items: Sequence[SuiteItem] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    items = generate_suite(spec) if items is None else items
    with path.open("w", encoding="utf-8") as fh:
        fh.write(_dumps({"schema": SUITE_SCHEMA, "spec": spec.to_dict()}) + "\n")
        for item in items:
            fh.write(_dumps(item.to_record()) + "\n")
    return path


def read_suite(path: str | Path) -> tuple[SuiteSpec | None, list[SuiteItem]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        return None, []
    head = json.loads(lines[0])
    if head.get("schema") != SUITE_SCHEMA:
        raise ValueError(f"{path}: not a suite file (schema {head.get('schema')!r})")
    spec = SuiteSpec.from_dict(head["spec"]) if head.get("spec") else None
    return spec, [SuiteItem.from_record(json.loads(l)) for l in lines[1:] if l.strip()]


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


