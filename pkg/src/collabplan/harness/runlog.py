"""Line-delimited run logs.

The first line is a header record carrying the schema version, the command,
the seed and the full configuration, so a log is enough to re-run itself.
Every later line is one event of one session: the orchestrator's trace
events, then per-agent ``reward`` events and a closing ``session`` record
with the ground truth and session statistics. Timestamps are the session's
modeled clock in simulation, which keeps logs byte-identical across runs.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

from ..core import AnswerRecord, Query, query_from_dict, query_to_dict, record_from_dict, record_to_dict
from ..orchestrator import SessionResult

RUNLOG_SCHEMA = "collabplan.runlog/1"
EVENT_KINDS = ("plan", "tool_call", "tool_output", "comm_decision", "answer", "consensus", "reward", "session")


class RunLogError(ValueError):
    pass


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class RunLogWriter:
    """Single-writer sink; a lock serialises records from concurrent sessions."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8", newline="\n")
        self._lock = threading.Lock()

    def __enter__(self) -> "RunLogWriter":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def write(self, record: Mapping[str, Any]) -> None:
        line = dumps(record)
        with self._lock:
            self._fh.write(line + "\n")

    def header(self, command: str, seed: int, config: Mapping[str, Any], **extra: Any) -> None:
        self.write({"schema": RUNLOG_SCHEMA, "kind": "header", "command": command, "seed": seed, "config": config, **extra})

    def session(
        self,
        session_id: str,
        result: SessionResult,
        gt: AnswerRecord,
        seed: int,
        rewards: Mapping[str, Mapping[str, float]] | None = None,
        failed: bool = False,
    ) -> None:
        """All records of one session, written as one block."""
        qid = result.query_id
        lines = []
        for ev in result.trace:
            lines.append(_event(session_id, qid, seed, ev["t"], ev["kind"], ev["agent"], ev["turn"], ev["payload"]))
        t_end = result.stats.wall_time
        for name, parts in sorted((rewards or {}).items()):
            lines.append(_event(session_id, qid, seed, t_end, "reward", name, None, dict(parts)))
        s = result.stats
        lines.append(
            _event(
                session_id, qid, seed, t_end, "session", None, None,
                {
                    "query": query_to_dict(result.query),
                    "gt": record_to_dict(gt),
                    "final": record_to_dict(result.final_answer),
                    "per_agent": {n: record_to_dict(a) for n, a in sorted(result.per_agent.items())},
                    "frames_used": s.frames_used,
                    "tool_calls": dict(sorted(s.tool_calls.items())),
                    "wall_time": s.wall_time,
                    "failed": failed,
                },
            )
        )
        block = "".join(dumps(r) + "\n" for r in lines)
        with self._lock:
            self._fh.write(block)

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


def _event(session: str, qid: str, seed: int, t: float, kind: str, agent: str | None, turn: int | None,
           payload: Mapping[str, Any]) -> dict[str, Any]:
    return {
        "timestamp": t,
        "session": session,
        "query": qid,
        "kind": kind,
        "agent": agent,
        "turn": turn,
        "payload": payload,
        "seed": seed,
    }


@dataclass
class LoggedSession:
    session_id: str
    seed: int
    events: list[dict[str, Any]] = field(default_factory=list)
    summary: dict[str, Any] | None = None

    @property
    def query(self) -> Query:
        return query_from_dict(self._summary["query"])

    @property
    def gt(self) -> AnswerRecord:
        return record_from_dict(self._summary["gt"])

    @property
    def final(self) -> AnswerRecord:
        return record_from_dict(self._summary["final"])

    @property
    def per_agent(self) -> dict[str, AnswerRecord]:
        return {n: record_from_dict(a) for n, a in self._summary["per_agent"].items()}

    @property
    def trace(self) -> list[dict[str, Any]]:
        """Orchestrator events only, in the shape :class:`SessionResult` keeps them."""
        out = []
        for ev in self.events:
            if ev["kind"] in ("reward", "session"):
                continue
            out.append({"seq": len(out), "t": ev["timestamp"], "kind": ev["kind"], "agent": ev["agent"],
                        "turn": ev["turn"], "payload": ev["payload"]})
        return out

    @property
    def _summary(self) -> dict[str, Any]:
        if self.summary is None:
            raise RunLogError(f"session {self.session_id} has no closing record")
        return self.summary


def iter_records(path: str | Path) -> Iterator[dict[str, Any]]:
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise RunLogError(f"{path}:{n}: bad JSON ({exc})") from exc


def read_runlog(path: str | Path) -> tuple[dict[str, Any], list[LoggedSession]]:
    records = iter_records(path)
    header = next(records, None)
    if header is None:
        raise RunLogError(f"{path}: empty log")
    if header.get("schema") != RUNLOG_SCHEMA:
        raise RunLogError(f"{path}: unsupported schema {header.get('schema')!r}")
    sessions: dict[str, LoggedSession] = {}
    for rec in records:
        kind = rec.get("kind")
        if kind not in EVENT_KINDS:
            raise RunLogError(f"{path}: unknown record kind {kind!r}")
        sid = rec["session"]
        sess = sessions.setdefault(sid, LoggedSession(sid, rec["seed"]))
        sess.events.append(rec)
        if kind == "session":
            sess.summary = rec["payload"]
    return header, list(sessions.values())


def session_id(seed: int, query_id: str) -> str:
    return f"s{seed}-{query_id}"


def answers_equal(a: Sequence[LoggedSession], b: Sequence[LoggedSession]) -> list[str]:
    """Ids of sessions whose consensus answers differ (or exist on one side only)."""
    left = {s.session_id: s.final for s in a}
    right = {s.session_id: s.final for s in b}
    return sorted(sid for sid in left.keys() | right.keys() if left.get(sid) != right.get(sid))
