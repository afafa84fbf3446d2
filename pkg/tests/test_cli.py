from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest
import yaml

from collabplan.core import AnswerRecord, Choice
from collabplan.harness.cli import main
from collabplan.harness.config import default_group
from collabplan.harness.runlog import RunLogWriter, session_id
from collabplan.orchestrator import run_session
from collabplan.toolkit import ToolRegistry

from conftest import make_video, mc_query


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, dict(line.split("\t", 1) for line in out.splitlines() if "\t" in line), err


def test_simulate_is_byte_identical(tmp_path, capsys):
    for d in ("a", "b"):
        code, out, _ = run(capsys, "simulate", "--seed", 7, "--count", 15, "--out", tmp_path / d)
        assert code == 0 and out["sessions"] == "15"
    a, b = (tmp_path / d / "run.jsonl" for d in ("a", "b"))
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a" / "sft.jsonl").read_bytes() == (tmp_path / "b" / "sft.jsonl").read_bytes()
    header = json.loads(a.read_text().splitlines()[0])
    assert header["seed"] == 7 and header["command"] == "simulate"


def test_replay(tmp_path, capsys):
    run(capsys, "simulate", "--seed", 3, "--count", 8, "--out", tmp_path)
    log = tmp_path / "run.jsonl"
    code, out, _ = run(capsys, "replay", log, "--out", tmp_path / "r")
    assert code == 0 and out["status"] == "identical" and out["log_bytes"] == "identical"

    # flip one recorded consensus answer
    lines = log.read_text().splitlines()
    for i, line in enumerate(lines):
        rec = json.loads(line)
        if rec.get("kind") == "session":
            label = rec["payload"]["final"]["answer"]["label"]
            rec["payload"]["final"]["answer"]["label"] = "B" if label != "B" else "C"
            lines[i] = json.dumps(rec)
            sid = rec["session"]
            break
    log.write_text("\n".join(lines) + "\n")
    code, out, _ = run(capsys, "replay", log, "--out", tmp_path / "r2")
    assert code == 1 and out["status"] == "differs" and out["mismatch"] == sid


def test_suite_file_flow(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-suite", "--seed", 2, "--count", 5, "--out", tmp_path)
    assert code == 0 and out["items"] == "5"
    suite = tmp_path / "suite.jsonl"
    code, out, _ = run(capsys, "simulate", "--suite", suite, "--out", tmp_path / "s")
    assert code == 0 and out["sessions"] == "5"
    code, out, _ = run(capsys, "replay", tmp_path / "s" / "run.jsonl", "--out", tmp_path / "r")
    assert out["status"] == "identical"
    suite.write_text(suite.read_text() + "\n")
    code, _, err = run(capsys, "replay", tmp_path / "s" / "run.jsonl", "--out", tmp_path / "r")
    assert code == 2 and "changed" in err


def test_eval_counts_three_of_four(tmp_path, capsys):
    frames = [{"clue1", "clue2", "colour", "kite", "dog"}] * 60
    reg = ToolRegistry.default()
    log = tmp_path / "run.jsonl"
    with RunLogWriter(log) as w:
        w.header("simulate", 0, {})
        for i in range(4):
            q = mc_query(f"q{i}")
            res = run_session(q, make_video(frames, vid=f"v{i}"), default_group(2), reg)
            gt = AnswerRecord(Choice("A" if i < 3 else "D"))
            w.session(session_id(0, q.id), res, gt, 0)
    code, out, _ = run(capsys, "eval", log, "--out", tmp_path / "rep")
    assert code == 0
    assert out["accuracy"] == "0.750000" and out["items"] == "4"
    report = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert report["accuracy"] == 0.75
    for name in ("items.csv", "per_agent.csv", "per_agent.png", "per_task.csv", "per_task.png", "latency.png"):
        assert (tmp_path / "rep" / name).stat().st_size > 0
    rows = list(csv.DictReader((tmp_path / "rep" / "items.csv").open()))
    assert [r["correct"] for r in rows] == ["1", "1", "1", "0"]


def test_train_toy(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"train": {"steps": 12, "agents": 2, "items": 4}}))
    code, out, _ = run(capsys, "train-toy", "--config", cfg, "--out", tmp_path)
    assert code == 0
    rows = list(csv.reader((tmp_path / "curve.csv").open()))
    assert rows[0] == ["step", "mean_total_reward"] and len(rows) == 13
    assert (tmp_path / "curve.png").exists()
    assert set(json.loads((tmp_path / "policies.json").read_text())) == {"a0", "a1"}


def test_ablate(tmp_path, capsys):
    code, out, _ = run(capsys, "ablate", "--count", 4, "--out", tmp_path)
    assert code == 0 and "comm:off" in out and "group:4" in out
    assert (tmp_path / "ablation.csv").exists() and (tmp_path / "ablation.png").exists()


def test_config_errors_exit_nonzero(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--config", tmp_path / "nope.yaml", "--out", tmp_path)
    assert code == 2 and "error" in err
    bad = tmp_path / "bad.yaml"
    bad.write_text("session: {max_turnz: 3}\n")
    code, _, err = run(capsys, "simulate", "--config", bad, "--out", tmp_path)
    assert code == 2 and "max_turnz" in err
    code, _, err = run(capsys, "eval", tmp_path / "missing.jsonl", "--out", tmp_path)
    assert code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "collabplan", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("gen-suite", "simulate", "train-toy", "eval", "replay", "ablate"):
        assert cmd in proc.stdout


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["fly"])
