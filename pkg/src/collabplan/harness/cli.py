"""Command-line entry point.

Subcommands:

    gen-suite   write a synthetic suite file
    simulate    run sessions over a suite and write a run log
    train-toy   run the toy GRPO loop and write the learning curve
    eval        score a run log and write a report with plot data
    replay      re-run a log from its recorded seeds and compare
    ablate      group-size, consensus and communication ablations

Tabular results go to stdout as tab-separated lines; files land under --out.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from ..client import ChatClient
from ..core import derive_seed
from ..orchestrator import Mode, SessionConfig
from ..rewards import total_reward, trajectories
from ..toolkit import ToolRegistry
from .config import Config, ConfigError, api_key_envs, config_from_dict, load_config
from .metrics import ItemOutcome, aggregate, outcome_of, run_ablations, run_item
from .plotting import plot_bars, plot_curve, plot_hist, write_csv
from .runlog import RunLogError, RunLogWriter, answers_equal, read_runlog, session_id
from .suite import SuiteItem, file_sha256, generate_suite, read_suite, write_suite

logger = logging.getLogger("collabplan")


def _emit(*fields: object) -> None:
    print("\t".join(str(f) for f in fields))


def _fmt(x: float | None) -> str:
    return "NA" if x is None else f"{x:.6f}"


def _session_config(cfg: Config, args: argparse.Namespace) -> SessionConfig:
    sess = cfg.session
    if getattr(args, "mode", None):
        sess = replace(sess, mode=args.mode)
    if getattr(args, "consensus", None):
        sess = replace(sess, consensus=args.consensus)
    return sess


def _apply_seed(cfg: Config, seed: int | None) -> Config:
    if seed is None:
        return cfg
    return replace(cfg, suite=replace(cfg.suite, seed=seed), session=replace(cfg.session, seed=seed))


def _live_client(cfg: Config, sess: SessionConfig) -> ChatClient | None:
    if sess.mode is not Mode.LIVE:
        return None
    for var in api_key_envs(cfg.agents, cfg.endpoints):
        if not os.environ.get(var):
            logger.warning("API key variable %s is not set", var)
    return ChatClient()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_suite(args: argparse.Namespace) -> int:
    cfg = _apply_seed(load_config(args.config), args.seed)
    spec = cfg.suite if args.count is None else replace(cfg.suite, count=args.count)
    path = write_suite(Path(args.out) / "suite.jsonl", spec)
    _emit("suite", path)
    _emit("items", spec.count)
    _emit("sha256", file_sha256(path))
    return 0


def _load_items(cfg: Config, suite_path: str | None, count: int | None) -> tuple[list[SuiteItem], dict]:
    if suite_path:
        _, items = read_suite(suite_path)
        source = {"path": str(suite_path), "sha256": file_sha256(suite_path)}
    else:
        spec = cfg.suite if count is None else replace(cfg.suite, count=count)
        items = generate_suite(spec)
        source = {"spec": spec.to_dict()}
    if count is not None:
        items = items[:count]
    return items, source


def _simulate(cfg: Config, sess: SessionConfig, items: Sequence[SuiteItem], log_path: Path, header: dict,
              client: ChatClient | None = None):
    registry = ToolRegistry.default()
    results = []
    with RunLogWriter(log_path) as log:
        log.header(**header)
        for item in items:
            seed = derive_seed(sess.seed, item.query.id)
            result, failed = run_item(
                item, cfg.agents, replace(sess, seed=seed), registry, client=client, endpoints=cfg.endpoints
            )
            gt = item.video.gt_answer
            rewards = {
                n: total_reward(t, gt, cfg.weights, registry=list(registry)).as_dict()
                for n, t in trajectories(result).items()
            }
            log.session(session_id(sess.seed, item.query.id), result, gt, seed, rewards, failed)
            results.append((result, gt))
    return results


def cmd_simulate(args: argparse.Namespace) -> int:
    from ..marl import filter_sft_trajectories, write_sft_jsonl

    cfg = _apply_seed(load_config(args.config), args.seed)
    sess = _session_config(cfg, args)
    cfg = replace(cfg, session=sess)
    items, source = _load_items(cfg, args.suite, args.count)
    out = Path(args.out)
    header = {"command": "simulate", "seed": sess.seed, "config": cfg.to_dict(), "suite": source, "count": len(items)}
    results = _simulate(cfg, sess, items, out / "run.jsonl", header, _live_client(cfg, sess))
    sft = filter_sft_trajectories([r for r, _ in results], {r.query_id: gt for r, gt in results})
    write_sft_jsonl(out / "sft.jsonl", sft)
    correct = sum(r.final_answer.answer == gt.answer for r, gt in results)
    _emit("log", out / "run.jsonl")
    _emit("sessions", len(results))
    _emit("exact_matches", correct)
    _emit("sft_examples", len(sft))
    return 0


def cmd_train_toy(args: argparse.Namespace) -> int:
    from ..marl import toy_problem, train_toy, write_curve_csv

    cfg = load_config(args.config)
    t = cfg.train
    seed = 0 if args.seed is None else args.seed
    items, group, policies = toy_problem(n_agents=t.agents, seed=seed, count=t.items)
    res = train_toy(
        items, group, policies, steps=t.steps, lr=t.lr, K=t.rollouts, seed=seed, beta=t.beta, p_edge=t.p_edge,
        weights=cfg.weights,
    )
    out = Path(args.out)
    write_curve_csv(out / "curve.csv", res.curve)
    plot_curve(res.curve, out / "curve.png", title="Toy GRPO: mean total reward")
    probs = {n: p.probs.tolist() for n, p in sorted(res.policies.items())}
    (out / "policies.json").write_text(json.dumps(probs, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    head = res.curve[:20]
    tail = res.curve[-20:]
    _emit("curve", out / "curve.csv")
    _emit("first20_mean", _fmt(sum(head) / len(head) if head else None))
    _emit("last20_mean", _fmt(sum(tail) / len(tail) if tail else None))
    for n, p in probs.items():
        _emit("p_template0", n, _fmt(p[0]))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    _, sessions = read_runlog(args.log)
    outcomes: list[ItemOutcome] = []
    for s in sessions:
        summ = s.summary or {}
        outcomes.append(
            outcome_of(s.query, s.final, s.per_agent, s.gt, summ.get("frames_used", 0), summ.get("tool_calls", {}),
                       summ.get("wall_time", 0.0), summ.get("failed", False))
        )
    report = aggregate(outcomes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_csv(
        out / "items.csv",
        ["query_id", "task", "correct", "iou", "frames", "tool_calls", "latency_s"],
        [[o.query_id, o.task, int(o.correct), "" if o.iou is None else o.iou, o.frames, o.tool_calls, o.latency_s]
         for o in sorted(outcomes, key=lambda o: o.query_id)],
    )
    agents = sorted(report.per_agent)
    write_csv(out / "per_agent.csv", ["agent", "accuracy"], [[a, report.per_agent[a]] for a in agents])
    plot_bars(agents, [report.per_agent[a] for a in agents], out / "per_agent.png", ylabel="accuracy",
              title="Per-agent answers")
    tasks = sorted(report.per_task)
    write_csv(out / "per_task.csv", ["task", "hit_rate"], [[t, report.per_task[t]] for t in tasks])
    plot_bars(tasks, [report.per_task[t] for t in tasks], out / "per_task.png", ylabel="hit rate", title="Per task")
    plot_hist([o.latency_s for o in outcomes], out / "latency.png", xlabel="modeled latency (s)")
    _emit("metric", "value")
    _emit("items", report.n_items)
    _emit("accuracy", _fmt(report.accuracy))
    _emit("miou", _fmt(report.miou))
    _emit("avg_frames", _fmt(report.avg_frames))
    _emit("avg_tool_calls", _fmt(report.avg_tool_calls))
    _emit("avg_latency_s", _fmt(report.avg_latency_s))
    _emit("failures", report.failures)
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    header, sessions = read_runlog(args.log)
    if header.get("command") != "simulate":
        raise RunLogError(f"{args.log}: only simulate logs can be replayed")
    cfg = config_from_dict(header["config"])
    if cfg.session.mode is Mode.LIVE:
        logger.warning("live logs depend on remote outputs; answers may differ")
    source = header["suite"]
    if "path" in source:
        if file_sha256(source["path"]) != source["sha256"]:
            raise RunLogError(f"suite file {source['path']} changed since the run")
        items, _ = _load_items(cfg, source["path"], header.get("count"))
    else:
        items, _ = _load_items(replace(cfg, suite=config_from_dict({"suite": source["spec"]}).suite), None, None)
        items = items[: header.get("count", len(items))]
    out = Path(args.out) / "replay.jsonl" if args.out else Path(args.log).with_suffix(".replay.jsonl")
    if out.resolve() == Path(args.log).resolve():
        raise RunLogError("replay output would overwrite the original log")
    _simulate(cfg, cfg.session, items, out, {k: v for k, v in header.items() if k not in ("schema", "kind")},
              _live_client(cfg, cfg.session))
    _, again = read_runlog(out)
    diff = answers_equal(sessions, again)
    same_bytes = Path(args.log).read_bytes() == out.read_bytes()
    _emit("sessions", len(sessions))
    _emit("log_bytes", "identical" if same_bytes else "different")
    if diff:
        _emit("status", "differs")
        for sid in diff:
            _emit("mismatch", sid)
        return 1
    _emit("status", "identical")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _apply_seed(load_config(args.config), args.seed)
    sess = _session_config(cfg, args)
    items, _ = _load_items(cfg, args.suite, args.count)
    rows = run_ablations(items, cfg.agents, sess, designated=args.designated)
    out = Path(args.out)
    write_csv(out / "ablation.csv", ["setting", "accuracy"], rows)
    plot_bars([r[0] for r in rows], [r[1] for r in rows], out / "ablation.png", ylabel="accuracy",
              title="Ablations")
    _emit("setting", "accuracy")
    for name, acc in rows:
        _emit(name, _fmt(acc))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML config (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="overrides the suite and session seeds")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    session = argparse.ArgumentParser(add_help=False)
    session.add_argument("--mode", choices=["sim", "live"])
    session.add_argument("--consensus", choices=["vote", "best-score", "decide"])

    suite = argparse.ArgumentParser(add_help=False)
    suite.add_argument("--suite", metavar="PATH", help="suite file (default: generate from config)")
    suite.add_argument("--count", type=int, help="use only the first N items")

    p = argparse.ArgumentParser(prog="collabplan", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-suite", parents=[common], help="write a synthetic suite file")
    g.add_argument("--count", type=int)
    g.set_defaults(func=cmd_gen_suite)

    s = sub.add_parser("simulate", parents=[common, session, suite], help="run sessions and log them")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train-toy", parents=[common], help="toy GRPO loop")
    t.set_defaults(func=cmd_train_toy)

    e = sub.add_parser("eval", parents=[common], help="score a run log")
    e.add_argument("log", metavar="LOG")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("replay", parents=[common], help="re-run a log and compare answers")
    r.add_argument("log", metavar="LOG")
    r.set_defaults(func=cmd_replay, out=None)

    a = sub.add_parser("ablate", parents=[common, session, suite], help="ablation table")
    a.add_argument("--designated", help="agent trusted under decide-by-agent (default: last)")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, RunLogError, OSError, ValueError, KeyError) as exc:
        print(f"collabplan {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
