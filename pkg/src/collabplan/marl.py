"""Group-relative policy optimisation on toy categorical plan policies.

The real system fine-tunes language models; here each agent's policy is a
softmax over a handful of plan templates, which is small enough to check the
objective and its gradient exactly. The module also carries the training-time
agent dropout (a random DAG gating who reads whom) and the filter that turns
successful, unrevised trajectories into supervised examples.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .agents import AgentSpec, extract_key_info
from .core import AddTool, AnswerRecord, Plan, Query, derive_seed
from .orchestrator import SessionConfig, SessionResult, TopologyDAG, run_session
from .rewards import RewardWeights, is_correct, total_reward, trajectories
from .toolkit import ToolRegistry

logger = logging.getLogger(__name__)

ZERO_STD = 1e-12
DEFAULT_BETA = 1e-5
DEFAULT_ROLLOUTS = 4


class GroupTooSmall(ValueError):
    """Standardising needs at least two rollouts."""


class SupportMismatch(ValueError):
    """Distributions differ in length, or q vanishes where p does not."""


# ---------------------------------------------------------------------------
# Advantages and divergences
# ---------------------------------------------------------------------------


def compute_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Standardise rewards within one group of rollouts (population std).

    A group with (numerically) zero spread carries no learning signal and
    gets the zero vector.
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise GroupTooSmall(f"need at least 2 rewards, got {r.size}")
    std = r.std()
    if std < ZERO_STD:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def softmax(logits: Sequence[float]) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def kl_categorical(p: Sequence[float], q: Sequence[float]) -> float:
    """KL(p || q) with 0 ln 0 taken as 0."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise SupportMismatch(f"shapes {p.shape} and {q.shape} differ")
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise SupportMismatch("q is zero where p is positive")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


# ---------------------------------------------------------------------------
# Toy policies and the objective
# ---------------------------------------------------------------------------


@dataclass
class ToyPolicy:
    """Softmax policy over a fixed list of plan templates."""

    logits: np.ndarray
    templates: tuple[Plan, ...]

    def __post_init__(self) -> None:
        self.logits = np.array(self.logits, dtype=float)
        self.templates = tuple(self.templates)
        if self.logits.ndim != 1 or len(self.logits) < 2:
            raise ValueError("a toy policy needs at least two templates")
        if len(self.logits) != len(self.templates):
            raise ValueError("one logit per template")

    @classmethod
    def uniform(cls, templates: Sequence[Plan]) -> "ToyPolicy":
        return cls(np.zeros(len(templates)), tuple(templates))

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits)

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.logits.copy(), self.templates)

    def sample(self, rng: random.Random) -> int:
        # inverse-CDF draw keeps the stream on the stdlib generator
        u, acc = rng.random(), 0.0
        p = self.probs
        for i, pi in enumerate(p):
            acc += pi
            if u < acc:
                return i
        return len(p) - 1


@dataclass(frozen=True)
class GroupRollout:
    """K sampled template indices of one agent on one query, with rewards."""

    outputs: tuple[int, ...]
    rewards: tuple[float, ...]
    log_probs_current: tuple[float, ...] = ()
    log_probs_old: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        k = len(self.outputs)
        if k < 2:
            raise GroupTooSmall(f"need at least 2 rollouts, got {k}")
        for name in ("rewards", "log_probs_current", "log_probs_old"):
            n = len(getattr(self, name))
            if name != "rewards" and n == 0:
                continue
            if n != k:
                raise ValueError(f"{name} has {n} entries, expected {k}")

    @property
    def K(self) -> int:
        return len(self.outputs)

    @classmethod
    def of(cls, outputs: Sequence[int], rewards: Sequence[float], policy: ToyPolicy, old: ToyPolicy) -> "GroupRollout":
        p, q = policy.probs, old.probs
        return cls(
            tuple(outputs),
            tuple(float(r) for r in rewards),
            tuple(math.log(p[o]) for o in outputs),
            tuple(math.log(q[o]) for o in outputs),
        )


def _checked(policy: ToyPolicy, ref: ToyPolicy, old: ToyPolicy, rollout: GroupRollout) -> None:
    m = len(policy.logits)
    if len(ref.logits) != m or len(old.logits) != m:
        raise SupportMismatch("policy, reference and old policy must share templates")
    if any(not 0 <= o < m for o in rollout.outputs):
        raise SupportMismatch(f"rollout outputs must index {m} templates")


def grpo_objective(policy: ToyPolicy, ref: ToyPolicy, old: ToyPolicy, rollout: GroupRollout, beta: float = DEFAULT_BETA) -> float:
    """Importance-weighted advantages minus beta times KL to the reference."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    _checked(policy, ref, old, rollout)
    p, p_old = policy.probs, old.probs
    adv = compute_advantages(rollout.rewards)
    surrogate = sum(p[o] / p_old[o] * a for o, a in zip(rollout.outputs, adv))
    return float(surrogate - beta * kl_categorical(p, ref.probs))


def grpo_gradient(policy: ToyPolicy, ref: ToyPolicy, old: ToyPolicy, rollout: GroupRollout, beta: float = DEFAULT_BETA) -> np.ndarray:
    """Exact gradient of :func:`grpo_objective` with respect to the logits.

    With p = softmax(logits), d p_o / d logits = p_o (e_o - p), so each
    surrogate term contributes ratio_k A_k (e_o - p); the KL term contributes
    p * (ln(p / q) - KL(p || q)).
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    _checked(policy, ref, old, rollout)
    p, p_old, q = policy.probs, old.probs, ref.probs
    adv = compute_advantages(rollout.rewards)
    grad = np.zeros_like(p)
    for o, a in zip(rollout.outputs, adv):
        e = np.zeros_like(p)
        e[o] = 1.0
        grad += (p[o] / p_old[o]) * a * (e - p)
    if beta:
        kl = kl_categorical(p, q)
        grad -= beta * p * (np.log(p / q) - kl)
    return grad


# ---------------------------------------------------------------------------
# Agent dropout
# ---------------------------------------------------------------------------


def sample_dropout_dag(agent_names: Sequence[str], seed: int, p_edge: float = 0.5) -> TopologyDAG:
    """Random DAG: seeded shuffle of the agents, then each forward pair kept with p_edge."""
    if not agent_names:
        raise ValueError("need at least one agent")
    if not 0.0 <= p_edge <= 1.0:
        raise ValueError("p_edge must lie in [0, 1]")
    rng = random.Random(seed)
    order = list(agent_names)
    rng.shuffle(order)
    edges = set()
    for i, a in enumerate(order):
        for b in order[i + 1:]:
            if rng.random() < p_edge:
                edges.add((a, b))
    return TopologyDAG(tuple(order), frozenset(edges))


# ---------------------------------------------------------------------------
# Toy training loop
# ---------------------------------------------------------------------------


def rekey(plan: Plan, query: Query) -> Plan:
    """Template instantiated for a query: every step looks for the query's key info."""
    key = extract_key_info(query)
    return Plan(tuple(replace(s, key_info=key) for s in plan.steps), key)


@dataclass
class TrainResult:
    curve: list[float]
    policies: dict[str, ToyPolicy]
    # per step, per agent: probability of each template after the update
    prob_history: list[dict[str, list[float]]] = field(default_factory=list)


def train_toy(
    items: Sequence,
    group: Sequence[AgentSpec],
    policies: Mapping[str, ToyPolicy],
    *,
    steps: int = 200,
    lr: float = 0.5,
    K: int = DEFAULT_ROLLOUTS,
    seed: int = 0,
    beta: float = DEFAULT_BETA,
    p_edge: float = 0.5,
    registry: ToolRegistry | None = None,
    weights: RewardWeights = RewardWeights(),
    config: SessionConfig = SessionConfig(),
) -> TrainResult:
    """Per step: draw a dropout DAG and a query, run K sessions, ascend the GRPO gradient.

    In each of the K sessions every agent follows a template sampled from its
    own policy; each agent is then updated from its own K trajectory rewards.
    The old policy is the pre-update policy of the step (on-policy) and the
    reference stays at the initial policies. Returns the mean total reward
    per step and the final policies.
    """
    if K < 2:
        raise GroupTooSmall(f"K must be at least 2, got {K}")
    if not items:
        raise ValueError("training needs at least one item")
    registry = registry or ToolRegistry.default()
    names = sorted(a.name for a in group)
    missing = set(names) - set(policies)
    if missing:
        raise ValueError(f"no policy for agents {sorted(missing)}")
    current = {n: policies[n].copy() for n in names}
    ref = {n: policies[n].copy() for n in names}

    curve: list[float] = []
    history: list[dict[str, list[float]]] = []
    for step in range(steps):
        dag = sample_dropout_dag(names, derive_seed(seed, "dag", step), p_edge)
        pick = random.Random(derive_seed(seed, "item", step))
        item = items[pick.randrange(len(items))]
        cfg = replace(config, topology=dag, seed=derive_seed(seed, "session", step))
        old = {n: current[n].copy() for n in names}

        outputs: dict[str, list[int]] = {n: [] for n in names}
        rewards: dict[str, list[float]] = {n: [] for n in names}
        for k in range(K):
            plans = {}
            for n in names:
                idx = old[n].sample(random.Random(derive_seed(seed, "sample", step, k, n)))
                outputs[n].append(idx)
                plans[n] = rekey(old[n].templates[idx], item.query)
            result = run_session(item.query, item.video, group, registry, cfg, initial_plans=plans)
            for n, traj in trajectories(result).items():
                rewards[n].append(total_reward(traj, item.video.gt_answer, weights, registry=list(registry)).total)

        for n in names:
            rollout = GroupRollout.of(outputs[n], rewards[n], current[n], old[n])
            current[n].logits = current[n].logits + lr * grpo_gradient(current[n], ref[n], old[n], rollout, beta)
        curve.append(float(np.mean([r for n in names for r in rewards[n]])))
        history.append({n: current[n].probs.tolist() for n in names})
        logger.debug("step %d mean reward %.4f", step, curve[-1])
    return TrainResult(curve, current, history)


def write_curve_csv(path: str | Path, curve: Sequence[float]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "mean_total_reward"])
        for i, v in enumerate(curve):
            w.writerow([i, repr(float(v))])
    return path


# ---------------------------------------------------------------------------
# SFT trajectory filter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SftExample:
    query: Query
    plan: Plan
    key_info: str

    def to_record(self) -> dict:
        return {"query_id": self.query.id, "key_info": self.key_info, "tools": list(self.plan.tools)}


def plan_unchanged(memory) -> bool:
    """No AddTool anywhere and the executed calls are exactly the initial plan."""
    if any(isinstance(t.decision, AddTool) for t in memory.turns):
        return False
    executed = [(t.executed_tool, t.key_info) for t in memory.turns]
    return executed == [(s.tool, s.key_info) for s in memory.initial_plan.steps]


def filter_sft_trajectories(traces: Sequence[SessionResult], gts: Mapping[str, AnswerRecord]) -> list[SftExample]:
    """Keep unrevised plans from sessions where some agent got the answer right.

    ``gts`` maps query id to ground truth. One example per qualifying agent,
    in session order then agent-name order.
    """
    out: list[SftExample] = []
    for res in traces:
        gt = gts[res.query_id]
        if not any(is_correct(ans, gt, res.query.task) for ans in res.per_agent.values()):
            continue
        for name in sorted(res.buffer.entries):
            mem = res.buffer[name]
            if mem.initial_plan.steps and plan_unchanged(mem):
                out.append(SftExample(res.query, mem.initial_plan, mem.key_info))
    return out


def write_sft_jsonl(path: str | Path, examples: Sequence[SftExample]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record(), sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Two-template toy problem
# ---------------------------------------------------------------------------

TOY_TEMPLATES = (
    Plan.of(("Video Retrieval", "Fine Browser"), ""),
    Plan.of(("Global Sampling", "Rough Browser"), ""),
)


def toy_problem(n_agents: int = 3, seed: int = 0, count: int = 16):
    """Items, group and uniform policies where template 0 wins and template 1 loses.

    The videos hold one long, unambiguous answer scene, so retrieving its clip
    and reading it closely always answers; a 16-frame global skim never sees
    every clue, and the agents answer wrongly when they have no evidence.
    Agents never adopt peers' steps, so each reward follows its own template.
    """
    from .agents import ScriptedProfile
    from .harness.suite import SuiteSpec, generate_suite

    spec = SuiteSpec(
        seed=seed, count=count, duration_s=(480, 600), glimpse_rate=0.0, scene_run=(4, 6), clue_run=(1, 1),
        window_frac=(0.6, 0.8), distractors=(0, 0), timestamp_rate=0.0,
    )
    items = generate_suite(spec)
    group = [
        AgentSpec(
            f"a{i}",
            ScriptedProfile(("Video Retrieval", "Fine Browser"), comm_responsiveness=0.0, error_rate=1.0, seed=i),
            "summarizer" if i == 0 else None,
        )
        for i in range(n_agents)
    ]
    policies = {a.name: ToyPolicy.uniform(TOY_TEMPLATES) for a in group}
    return items, group, policies
