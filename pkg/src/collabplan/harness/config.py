"""Run configuration: group composition, backends, weights, session and suite.

Configs are YAML documents. Every section is optional; missing sections fall
back to the defaults below, which describe a four-agent scripted group.

Example::

    agents:
      - name: a1
        summarizer: true
        scripted: {plan_bias: [Image Retrieval, Fine Browser], comm_responsiveness: 0.2}
      - name: a2
        remote: {endpoint_url: http://localhost:8000/v1/chat/completions, model_name: planner}
    session: {max_turns: 5, consensus: vote}
    suite: {seed: 0, count: 200}
    weights: {overlong_penalty: -1.0}
    train: {steps: 200, lr: 0.5, rollouts: 4}
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from ..agents import SUMMARIZER, AgentSpec, ScriptedProfile
from ..client import RemoteConfig
from ..orchestrator import SessionConfig, topology_from_dict, topology_to_dict
from ..rewards import RewardWeights
from .suite import SuiteSpec

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


# Four complementary scripted agents. a1 reads frame-level retrieval closely
# and rarely changes course; a2 reads the retrieved clip closely; a3 skims the
# retrieved clip; a4 skims a global sample. Responsiveness and error rates
# were tuned so that the group benefits from both communication and voting.
DEFAULT_PROFILES: tuple[tuple[str, tuple[str, ...], float, float], ...] = (
    ("a1", ("Image Retrieval", "Fine Browser"), 0.2, 0.0),
    ("a2", ("Video Retrieval", "Fine Browser"), 0.5, 0.2),
    ("a3", ("Video Retrieval", "Rough Browser"), 0.5, 0.3),
    ("a4", ("Global Sampling", "Rough Browser"), 0.5, 0.4),
)


def default_group(n: int = 4, summarizer: str | None = None) -> list[AgentSpec]:
    """First ``n`` default agents; the summarizer defaults to the first of them."""
    if not 1 <= n <= len(DEFAULT_PROFILES):
        raise ValueError(f"n must lie in 1..{len(DEFAULT_PROFILES)}")
    chosen = DEFAULT_PROFILES[:n]
    lead = summarizer or chosen[0][0]
    return [
        AgentSpec(name, ScriptedProfile(bias, resp, err, seed=i), SUMMARIZER if name == lead else None)
        for i, (name, bias, resp, err) in enumerate(chosen)
    ]


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 200
    lr: float = 0.5
    rollouts: int = 4
    beta: float = 1e-5
    p_edge: float = 0.5
    agents: int = 3
    items: int = 16


@dataclass
class Config:
    agents: list[AgentSpec] = field(default_factory=default_group)
    session: SessionConfig = field(default_factory=SessionConfig)
    suite: SuiteSpec = field(default_factory=SuiteSpec)
    weights: RewardWeights = field(default_factory=RewardWeights)
    train: TrainSettings = field(default_factory=TrainSettings)
    endpoints: dict[str, RemoteConfig] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        """Plain, YAML/JSON-friendly form that :func:`config_from_dict` reads back."""
        sess = asdict(self.session)
        sess["consensus"] = self.session.consensus.value
        sess["mode"] = self.session.mode.value
        sess["topology"] = topology_to_dict(self.session.topology)
        sess["tool_costs"] = dict(self.session.tool_costs)
        sess["thresholds"] = dict(self.session.thresholds)
        return {
            "agents": [_agent_to_dict(a) for a in self.agents],
            "session": sess,
            "suite": self.suite.to_dict(),
            "weights": asdict(self.weights),
            "train": asdict(self.train),
            "endpoints": {k: asdict(v) for k, v in sorted(self.endpoints.items())},
        }


def _agent_to_dict(a: AgentSpec) -> dict[str, Any]:
    d: dict[str, Any] = {"name": a.name, "summarizer": a.is_summarizer}
    if isinstance(a.backend, ScriptedProfile):
        p = asdict(a.backend)
        p["plan_bias"] = list(p["plan_bias"])
        d["scripted"] = p
    else:
        d["remote"] = asdict(a.backend)
    return d


def _pick(d: Mapping[str, Any], cls, where: str) -> dict[str, Any]:
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    return dict(d)


def _agent_from_dict(d: Mapping[str, Any], i: int) -> AgentSpec:
    if not isinstance(d, Mapping) or "name" not in d:
        raise ConfigError(f"agents[{i}] needs a name")
    role = SUMMARIZER if d.get("summarizer") else None
    if ("scripted" in d) == ("remote" in d):
        raise ConfigError(f"agent {d['name']}: give exactly one of 'scripted' or 'remote'")
    if "scripted" in d:
        backend: Any = ScriptedProfile(**_pick(d["scripted"], ScriptedProfile, f"agent {d['name']}"))
    else:
        backend = RemoteConfig(**_pick(d["remote"], RemoteConfig, f"agent {d['name']}"))
    return AgentSpec(str(d["name"]), backend, role)


def config_from_dict(d: Mapping[str, Any] | None) -> Config:
    d = dict(d or {})
    unknown = set(d) - {"agents", "session", "suite", "weights", "train", "endpoints"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    try:
        cfg = Config()
        if "agents" in d:
            cfg.agents = [_agent_from_dict(a, i) for i, a in enumerate(d["agents"] or [])]
            if not cfg.agents:
                raise ConfigError("agents list is empty")
            if not any(a.is_summarizer for a in cfg.agents):
                cfg.agents[0] = replace(cfg.agents[0], role_tag=SUMMARIZER)
        if "session" in d:
            sess = _pick(d["session"] or {}, SessionConfig, "session")
            if "topology" in sess:
                sess["topology"] = topology_from_dict(sess["topology"])
            cfg.session = SessionConfig(**sess)
        if "suite" in d:
            cfg.suite = SuiteSpec(**_pick(d["suite"] or {}, SuiteSpec, "suite"))
        if "weights" in d:
            cfg.weights = RewardWeights(**_pick(d["weights"] or {}, RewardWeights, "weights"))
        if "train" in d:
            cfg.train = TrainSettings(**_pick(d["train"] or {}, TrainSettings, "train"))
        if "endpoints" in d:
            cfg.endpoints = {
                str(k): RemoteConfig(**_pick(v, RemoteConfig, f"endpoints.{k}")) for k, v in (d["endpoints"] or {}).items()
            }
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if data is not None and not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def dump_config(cfg: Config) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def api_key_envs(agents: Sequence[AgentSpec], endpoints: Mapping[str, RemoteConfig]) -> list[str]:
    """Environment variables live runs read API keys from."""
    names = {a.backend.api_key_env for a in agents if isinstance(a.backend, RemoteConfig)}
    names |= {e.api_key_env for e in endpoints.values()}
    return sorted(names)
