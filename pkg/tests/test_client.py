from __future__ import annotations

import json

import httpx
import pytest

from collabplan.agents import SUMMARIZER, AgentContext, AgentSpec, generate_policy
from collabplan.client import ChatClient, RemoteConfig
from collabplan.core import AgentMemory, Plan
from collabplan.rewards import EvaluatorUnavailable, RemoteJudge
from collabplan.toolkit import BackendError, ToolRegistry

from conftest import mc_query

CFG = RemoteConfig("http://llm.test/v1/chat/completions", "planner", api_key_env="TEST_KEY")


def reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def client(handler, **kw):
    return ChatClient(http=httpx.Client(transport=httpx.MockTransport(handler)), backoff_s=0.0, **kw)


def test_request_body_and_auth(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "sekrit")
    seen = {}

    def handler(req):
        seen["body"] = json.loads(req.content)
        seen["auth"] = req.headers.get("authorization")
        return reply("hello")

    assert client(handler).complete(CFG, [{"role": "user", "content": "hi"}]) == "hello"
    assert seen["body"] == {
        "model": "planner", "messages": [{"role": "user", "content": "hi"}], "temperature": 0.0, "max_tokens": 1024,
    }
    assert seen["auth"] == "Bearer sekrit"


def test_presets():
    assert RemoteConfig.for_training("u", "m").temperature > 0
    assert RemoteConfig.for_evaluation("u", "m").temperature == 0


def test_retries_then_succeeds():
    calls = []

    def handler(req):
        calls.append(1)
        return httpx.Response(503) if len(calls) < 3 else reply("ok")

    assert client(handler, retries=3).complete(CFG, [{"role": "user", "content": "x"}]) == "ok"
    assert len(calls) == 3


def test_gives_up():
    with pytest.raises(BackendError):
        client(lambda req: httpx.Response(429), retries=2).complete(CFG, [])


def test_client_errors_are_not_retried():
    calls = []

    def handler(req):
        calls.append(1)
        return httpx.Response(400)

    with pytest.raises(BackendError):
        client(handler).complete(CFG, [])
    assert len(calls) == 1


def test_malformed_reply():
    with pytest.raises(BackendError):
        client(lambda req: httpx.Response(200, json={"nope": 1})).complete(CFG, [])


def test_remote_agent_plan_goes_through_grammar():
    def handler(req):
        prompt = json.loads(req.content)["messages"][0]["content"]
        assert "##tool use" in prompt
        return reply("Thinking...\n##key info: kite\n##tool use: <Image Retrieval>, <Fine Browser>")

    spec = AgentSpec("r", CFG, SUMMARIZER)
    q = mc_query()
    ctx = AgentContext(q, ToolRegistry.default(), client=client(handler))
    assert generate_policy(spec, q, ctx.registry, ctx).tools == ("Image Retrieval", "Fine Browser")


def test_remote_judge():
    mem = AgentMemory("a", Plan.of(["Video Retrieval", "Rough Browser"], "k"), "k")
    assert RemoteJudge(client(lambda r: reply("##score: 1")), CFG)(mem, mc_query()) == 1
    with pytest.raises(EvaluatorUnavailable):
        RemoteJudge(client(lambda r: reply("maybe")), CFG)(mem, mc_query())
