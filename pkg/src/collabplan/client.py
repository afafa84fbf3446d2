"""Minimal chat-completion client shared by remote agents, tools and the judge."""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import httpx

from .toolkit import BackendError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RemoteConfig:
    endpoint_url: str
    model_name: str
    temperature: float = 0.0
    max_tokens: int = 1024
    api_key_env: str = "OPENAI_API_KEY"

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @classmethod
    def for_training(cls, endpoint_url: str, model_name: str, **kw: Any) -> "RemoteConfig":
        return cls(endpoint_url, model_name, temperature=kw.pop("temperature", 1.0), **kw)

    @classmethod
    def for_evaluation(cls, endpoint_url: str, model_name: str, **kw: Any) -> "RemoteConfig":
        return cls(endpoint_url, model_name, temperature=kw.pop("temperature", 0.0), **kw)


class ChatClient:
    """
    Posts chat-completion requests and returns the first choice's text.

    Retries transport errors, 429 and 5xx with exponential backoff. A
    semaphore caps the number of requests in flight across threads.
    """

    def __init__(
        self,
        *,
        http: httpx.Client | None = None,
        retries: int = 3,
        backoff_s: float = 1.0,
        timeout_s: float = 60.0,
        max_in_flight: int = 4,
    ):
        self._http = http or httpx.Client(timeout=timeout_s)
        self.retries = retries
        self.backoff_s = backoff_s
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def request_body(self, cfg: RemoteConfig, messages: Sequence[Mapping[str, str]]) -> dict[str, Any]:
        return {
            "model": cfg.model_name,
            "messages": [{"role": m["role"], "content": m["content"]} for m in messages],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }

    def complete(self, cfg: RemoteConfig, messages: Sequence[Mapping[str, str]]) -> str:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = self.request_body(cfg, messages)
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                with self._gate:
                    resp = self._http.post(cfg.endpoint_url, json=body, headers=headers)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise BackendError(f"HTTP {resp.status_code} from {cfg.endpoint_url}")
                resp.raise_for_status()
                content = resp.json()["choices"][0]["message"]["content"]
                if not isinstance(content, str):
                    raise BackendError("completion content is not a string")
                return content
            except (httpx.TransportError, BackendError) as exc:
                last = exc
                logger.warning("chat request failed (attempt %d/%d): %s", attempt + 1, self.retries, exc)
                if attempt < self.retries - 1:
                    time.sleep(self.backoff_s * 2**attempt)
            except (httpx.HTTPStatusError, KeyError, IndexError, ValueError) as exc:
                raise BackendError(f"bad response from {cfg.endpoint_url}: {exc}") from exc
        raise BackendError(f"chat request failed after {self.retries} attempts") from last

    def close(self) -> None:
        self._http.close()
