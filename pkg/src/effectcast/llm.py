"""Provider-agnostic chat-completion client.

One adapter covers any hosted model exposing the common role/content chat
shape; the provider is selected purely by base URL. Responses are cached on
disk, content-addressed by a digest of the request, so re-running a pipeline
over an unchanged corpus performs zero network calls.

Environment:
    EFFECTCAST_LLM_BASE_URL   endpoint base, e.g. https://api.example.com/v1
    EFFECTCAST_LLM_API_KEY    bearer credential (optional for local mocks)
    EFFECTCAST_LLM_MODEL      default model id
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import httpx

from .errors import ConfigError, UpstreamError
from .fileio import stable_dumps

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    prompt: str
    temperature: float = 0.0
    max_output_tokens: int = 1024
    request_tag: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ConfigError("chat request prompt must be non-empty")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ConfigError("max_output_tokens must be positive")


@dataclass(frozen=True)
class CacheKey:
    digest: str


def cache_key(req: ChatRequest) -> CacheKey:
    """Deterministic digest of the request fields that shape the response.

    The stage tag is excluded: it labels pipeline provenance, not content.
    """
    payload = stable_dumps(
        {
            "model_id": req.model_id,
            "prompt": req.prompt,
            "temperature": req.temperature,
            "max_output_tokens": req.max_output_tokens,
        }
    )
    return CacheKey(hashlib.sha256(payload.encode("utf-8")).hexdigest())


class ResponseCache:
    """One file per digest holding request metadata plus the raw response."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self._write_lock = threading.Lock()

    def _path(self, key: CacheKey) -> Path:
        return self.root / key.digest[:2] / f"{key.digest}.json"

    def load(self, key: CacheKey) -> str | None:
        path = self._path(key)
        if not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)["response"]

    def store(self, key: CacheKey, req: ChatRequest, response: str) -> None:
        path = self._path(key)
        record = {
            "request": {
                "model_id": req.model_id,
                "prompt": req.prompt,
                "temperature": req.temperature,
                "max_output_tokens": req.max_output_tokens,
                "request_tag": req.request_tag,
            },
            "response": response,
        }
        with self._write_lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + ".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(record, fh, ensure_ascii=False)
            os.replace(tmp, path)


class ClientStats:
    """Thread-safe counters for auditing cache behavior and retries."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.network_calls = 0
        self.cache_hits = 0
        self.retries = 0

    def bump(self, name: str, by: int = 1) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + by)


class ChatClient:
    """Single-turn chat completion with caching, backoff, and an in-flight cap.

    Thread-safe: callers may issue ``complete`` from any number of threads;
    concurrent network requests never exceed ``max_in_flight``.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        cache_dir: Path | str | None = None,
        max_retries: int = 4,
        backoff_base: float = 0.5,
        backoff_cap: float = 30.0,
        max_in_flight: int = 4,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not base_url:
            raise ConfigError("LLM endpoint base URL is not configured")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.cache = ResponseCache(cache_dir) if cache_dir else None
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.timeout = timeout
        self.stats = ClientStats()
        self._sleep = sleep
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(transport=transport, timeout=timeout)

    @classmethod
    def from_env(cls, cache_dir: Path | str | None = None, **kwargs) -> "ChatClient":
        base_url = os.environ.get("EFFECTCAST_LLM_BASE_URL", "")
        api_key = os.environ.get("EFFECTCAST_LLM_API_KEY")
        return cls(base_url=base_url, api_key=api_key, cache_dir=cache_dir, **kwargs)

    @staticmethod
    def default_model() -> str:
        return os.environ.get("EFFECTCAST_LLM_MODEL", "")

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "ChatClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def complete(self, req: ChatRequest, refresh: bool = False) -> str:
        """Return the model's text for a single-turn prompt.

        Cache hits short-circuit the network entirely. ``refresh`` skips the
        cache read (used by format-violation retries to re-roll the model)
        but still writes the fresh response back.
        """
        key = cache_key(req)
        if self.cache and not refresh:
            cached = self.cache.load(key)
            if cached is not None:
                self.stats.bump("cache_hits")
                return cached
        text = self._complete_over_network(req)
        if self.cache:
            self.cache.store(key, req, text)
        return text

    def _complete_over_network(self, req: ChatRequest) -> str:
        body = {
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt > 0:
                self.stats.bump("retries")
                self._sleep(min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1)))
            try:
                with self._gate:
                    self.stats.bump("network_calls")
                    response = self._client.post(
                        f"{self.base_url}/chat/completions", json=body, headers=headers
                    )
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last_error = UpstreamError(f"transport failure: {exc}", retries=attempt)
                continue

            if response.status_code in RETRYABLE_STATUSES:
                last_error = UpstreamError(
                    f"transient upstream status {response.status_code}: {response.text[:200]}",
                    status=response.status_code,
                    retries=attempt,
                )
                continue
            if response.status_code >= 400:
                raise UpstreamError(
                    f"permanent upstream status {response.status_code}: {response.text[:500]}",
                    status=response.status_code,
                    retries=attempt,
                )
            return self._extract_text(response)

        assert last_error is not None
        raise last_error

    @staticmethod
    def _extract_text(response: httpx.Response) -> str:
        try:
            payload = response.json()
            return payload["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise UpstreamError(f"malformed provider payload: {exc}") from exc
