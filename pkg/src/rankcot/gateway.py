"""Chat-completion gateway with a content-addressed, replayable response cache.

Two backends share one interface: an OpenAI-compatible HTTP client and a
scripted mock. Every call goes through :class:`Gateway`, which looks the
request up in the cache first and only reaches the backend on a miss.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol

import httpx

from rankcot.errors import BackendError, ConfigError, InputError, SchemaError
from rankcot.io import canonical_json, write_text_atomic

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
API_KEY_ENV = "LLM_API_KEY"

# Defaults: deterministic for rerank/summary/answer, sampled for CoT candidates.
DETERMINISTIC_TEMPERATURE = 0.0
COT_SAMPLING_TEMPERATURE = 0.8


def make_seed_tag(*parts: object) -> str:
    """Join seed-tag components with ``|``; the last one is the sample index."""
    return "|".join(str(p) for p in parts)


@dataclass(frozen=True)
class ChatRequest:
    backend_id: str
    model: str
    messages: tuple[dict, ...]
    temperature: float = 0.0
    n_samples: int = 1
    max_tokens: int = 512
    seed_tag: str = ""

    def __post_init__(self):
        msgs = tuple({"role": m["role"], "content": m["content"]} for m in self.messages)
        object.__setattr__(self, "messages", msgs)
        if not msgs:
            raise InputError("chat request has no messages")
        if msgs[0]["role"] not in ("system", "user"):
            raise InputError("first message must have role system or user")
        for m in msgs:
            if m["role"] not in ROLES:
                raise InputError(f"unknown message role {m['role']!r}")
            if not isinstance(m["content"], str):
                raise InputError("message content must be a string")
        if self.temperature < 0:
            raise InputError("temperature must be >= 0")
        if self.n_samples < 1 or self.max_tokens < 1:
            raise InputError("n_samples and max_tokens must be >= 1")

    def to_dict(self) -> dict:
        return {
            "backend_id": self.backend_id,
            "model": self.model,
            "messages": [dict(m) for m in self.messages],
            "temperature": float(self.temperature),
            "n_samples": int(self.n_samples),
            "max_tokens": int(self.max_tokens),
            "seed_tag": self.seed_tag,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> ChatRequest:
        return cls(
            backend_id=obj["backend_id"],
            model=obj["model"],
            messages=tuple(obj["messages"]),
            temperature=float(obj["temperature"]),
            n_samples=int(obj["n_samples"]),
            max_tokens=int(obj["max_tokens"]),
            seed_tag=obj.get("seed_tag", ""),
        )

    @property
    def rendered_prompt(self) -> str:
        return "\n\n".join(m["content"] for m in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    completions: tuple[str, ...]
    usage: dict = field(default_factory=lambda: {"prompt_tokens": 0, "completion_tokens": 0})
    cached: bool = False
    raw: dict | None = None


def cache_key(request: ChatRequest) -> str:
    """SHA-256 over the canonical (key-sorted) JSON of every semantic field."""
    return hashlib.sha256(canonical_json(request.to_dict()).encode("utf-8")).hexdigest()


class ResponseCache:
    """One JSON file per key: ``{request, response, timestamp}``."""

    def __init__(self, cache_dir: str | os.PathLike):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def path_for(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self.path_for(key)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            logger.warning("ignoring corrupt cache entry %s", path)
            return None

    def put(self, key: str, request: ChatRequest, response: ChatResponse) -> None:
        entry = {
            "request": request.to_dict(),
            "response": {
                "completions": list(response.completions),
                "usage": dict(response.usage),
                "raw": response.raw,
            },
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        # last write wins; identical keys carry identical content
        write_text_atomic(self.path_for(key), canonical_json(entry))


class Backend(Protocol):
    backend_id: str

    def generate(self, request: ChatRequest) -> ChatResponse: ...


@dataclass
class MockRule:
    match: str
    responses: tuple[str, ...] = ()
    error: str | None = None

    def __post_init__(self):
        self.responses = tuple(self.responses)
        if not self.responses and self.error is None:
            raise ConfigError(f"mock rule {self.match!r} needs responses or an error")


@dataclass
class MockScript:
    """Ordered substring rules over the rendered prompt; first match wins.

    A rule's ``responses`` are cycled by sample index. A rule with ``error``
    set raises :class:`BackendError` instead, for fault injection.
    """

    rules: list[MockRule] = field(default_factory=list)
    default: str = ""

    @classmethod
    def from_dict(cls, obj: dict) -> MockScript:
        rules = [
            MockRule(r["match"], tuple(r.get("responses", ())), r.get("error"))
            for r in obj.get("rules", [])
        ]
        return cls(rules, obj.get("default", ""))

    @classmethod
    def load(cls, path: str | os.PathLike) -> MockScript:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"mock script not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        rules = []
        for r in self.rules:
            entry = {"match": r.match, "responses": list(r.responses)}
            if r.error is not None:
                entry["error"] = r.error
            rules.append(entry)
        return {"rules": rules, "default": self.default}

    def respond(self, prompt: str, sample_index: int) -> str:
        for rule in self.rules:
            if rule.match in prompt:
                if rule.error is not None:
                    raise BackendError(f"scripted failure: {rule.error}")
                return rule.responses[sample_index % len(rule.responses)]
        return self.default


def _base_sample_index(seed_tag: str) -> int:
    tail = seed_tag.rsplit("|", 1)[-1]
    return int(tail) if tail.isdigit() else 0


class MockBackend:
    """Deterministic test double.

    Completion ``j`` of a request is the matching rule's response at index
    ``base + j``, where ``base`` is the integer after the last ``|`` of the
    request's seed tag (0 when absent). That makes the output a pure function
    of the request and the sample index, while separate single-sample
    requests with increasing tags still walk through a response cycle.
    """

    backend_id = "mock"

    def __init__(self, script: MockScript | None = None):
        self.script = script or MockScript()
        self.calls = 0
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    def generate(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
            self.requests.append(request)
        prompt = request.rendered_prompt
        base = _base_sample_index(request.seed_tag)
        completions = tuple(
            self.script.respond(prompt, base + j) for j in range(request.n_samples)
        )
        usage = {
            "prompt_tokens": len(prompt.split()),
            "completion_tokens": sum(len(c.split()) for c in completions),
        }
        return ChatResponse(completions, usage, raw={"mock": True})


def backoff_delay(attempt: int, base: float, cap: float) -> float:
    """Capped exponential backoff: ``min(cap, base * 2**attempt)``."""
    return min(cap, base * (2 ** attempt))


class OpenAICompatibleBackend:
    """``POST {base_url}/v1/chat/completions`` with bearer auth from ``LLM_API_KEY``."""

    def __init__(
        self,
        base_url: str,
        *,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 4,
        backoff_base: float = 1.0,
        backoff_cap: float = 30.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not base_url:
            raise ConfigError("openai_compatible backend needs base_url")
        self.base_url = base_url.rstrip("/")
        self.backend_id = f"openai_compatible:{self.base_url}"
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.sleep = sleep
        self.calls = 0
        self.retries = 0
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        self._client = httpx.Client(timeout=timeout, transport=transport, headers=headers)
        self._lock = threading.Lock()

    @property
    def url(self) -> str:
        if self.base_url.endswith("/v1"):
            return f"{self.base_url}/chat/completions"
        return f"{self.base_url}/v1/chat/completions"

    def _payload(self, request: ChatRequest) -> dict:
        return {
            "model": request.model,
            "messages": [dict(m) for m in request.messages],
            "temperature": request.temperature,
            "n": request.n_samples,
            "max_tokens": request.max_tokens,
        }

    def generate(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
        attempts = self.max_retries + 1
        last: str = ""
        for attempt in range(attempts):
            try:
                resp = self._client.post(self.url, json=self._payload(request))
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    return self._parse(resp, request)
            if attempt < attempts - 1:
                with self._lock:
                    self.retries += 1
                delay = backoff_delay(attempt, self.backoff_base, self.backoff_cap)
                logger.warning("chat completion failed (%s); retry %d in %.1fs", last, attempt + 1, delay)
                self.sleep(delay)
        raise BackendError(f"chat completion failed after {attempts} attempts: {last}")

    def _parse(self, resp: httpx.Response, request: ChatRequest) -> ChatResponse:
        try:
            body = resp.json()
        except ValueError:
            raise SchemaError(f"response is not JSON: {resp.text[:200]}") from None
        choices = body.get("choices") if isinstance(body, dict) else None
        if not isinstance(choices, list) or not choices:
            raise SchemaError(f"response missing choices: {json.dumps(body)[:200]}")
        try:
            ordered = sorted(choices, key=lambda c: c.get("index", 0))
            completions = tuple((c["message"]["content"] or "") for c in ordered)
        except (KeyError, TypeError):
            raise SchemaError(f"malformed choices: {json.dumps(choices)[:200]}") from None
        if len(completions) != request.n_samples:
            raise SchemaError(
                f"expected {request.n_samples} completions, got {len(completions)}"
            )
        usage = body.get("usage") or {}
        usage = {
            "prompt_tokens": int(usage.get("prompt_tokens", 0) or 0),
            "completion_tokens": int(usage.get("completion_tokens", 0) or 0),
        }
        return ChatResponse(completions, usage, raw=body)


class Gateway:
    """Cache-first front door to a backend.

    ``max_inflight`` bounds concurrent backend calls across all threads.
    Counters: ``requests`` (every complete() call), ``cache_hits`` and
    ``network_calls`` (backend invocations).
    """

    def __init__(
        self,
        backend: Backend,
        *,
        model: str = "mock-model",
        cache_dir: str | os.PathLike | None = None,
        max_inflight: int = 8,
        max_tokens: int = 512,
    ):
        self.backend = backend
        self.model = model
        self.cache = ResponseCache(cache_dir) if cache_dir is not None else None
        self.max_inflight = max_inflight
        self.max_tokens = max_tokens
        self._slots = threading.BoundedSemaphore(max_inflight)
        self._lock = threading.Lock()
        self.requests = 0
        self.cache_hits = 0
        self.network_calls = 0
        self.failures = 0

    @property
    def backend_id(self) -> str:
        return self.backend.backend_id

    def request(
        self,
        messages: Sequence[dict],
        *,
        temperature: float = DETERMINISTIC_TEMPERATURE,
        n_samples: int = 1,
        max_tokens: int | None = None,
        seed_tag: str = "",
    ) -> ChatRequest:
        return ChatRequest(
            backend_id=self.backend_id,
            model=self.model,
            messages=tuple(messages),
            temperature=temperature,
            n_samples=n_samples,
            max_tokens=max_tokens or self.max_tokens,
            seed_tag=seed_tag,
        )

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = cache_key(request)
        with self._lock:
            self.requests += 1
        if self.cache is not None:
            entry = self.cache.get(key)
            if entry is not None:
                completions = tuple(entry["response"]["completions"])
                if len(completions) == request.n_samples:
                    with self._lock:
                        self.cache_hits += 1
                    return ChatResponse(completions, entry["response"].get("usage", {}), cached=True,
                                        raw=entry["response"].get("raw"))
        with self._slots:
            with self._lock:
                self.network_calls += 1
            try:
                response = self.backend.generate(request)
            except BackendError:
                with self._lock:
                    self.failures += 1
                raise
        if len(response.completions) != request.n_samples:
            raise SchemaError(
                f"backend returned {len(response.completions)} completions for n={request.n_samples}"
            )
        if self.cache is not None:
            self.cache.put(key, request, response)
        return ChatResponse(response.completions, response.usage, cached=False, raw=response.raw)

    def chat(self, messages: Sequence[dict], **kwargs) -> ChatResponse:
        return self.complete(self.request(messages, **kwargs))

    def complete_many(self, requests: Iterable[ChatRequest]) -> list[ChatResponse]:
        """Complete requests concurrently; results keep input order."""
        requests = list(requests)
        if len(requests) <= 1:
            return [self.complete(r) for r in requests]
        with ThreadPoolExecutor(max_workers=self.max_inflight) as pool:
            return list(pool.map(self.complete, requests))

    def stats(self) -> dict:
        return {
            "requests": self.requests,
            "cache_hits": self.cache_hits,
            "network_calls": self.network_calls,
            "failures": self.failures,
        }
