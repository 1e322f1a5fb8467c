"""Uniform completion interface: live HTTP backends, scripted fakes, and a
deterministic record/replay store keyed by canonical request digests.

Replay mode never touches a network; record mode persists each (digest,
result) pair before returning, so a recorded run can be replayed
bit-for-bit. Identical requests are served from the store even in record
mode, which both saves tokens and keeps reruns deterministic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, NamedTuple, Protocol

import requests

log = logging.getLogger(__name__)

#: Fixed default sampling seed used across experiments for replicability.
DEFAULT_SEED = 1106
DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 4096

_ROLES = ("system", "user", "assistant")


class EngineError(Exception):
    """Completion failed for a non-retryable reason."""


class TransportError(EngineError):
    """Transient transport failure; eligible for retry."""


class ContextOverflowError(EngineError):
    """The request exceeds the model context window; retrying cannot help."""


class ReplayMissError(EngineError):
    """Replay store has no entry for the request digest."""

    def __init__(self, digest: str):
        self.digest = digest
        super().__init__(f"replay store has no entry for digest {digest}")


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"message role must be one of {_ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    messages: tuple[Message, ...]
    temperature: float = DEFAULT_TEMPERATURE
    seed: int = DEFAULT_SEED
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("request must contain at least one message")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("first message must be a system or user message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


class TokenUsage(NamedTuple):
    prompt_tokens: int
    completion_tokens: int


@dataclass(frozen=True)
class CompletionResult:
    text: str
    finish_reason: str  # stop | length | error
    usage: TokenUsage
    backend_id: str
    elapsed_s: float

    def __post_init__(self) -> None:
        if self.finish_reason not in ("stop", "length", "error"):
            raise ValueError(f"bad finish_reason {self.finish_reason!r}")
        if not self.text and self.finish_reason != "error":
            raise ValueError("empty completion text is only allowed with finish_reason=error")


def request_to_dict(request: CompletionRequest) -> dict[str, Any]:
    return {
        "model_id": request.model_id,
        "messages": [{"role": m.role, "content": m.content} for m in request.messages],
        "temperature": request.temperature,
        "seed": request.seed,
        "max_tokens": request.max_tokens,
    }


def request_from_dict(obj: dict[str, Any]) -> CompletionRequest:
    return CompletionRequest(
        model_id=obj["model_id"],
        messages=tuple(Message(m["role"], m["content"]) for m in obj["messages"]),
        temperature=obj["temperature"],
        seed=obj["seed"],
        max_tokens=obj["max_tokens"],
    )


def result_to_dict(result: CompletionResult) -> dict[str, Any]:
    return {
        "text": result.text,
        "finish_reason": result.finish_reason,
        "prompt_tokens": result.usage.prompt_tokens,
        "completion_tokens": result.usage.completion_tokens,
        "backend_id": result.backend_id,
        "elapsed_s": result.elapsed_s,
    }


def result_from_dict(obj: dict[str, Any]) -> CompletionResult:
    return CompletionResult(
        text=obj["text"],
        finish_reason=obj["finish_reason"],
        usage=TokenUsage(obj["prompt_tokens"], obj["completion_tokens"]),
        backend_id=obj["backend_id"],
        elapsed_s=obj["elapsed_s"],
    )


def canonical_digest(request: CompletionRequest) -> str:
    """SHA-256 over the canonical JSON form of the request.

    Depends only on semantic content: key order and whitespace never matter,
    and the model id is included so fixtures cannot leak across models.
    """
    canonical = json.dumps(
        request_to_dict(request), sort_keys=True, separators=(",", ":"), ensure_ascii=True
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class StoreMode(str, Enum):
    RECORD = "record"
    REPLAY = "replay"
    PASSTHROUGH = "passthrough"


class ReplayStore:
    """Append-only JSONL store of (digest, result) pairs.

    In record mode each new pair is flushed to disk before the completion is
    returned to the caller; in replay mode the file is the only source of
    completions.
    """

    def __init__(self, path: str | Path | None, mode: StoreMode):
        self.path = Path(path) if path is not None else None
        self.mode = mode
        self.entries: dict[str, CompletionResult] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    obj = json.loads(line)
                    self.entries[obj["digest"]] = result_from_dict(obj["result"])

    def __contains__(self, digest: str) -> bool:
        return digest in self.entries

    def get(self, digest: str) -> CompletionResult | None:
        return self.entries.get(digest)

    def put(self, digest: str, result: CompletionResult) -> None:
        with self._lock:
            self.entries[digest] = result
            if self.path is not None:
                record = {"digest": digest, "result": result_to_dict(result)}
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


class Backend(Protocol):
    backend_id: str

    def complete(self, request: CompletionRequest) -> CompletionResult: ...


class ScriptedBackend:
    """Deterministic fake backend: a function from request to response text.

    Used for unit tests and for authoring replay fixtures without a live
    provider.
    """

    def __init__(self, respond: Callable[[CompletionRequest], str], backend_id: str = "scripted"):
        self._respond = respond
        self.backend_id = backend_id

    def complete(self, request: CompletionRequest) -> CompletionResult:
        text = self._respond(request)
        prompt_tokens = sum(len(m.content.split()) for m in request.messages)
        return CompletionResult(
            text=text,
            finish_reason="stop" if text else "error",
            usage=TokenUsage(prompt_tokens, len(text.split())),
            backend_id=self.backend_id,
            elapsed_s=0.0,
        )


class OpenAIChatBackend:
    """Thin adapter for OpenAI-compatible chat completion endpoints.

    Wire format stays confined here; everything upstream sees only
    CompletionRequest/CompletionResult. The API key comes from an
    environment variable whose name is configurable.
    """

    def __init__(
        self,
        base_url: str = "https://api.openai.com/v1",
        api_key_env: str = "PROVIDER_API_KEY",
        timeout_s: float = 120.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.backend_id = f"openai-chat:{self.base_url}"

    def complete(self, request: CompletionRequest) -> CompletionResult:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise EngineError(f"environment variable {self.api_key_env} is not set")
        payload = {
            "model": request.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "seed": request.seed,
            "max_tokens": request.max_tokens,
        }
        started = time.monotonic()
        try:
            response = requests.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise TransportError(f"transport failure: {exc}") from exc
        if response.status_code in (429,) or response.status_code >= 500:
            raise TransportError(f"provider returned HTTP {response.status_code}")
        if response.status_code >= 400:
            body = response.text[:2000]
            if "context_length" in body or "maximum context" in body:
                raise ContextOverflowError(body)
            raise EngineError(f"provider returned HTTP {response.status_code}: {body}")
        data = response.json()
        choice = data["choices"][0]
        finish = choice.get("finish_reason") or "stop"
        if finish not in ("stop", "length"):
            finish = "error"
        usage = data.get("usage", {})
        return CompletionResult(
            text=choice["message"]["content"] or "",
            finish_reason=finish if choice["message"]["content"] else "error",
            usage=TokenUsage(usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0)),
            backend_id=self.backend_id,
            elapsed_s=time.monotonic() - started,
        )


@dataclass(frozen=True)
class RequestSettings:
    """Default request parameters applied by the agents when building prompts."""

    model_id: str = "gpt-4-turbo"
    temperature: float = DEFAULT_TEMPERATURE
    seed: int = DEFAULT_SEED
    max_tokens: int = DEFAULT_MAX_TOKENS


class CompletionEngine:
    """Completion entry point with retries, store interaction, and no surprises.

    Safe to share across concurrent problem workers: the store serializes its
    appends and the engine itself keeps no per-request mutable state.
    """

    MAX_RETRIES = 3

    def __init__(
        self,
        backend: Backend | None = None,
        store: ReplayStore | None = None,
        settings: RequestSettings | None = None,
        retry_base_delay: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.store = store
        self.settings = settings or RequestSettings()
        self.retry_base_delay = retry_base_delay
        self._sleep = sleep
        mode = store.mode if store else StoreMode.PASSTHROUGH
        if mode is not StoreMode.REPLAY and backend is None:
            raise ValueError(f"{mode.value} mode requires a backend")

    @property
    def backend_id(self) -> str:
        if self.store and self.store.mode is StoreMode.REPLAY:
            return "replay"
        assert self.backend is not None
        return self.backend.backend_id

    def complete(self, request: CompletionRequest) -> CompletionResult:
        digest = canonical_digest(request)
        if self.store is not None:
            if self.store.mode is StoreMode.REPLAY:
                result = self.store.get(digest)
                if result is None:
                    raise ReplayMissError(digest)
                return result
            if self.store.mode is StoreMode.RECORD:
                cached = self.store.get(digest)
                if cached is not None:
                    return cached
                result = self._call_with_retries(request)
                self.store.put(digest, result)  # persisted before returning
                return result
        return self._call_with_retries(request)

    def _call_with_retries(self, request: CompletionRequest) -> CompletionResult:
        assert self.backend is not None
        attempts = 0
        while True:
            attempts += 1
            try:
                return self.backend.complete(request)
            except TransportError:
                if attempts > self.MAX_RETRIES:
                    raise
                delay = self.retry_base_delay * (2 ** (attempts - 1))
                log.warning("transport failure, retry %d/%d in %.1fs", attempts, self.MAX_RETRIES, delay)
                self._sleep(delay)
