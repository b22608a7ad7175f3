"""Completion backends: HTTP (OpenAI-compatible), scripted mock, and a record/replay cache.

All higher layers treat a backend as the only source of nondeterminism.
Token counts always come from backend-reported usage fields (the mock
reports whitespace-token counts); there is no local tokenizer.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path

import requests

logger = logging.getLogger(__name__)

VALID_ROLES = ("system", "user", "assistant")
CACHE_MODES = ("off", "record", "replay", "read_through")

BACKOFF_BASE_S = 1.0
BACKOFF_CAP_S = 30.0


class BackendError(Exception):
    """Base class for completion-backend failures."""


class RetryExhausted(BackendError):
    """Transport kept failing after max_retries attempts."""


class CacheMiss(BackendError):
    """Replay mode found no recorded completion for the request key."""


class ContextOverflow(BackendError):
    """The endpoint rejected the request because the prompt exceeds its context."""


class PartialFailure(BackendError):
    """Some of the n fan-out samples failed; the rest are available.

    ``completions`` maps sample_index -> Completion for the successes,
    ``failures`` maps sample_index -> exception. Callers may retry only
    the failed indices.
    """

    def __init__(self, completions: dict[int, "Completion"], failures: dict[int, Exception]):
        self.completions = completions
        self.failures = failures
        super().__init__(f"{len(failures)} of {len(completions) + len(failures)} samples failed "
                         f"(indices {sorted(failures)})")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in VALID_ROLES:
            raise ValueError(f"invalid role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")


def validate_messages(messages: list[ChatMessage]) -> None:
    """Check the conversation shape: optional leading system message, then
    strictly alternating user/assistant starting with user."""
    if not messages:
        raise ValueError("messages must be non-empty")
    rest = messages[1:] if messages[0].role == "system" else messages
    if not rest:
        raise ValueError("conversation needs at least one user message")
    for i, msg in enumerate(rest):
        expected = "user" if i % 2 == 0 else "assistant"
        if msg.role != expected:
            raise ValueError(f"message {i}: expected role {expected!r}, got {msg.role!r}")


def user_message(text: str) -> list[ChatMessage]:
    return [ChatMessage("user", text)]


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.7
    top_p: float = 1.0
    max_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class Completion:
    text: str
    prompt_tokens: int
    completion_tokens: int
    finish_reason: str = "stop"

    def __post_init__(self):
        if self.completion_tokens < 0 or self.prompt_tokens < 0:
            raise ValueError("token counts must be >= 0")
        if self.finish_reason not in ("stop", "length", "error"):
            raise ValueError(f"invalid finish_reason {self.finish_reason!r}")


@dataclass
class BackendConfig:
    endpoint_url: str = ""
    model_id: str = "mock"
    auth_env_var: str = "S2D_API_KEY"
    timeout: float = 120.0
    max_retries: int = 3
    max_in_flight: int = 8
    cache_dir: str | None = None
    cache_mode: str = "off"

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.cache_mode not in CACHE_MODES:
            raise ValueError(f"invalid cache_mode {self.cache_mode!r}")


def cache_key(messages: list[ChatMessage], params: SamplingParams,
              sample_index: int, model_id: str) -> str:
    """Deterministic key over the full logical request, for record/replay."""
    payload = {
        "messages": [{"role": m.role, "content": m.content} for m in messages],
        "params": asdict(params),
        "sample_index": sample_index,
        "model_id": model_id,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Backend:
    """Uniform completion interface.

    Subclasses implement ``_complete``; this base class provides the
    admission gate (at most ``max_in_flight`` concurrent requests) and
    bounded fan-out sampling with deterministic result order.
    """

    def __init__(self, max_in_flight: int = 8):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.max_in_flight = max_in_flight
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def _complete(self, messages: list[ChatMessage], params: SamplingParams,
                  sample_index: int) -> Completion:
        raise NotImplementedError

    def complete(self, messages: list[ChatMessage], params: SamplingParams,
                 sample_index: int = 0) -> Completion:
        validate_messages(messages)
        with self._gate:
            return self._complete(messages, params, sample_index)

    def complete_n(self, messages: list[ChatMessage], params: SamplingParams,
                   n: int, first_index: int = 0) -> list[Completion]:
        """Draw n samples, keyed by distinct sample indices, ordered by index.

        Raises PartialFailure if some but not all samples fail; the caller
        can retry only the failed indices.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        if n == 1:
            return [self.complete(messages, params, sample_index=first_index)]
        results: dict[int, Completion] = {}
        failures: dict[int, Exception] = {}
        with ThreadPoolExecutor(max_workers=min(n, self.max_in_flight)) as pool:
            futures = {
                idx: pool.submit(self.complete, messages, params, idx)
                for idx in range(first_index, first_index + n)
            }
            for idx, fut in futures.items():
                try:
                    results[idx] = fut.result()
                except Exception as exc:  # noqa: BLE001 - reported per index
                    failures[idx] = exc
        if failures:
            raise PartialFailure(results, failures)
        return [results[idx] for idx in sorted(results)]


class HttpBackend(Backend):
    """OpenAI-compatible ``POST {endpoint_url}/chat/completions`` client with
    exponential-backoff retries (base 1s, cap 30s, jittered)."""

    def __init__(self, config: BackendConfig, session: requests.Session | None = None):
        super().__init__(config.max_in_flight)
        if not config.endpoint_url:
            raise ValueError("endpoint_url is required for the HTTP backend")
        self.config = config
        self.session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.auth_env_var, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _complete(self, messages, params, sample_index):
        body = {
            "model": self.config.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
            "n": 1,
        }
        if params.seed is not None:
            # Per-sample seed offset keeps the n fan-out samples distinct.
            body["seed"] = params.seed + sample_index
        url = self.config.endpoint_url.rstrip("/") + "/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                delay = min(BACKOFF_CAP_S, BACKOFF_BASE_S * 2 ** (attempt - 1))
                delay *= 1.0 + random.uniform(-0.25, 0.25)
                logger.debug("retrying request (attempt %d) after %.2fs", attempt, delay)
                time.sleep(max(0.0, delay))
            try:
                resp = self.session.post(url, json=body, headers=self._headers(),
                                         timeout=self.config.timeout)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 400 and _looks_like_context_overflow(resp.text):
                raise ContextOverflow(resp.text[:500])
            if resp.status_code in (429, 500, 502, 503, 504):
                last_error = BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            if resp.status_code != 200:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:500]}")
            return _parse_chat_response(resp.json())
        raise RetryExhausted(str(last_error))


def _looks_like_context_overflow(body: str) -> bool:
    text = body.lower()
    return "context" in text and ("length" in text or "window" in text or "overflow" in text)


def _parse_chat_response(payload: dict) -> Completion:
    try:
        choice = payload["choices"][0]
        usage = payload.get("usage", {})
        return Completion(
            text=choice["message"]["content"],
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            finish_reason=choice.get("finish_reason", "stop"),
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise BackendError(f"malformed chat response: {exc}") from exc


def whitespace_tokens(text: str) -> int:
    return len(text.split())


class MockBackend(Backend):
    """Deterministic scripted backend for tests and dry runs.

    ``script`` is a callable (prompt_text, sample_index) -> str or
    Completion, where prompt_text is the newline-joined message contents.
    The mock reports whitespace-token counts, enforces an optional context
    limit, and records a concurrency probe (peak in-flight calls).
    """

    def __init__(self, script, max_in_flight: int = 8, context_limit: int | None = None,
                 latency_s: float = 0.0):
        super().__init__(max_in_flight)
        self.script = script
        self.context_limit = context_limit
        self.latency_s = latency_s
        self.calls: list[tuple[str, int]] = []
        self.peak_concurrency = 0
        self._in_flight = 0
        self._lock = threading.Lock()

    @classmethod
    def from_mapping(cls, mapping: dict[str, str], default: str = "", **kwargs) -> "MockBackend":
        def script(prompt, sample_index):
            if prompt in mapping:
                return mapping[prompt]
            if default:
                return default
            raise KeyError(f"mock has no script for prompt: {prompt[:80]!r}")
        return cls(script, **kwargs)

    def _complete(self, messages, params, sample_index):
        prompt = "\n".join(m.content for m in messages)
        with self._lock:
            self._in_flight += 1
            self.peak_concurrency = max(self.peak_concurrency, self._in_flight)
            self.calls.append((prompt, sample_index))
        try:
            if self.latency_s:
                time.sleep(self.latency_s)
            if self.context_limit is not None and whitespace_tokens(prompt) > self.context_limit:
                raise ContextOverflow(
                    f"prompt of {whitespace_tokens(prompt)} tokens exceeds context limit "
                    f"{self.context_limit}")
            out = self.script(prompt, sample_index)
            if isinstance(out, Completion):
                return out
            return Completion(text=out, prompt_tokens=whitespace_tokens(prompt),
                              completion_tokens=whitespace_tokens(out))
        finally:
            with self._lock:
                self._in_flight -= 1

    @property
    def call_count(self) -> int:
        return len(self.calls)


class DryRunBackend(MockBackend):
    """Self-contained mock for CLI dry runs: answers are a deterministic
    function of the prompt hash, with shape-aware responses for the
    rephrase/branch/solve/merge/USC/CoT prompt families."""

    def __init__(self, max_in_flight: int = 8):
        super().__init__(self._answer, max_in_flight=max_in_flight)

    @staticmethod
    def _digest(prompt: str, sample_index: int) -> int:
        blob = f"{prompt}\x1f{sample_index}".encode("utf-8")
        return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")

    def _answer(self, prompt: str, sample_index: int) -> str:
        h = self._digest(prompt, sample_index)
        if "rephrase" in prompt.lower() or "Reword and elaborate" in prompt:
            first_line = prompt.splitlines()[0]
            return f"Restated: {first_line}"
        if "Evaluation Plan:" in prompt:
            return ("1. Relevance: how well the response addresses the question\n"
                    "2. Accuracy: factual correctness of the response")
        if "[Evaluation Criterion]" in prompt:
            a, b = 1 + h % 5, 1 + (h >> 8) % 5
            return f"Assistant A: {a}/5\nAssistant B: {b}/5"
        if '"[[A]]"' in prompt or "[[A]]" in prompt:
            verdict = "ABC"[h % 3]
            return f"Conclusive judgement: [[{verdict}]]"
        if '"FINAL:' in prompt:
            return "FINAL: " + ("Yes" if h % 2 == 0 else "No")
        if '"Final answer:' in prompt:
            value = h % 100
            return f"Step by step, the result is {value}. Final answer: {value}"
        # Tasks here are predominantly yes/no; a biased coin makes
        # per-input majorities common but not universal.
        return "Yes" if h % 3 else "No"


class CachingBackend(Backend):
    """Record/replay layer over another backend.

    One JSON document per cache entry, filename = hex cache key; writes are
    atomic (write-temp-then-rename). Replay mode never touches the inner
    backend, so pipelines built on it are pure functions of their inputs.
    """

    def __init__(self, inner: Backend | None, cache_dir: str | Path, mode: str,
                 model_id: str):
        if mode not in CACHE_MODES:
            raise ValueError(f"invalid cache mode {mode!r}")
        if mode != "replay" and inner is None:
            raise ValueError(f"cache mode {mode!r} requires an inner backend")
        super().__init__(inner.max_in_flight if inner is not None else 8)
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.mode = mode
        self.model_id = model_id
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _entry_path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def _read(self, key: str) -> Completion | None:
        path = self._entry_path(key)
        if not path.exists():
            return None
        entry = json.loads(path.read_text(encoding="utf-8"))
        return Completion(**entry["completion"])

    def _write(self, key: str, messages, params, sample_index, completion: Completion) -> None:
        entry = {
            "request": {
                "messages": [{"role": m.role, "content": m.content} for m in messages],
                "params": asdict(params),
                "sample_index": sample_index,
                "model_id": self.model_id,
            },
            "completion": asdict(completion),
            "recorded_at": datetime.now(timezone.utc).isoformat(),
        }
        path = self._entry_path(key)
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh, ensure_ascii=False)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def _complete(self, messages, params, sample_index):
        if self.mode == "off":
            return self.inner.complete(messages, params, sample_index)
        key = cache_key(messages, params, sample_index, self.model_id)
        if self.mode == "replay":
            cached = self._read(key)
            if cached is None:
                raise CacheMiss(f"no recorded completion for key {key}")
            return cached
        if self.mode == "read_through":
            cached = self._read(key)
            if cached is not None:
                return cached
        completion = self.inner.complete(messages, params, sample_index)
        self._write(key, messages, params, sample_index, completion)
        return completion

    def complete(self, messages, params, sample_index=0):
        # The inner backend owns the admission gate; cache reads need none.
        validate_messages(messages)
        return self._complete(messages, params, sample_index)


def build_backend(config: BackendConfig, kind: str = "http") -> Backend:
    """Assemble the backend stack described by a config: base transport
    (HTTP or dry-run mock) plus the cache layer when enabled."""
    if kind == "http":
        base: Backend | None = HttpBackend(config)
    elif kind == "mock":
        base = DryRunBackend(max_in_flight=config.max_in_flight)
    else:
        raise ValueError(f"unknown backend kind {kind!r}")
    if config.cache_mode == "off":
        return base
    if config.cache_dir is None:
        raise ValueError("cache_dir is required when cache_mode != off")
    inner = None if config.cache_mode == "replay" else base
    return CachingBackend(inner, config.cache_dir, config.cache_mode, config.model_id)
