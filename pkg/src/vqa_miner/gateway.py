"""Client for OpenAI-compatible chat-completions endpoints.

Adds the operational behaviour the pipeline needs on top of ``requests``:
bounded concurrency with ordered results, exponential backoff on transient
failures, fail-fast on credential problems, a content-addressed response
cache, and a replay mode that answers entirely from that cache so runs are
reproducible without network access.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import requests

logger = logging.getLogger(__name__)

ENV_API_KEY = "VQAMINER_API_KEY"

_BACKOFF_BASE_S = 0.5
_BACKOFF_CAP_S = 8.0


class GatewayError(RuntimeError):
    """Base for all gateway failures."""


class TransportError(GatewayError):
    """Network-level failure (timeout, refused connection, dropped socket)."""


class AuthError(GatewayError):
    """401/403 from the endpoint. Never retried: the key will not get better."""


class ContextOverflow(GatewayError):
    """The prompt exceeds the model's context window."""


class RetriesExhausted(GatewayError):
    """Transient failures persisted through every allowed attempt."""


class ReplayCacheMiss(GatewayError):
    """Replay mode was asked for a prompt the cache has never seen."""


@dataclass(frozen=True)
class LLMConfig:
    model: str
    base_url: str
    temperature: float = 0.0
    max_output_tokens: int | None = None
    request_timeout: float = 120.0
    max_retries: int = 5
    max_in_flight: int = 4
    price_in: float = 0.0
    price_out: float = 0.0

    def __post_init__(self):
        if not self.model:
            raise ValueError("model must be non-empty")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.price_in < 0 or self.price_out < 0:
            raise ValueError("prices must be non-negative")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")


@dataclass(frozen=True)
class LLMUsage:
    prompt_tokens: int
    completion_tokens: int
    latency_ms: float
    attempt: int
    cached: bool = False
    chunk_ref: tuple[str, int] | None = None

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    def __post_init__(self):
        if min(self.prompt_tokens, self.completion_tokens, self.attempt) < 0 or self.latency_ms < 0:
            raise ValueError("usage counters must be non-negative")


@dataclass
class CompletionResult:
    """Outcome of one prompt in a batch; exactly one of text/error is set."""

    index: int
    text: str | None = None
    usage: LLMUsage | None = None
    error_kind: str | None = None
    error_message: str | None = None

    @property
    def ok(self) -> bool:
        return self.text is not None


def cache_key(prompt: str, model: str, temperature: float) -> str:
    material = "\x00".join((prompt, model, repr(temperature)))
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


class ResponseCache:
    """One JSON file per completed call, keyed by prompt + model + temperature."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except (OSError, json.JSONDecodeError):
            logger.warning("unreadable cache entry %s, ignoring", path)
            return None

    def put(self, key: str, text: str, prompt_tokens: int, completion_tokens: int) -> None:
        record = {
            "text": text,
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
        }
        tmp = self._path(key).with_suffix(".tmp")
        tmp.write_text(json.dumps(record, ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, self._path(key))

    def seed(self, prompt: str, model: str, temperature: float, text: str,
             prompt_tokens: int = 0, completion_tokens: int = 0) -> str:
        """Install a transcript for replay runs; returns the key it landed under."""
        key = cache_key(prompt, model, temperature)
        self.put(key, text, prompt_tokens, completion_tokens)
        return key


class LLMGateway:
    """Issues chat completions with caching, retry, and bounded parallelism.

    ``sleep`` and ``post`` are injectable so tests can observe backoff
    schedules and drive failure sequences without real waiting or sockets.
    """

    def __init__(
        self,
        config: LLMConfig,
        cache_dir: str | Path,
        *,
        replay: bool = False,
        api_key: str | None = None,
        sleep=time.sleep,
        post=None,
        rng: random.Random | None = None,
    ):
        self.config = config
        self.cache = ResponseCache(cache_dir)
        self.replay = replay
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        self._sleep = sleep
        self._post = post or requests.post
        self._rng = rng or random.Random()
        self._abort = threading.Event()

    @property
    def endpoint(self) -> str:
        return self.config.base_url.rstrip("/") + "/chat/completions"

    def complete(self, prompt: str) -> tuple[str, LLMUsage]:
        key = cache_key(prompt, self.config.model, self.config.temperature)
        cached = self.cache.get(key)
        if cached is not None:
            usage = LLMUsage(
                prompt_tokens=int(cached.get("prompt_tokens", 0)),
                completion_tokens=int(cached.get("completion_tokens", 0)),
                latency_ms=0.0,
                attempt=0,
                cached=True,
            )
            return cached["text"], usage
        if self.replay:
            raise ReplayCacheMiss(f"replay cache has no entry for key {key[:12]}…")

        started = time.monotonic()
        last_error = "no attempt made"
        attempts_allowed = self.config.max_retries + 1
        for attempt in range(1, attempts_allowed + 1):
            if self._abort.is_set():
                raise TransportError("aborted after auth failure in batch")
            retryable, outcome = self._attempt(prompt)
            if not retryable:
                text, prompt_tokens, completion_tokens = outcome
                self.cache.put(key, text, prompt_tokens, completion_tokens)
                usage = LLMUsage(
                    prompt_tokens=prompt_tokens,
                    completion_tokens=completion_tokens,
                    latency_ms=(time.monotonic() - started) * 1000.0,
                    attempt=attempt,
                )
                return text, usage
            last_error, retry_after = outcome
            if attempt < attempts_allowed:
                self._sleep(self._backoff_delay(attempt, retry_after))
        raise RetriesExhausted(f"gave up after {attempts_allowed} attempts: {last_error}")

    def _attempt(self, prompt: str):
        """One HTTP round trip. Returns (retryable, payload); raises on fatal errors."""
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        if self.config.max_output_tokens is not None:
            body["max_tokens"] = self.config.max_output_tokens

        try:
            resp = self._post(self.endpoint, headers=headers, json=body, timeout=self.config.request_timeout)
        except (requests.Timeout, requests.ConnectionError) as exc:
            return True, (f"transport: {exc}", None)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc

        if resp.status_code in (401, 403):
            self._abort.set()
            raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            retry_after = _parse_retry_after(resp.headers.get("Retry-After"))
            return True, (f"HTTP {resp.status_code}", retry_after)
        if resp.status_code == 400:
            message = _error_message(resp)
            if "context" in message.lower():
                raise ContextOverflow(message)
            raise GatewayError(f"HTTP 400: {message}")
        if resp.status_code != 200:
            raise GatewayError(f"unexpected HTTP {resp.status_code}: {_error_message(resp)}")

        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError):
            # 200 with a mangled body is usually a proxy hiccup, worth retrying.
            return True, ("HTTP 200 with malformed completion body", None)
        if not isinstance(text, str):
            return True, ("completion content is not a string", None)
        usage = payload.get("usage") or {}
        return False, (text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))

    def _backoff_delay(self, attempt: int, retry_after: float | None) -> float:
        delay = min(_BACKOFF_CAP_S, _BACKOFF_BASE_S * (2 ** (attempt - 1)))
        delay *= self._rng.uniform(0.5, 1.5)
        if retry_after is not None:
            delay = max(delay, retry_after)
        return delay

    def complete_many(self, prompts: list[str]) -> list[CompletionResult]:
        """Run prompts with bounded parallelism; results come back in input order.

        Per-prompt transient failures are recorded, not raised, so a long run
        survives one bad chunk. Credential and replay failures abort the whole
        batch: every later call would fail identically.
        """
        results = [CompletionResult(index=i) for i in range(len(prompts))]
        fatal: list[BaseException] = []

        def run(i: int) -> None:
            if fatal or self._abort.is_set():
                results[i].error_kind = "aborted"
                results[i].error_message = "batch aborted"
                return
            try:
                text, usage = self.complete(prompts[i])
                results[i].text = text
                results[i].usage = usage
            except (AuthError, ReplayCacheMiss) as exc:
                self._abort.set()
                fatal.append(exc)
            except GatewayError as exc:
                results[i].error_kind = type(exc).__name__
                results[i].error_message = str(exc)

        with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
            list(pool.map(run, range(len(prompts))))
        self._abort.clear()
        if fatal:
            raise fatal[0]
        return results


def _parse_retry_after(value: str | None) -> float | None:
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None


def _error_message(resp) -> str:
    try:
        payload = resp.json()
        if isinstance(payload.get("error"), dict):
            return str(payload["error"].get("message", payload["error"]))
        return str(payload.get("error") or payload)
    except ValueError:
        return (resp.text or "")[:200]


def cost_per_question(usages: list[LLMUsage], price_in: float, price_out: float, n_questions: int) -> float:
    """Average API cost per extracted question, with prices in $ per million tokens."""
    if n_questions <= 0:
        raise ValueError("n_questions must be positive")
    total = sum(u.prompt_tokens for u in usages) * price_in
    total += sum(u.completion_tokens for u in usages) * price_out
    return total / 1e6 / n_questions
