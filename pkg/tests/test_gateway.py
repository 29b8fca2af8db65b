"""Gateway behavior: caching, retries, backoff, batching, replay."""

from __future__ import annotations

import random
import types

import pytest
import requests

from llmserver import MockLLM, Step
from vqa_miner.gateway import (
    AuthError,
    ContextOverflow,
    GatewayError,
    LLMConfig,
    LLMGateway,
    LLMUsage,
    ReplayCacheMiss,
    ResponseCache,
    RetriesExhausted,
    cache_key,
    cost_per_question,
)


def make_gateway(base_url: str, cache_dir, **overrides) -> LLMGateway:
    kwargs = {"api_key": overrides.pop("api_key", "test-key"), "sleep": overrides.pop("sleep", lambda s: None)}
    kwargs.update({k: overrides.pop(k) for k in ("post", "rng", "replay") if k in overrides})
    config = LLMConfig(model="m", base_url=base_url, **overrides)
    return LLMGateway(config, cache_dir, **kwargs)


class FakeResponse:
    def __init__(self, status_code: int, body=None, headers=None, text="err"):
        self.status_code = status_code
        self._body = body
        self.headers = headers or {}
        self.text = text

    def json(self):
        if self._body is None:
            raise ValueError("no json")
        return self._body


class TestCompletion:
    def test_happy_path_then_cache_hit(self, tmp_path):
        with MockLLM(default=Step(text="the reply", prompt_tokens=11, completion_tokens=7)) as server:
            gw = make_gateway(server.base_url, tmp_path)
            text, usage = gw.complete("hello")
            assert text == "the reply"
            assert usage.prompt_tokens == 11
            assert usage.completion_tokens == 7
            assert usage.attempt == 1
            assert usage.cached is False
            assert usage.latency_ms >= 0.0

            text2, usage2 = gw.complete("hello")
            assert text2 == "the reply"
            assert usage2.cached is True
            assert usage2.attempt == 0
            assert len(server.seen) == 1, "second call must be served from cache"
            assert server.seen[0].auth == "Bearer test-key"
            assert server.seen[0].model == "m"

    def test_env_api_key_used_when_not_passed(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VQAMINER_API_KEY", "from-env")
        with MockLLM() as server:
            config = LLMConfig(model="m", base_url=server.base_url)
            gw = LLMGateway(config, tmp_path, sleep=lambda s: None)
            gw.complete("x")
            assert server.seen[0].auth == "Bearer from-env"

    def test_auth_error_fails_fast(self, tmp_path):
        with MockLLM(default=Step(status=401)) as server:
            gw = make_gateway(server.base_url, tmp_path)
            with pytest.raises(AuthError):
                gw.complete("x")
            assert len(server.seen) == 1, "credential failures must not retry"

    def test_context_overflow_not_retried(self, tmp_path):
        body = {"error": {"message": "maximum context length exceeded for this model"}}
        with MockLLM(default=Step(status=400, body=body)) as server:
            gw = make_gateway(server.base_url, tmp_path)
            with pytest.raises(ContextOverflow):
                gw.complete("x")
            assert len(server.seen) == 1

    def test_other_400_is_plain_gateway_error(self, tmp_path):
        body = {"error": {"message": "malformed request"}}
        with MockLLM(default=Step(status=400, body=body)) as server:
            gw = make_gateway(server.base_url, tmp_path)
            with pytest.raises(GatewayError) as exc_info:
                gw.complete("x")
            assert not isinstance(exc_info.value, ContextOverflow)

    def test_retry_then_success(self, tmp_path):
        sleeps: list[float] = []
        steps = [Step(status=500), Step(text="recovered")]
        with MockLLM(steps=steps) as server:
            gw = make_gateway(server.base_url, tmp_path, sleep=sleeps.append)
            text, usage = gw.complete("x")
            assert text == "recovered"
            assert usage.attempt == 2
            assert len(sleeps) == 1
            assert 0.25 <= sleeps[0] <= 0.75, "first delay is 0.5s with 0.5-1.5x jitter"

    def test_retry_after_header_respected(self, tmp_path):
        sleeps: list[float] = []
        steps = [Step(status=429, headers={"Retry-After": "3"}), Step(text="ok")]
        with MockLLM(steps=steps) as server:
            gw = make_gateway(server.base_url, tmp_path, sleep=sleeps.append)
            gw.complete("x")
            assert sleeps[0] >= 3.0

    def test_retries_exhausted(self, tmp_path):
        sleeps: list[float] = []
        with MockLLM(default=Step(status=503)) as server:
            gw = make_gateway(server.base_url, tmp_path, sleep=sleeps.append, max_retries=2)
            with pytest.raises(RetriesExhausted):
                gw.complete("x")
            assert len(server.seen) == 3, "max_retries=2 allows three attempts"
            assert len(sleeps) == 2, "no sleep after the final attempt"

    def test_malformed_200_body_retried(self, tmp_path):
        steps = [Step(raw_body=b"<html>gateway hiccup</html>"), Step(text="fine")]
        with MockLLM(steps=steps) as server:
            gw = make_gateway(server.base_url, tmp_path)
            text, usage = gw.complete("x")
            assert text == "fine"
            assert usage.attempt == 2

    def test_backoff_schedule_doubles_to_cap(self, tmp_path):
        sleeps: list[float] = []
        rng = types.SimpleNamespace(uniform=lambda a, b: 1.0)
        post = lambda url, headers, json, timeout: FakeResponse(500)  # noqa: E731
        gw = make_gateway(
            "http://example.invalid/v1", tmp_path,
            post=post, sleep=sleeps.append, rng=rng, max_retries=6,
        )
        with pytest.raises(RetriesExhausted):
            gw.complete("x")
        assert sleeps == [0.5, 1.0, 2.0, 4.0, 8.0, 8.0], "exponential from 0.5s capped at 8s"

    def test_connection_errors_are_retryable(self, tmp_path):
        def post(url, headers, json, timeout):
            raise requests.ConnectionError("refused")

        gw = make_gateway("http://example.invalid/v1", tmp_path, post=post, max_retries=1)
        with pytest.raises(RetriesExhausted) as exc_info:
            gw.complete("x")
        assert "transport" in str(exc_info.value)

    def test_endpoint_joins_base_url(self, tmp_path):
        gw = make_gateway("http://h:1/v1/", tmp_path)
        assert gw.endpoint == "http://h:1/v1/chat/completions"


class TestReplay:
    def test_hit_without_network(self, tmp_path):
        cache = ResponseCache(tmp_path)
        cache.seed("the prompt", "m", 0.0, "canned", prompt_tokens=3, completion_tokens=4)
        gw = make_gateway("http://127.0.0.1:9/v1", tmp_path, replay=True)
        text, usage = gw.complete("the prompt")
        assert text == "canned"
        assert usage.cached is True

    def test_miss_raises(self, tmp_path):
        gw = make_gateway("http://127.0.0.1:9/v1", tmp_path, replay=True)
        with pytest.raises(ReplayCacheMiss):
            gw.complete("never seeded")

    def test_batch_miss_aborts(self, tmp_path):
        cache = ResponseCache(tmp_path)
        cache.seed("a", "m", 0.0, "A")
        gw = make_gateway("http://127.0.0.1:9/v1", tmp_path, replay=True, max_in_flight=1)
        with pytest.raises(ReplayCacheMiss):
            gw.complete_many(["a", "b"])


class TestBatch:
    def test_results_in_input_order(self, tmp_path):
        steps = [Step(text="r0"), Step(text="r1"), Step(text="r2")]
        with MockLLM(steps=steps) as server:
            gw = make_gateway(server.base_url, tmp_path, max_in_flight=1)
            results = gw.complete_many(["p0", "p1", "p2"])
            assert [r.text for r in results] == ["r0", "r1", "r2"]
            assert all(r.ok for r in results)
            assert [r.index for r in results] == [0, 1, 2]

    def test_in_flight_cap_respected(self, tmp_path):
        with MockLLM(default=Step(text="ok", delay=0.08)) as server:
            gw = make_gateway(server.base_url, tmp_path, max_in_flight=3)
            prompts = [f"p{i}" for i in range(8)]
            results = gw.complete_many(prompts)
            assert all(r.ok for r in results)
            assert len(server.seen) == 8
            assert server.peak_in_flight <= 3

    def test_partial_failure_recorded_not_raised(self, tmp_path):
        steps = [Step(text="good"), Step(status=503)]
        with MockLLM(steps=steps, default=Step(status=503)) as server:
            gw = make_gateway(server.base_url, tmp_path, max_in_flight=1, max_retries=0)
            results = gw.complete_many(["a", "b"])
            assert results[0].ok
            assert not results[1].ok
            assert results[1].error_kind == "RetriesExhausted"
            assert results[1].error_message

    def test_auth_failure_aborts_batch(self, tmp_path):
        with MockLLM(default=Step(status=403)) as server:
            gw = make_gateway(server.base_url, tmp_path, max_in_flight=1)
            with pytest.raises(AuthError):
                gw.complete_many(["a", "b", "c"])
            assert len(server.seen) == 1, "remaining prompts must not be attempted"


class TestHelpers:
    def test_cache_key_sensitivity(self):
        base = cache_key("p", "m", 0.0)
        assert cache_key("q", "m", 0.0) != base
        assert cache_key("p", "n", 0.0) != base
        assert cache_key("p", "m", 0.5) != base
        assert cache_key("p", "m", 0.0) == base

    def test_cost_per_question(self):
        usages = [
            LLMUsage(prompt_tokens=500_000, completion_tokens=100_000, latency_ms=1.0, attempt=1),
            LLMUsage(prompt_tokens=500_000, completion_tokens=100_000, latency_ms=1.0, attempt=1),
        ]
        cost = cost_per_question(usages, 1.25, 10.0, 100)
        assert cost == pytest.approx((1_000_000 * 1.25 + 200_000 * 10.0) / 1e6 / 100)
        with pytest.raises(ValueError):
            cost_per_question(usages, 1.25, 10.0, 0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LLMConfig(model="m", base_url="http://h/v1", temperature=3.0)
        with pytest.raises(ValueError):
            LLMConfig(model="m", base_url="http://h/v1", max_retries=-1)
        with pytest.raises(ValueError):
            LLMConfig(model="", base_url="http://h/v1")
        with pytest.raises(ValueError):
            LLMUsage(prompt_tokens=-1, completion_tokens=0, latency_ms=0.0, attempt=1)

    def test_random_rng_jitter_stays_in_band(self, tmp_path):
        sleeps: list[float] = []
        post = lambda url, headers, json, timeout: FakeResponse(500)  # noqa: E731
        gw = make_gateway(
            "http://example.invalid/v1", tmp_path,
            post=post, sleep=sleeps.append, rng=random.Random(7), max_retries=4,
        )
        with pytest.raises(RetriesExhausted):
            gw.complete("x")
        bases = [0.5, 1.0, 2.0, 4.0]
        for delay, base in zip(sleeps, bases):
            assert 0.5 * base <= delay <= 1.5 * base
