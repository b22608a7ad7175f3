import json
import threading

import pytest
import requests

from s2distill.backend import (Backend, BackendConfig, CacheMiss, CachingBackend,
                               ChatMessage, Completion, ContextOverflow, HttpBackend,
                               MockBackend, PartialFailure, RetryExhausted,
                               SamplingParams, cache_key, user_message,
                               validate_messages, whitespace_tokens)


def msg(text):
    return user_message(text)


class TestMessageValidation:
    def test_empty_content_rejected(self):
        with pytest.raises(ValueError):
            ChatMessage("user", "")

    def test_bad_role_rejected(self):
        with pytest.raises(ValueError):
            ChatMessage("tool", "hi")

    def test_leading_system_allowed(self):
        validate_messages([ChatMessage("system", "s"), ChatMessage("user", "u")])

    def test_alternation_enforced(self):
        with pytest.raises(ValueError):
            validate_messages([ChatMessage("user", "a"), ChatMessage("user", "b")])

    def test_must_start_with_user(self):
        with pytest.raises(ValueError):
            validate_messages([ChatMessage("assistant", "a")])


class TestSamplingParams:
    def test_top_p_bounds(self):
        with pytest.raises(ValueError):
            SamplingParams(top_p=0.0)
        with pytest.raises(ValueError):
            SamplingParams(top_p=1.5)

    def test_max_tokens_positive(self):
        with pytest.raises(ValueError):
            SamplingParams(max_tokens=0)


class TestMockBackend:
    def test_scripted_response(self, params):
        backend = MockBackend.from_mapping({"hello": "yes indeed"})
        completion = backend.complete(msg("hello"), params)
        assert completion.text == "yes indeed"
        assert completion.completion_tokens == 2

    def test_context_limit_raises_overflow(self, params):
        backend = MockBackend(lambda p, i: "ok", context_limit=3)
        long_prompt = "word " * 10
        with pytest.raises(ContextOverflow):
            backend.complete(msg(long_prompt.strip()), params)

    def test_whitespace_token_counts(self):
        assert whitespace_tokens("one two  three") == 3
        assert whitespace_tokens("") == 0


class TestCompleteN:
    def test_results_in_index_order(self, params):
        backend = MockBackend(lambda p, i: f"answer-{i}")
        completions = backend.complete_n(msg("q"), params, 8)
        assert [c.text for c in completions] == [f"answer-{i}" for i in range(8)]

    def test_n_one_equals_complete(self, params):
        backend = MockBackend(lambda p, i: f"answer-{i}")
        assert backend.complete_n(msg("q"), params, 1)[0] == backend.complete(msg("q"), params)

    def test_concurrency_bounded_by_max_in_flight(self, params):
        backend = MockBackend(lambda p, i: "ok", max_in_flight=4, latency_s=0.01)
        backend.complete_n(msg("q"), params, 20)
        assert backend.peak_concurrency <= 4
        assert backend.call_count == 20

    def test_partial_failure_reports_indices(self, params):
        def script(prompt, i):
            if i in (2, 5):
                raise RuntimeError("boom")
            return "ok"
        backend = MockBackend(script)
        with pytest.raises(PartialFailure) as excinfo:
            backend.complete_n(msg("q"), params, 8)
        assert sorted(excinfo.value.failures) == [2, 5]
        assert sorted(excinfo.value.completions) == [0, 1, 3, 4, 6, 7]


class TestCacheKey:
    def test_distinct_per_sample_index(self, params):
        k0 = cache_key(msg("q"), params, 0, "m")
        k1 = cache_key(msg("q"), params, 1, "m")
        assert k0 != k1

    def test_stable_across_calls(self, params):
        assert cache_key(msg("q"), params, 0, "m") == cache_key(msg("q"), params, 0, "m")


class TestCachingBackend:
    def test_read_through_caches_one_network_call(self, params, tmp_path):
        inner = MockBackend(lambda p, i: "cached answer")
        backend = CachingBackend(inner, tmp_path, "read_through", "m")
        first = backend.complete(msg("q"), params)
        second = backend.complete(msg("q"), params)
        assert first == second
        assert inner.call_count == 1

    def test_replay_never_calls_network(self, params, tmp_path):
        inner = MockBackend(lambda p, i: "recorded")
        CachingBackend(inner, tmp_path, "record", "m").complete(msg("q"), params)
        replay = CachingBackend(None, tmp_path, "replay", "m")
        assert replay.complete(msg("q"), params).text == "recorded"
        assert inner.call_count == 1

    def test_replay_miss_raises(self, params, tmp_path):
        replay = CachingBackend(None, tmp_path, "replay", "m")
        with pytest.raises(CacheMiss):
            replay.complete(msg("never recorded"), params)

    def test_entry_file_schema(self, params, tmp_path):
        inner = MockBackend(lambda p, i: "text")
        CachingBackend(inner, tmp_path, "record", "model-x").complete(msg("q"), params)
        files = list(tmp_path.glob("*.json"))
        assert len(files) == 1
        key = cache_key(msg("q"), params, 0, "model-x")
        assert files[0].name == f"{key}.json"
        entry = json.loads(files[0].read_text())
        assert set(entry) == {"request", "completion", "recorded_at"}
        assert entry["request"]["model_id"] == "model-x"
        assert entry["completion"]["text"] == "text"

    def test_record_overwrites_single_entry(self, params, tmp_path):
        inner = MockBackend(lambda p, i: "v")
        backend = CachingBackend(inner, tmp_path, "record", "m")
        backend.complete(msg("q"), params)
        backend.complete(msg("q"), params)
        assert len(list(tmp_path.glob("*.json"))) == 1


class FakeSession:
    """Stand-in for requests.Session driven by a list of canned outcomes."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.requests = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append({"url": url, "body": json, "headers": headers})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


class FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text or (json.dumps(payload) if payload else "")

    def json(self):
        return self._payload


def chat_payload(text, prompt_tokens=3, completion_tokens=5):
    return {
        "choices": [{"message": {"content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


def http_backend(session, **overrides):
    config = BackendConfig(endpoint_url="http://llm.test/v1", model_id="m",
                           max_retries=overrides.pop("max_retries", 2), **overrides)
    return HttpBackend(config, session=session)


class TestHttpBackend:
    def test_parses_usage_fields(self, params):
        session = FakeSession([FakeResponse(200, chat_payload("hi", 3, 5))])
        completion = http_backend(session).complete(msg("q"), params)
        assert completion == Completion(text="hi", prompt_tokens=3, completion_tokens=5)
        body = session.requests[0]["body"]
        assert body["model"] == "m"
        assert body["messages"] == [{"role": "user", "content": "q"}]
        assert session.requests[0]["url"] == "http://llm.test/v1/chat/completions"

    def test_retries_then_succeeds(self, params, monkeypatch):
        monkeypatch.setattr("s2distill.backend.time.sleep", lambda s: None)
        session = FakeSession([
            FakeResponse(503, text="unavailable"),
            requests.ConnectionError("reset"),
            FakeResponse(200, chat_payload("ok")),
        ])
        assert http_backend(session).complete(msg("q"), params).text == "ok"
        assert len(session.requests) == 3

    def test_retry_exhausted(self, params, monkeypatch):
        monkeypatch.setattr("s2distill.backend.time.sleep", lambda s: None)
        session = FakeSession([FakeResponse(503)] * 3)
        with pytest.raises(RetryExhausted):
            http_backend(session).complete(msg("q"), params)

    def test_context_overflow_detected(self, params):
        session = FakeSession([
            FakeResponse(400, text="this model's maximum context length is 4096 tokens"),
        ])
        with pytest.raises(ContextOverflow):
            http_backend(session).complete(msg("q"), params)

    def test_auth_header_from_env(self, params, monkeypatch):
        monkeypatch.setenv("MY_TOKEN_VAR", "sekrit")
        session = FakeSession([FakeResponse(200, chat_payload("ok"))])
        http_backend(session, auth_env_var="MY_TOKEN_VAR").complete(msg("q"), params)
        assert session.requests[0]["headers"]["Authorization"] == "Bearer sekrit"
