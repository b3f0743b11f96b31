import json
import threading

import pytest

from gmnerkit.gateway import (
    LIVE,
    RECORD,
    REPLAY,
    CacheConflictError,
    CacheMissError,
    ChatRequest,
    GatewayConfig,
    GatewayError,
    HttpFailure,
    LlmGateway,
    PayloadError,
    TranscriptCache,
    image_part,
    text_part,
    user_message,
)


def chat_response(text):
    return json.dumps({"choices": [{"message": {"content": text}}]}).encode()


def make_request(text="hello"):
    return ChatRequest(model="m1", messages=(user_message(text_part(text)),))


def echo_transport(url, body, headers, timeout):
    payload = json.loads(body)
    text = payload["messages"][0]["content"][0]["text"]
    return 200, chat_response(f"echo:{text}")


def gateway(tmp_path, mode=REPLAY, transport=None, retries=3, cache=True):
    return LlmGateway(
        config=GatewayConfig(endpoint="http://example.invalid/v1/chat",
                             mode=mode, retries=retries, backoff=0.0),
        cache=TranscriptCache(tmp_path / "cache.jsonl") if cache else None,
        transport=transport,
    )


class TestRequestKey:
    def test_stable_across_field_order(self):
        a = ChatRequest(model="m", messages=({"role": "user", "content": [
            {"type": "text", "text": "hi"}]},), temperature=0.0, max_tokens=64)
        b = ChatRequest(max_tokens=64, temperature=0.0, model="m", messages=(
            {"content": [{"text": "hi", "type": "text"}], "role": "user"},))
        assert a.request_key == b.request_key

    def test_sensitive_to_content(self):
        assert make_request("a").request_key != make_request("b").request_key
        base = make_request()
        hot = ChatRequest(model="m1", messages=base.messages, temperature=0.7)
        assert base.request_key != hot.request_key

    def test_build_request_carries_gateway_sampling_settings(self, tmp_path):
        gw = LlmGateway(
            config=GatewayConfig(mode=REPLAY, temperature=0.7, max_tokens=256),
            cache=TranscriptCache(tmp_path / "c.jsonl"),
        )
        req = gw.build_request("m", (user_message(text_part("hi")),))
        assert req.temperature == 0.7
        assert req.max_tokens == 256
        default = gateway(tmp_path).build_request("m", (user_message(text_part("hi")),))
        assert req.request_key != default.request_key

    def test_image_parts_keyed_by_path(self):
        a = ChatRequest(model="m", messages=(
            user_message(text_part("t"), image_part("img/a.png")),))
        b = ChatRequest(model="m", messages=(
            user_message(text_part("t"), image_part("img/b.png")),))
        assert a.request_key != b.request_key


class TestReplay:
    def test_replay_returns_exact_stored_string(self, tmp_path):
        gw = gateway(tmp_path, mode=RECORD, transport=echo_transport)
        req = make_request("alpha")
        recorded = gw.complete(req)
        assert recorded == "echo:alpha"
        replay = gateway(tmp_path, mode=REPLAY)
        assert replay.complete(req) == "echo:alpha"
        assert replay.metrics["live_calls"] == 0

    def test_replay_unknown_key_names_it(self, tmp_path):
        gw = gateway(tmp_path, mode=REPLAY)
        req = make_request("never recorded")
        with pytest.raises(CacheMissError) as err:
            gw.complete(req)
        assert req.request_key in str(err.value)

    def test_replay_without_cache_rejected(self, tmp_path):
        gw = gateway(tmp_path, mode=REPLAY, cache=False)
        with pytest.raises(GatewayError):
            gw.complete(make_request())


class TestRecord:
    def test_record_is_idempotent(self, tmp_path):
        calls = []

        def transport(url, body, headers, timeout):
            calls.append(1)
            return echo_transport(url, body, headers, timeout)

        gw = gateway(tmp_path, mode=RECORD, transport=transport)
        req = make_request("beta")
        first = gw.complete(req)
        second = gw.complete(req)
        assert first == second
        assert len(calls) == 1  # second hit came from the cache

    def test_cache_file_appends_one_line_per_key(self, tmp_path):
        gw = gateway(tmp_path, mode=RECORD, transport=echo_transport)
        gw.complete(make_request("a"))
        gw.complete(make_request("b"))
        lines = (tmp_path / "cache.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2
        keys = {json.loads(line)["request_key"] for line in lines}
        assert len(keys) == 2

    def test_conflicting_response_rejected(self, tmp_path):
        cache = TranscriptCache(tmp_path / "cache.jsonl")
        cache.put("k1", "first")
        with pytest.raises(CacheConflictError):
            cache.put("k1", "second")


class TestRetries:
    def test_two_transient_429s_then_success(self, tmp_path):
        state = {"n": 0}

        def flaky(url, body, headers, timeout):
            state["n"] += 1
            if state["n"] <= 2:
                return 429, b"rate limited"
            return echo_transport(url, body, headers, timeout)

        gw = gateway(tmp_path, mode=LIVE, transport=flaky)
        assert gw.complete(make_request("gamma")) == "echo:gamma"
        assert gw.metrics["retries"] == 2

    def test_exhausted_retries_raise(self, tmp_path):
        def always_503(url, body, headers, timeout):
            return 503, b"unavailable"

        gw = gateway(tmp_path, mode=LIVE, transport=always_503, retries=2)
        with pytest.raises(HttpFailure) as err:
            gw.complete(make_request())
        assert "3 attempts" in str(err.value)

    def test_non_retryable_status_fails_fast(self, tmp_path):
        calls = []

        def bad_request(url, body, headers, timeout):
            calls.append(1)
            return 400, b"bad request"

        gw = gateway(tmp_path, mode=LIVE, transport=bad_request)
        with pytest.raises(HttpFailure):
            gw.complete(make_request())
        assert len(calls) == 1


class TestPayload:
    def test_unparseable_provider_payload(self, tmp_path):
        def garbage(url, body, headers, timeout):
            return 200, b"not json at all"

        gw = gateway(tmp_path, mode=LIVE, transport=garbage)
        with pytest.raises(PayloadError):
            gw.complete(make_request())

    def test_list_content_joined(self, tmp_path):
        def listy(url, body, headers, timeout):
            return 200, json.dumps({"choices": [{"message": {"content": [
                {"type": "text", "text": "a"}, {"type": "text", "text": "b"},
            ]}}]}).encode()

        gw = gateway(tmp_path, mode=LIVE, transport=listy)
        assert gw.complete(make_request()) == "ab"

    def test_temperature_defaults_to_zero(self):
        assert make_request().temperature == 0.0

    def test_live_without_endpoint_rejected(self, tmp_path):
        gw = LlmGateway(config=GatewayConfig(mode=LIVE),
                        cache=TranscriptCache(tmp_path / "c.jsonl"))
        with pytest.raises(GatewayError):
            gw.complete(make_request())

    def test_image_part_embedded_as_data_url(self, tmp_path):
        img = tmp_path / "x.png"
        img.write_bytes(b"tiny-image-bytes")
        seen = {}

        def capture(url, body, headers, timeout):
            seen["payload"] = json.loads(body)
            return 200, chat_response("ok")

        gw = gateway(tmp_path, mode=LIVE, transport=capture)
        gw.complete(ChatRequest(model="m", messages=(
            user_message(text_part("look"), image_part(str(img))),)))
        part = seen["payload"]["messages"][0]["content"][1]
        assert part["type"] == "image_url"
        assert part["image_url"]["url"].startswith("data:image/png;base64,")

    def test_oversized_image_rejected(self, tmp_path):
        img = tmp_path / "big.png"
        img.write_bytes(b"\x00" * (4 * 1024 * 1024 + 1))
        gw = gateway(tmp_path, mode=LIVE, transport=echo_transport)
        with pytest.raises(PayloadError) as err:
            gw.complete(ChatRequest(model="m", messages=(
                user_message(image_part(str(img))),)))
        assert "cap" in str(err.value)

    def test_wire_payload_shape(self, tmp_path):
        seen = {}

        def capture(url, body, headers, timeout):
            seen["payload"] = json.loads(body)
            return 200, chat_response("ok")

        gw = gateway(tmp_path, mode=LIVE, transport=capture)
        gw.complete(ChatRequest(model="m9", messages=(
            user_message(text_part("question")),), max_tokens=77))
        payload = seen["payload"]
        assert payload["model"] == "m9"
        assert payload["max_tokens"] == 77
        assert payload["temperature"] == 0.0
        assert payload["messages"][0]["content"][0] == {
            "type": "text", "text": "question"}


class TestConcurrency:
    def test_parallel_replay_is_safe(self, tmp_path):
        gw = gateway(tmp_path, mode=RECORD, transport=echo_transport)
        reqs = [make_request(f"msg{i}") for i in range(8)]
        for req in reqs:
            gw.complete(req)
        replay = gateway(tmp_path, mode=REPLAY)
        results = {}

        def worker(req):
            results[req.request_key] = replay.complete(req)

        threads = [threading.Thread(target=worker, args=(r,)) for r in reqs]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(results) == 8
        for req in reqs:
            assert results[req.request_key].startswith("echo:msg")
