import json
import random
import string
import threading

import httpx
import pytest

from effectcast.errors import ConfigError, UpstreamError
from effectcast.llm import CacheKey, ChatClient, ChatRequest, ResponseCache, cache_key


def _ok_payload(text: str) -> dict:
    return {"choices": [{"message": {"content": text}}]}


def scripted_transport(script: list[tuple[int, dict]], calls: list[dict] | None = None) -> httpx.MockTransport:
    """Pop one (status, payload) per request; repeats the last entry forever."""

    def handler(request: httpx.Request) -> httpx.Response:
        if calls is not None:
            calls.append(json.loads(request.content))
        status, payload = script.pop(0) if len(script) > 1 else script[0]
        return httpx.Response(status, json=payload)

    return httpx.MockTransport(handler)


def make_client(script, tmp_path=None, calls=None, **kwargs) -> ChatClient:
    return ChatClient(
        base_url="http://mock.invalid/v1",
        cache_dir=tmp_path,
        transport=scripted_transport(script, calls),
        sleep=lambda _s: None,
        **kwargs,
    )


REQ = ChatRequest(model_id="m1", prompt="Does X affect Y?", temperature=0.0, max_output_tokens=64)


class TestCacheKey:
    def test_deterministic(self):
        assert cache_key(REQ) == cache_key(ChatRequest("m1", "Does X affect Y?", 0.0, 64))

    def test_fields_change_key(self):
        base = cache_key(REQ)
        assert cache_key(ChatRequest("m1", "Does X affect Y?", 0.5, 64)) != base
        assert cache_key(ChatRequest("m2", "Does X affect Y?", 0.0, 64)) != base
        assert cache_key(ChatRequest("m1", "Does X affect Z?", 0.0, 64)) != base
        assert cache_key(ChatRequest("m1", "Does X affect Y?", 0.0, 65)) != base

    def test_tag_does_not_change_key(self):
        tagged = ChatRequest("m1", "Does X affect Y?", 0.0, 64, request_tag="stage-a")
        assert cache_key(tagged) == cache_key(REQ)

    def test_no_collisions_over_10k_prompts(self):
        rng = random.Random(0)
        keys = set()
        for _ in range(10_000):
            prompt = "".join(rng.choices(string.ascii_letters + string.digits + " ", k=40))
            keys.add(cache_key(ChatRequest("m", prompt)).digest)
        assert len(keys) == 10_000


class TestResponseCache:
    def test_round_trip_byte_exact(self, tmp_path):
        cache = ResponseCache(tmp_path)
        key = CacheKey("ab" * 32)
        text = 'exact\nbytes\twith unicode é and {"json": true}'
        cache.store(key, REQ, text)
        assert cache.load(key) == text

    def test_missing_key(self, tmp_path):
        assert ResponseCache(tmp_path).load(CacheKey("00" * 32)) is None


class TestComplete:
    def test_cache_hit_skips_network(self, tmp_path):
        client = make_client([(200, _ok_payload("answer"))], tmp_path / "cache")
        assert client.complete(REQ) == "answer"
        assert client.complete(REQ) == "answer"
        assert client.stats.network_calls == 1
        assert client.stats.cache_hits == 1

    def test_refresh_bypasses_cache_read(self, tmp_path):
        script = [(200, _ok_payload("first")), (200, _ok_payload("second"))]
        client = make_client(script, tmp_path / "cache")
        assert client.complete(REQ) == "first"
        assert client.complete(REQ, refresh=True) == "second"
        # the refreshed response replaced the cached one
        assert client.complete(REQ) == "second"
        assert client.stats.network_calls == 2

    def test_retry_after_429(self, tmp_path):
        script = [(429, {"error": "slow down"}), (200, _ok_payload("ok"))]
        client = make_client(script, tmp_path / "cache")
        assert client.complete(REQ) == "ok"
        assert client.stats.retries == 1

    def test_retry_after_503(self):
        script = [(503, {}), (503, {}), (200, _ok_payload("ok"))]
        client = make_client(script)
        assert client.complete(REQ) == "ok"
        assert client.stats.retries == 2

    def test_permanent_4xx_not_retried(self):
        script = [(401, {"error": "bad key"}), (200, _ok_payload("never"))]
        client = make_client(script)
        with pytest.raises(UpstreamError) as err:
            client.complete(REQ)
        assert err.value.status == 401
        assert client.stats.network_calls == 1

    def test_retry_exhaustion_surfaces_last_error(self):
        client = make_client([(503, {"error": "down"})], max_retries=2)
        with pytest.raises(UpstreamError) as err:
            client.complete(REQ)
        assert err.value.status == 503
        assert client.stats.network_calls == 3

    def test_malformed_payload(self):
        client = make_client([(200, {"unexpected": "shape"})])
        with pytest.raises(UpstreamError, match="malformed provider payload"):
            client.complete(REQ)

    def test_empty_prompt_rejected(self):
        with pytest.raises(ConfigError):
            ChatRequest(model_id="m", prompt="")

    def test_backoff_schedule(self):
        delays: list[float] = []
        client = ChatClient(
            base_url="http://mock.invalid",
            transport=scripted_transport([(503, {})]),
            sleep=delays.append,
            max_retries=3,
            backoff_base=0.5,
            backoff_cap=1.5,
        )
        with pytest.raises(UpstreamError):
            client.complete(REQ)
        assert delays == [0.5, 1.0, 1.5]

    def test_bearer_header_sent(self, tmp_path):
        calls: list[dict] = []
        seen_headers = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen_headers.update(request.headers)
            calls.append(json.loads(request.content))
            return httpx.Response(200, json=_ok_payload("x"))

        client = ChatClient(
            base_url="http://mock.invalid/v1",
            api_key="sekret",
            transport=httpx.MockTransport(handler),
        )
        client.complete(REQ)
        assert seen_headers["authorization"] == "Bearer sekret"
        assert calls[0]["messages"] == [{"role": "user", "content": REQ.prompt}]
        assert calls[0]["model"] == "m1"


class TestAgainstRealServer:
    def test_429_then_200_on_the_wire(self, chat_server, tmp_path):
        chat_server.plan_faults([429])
        client = ChatClient(
            base_url=chat_server.base_url,
            cache_dir=tmp_path / "cache",
            sleep=lambda _s: None,
        )
        req = ChatRequest(
            model_id="mock",
            prompt="You are a model that predicts the effect size in social science ... QUERY: x",
        )
        text = client.complete(req)
        assert json.loads(text)["Hedges_g"] is not None
        assert client.stats.retries == 1
        assert chat_server.n_requests == 2

    def test_in_flight_cap_respected(self, chat_server):
        chat_server.box.delay_s = 0.05
        client = ChatClient(base_url=chat_server.base_url, max_in_flight=2, sleep=lambda _s: None)
        prompts = [
            f"You are a model that predicts the effect size in social science ... QUERY: {i}"
            for i in range(8)
        ]
        threads = [
            threading.Thread(target=client.complete, args=(ChatRequest("mock", p),))
            for p in prompts
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert chat_server.n_requests == 8
        assert chat_server.max_concurrent <= 2
