import base64
import json
import threading

import httpx
import pytest

from star.providers import (
    CountingView,
    FailingProvider,
    HttpProvider,
    MockProvider,
    ProviderError,
    PromptText,
    ScriptExhaustedError,
    image_digest,
)

PROMPT = PromptText("system text", "Goal: toast", (("Goal: tea", "```foon\nU\n```"),))


def test_render_is_stable():
    assert PROMPT.render() == PROMPT.render()
    assert PROMPT.render().index("[system]") < PROMPT.render().index("[example request]") < \
        PROMPT.render().index("[user]")


def test_mock_first_match_wins():
    mock = MockProvider([("Goal: toast", "A"), ("Goal", "B")])
    assert mock.complete(PROMPT) == "A"
    assert mock.complete(PromptText("s", "Goal: soup")) == "B"
    assert mock.call_count == 2
    with pytest.raises(ScriptExhaustedError):
        mock.complete(PromptText("s", "nothing here"))
    assert mock.call_count == 3


def test_mock_consume_scripts_sequences():
    mock = MockProvider([("Goal", "first"), ("Goal", "second")], consume=True)
    assert [mock.complete(PROMPT), mock.complete(PROMPT)] == ["first", "second"]
    with pytest.raises(ScriptExhaustedError):
        mock.complete(PROMPT)


def test_mock_sees_image_digests():
    png = b"\x89PNG fake"
    mock = MockProvider([(f"[image sha256:{image_digest(png)}]", "seen")])
    assert mock.complete(PROMPT, images=[png]) == "seen"


def test_mock_from_file(tmp_path):
    p = tmp_path / "script.json"
    p.write_text(json.dumps({"consume": True, "script": [{"match": "toast", "response": "ok"}]}))
    mock = MockProvider.from_file(p)
    assert mock.consume and mock.complete(PROMPT) == "ok"


def test_call_count_is_thread_safe():
    mock = MockProvider([("", "x")])
    threads = [threading.Thread(target=lambda: [mock.complete(PROMPT) for _ in range(50)]) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert mock.call_count == 400


def test_failing_provider_counts_calls():
    p = FailingProvider()
    with pytest.raises(ProviderError):
        p.complete(PROMPT)
    assert p.call_count == 1


def test_http_request_shape():
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "hello"}}]})

    client = httpx.Client(transport=httpx.MockTransport(handler))
    p = HttpProvider("http://fm.test/v1/chat/completions", "k3y", "m", client=client)
    assert p.complete(PROMPT, max_tokens=99, images=[b"png"]) == "hello"
    body = seen["body"]
    assert seen["auth"] == "Bearer k3y"
    assert body["temperature"] == 0 and body["max_tokens"] == 99 and body["model"] == "m"
    roles = [m["role"] for m in body["messages"]]
    assert roles == ["system", "user", "assistant", "user"]
    last = body["messages"][-1]["content"]
    assert last[0] == {"type": "text", "text": "Goal: toast"}
    assert last[1]["image_url"]["url"] == "data:image/png;base64," + base64.b64encode(b"png").decode()


@pytest.mark.parametrize("response", [
    httpx.Response(500, text="boom"),
    httpx.Response(200, json={"choices": []}),
    httpx.Response(200, text="not json"),
])
def test_http_errors_become_provider_errors(response):
    client = httpx.Client(transport=httpx.MockTransport(lambda r: response))
    p = HttpProvider("http://fm.test", "", client=client)
    with pytest.raises(ProviderError):
        p.complete(PROMPT)


def test_http_needs_endpoint(monkeypatch):
    monkeypatch.delenv("STAR_FM_ENDPOINT", raising=False)
    with pytest.raises(ProviderError, match="STAR_FM_ENDPOINT"):
        HttpProvider()


def test_counting_view_keeps_separate_counts():
    shared = MockProvider([("", "ok")])
    a, b = CountingView(shared), CountingView(shared)
    a.complete(PromptText("s", "x"))
    b.complete(PromptText("s", "y"))
    b.complete(PromptText("s", "z"))
    assert (a.call_count, b.call_count, shared.call_count) == (1, 2, 3)
