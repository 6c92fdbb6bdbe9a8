"""Completion providers: the boundary to foundation models.

Every provider takes a :class:`PromptText` (plus optional PNG image payloads)
and returns response text. ``call_count`` is incremented once per call and
is safe under concurrent use.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from typing import Sequence

import httpx


class ProviderError(RuntimeError):
    pass


class ScriptExhaustedError(ProviderError):
    pass


@dataclass(frozen=True)
class PromptText:
    system: str
    user: str
    few_shot_examples: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    def render(self) -> str:
        """Single-string form used for logging and mock matching."""
        parts = [f"[system]\n{self.system}"]
        for request, answer in self.few_shot_examples:
            parts.append(f"[example request]\n{request}\n[example answer]\n{answer}")
        parts.append(f"[user]\n{self.user}")
        return "\n\n".join(parts)

    def with_feedback(self, feedback: str) -> PromptText:
        return PromptText(self.system, self.user + "\n\n" + feedback, self.few_shot_examples)


def image_digest(png: bytes) -> str:
    return hashlib.sha256(png).hexdigest()


class CompletionProvider:
    def __init__(self) -> None:
        self._count = 0
        self._count_lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self._count

    def complete(self, prompt: PromptText, max_tokens: int = 1024, images: Sequence[bytes] = ()) -> str:
        with self._count_lock:
            self._count += 1
        return self._complete(prompt, max_tokens, list(images))

    def _complete(self, prompt: PromptText, max_tokens: int, images: list[bytes]) -> str:
        raise NotImplementedError


class CountingView(CompletionProvider):
    """Forwards to a shared provider but keeps its own call count, so
    concurrent callers can each measure their own usage."""

    def __init__(self, inner: CompletionProvider) -> None:
        super().__init__()
        self.inner = inner

    def _complete(self, prompt: PromptText, max_tokens: int, images: list[bytes]) -> str:
        return self.inner.complete(prompt, max_tokens, images)


class MockProvider(CompletionProvider):
    """Scripted provider: an ordered list of (matcher substring, response).

    The first entry whose matcher occurs in the rendered prompt wins; image
    payloads are visible to matchers as ``[image sha256:<hex>]`` lines. With
    ``consume=True`` each entry answers at most once, which scripts sequences
    such as invalid-then-valid. No match is an error.
    """

    def __init__(self, script: Sequence[tuple[str, str]], consume: bool = False):
        super().__init__()
        self.script = [(m, r) for m, r in script]
        self.consume = consume
        self._used: set[int] = set()
        self._lock = threading.Lock()
        self.history: list[str] = []

    @classmethod
    def from_file(cls, path) -> MockProvider:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if isinstance(data, dict):
            consume = bool(data.get("consume", False))
            entries = data["script"]
        else:
            consume, entries = False, data
        script = [(e["match"], e["response"]) if isinstance(e, dict) else (e[0], e[1]) for e in entries]
        return cls(script, consume=consume)

    def _complete(self, prompt, max_tokens, images):
        text = prompt.render() + "".join(f"\n[image sha256:{image_digest(i)}]" for i in images)
        with self._lock:
            self.history.append(text)
            for idx, (matcher, response) in enumerate(self.script):
                if self.consume and idx in self._used:
                    continue
                if matcher in text:
                    if self.consume:
                        self._used.add(idx)
                    return response
        raise ScriptExhaustedError("mock script has no entry matching the prompt")


class FailingProvider(CompletionProvider):
    """Raises on every call; stands in for an unreachable endpoint."""

    def _complete(self, prompt, max_tokens, images):
        raise ProviderError("provider unavailable")


class HttpProvider(CompletionProvider):
    """OpenAI-compatible chat-completions client (temperature pinned to 0)."""

    def __init__(
        self,
        endpoint: str | None = None,
        key: str | None = None,
        model: str | None = None,
        timeout: float = 120.0,
        client: httpx.Client | None = None,
    ):
        super().__init__()
        self.endpoint = endpoint or os.environ.get("STAR_FM_ENDPOINT", "")
        self.key = key if key is not None else os.environ.get("STAR_FM_KEY", "")
        self.model = model or os.environ.get("STAR_FM_MODEL", "gpt-4")
        if not self.endpoint:
            raise ProviderError("STAR_FM_ENDPOINT is not set")
        self._client = client or httpx.Client(timeout=timeout)

    def request_body(self, prompt: PromptText, max_tokens: int, images: Sequence[bytes] = ()) -> dict:
        messages = [{"role": "system", "content": prompt.system}]
        for request, answer in prompt.few_shot_examples:
            messages.append({"role": "user", "content": request})
            messages.append({"role": "assistant", "content": answer})
        if images:
            content: list[dict] = [{"type": "text", "text": prompt.user}]
            for png in images:
                url = "data:image/png;base64," + base64.b64encode(png).decode("ascii")
                content.append({"type": "image_url", "image_url": {"url": url}})
            messages.append({"role": "user", "content": content})
        else:
            messages.append({"role": "user", "content": prompt.user})
        return {"model": self.model, "messages": messages, "temperature": 0, "max_tokens": max_tokens}

    def _complete(self, prompt, max_tokens, images):
        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        try:
            resp = self._client.post(self.endpoint, json=self.request_body(prompt, max_tokens, images), headers=headers)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"chat-completions request failed: {exc}") from exc
