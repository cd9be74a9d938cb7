"""HTTP clients for OpenAI-compatible chat-completion and embedding endpoints."""

from __future__ import annotations

import os
import threading
from typing import Any, Callable, Sequence

import httpx

from ..errors import BackendUnavailable, CapabilityMissing, DimMismatch
from .base import ChatRequest, ChatResponse, FinishReason, RetryPolicy, with_retries

_FINISH = {"stop": FinishReason.STOP, "length": FinishReason.LENGTH}


def _headers(key_env: str) -> dict[str, str]:
    key = os.environ.get(key_env, "")
    return {"Authorization": f"Bearer {key}"} if key else {}


class OpenAIChat:
    def __init__(self, base_url: str, model: str, key_env: str = "CHAT_API_KEY",
                 retry: RetryPolicy = RetryPolicy(), max_concurrency: int = 8,
                 client: httpx.Client | None = None, sleep: Callable[[float], None] | None = None):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.key_env = key_env
        self.retry = retry
        self.client = client or httpx.Client(timeout=retry.timeout)
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._sleep = sleep

    def _payload(self, request: ChatRequest) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.want_logprobs:
            payload["logprobs"] = True
            payload["top_logprobs"] = request.top_logprobs
        return payload

    def _post(self, payload: dict[str, Any]) -> dict[str, Any]:
        with self._slots:
            resp = self.client.post(self.url, json=payload, headers=_headers(self.key_env))
        if resp.status_code >= 500 or resp.status_code == 429:
            resp.raise_for_status()
        if resp.status_code >= 400:
            body = resp.text[:500]
            if "logprob" in body.lower():
                raise CapabilityMissing(f"endpoint rejected logprobs: {body}")
            # Client errors will not go away on retry.
            raise BackendUnavailable(f"chat endpoint answered {resp.status_code}: {body}")
        return resp.json()

    def chat(self, request: ChatRequest) -> ChatResponse:
        kwargs = {"sleep": self._sleep} if self._sleep else {}
        data = with_retries(lambda: self._post(self._payload(request)), self.retry, "chat",
                            retry_on=(httpx.TransportError, httpx.HTTPStatusError), **kwargs)
        choice = data["choices"][0]
        text = choice["message"].get("content") or ""
        finish = _FINISH.get(choice.get("finish_reason") or "stop", FinishReason.ERROR)
        if not request.want_logprobs:
            return ChatResponse(text=text, finish_reason=finish)
        content = (choice.get("logprobs") or {}).get("content")
        if not content:
            raise CapabilityMissing(f"endpoint {self.url} returned no token logprobs")
        tokens = tuple(item["token"] for item in content)
        alternatives = tuple(
            tuple((alt["token"], float(alt["logprob"])) for alt in item.get("top_logprobs") or [])
            or ((item["token"], float(item["logprob"])),)
            for item in content
        )
        return ChatResponse(text=text, token_logprobs=alternatives, tokens=tokens, finish_reason=finish)


class OpenAIEmbedder:
    def __init__(self, base_url: str, model: str, key_env: str = "EMBED_API_KEY",
                 retry: RetryPolicy = RetryPolicy(), max_chars: int = 32000, batch_size: int = 64,
                 client: httpx.Client | None = None):
        self.url = base_url.rstrip("/") + "/embeddings"
        self.model_id = model
        self.key_env = key_env
        self.retry = retry
        self.max_chars = max_chars
        self.batch_size = batch_size
        self.client = client or httpx.Client(timeout=retry.timeout)
        self.dim: int | None = None
        self.truncated: list[int] = []
        self.base_url = base_url

    def spec(self) -> dict:
        return {"kind": "openai", "base_url": self.base_url, "model": self.model_id,
                "key_env": self.key_env, "max_chars": self.max_chars}

    def _post(self, batch: list[str]) -> list[list[float]]:
        resp = self.client.post(self.url, json={"model": self.model_id, "input": batch},
                                headers=_headers(self.key_env))
        resp.raise_for_status()
        rows = sorted(resp.json()["data"], key=lambda r: r["index"])
        return [list(map(float, r["embedding"])) for r in rows]

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts or any(not t for t in texts):
            raise ValueError("embed() needs a non-empty list of non-empty texts")
        clipped = []
        for t in texts:
            if len(t) > self.max_chars:
                self.truncated.append(len(t))
            clipped.append(t[: self.max_chars])
        out: list[list[float]] = []
        for start in range(0, len(clipped), self.batch_size):
            batch = clipped[start:start + self.batch_size]
            out.extend(with_retries(lambda: self._post(batch), self.retry, "embed",
                                    retry_on=(httpx.TransportError, httpx.HTTPStatusError)))
        for v in out:
            if self.dim is None:
                self.dim = len(v)
            elif len(v) != self.dim:
                raise DimMismatch(f"embedding dim drifted from {self.dim} to {len(v)}")
        return out
