"""Request/response types and protocols for chat, embedding and search backends."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol, Sequence, TypeVar

from ..errors import BackendUnavailable
from ..trajectory import RetrievedDocument, TokenAlternatives

logger = logging.getLogger(__name__)

T = TypeVar("T")


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    want_logprobs: bool = False
    top_logprobs: int = 0
    temperature: float = 0.0
    max_tokens: int = 2048

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("chat request needs at least one message")
        if self.want_logprobs and self.top_logprobs < 1:
            raise ValueError("top_logprobs must be >= 1 when logprobs are requested")

    def fingerprint(self) -> str:
        payload = {
            "messages": [[m.role, m.content] for m in self.messages],
            "want_logprobs": self.want_logprobs,
        }
        blob = json.dumps(payload, ensure_ascii=False, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    token_logprobs: tuple[TokenAlternatives, ...] | None = None
    # Sampled token strings aligned with token_logprobs; used to locate the reasoning segment.
    tokens: tuple[str, ...] | None = None
    finish_reason: FinishReason = FinishReason.STOP


@dataclass(frozen=True)
class SearchResultSet:
    query_string: str
    documents: tuple[RetrievedDocument, ...] = field(default_factory=tuple)


class ChatBackend(Protocol):
    def chat(self, request: ChatRequest) -> ChatResponse: ...


class EmbeddingBackend(Protocol):
    model_id: str

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


class SearchBackend(Protocol):
    def search(self, query_string: str, top_k: int = 5) -> SearchResultSet: ...


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 1.0
    timeout: float = 60.0

    def delays(self) -> list[float]:
        return [self.base_delay * 2 ** i for i in range(self.attempts - 1)]


def with_retries(call: Callable[[], T], policy: RetryPolicy, what: str,
                 retry_on: tuple[type[BaseException], ...],
                 sleep: Callable[[float], None] = time.sleep) -> T:
    """Run ``call`` with exponential backoff; raise BackendUnavailable when attempts run out."""
    delays = policy.delays()
    last: BaseException | None = None
    for attempt in range(policy.attempts):
        try:
            return call()
        except retry_on as exc:
            last = exc
            logger.warning("%s attempt %d/%d failed: %s", what, attempt + 1, policy.attempts, exc)
            if attempt < len(delays):
                sleep(delays[attempt])
    raise BackendUnavailable(f"{what} failed after {policy.attempts} attempts: {last}") from last
