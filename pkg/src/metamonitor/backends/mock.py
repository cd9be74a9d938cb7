"""Deterministic in-process backends for tests and offline runs."""

from __future__ import annotations

import hashlib
import json
import math
import threading
from pathlib import Path
from typing import Callable, Mapping, Sequence

from ..errors import CapabilityMissing, DimMismatch, UnscriptedRequest
from ..trajectory import RetrievedDocument
from .base import ChatRequest, ChatResponse, FinishReason, SearchResultSet


def step_key(request: ChatRequest) -> str:
    """Script key of a policy request: ``<first user message>#<step number>``.

    The step number counts assistant turns already in the context, so the key
    is a pure function of the request and safe under concurrent trajectories.
    """
    first_user = next((m.content for m in request.messages if m.role == "user"), "")
    step = sum(1 for m in request.messages if m.role == "assistant") + 1
    return f"{first_user}#{step}"


def fingerprint_key(request: ChatRequest) -> str:
    return request.fingerprint()


class ScriptedChat:
    """Replays canned responses looked up by a key derived from the request."""

    def __init__(self, table: Mapping[str, ChatResponse],
                 key: Callable[[ChatRequest], str] = fingerprint_key,
                 supports_logprobs: bool = True):
        self.table = dict(table)
        self.key = key
        self.supports_logprobs = supports_logprobs
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    def chat(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
        if request.want_logprobs and not self.supports_logprobs:
            raise CapabilityMissing("scripted backend does not expose token logprobs")
        k = self.key(request)
        if k not in self.table:
            raise UnscriptedRequest(f"no scripted response for key {k[:120]!r}")
        return self.table[k]

    @classmethod
    def from_file(cls, path: str | Path, key: str = "step") -> "ScriptedChat":
        """Load a script file ``{"responses": {key: {text, tokens?, token_logprobs?}}}``."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        table = {k: response_from_dict(v) for k, v in data["responses"].items()}
        key_fn = step_key if key == "step" else fingerprint_key
        return cls(table, key=key_fn, supports_logprobs=data.get("supports_logprobs", True))


class FunctionChat:
    """Chat backend wrapping a plain function; handy for critic and abstractor mocks."""

    def __init__(self, fn: Callable[[ChatRequest], str | ChatResponse]):
        self.fn = fn
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    def chat(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
        out = self.fn(request)
        return out if isinstance(out, ChatResponse) else ChatResponse(text=out)


def response_from_dict(d: Mapping) -> ChatResponse:
    lps = d.get("token_logprobs")
    toks = d.get("tokens")
    return ChatResponse(
        text=d["text"],
        token_logprobs=None if lps is None else tuple(
            tuple((str(t), float(lp)) for t, lp in pos) for pos in lps),
        tokens=None if toks is None else tuple(toks),
        finish_reason=FinishReason(d.get("finish_reason", "stop")),
    )


def response_to_dict(r: ChatResponse) -> dict:
    d: dict = {"text": r.text, "finish_reason": r.finish_reason.value}
    if r.token_logprobs is not None:
        d["token_logprobs"] = [[[t, lp] for t, lp in pos] for pos in r.token_logprobs]
    if r.tokens is not None:
        d["tokens"] = list(r.tokens)
    return d


class HashingEmbedder:
    """Signed feature hashing of character n-grams, L2-normalized."""

    def __init__(self, dim: int = 256, n: int = 3, seed: int = 0, max_chars: int | None = None):
        if dim < 1 or n < 1:
            raise ValueError("dim and n must be positive")
        self.dim = dim
        self.n = n
        self.seed = seed
        self.max_chars = max_chars
        self.model_id = f"hashing-{n}gram-{dim}d-seed{seed}"

    def _vector(self, text: str) -> list[float]:
        if not text:
            raise ValueError("cannot embed empty text")
        if self.max_chars is not None:
            text = text[: self.max_chars]
        padded = f" {text} "
        vec = [0.0] * self.dim
        key = self.seed.to_bytes(8, "little", signed=True)
        for i in range(max(1, len(padded) - self.n + 1)):
            gram = padded[i : i + self.n].encode("utf-8")
            h = hashlib.blake2b(gram, digest_size=8, key=key).digest()
            v = int.from_bytes(h, "little")
            vec[v % self.dim] += 1.0 if (v >> 63) & 1 == 0 else -1.0
        norm = math.sqrt(math.fsum(x * x for x in vec))
        if norm == 0.0:
            # Every n-gram cancelled out; fall back to a fixed axis.
            vec[0] = 1.0
            return vec
        return [x / norm for x in vec]

    def spec(self) -> dict:
        return {"kind": "hashing", "dim": self.dim, "n": self.n, "seed": self.seed,
                "max_chars": self.max_chars}

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed() needs at least one text")
        return [self._vector(t) for t in texts]


class TopicEmbedder:
    """Maps a text to the basis vector of the first listed keyword it contains.

    Texts that match no keyword fall back to a hashing embedding in the
    remaining dimensions. Gives exactly orthogonal groups for scenario tests.
    """

    def __init__(self, topics: Sequence[str], dim: int = 64, seed: int = 0):
        if len(topics) >= dim:
            raise ValueError("need more dimensions than topics")
        self.topics = list(topics)
        self.dim = dim
        self._fallback = HashingEmbedder(dim=dim - len(self.topics), seed=seed)
        self.seed = seed
        self.model_id = f"topic-{dim}d:" + ",".join(self.topics)

    def spec(self) -> dict:
        return {"kind": "topic", "topics": list(self.topics), "dim": self.dim, "seed": self.seed}

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed() needs at least one text")
        out = []
        for t in texts:
            vec = [0.0] * self.dim
            hit = next((i for i, kw in enumerate(self.topics) if kw in t), None)
            if hit is not None:
                vec[hit] = 1.0
            else:
                vec[len(self.topics):] = self._fallback.embed([t])[0]
            out.append(vec)
        return out


class TableEmbedder:
    """Looks embeddings up in a fixed text -> vector table."""

    def __init__(self, table: Mapping[str, Sequence[float]], model_id: str = "table"):
        self.table = {k: list(v) for k, v in table.items()}
        dims = {len(v) for v in self.table.values()}
        if len(dims) > 1:
            raise DimMismatch(f"table embeddings have mixed dims {sorted(dims)}")
        self.model_id = model_id

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed() needs at least one text")
        return [list(self.table[t]) for t in texts]


class InMemorySearch:
    """Closed-world search over a query -> documents mapping."""

    def __init__(self, corpus: Mapping[str, Sequence[RetrievedDocument]]):
        self.corpus = {q: tuple(docs) for q, docs in corpus.items()}

    def search(self, query_string: str, top_k: int = 5) -> SearchResultSet:
        if not query_string:
            raise ValueError("empty search query")
        docs = sorted(self.corpus.get(query_string, ()), key=lambda d: d.rank)[:top_k]
        return SearchResultSet(query_string, tuple(docs))
