"""Dual-pool experience memory: success exemplars and failure patterns.

Each entry stores a session snapshot, a summary of the steps before it, an
LLM-written abstraction of the behaviour, and its outcome label. The entry
embedding is ``enc(snapshot) + enc(history_summary)``; a live session is
queried with ``enc(snapshot)`` alone.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from functools import cmp_to_key, partial
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np

from .backends.base import ChatBackend, ChatMessage, ChatRequest, EmbeddingBackend
from .errors import (
    AbstractionFailed,
    BackendUnavailable,
    DimMismatch,
    LabelRequired,
    ParseError,
    SchemaViolation,
    UnsupportedVersion,
)
from .prompts import Templates, extract_json_object, render
from .trajectory import Critique, OutcomeLabel, Session

logger = logging.getLogger(__name__)

STORE_SCHEMA_VERSION = "1"
DEFAULT_TAU_DUP = 0.95
DEFAULT_K_PER_POOL = 2
NO_PRIOR_STEPS = "no prior steps"
OBSERVATION_CHARS = 1000
# Similarities closer than this count as tied and are ordered by entry_id.
SIM_TIE_EPS = 1e-12


class Origin(str, Enum):
    OFFLINE = "offline"
    ONLINE = "online"


class InsertResult(str, Enum):
    INSERTED = "inserted"
    DISCARDED_DUPLICATE = "discarded_duplicate"


@dataclass(frozen=True)
class Abstraction:
    behavior_pattern: str
    evidence: str
    insight: str

    def __post_init__(self) -> None:
        if not (self.behavior_pattern.strip() or self.evidence.strip() or self.insight.strip()):
            raise SchemaViolation("abstraction must not be empty")

    @property
    def text(self) -> str:
        return (f"Behavior: {self.behavior_pattern}\nEvidence: {self.evidence}\n"
                f"Insight: {self.insight}")


@dataclass(frozen=True)
class Provenance:
    trajectory_id: str
    session_index: int
    created_at: str
    origin: Origin
    template_id: str


@dataclass(frozen=True)
class MemoryEntry:
    entry_id: str
    session_snapshot: dict[str, str]
    history_summary: str
    abstraction: Abstraction
    label: OutcomeLabel
    embedding: tuple[float, ...]
    provenance: Provenance


@dataclass(frozen=True)
class RetrievalResult:
    success_hits: tuple[tuple[MemoryEntry, float], ...] = ()
    failure_hits: tuple[tuple[MemoryEntry, float], ...] = ()


# ---------------------------------------------------------------------------
# Snapshots and summaries
# ---------------------------------------------------------------------------

def session_snapshot(query_text: str, session: Session) -> dict[str, str]:
    return {
        "query": query_text,
        "reasoning": session.reasoning_text,
        "action": session.action.describe(),
        "observation": session.tool_observation[:OBSERVATION_CHARS],
    }


def snapshot_text(snapshot: dict[str, str]) -> str:
    return (f"Query: {snapshot['query']}\nReasoning: {snapshot['reasoning']}\n"
            f"Action: {snapshot['action']}\nObservation: {snapshot['observation']}")


def history_digest(history: Sequence[Session], obs_chars: int = 160) -> str:
    """Deterministic one-line-per-step digest of earlier sessions."""
    if not history:
        return NO_PRIOR_STEPS
    lines = []
    for s in history:
        obs = " ".join(s.tool_observation.split())[:obs_chars]
        lines.append(f"Step {s.index}: {s.action.describe()} -> {obs}" if obs
                     else f"Step {s.index}: {s.action.describe()}")
    return "\n".join(lines)


class AbstractionBackend(Protocol):
    def summarize(self, query_text: str, history: Sequence[Session]) -> str: ...

    def abstract(self, snapshot: dict[str, str], history_summary: str,
                 label: OutcomeLabel) -> Abstraction: ...


def template_id(label: OutcomeLabel) -> str:
    return "success_abstraction" if label is OutcomeLabel.SUCCESS else "failure_abstraction"


class LLMAbstractor:
    """Summaries and label-conditioned abstractions written by a chat model."""

    def __init__(self, backend: ChatBackend, templates: Templates | None = None, attempts: int = 2,
                 max_tokens: int = 1024):
        self.backend = backend
        self.templates = templates or Templates.defaults()
        self.attempts = attempts
        self.max_tokens = max_tokens

    def _ask(self, prompt: str) -> str:
        req = ChatRequest((ChatMessage("user", prompt),), max_tokens=self.max_tokens)
        return self.backend.chat(req).text

    def summarize(self, query_text: str, history: Sequence[Session]) -> str:
        if not history:
            return NO_PRIOR_STEPS
        prompt = render(self.templates.history_summary, query=query_text, steps=history_digest(history))
        for attempt in range(self.attempts):
            try:
                text = self._ask(prompt).strip()
            except BackendUnavailable as exc:
                logger.warning("history summary attempt %d failed: %s", attempt + 1, exc)
                continue
            if text:
                return text
        raise AbstractionFailed("history summarization failed")

    def abstract(self, snapshot: dict[str, str], history_summary: str,
                 label: OutcomeLabel) -> Abstraction:
        template = getattr(self.templates, template_id(label))
        prompt = render(template, session=snapshot_text(snapshot), history_summary=history_summary)
        for attempt in range(self.attempts):
            try:
                obj = extract_json_object(self._ask(prompt))
            except BackendUnavailable as exc:
                logger.warning("abstraction attempt %d failed: %s", attempt + 1, exc)
                continue
            if obj is None:
                continue
            try:
                return Abstraction(str(obj.get("behavior_pattern", "")), str(obj.get("evidence", "")),
                                   str(obj.get("insight", "")))
            except SchemaViolation:
                continue
        raise AbstractionFailed(f"no usable abstraction after {self.attempts} attempts")


class TemplateAbstractor:
    """Model-free abstractor: fills fixed phrases from the session itself. Deterministic."""

    def summarize(self, query_text: str, history: Sequence[Session]) -> str:
        return history_digest(history)

    def abstract(self, snapshot: dict[str, str], history_summary: str,
                 label: OutcomeLabel) -> Abstraction:
        if label is OutcomeLabel.SUCCESS:
            return Abstraction(f"Effective step: {snapshot['action']}",
                               snapshot["reasoning"][:200] or "(no reasoning)",
                               "Keep grounding conclusions in retrieved evidence.")
        return Abstraction(f"Faulty step: {snapshot['action']}",
                           snapshot["reasoning"][:200] or "(no reasoning)",
                           "Verify candidate answers against independent sources before concluding.")


def make_entry_id(trajectory_id: str, session_index: int, label: OutcomeLabel, origin: Origin) -> str:
    key = f"{trajectory_id}\x1f{session_index}\x1f{label.value}\x1f{origin.value}"
    return hashlib.sha1(key.encode("utf-8")).hexdigest()[:16]


def build_entry(session: Session, history: Sequence[Session], label: OutcomeLabel | None,
                abstractor: AbstractionBackend, embedder: EmbeddingBackend, *, query_text: str,
                trajectory_id: str, origin: Origin = Origin.OFFLINE,
                created_at: str | None = None) -> MemoryEntry:
    if label is None or not isinstance(label, OutcomeLabel):
        raise LabelRequired("memory entries need a Success or Failure label")
    snapshot = session_snapshot(query_text, session)
    summary = abstractor.summarize(query_text, history) if history else NO_PRIOR_STEPS
    abstraction = abstractor.abstract(snapshot, summary, label)
    enc_s, enc_h = embedder.embed([snapshot_text(snapshot), summary])
    if len(enc_s) != len(enc_h):
        raise DimMismatch("embedder returned vectors of different dims")
    embedding = tuple(x + y for x, y in zip(enc_s, enc_h))
    return MemoryEntry(
        entry_id=make_entry_id(trajectory_id, session.index, label, origin),
        session_snapshot=snapshot,
        history_summary=summary,
        abstraction=abstraction,
        label=label,
        embedding=embedding,
        provenance=Provenance(trajectory_id, session.index,
                              created_at or datetime.now(timezone.utc).isoformat(), origin,
                              template_id(label)),
    )


def label_online(session: Session, fast_flagged: bool, critique: Critique | None) -> OutcomeLabel:
    """Online label: failure only when the slow monitor ran and confirmed an error."""
    if fast_flagged and critique is not None and critique.err == 1:
        return OutcomeLabel.FAILURE
    return OutcomeLabel.SUCCESS


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------

def _unit(v: Sequence[float]) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(a)
    return a / n if n > 0 else np.zeros_like(a)


@dataclass(frozen=True)
class _Pool:
    entries: tuple[MemoryEntry, ...]
    units: np.ndarray  # (n, dim) unit-normalized embeddings

    def similarities(self, query_unit: np.ndarray) -> np.ndarray:
        if not self.entries:
            return np.zeros(0)
        return np.clip(self.units @ query_unit, -1.0, 1.0)

    def with_entry(self, entry: MemoryEntry, unit: np.ndarray) -> "_Pool":
        return _Pool(self.entries + (entry,), np.vstack([self.units, unit[None, :]]))


class MemoryStore:
    """Success pool and failure pool with similarity-based deduplication.

    Readers take an immutable snapshot of a pool; writers are serialized and
    swap in a new pool object, so a retrieval never observes a half-done insert.
    """

    def __init__(self, embed_dim: int, tau_dup: float = DEFAULT_TAU_DUP, embedding_model_id: str = ""):
        if embed_dim < 1:
            raise ValueError("embed_dim must be positive")
        if not 0.0 < tau_dup <= 1.0:
            raise ValueError(f"tau_dup must lie in (0, 1], got {tau_dup}")
        self.embed_dim = embed_dim
        self.tau_dup = tau_dup
        self.embedding_model_id = embedding_model_id
        empty = _Pool((), np.zeros((0, embed_dim)))
        self._pools = {OutcomeLabel.SUCCESS: empty, OutcomeLabel.FAILURE: empty}
        self._labels_by_id: dict[str, OutcomeLabel] = {}
        self._write_lock = threading.Lock()

    @property
    def success_pool(self) -> tuple[MemoryEntry, ...]:
        return self._pools[OutcomeLabel.SUCCESS].entries

    @property
    def failure_pool(self) -> tuple[MemoryEntry, ...]:
        return self._pools[OutcomeLabel.FAILURE].entries

    def __len__(self) -> int:
        return len(self.success_pool) + len(self.failure_pool)

    def entries(self) -> list[MemoryEntry]:
        return list(self.success_pool) + list(self.failure_pool)

    def _check_dim(self, vec: Sequence[float]) -> None:
        if len(vec) != self.embed_dim:
            raise DimMismatch(f"embedding dim {len(vec)} does not match store dim {self.embed_dim}")

    def insert(self, entry: MemoryEntry) -> InsertResult:
        self._check_dim(entry.embedding)
        if not isinstance(entry.label, OutcomeLabel):
            raise LabelRequired("entry has no outcome label")
        unit = _unit(entry.embedding)
        with self._write_lock:
            known = self._labels_by_id.get(entry.entry_id)
            if known is not None and known is not entry.label:
                raise SchemaViolation(f"entry id {entry.entry_id} already stored in the other pool")
            if known is not None:
                return InsertResult.DISCARDED_DUPLICATE
            pool = self._pools[entry.label]
            sims = pool.similarities(unit)
            best = float(sims.max()) if sims.size else -1.0
            if best >= self.tau_dup:
                return InsertResult.DISCARDED_DUPLICATE
            self._pools[entry.label] = pool.with_entry(entry, unit)
            self._labels_by_id[entry.entry_id] = entry.label
            return InsertResult.INSERTED

    def _restore(self, entry: MemoryEntry) -> None:
        pool = self._pools[entry.label]
        self._pools[entry.label] = pool.with_entry(entry, _unit(entry.embedding))
        self._labels_by_id[entry.entry_id] = entry.label

    def top_k(self, vector: Sequence[float], k: int) -> RetrievalResult:
        self._check_dim(vector)
        if k < 1:
            raise ValueError("k must be positive")
        q = _unit(vector)
        hits = []
        for label in (OutcomeLabel.SUCCESS, OutcomeLabel.FAILURE):
            pool = self._pools[label]
            sims = pool.similarities(q).tolist()
            order = sorted(range(len(sims)), key=cmp_to_key(partial(_rank_cmp, sims, pool.entries)))[:k]
            hits.append(tuple((pool.entries[i], sims[i]) for i in order))
        return RetrievalResult(hits[0], hits[1])


def _rank_cmp(sims: list[float], entries: Sequence[MemoryEntry], i: int, j: int) -> int:
    if abs(sims[i] - sims[j]) > SIM_TIE_EPS:
        return -1 if sims[i] > sims[j] else 1
    a, b = entries[i].entry_id, entries[j].entry_id
    return (a > b) - (a < b)


def retrieve(store: MemoryStore, session: Session, embedder: EmbeddingBackend,
             k_per_pool: int = DEFAULT_K_PER_POOL, *, query_text: str) -> RetrievalResult:
    """Top-k entries per pool by cosine similarity to ``enc(snapshot)`` of the live session."""
    if len(store) == 0:
        return RetrievalResult()
    (vec,) = embedder.embed([snapshot_text(session_snapshot(query_text, session))])
    return store.top_k(vec, k_per_pool)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def entry_to_record(e: MemoryEntry) -> dict[str, Any]:
    p = e.provenance
    return {
        "entry_id": e.entry_id,
        "label": e.label.value,
        "session_snapshot": e.session_snapshot,
        "history_summary": e.history_summary,
        "abstraction": {"behavior_pattern": e.abstraction.behavior_pattern,
                        "evidence": e.abstraction.evidence, "insight": e.abstraction.insight},
        "embedding": list(e.embedding),
        "provenance": {"trajectory_id": p.trajectory_id, "session_index": p.session_index,
                       "created_at": p.created_at, "origin": p.origin.value,
                       "template_id": p.template_id},
    }


def entry_from_record(r: dict[str, Any]) -> MemoryEntry:
    a, p = r["abstraction"], r["provenance"]
    embedding = tuple(float(x) for x in r["embedding"])
    if not all(math.isfinite(x) for x in embedding):
        raise SchemaViolation(f"entry {r['entry_id']} has non-finite embedding values")
    return MemoryEntry(
        entry_id=str(r["entry_id"]),
        session_snapshot={str(k): str(v) for k, v in r["session_snapshot"].items()},
        history_summary=str(r["history_summary"]),
        abstraction=Abstraction(str(a["behavior_pattern"]), str(a["evidence"]), str(a["insight"])),
        label=OutcomeLabel(int(r["label"])),
        embedding=embedding,
        provenance=Provenance(str(p["trajectory_id"]), int(p["session_index"]), str(p["created_at"]),
                              Origin(p["origin"]), str(p["template_id"])),
    )


def dumps_store(store: MemoryStore) -> str:
    with store._write_lock:
        entries = store.entries()
        header = {"schema_version": STORE_SCHEMA_VERSION, "embed_dim": store.embed_dim,
                  "tau_dup": store.tau_dup, "embedding_model_id": store.embedding_model_id,
                  "entry_count": len(entries)}
        lines = [json.dumps(header, ensure_ascii=False)]
        lines.extend(json.dumps(entry_to_record(e), ensure_ascii=False) for e in entries)
    return "\n".join(lines) + "\n"


def save_store(store: MemoryStore, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_store(store), encoding="utf-8")
    os.replace(tmp, path)


def loads_store(text: str) -> MemoryStore:
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise ParseError("empty memory store file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad header ({exc.msg})", line=1) from None
    if header.get("schema_version") != STORE_SCHEMA_VERSION:
        raise UnsupportedVersion(f"memory store schema {header.get('schema_version')!r} not supported")
    store = MemoryStore(int(header["embed_dim"]), float(header["tau_dup"]),
                        str(header.get("embedding_model_id", "")))
    seen: set[str] = set()
    for n, line in enumerate(lines[1:], start=2):
        try:
            entry = entry_from_record(json.loads(line))
        except SchemaViolation:
            raise
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"corrupt memory record: {exc!r}", line=n) from None
        if entry.entry_id in seen:
            raise SchemaViolation(f"duplicate entry id {entry.entry_id} (line {n})")
        if len(entry.embedding) != store.embed_dim:
            raise SchemaViolation(f"entry {entry.entry_id} has dim {len(entry.embedding)} (line {n})")
        seen.add(entry.entry_id)
        store._restore(entry)
    expected = header.get("entry_count")
    if expected is not None and int(expected) != len(seen):
        raise ParseError(f"header announces {expected} entries, found {len(seen)}")
    return store


def load_store(path: str | Path) -> MemoryStore:
    return loads_store(Path(path).read_text(encoding="utf-8"))
