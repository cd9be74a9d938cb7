"""Critic call for flagged sessions: render the prompt, parse ``(err, delta)``, fail open."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Sequence

from .backends.base import ChatBackend, ChatMessage, ChatRequest
from .memory import MemoryEntry, RetrievalResult, session_snapshot, snapshot_text
from .prompts import Templates, extract_json_object, render
from .trajectory import Critique, Session

logger = logging.getLogger(__name__)

STRICT_REMINDER = (
    "Your previous reply could not be parsed. Reply with ONLY a fenced JSON block of the form\n"
    '```json\n{"error": false, "suggestion": "", "rationale": ""}\n```'
)

_TRUE = {"true", "yes", "1", "error"}
_FALSE = {"false", "no", "0", "none", "ok"}


@dataclass
class CriticEvents:
    """Counters and messages about degraded critic calls, for audit."""

    parse_failures: int = 0
    backend_failures: int = 0
    log: list[str] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, kind: str, message: str) -> None:
        with self._lock:
            if kind == "parse":
                self.parse_failures += 1
            else:
                self.backend_failures += 1
            self.log.append(message)


def _as_bool(value: Any) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)) and value in (0, 1):
        return bool(value)
    if isinstance(value, str):
        v = value.strip().lower()
        if v in _TRUE:
            return True
        if v in _FALSE:
            return False
    return None


def parse_verdict(text: str, raw: str | None = None) -> Critique | None:
    """Critique from a model reply, or None when no verdict can be read."""
    obj = extract_json_object(text)
    if obj is None or "error" not in obj:
        return None
    err = _as_bool(obj["error"])
    if err is None:
        return None
    suggestion = obj.get("suggestion")
    rationale = obj.get("rationale")
    return Critique.from_verdict(
        err,
        suggestion if isinstance(suggestion, str) else None,
        rationale if isinstance(rationale, str) and rationale else None,
        raw=text if raw is None else raw,
    )


def _format_hits(hits: Sequence[tuple[MemoryEntry, float]], failure: bool) -> str:
    if not hits:
        return "(none)"
    blocks = []
    for n, (entry, sim) in enumerate(hits, start=1):
        a = entry.abstraction
        if failure:
            body = (f"Corrective insight: {a.insight}\nError pattern: {a.behavior_pattern}\n"
                    f"Evidence: {a.evidence}")
        else:
            body = f"Behavior: {a.behavior_pattern}\nEvidence: {a.evidence}\nInsight: {a.insight}"
        blocks.append(f"[{n}] (similarity {sim:.3f}) context: {entry.history_summary}\n"
                      f"step: {entry.session_snapshot.get('action', '')}\n{body}")
    return "\n\n".join(blocks)


def render_critic_prompt(template: str, session: Session, hits: RetrievalResult,
                         history_digest: str, query_text: str) -> str:
    return render(
        template,
        session=snapshot_text(session_snapshot(query_text, session)),
        history_digest=history_digest,
        success_experiences=_format_hits(hits.success_hits, failure=False),
        failure_experiences=_format_hits(hits.failure_hits, failure=True),
    )


def criticize(session: Session, hits: RetrievalResult, history_digest: str, backend: ChatBackend,
              *, query_text: str, templates: Templates | None = None,
              events: CriticEvents | None = None, max_tokens: int = 1024) -> Critique:
    """Ask the critic about a flagged session.

    An unreadable reply gets one retry with a format reminder; if that also
    fails, or the backend is down, the result is a no-error critique so the
    agent keeps running without intervention.
    """
    templates = templates or Templates.defaults()
    events = events if events is not None else CriticEvents()
    prompt = render_critic_prompt(templates.critic, session, hits, history_digest, query_text)
    messages: list[ChatMessage] = [ChatMessage("user", prompt)]
    raw = ""
    for attempt in range(2):
        try:
            raw = str(backend.chat(ChatRequest(tuple(messages), max_tokens=max_tokens)).text)
        except Exception as exc:  # noqa: BLE001 - the monitor must never take the agent down
            events.record("backend", f"CriticBackendFailure step={session.index}: {exc}")
            logger.warning("critic backend failed at step %d: %s", session.index, exc)
            return Critique(0, None, None, raw)
        verdict = parse_verdict(raw)
        if verdict is not None:
            return verdict
        if attempt == 0:
            messages += [ChatMessage("assistant", raw), ChatMessage("user", STRICT_REMINDER)]
    events.record("parse", f"CriticParseFailure step={session.index}")
    logger.warning("CriticParseFailure at step %d; continuing without intervention", session.index)
    return Critique(0, None, None, raw)
