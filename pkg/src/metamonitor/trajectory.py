"""Data model for queries, ReAct sessions and trajectories, plus the JSONL log format.

A trajectory log is UTF-8 text with one JSON record per line. Line 1 is a
header carrying the query and the outcome; every further line is one session.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

from .errors import EmptyTrajectory, ParseError, SchemaViolation

SCHEMA_VERSION = "1"

# One reasoning position: top-K (token, logprob) alternatives.
TokenAlternatives = tuple[tuple[str, float], ...]


class ActionKind(str, Enum):
    TOOL_CALL = "tool_call"
    TERMINATE = "terminate"


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    UNKNOWN = "unknown"


class Termination(str, Enum):
    ANSWERED = "answered"
    MAX_STEPS_EXCEEDED = "max_steps_exceeded"
    BACKEND_ERROR = "backend_error"
    ABORTED = "aborted"


class OutcomeLabel(int, Enum):
    SUCCESS = 1
    FAILURE = 0

    @classmethod
    def from_outcome(cls, outcome: Outcome) -> "OutcomeLabel":
        if outcome is Outcome.SUCCESS:
            return cls.SUCCESS
        if outcome is Outcome.FAILURE:
            return cls.FAILURE
        raise ValueError(f"outcome {outcome.value!r} has no binary label")


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.text:
            raise SchemaViolation("query text must be non-empty")


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    tool_name: str | None = None
    arguments: dict[str, Any] | None = None
    final_answer: str | None = None

    def __post_init__(self) -> None:
        if self.kind is ActionKind.TOOL_CALL:
            ok = self.tool_name is not None and self.arguments is not None and self.final_answer is None
        else:
            ok = self.tool_name is None and self.arguments is None and self.final_answer is not None
        if not ok:
            raise SchemaViolation(f"action fields inconsistent with kind {self.kind.value}")

    @classmethod
    def tool_call(cls, tool_name: str, arguments: dict[str, Any]) -> "Action":
        return cls(ActionKind.TOOL_CALL, tool_name=tool_name, arguments=dict(arguments))

    @classmethod
    def terminate(cls, final_answer: str) -> "Action":
        return cls(ActionKind.TERMINATE, final_answer=final_answer)

    def describe(self) -> str:
        """Compact one-line rendering used in prompts and snapshots."""
        if self.kind is ActionKind.TERMINATE:
            return f"answer: {self.final_answer}"
        args = json.dumps(self.arguments, ensure_ascii=False, sort_keys=True)
        return f"{self.tool_name}({args})"


@dataclass(frozen=True)
class RetrievedDocument:
    doc_id: str
    title: str
    content: str
    rank: int

    def __post_init__(self) -> None:
        if not self.content:
            raise SchemaViolation(f"document {self.doc_id!r} has empty content")
        if self.rank < 1:
            raise SchemaViolation(f"document {self.doc_id!r} has rank {self.rank} < 1")

    @property
    def text(self) -> str:
        return f"{self.title}\n{self.content}" if self.title else self.content


@dataclass(frozen=True)
class UncertaintySignals:
    se: float
    re: float
    re_hat: float
    epsilon: float
    anomaly: bool


DEFAULT_DELTA = (
    "A cognitive error was detected at this step; "
    "re-examine the latest evidence before proceeding."
)


@dataclass(frozen=True)
class Critique:
    """Critic verdict. ``err == 0`` carries no suggestion, ``err == 1`` always carries one."""

    err: int
    delta: str | None = None
    rationale: str | None = None
    raw: str = ""

    def __post_init__(self) -> None:
        if self.err not in (0, 1):
            raise SchemaViolation(f"critique err must be 0 or 1, got {self.err!r}")
        if self.err == 0 and self.delta is not None:
            raise SchemaViolation("critique with err=0 must not carry a suggestion")
        if self.err == 1 and not (self.delta and self.delta.strip()):
            raise SchemaViolation("critique with err=1 needs a non-empty suggestion")

    @classmethod
    def from_verdict(cls, error: bool, suggestion: str | None, rationale: str | None = None,
                     raw: str = "") -> "Critique":
        """Build a critique from possibly inconsistent parts, repairing them."""
        if not error:
            return cls(0, None, rationale, raw)
        text = (suggestion or "").strip()
        return cls(1, text or DEFAULT_DELTA, rationale, raw)


@dataclass(frozen=True)
class Session:
    index: int
    reasoning_text: str
    action: Action
    reasoning_token_logprobs: tuple[TokenAlternatives, ...] = ()
    documents: tuple[RetrievedDocument, ...] = ()
    tool_observation: str = ""
    signals: UncertaintySignals | None = None
    critique: Critique | None = None
    # Guidance injected into this step's prompt by the previous step's critique.
    injected_delta: str | None = None

    def __post_init__(self) -> None:
        if self.index < 1:
            raise SchemaViolation(f"session index {self.index} < 1")
        if self.documents and self.action.kind is not ActionKind.TOOL_CALL:
            raise SchemaViolation(f"session {self.index}: documents without a tool call")
        if self.signals is not None and not self.documents:
            raise SchemaViolation(f"session {self.index}: signals on a step without documents")
        ranks = sorted(d.rank for d in self.documents)
        if ranks != list(range(1, len(ranks) + 1)):
            raise SchemaViolation(f"session {self.index}: document ranks not contiguous from 1")


@dataclass(frozen=True)
class Trajectory:
    query: Query
    sessions: tuple[Session, ...] = ()
    outcome: Outcome = Outcome.UNKNOWN
    termination: Termination = Termination.ANSWERED
    run_info: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        validate_sessions(self.sessions)

    @property
    def final_answer(self) -> str | None:
        if self.sessions and self.sessions[-1].action.kind is ActionKind.TERMINATE:
            return self.sessions[-1].action.final_answer
        return None


def validate_sessions(sessions: Iterable[Session]) -> None:
    sessions = list(sessions)
    for expected, s in enumerate(sessions, start=1):
        if s.index != expected:
            raise SchemaViolation(f"session index {s.index} where {expected} was expected")
    terminal = [s.index for s in sessions if s.action.kind is ActionKind.TERMINATE]
    if len(terminal) > 1:
        raise SchemaViolation(f"multiple terminate sessions: {terminal}")
    if terminal and terminal[0] != len(sessions):
        raise SchemaViolation(f"terminate session {terminal[0]} is not last")


def propagate_label(trajectory: Trajectory, outcome: OutcomeLabel) -> list[tuple[Session, OutcomeLabel]]:
    """Pair every session of a trajectory with the trajectory-level label."""
    if not trajectory.sessions:
        raise EmptyTrajectory(f"trajectory for query {trajectory.query.id!r} has no sessions")
    return [(s, outcome) for s in trajectory.sessions]


# ---------------------------------------------------------------------------
# JSONL log format
# ---------------------------------------------------------------------------

def _dumps(record: dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, allow_nan=True)


def session_to_record(s: Session) -> dict[str, Any]:
    action: dict[str, Any] = {"kind": s.action.kind.value}
    if s.action.kind is ActionKind.TOOL_CALL:
        action["tool_name"] = s.action.tool_name
        action["arguments"] = s.action.arguments
    else:
        action["final_answer"] = s.action.final_answer
    rec: dict[str, Any] = {
        "index": s.index,
        "reasoning_text": s.reasoning_text,
        "reasoning_token_logprobs": [[[tok, lp] for tok, lp in pos] for pos in s.reasoning_token_logprobs],
        "action": action,
        "documents": [
            {"doc_id": d.doc_id, "title": d.title, "content": d.content, "rank": d.rank}
            for d in s.documents
        ],
        "tool_observation": s.tool_observation,
    }
    if s.signals is not None:
        sig = s.signals
        rec["signals"] = {"se": sig.se, "re": sig.re, "re_hat": sig.re_hat,
                          "epsilon": sig.epsilon, "anomaly": sig.anomaly}
    if s.critique is not None:
        c = s.critique
        rec["critique"] = {"err": c.err, "delta": c.delta, "rationale": c.rationale, "raw": c.raw}
    if s.injected_delta is not None:
        rec["injected_delta"] = s.injected_delta
    return rec


def session_from_record(rec: dict[str, Any]) -> Session:
    a = rec["action"]
    kind = ActionKind(a["kind"])
    if kind is ActionKind.TOOL_CALL:
        action = Action(kind, tool_name=a["tool_name"], arguments=dict(a["arguments"]))
    else:
        action = Action(kind, final_answer=a["final_answer"])
    logprobs = tuple(
        tuple((str(tok), float(lp)) for tok, lp in pos) for pos in rec["reasoning_token_logprobs"]
    )
    docs = tuple(
        RetrievedDocument(str(d["doc_id"]), str(d["title"]), str(d["content"]), int(d["rank"]))
        for d in rec["documents"]
    )
    signals = None
    if rec.get("signals") is not None:
        g = rec["signals"]
        signals = UncertaintySignals(float(g["se"]), float(g["re"]), float(g["re_hat"]),
                                     float(g["epsilon"]), bool(g["anomaly"]))
    critique = None
    if rec.get("critique") is not None:
        c = rec["critique"]
        critique = Critique(int(c["err"]), c.get("delta"), c.get("rationale"), c.get("raw", ""))
    return Session(
        index=int(rec["index"]),
        reasoning_text=str(rec["reasoning_text"]),
        action=action,
        reasoning_token_logprobs=logprobs,
        documents=docs,
        tool_observation=str(rec["tool_observation"]),
        signals=signals,
        critique=critique,
        injected_delta=rec.get("injected_delta"),
    )


def serialize_trajectory(trajectory: Trajectory) -> str:
    header = {
        "schema_version": SCHEMA_VERSION,
        "query_id": trajectory.query.id,
        "query_text": trajectory.query.text,
        "query_metadata": trajectory.query.metadata,
        "outcome": trajectory.outcome.value,
        "termination": trajectory.termination.value,
        "run_config": trajectory.run_info,
    }
    lines = [_dumps(header)]
    lines.extend(_dumps(session_to_record(s)) for s in trajectory.sessions)
    return "\n".join(lines) + "\n"


def deserialize_trajectory(text: str) -> Trajectory:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty trajectory log", line=1)
    records = []
    for n, line in enumerate(lines, start=1):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed record ({exc.msg})", line=n) from None
        if not isinstance(rec, dict):
            raise ParseError("record is not an object", line=n)
        records.append(rec)

    header = records[0]
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaViolation(f"unsupported schema_version {header.get('schema_version')!r}")
    try:
        query = Query(str(header["query_id"]), str(header["query_text"]),
                      dict(header.get("query_metadata") or {}))
        outcome = Outcome(header["outcome"])
        termination = Termination(header["termination"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad header field: {exc}", line=1) from None

    sessions = []
    for n, rec in enumerate(records[1:], start=2):
        try:
            sessions.append(session_from_record(rec))
        except SchemaViolation:
            raise
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"bad session record: {exc!r}", line=n) from None
    return Trajectory(query, tuple(sessions), outcome, termination,
                      dict(header.get("run_config") or {}))
