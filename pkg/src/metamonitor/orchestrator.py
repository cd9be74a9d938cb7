"""ReAct loop with the fast consistency monitor and the slow experience-driven monitor.

Per step: build the prompt (plus any pending guidance), generate reasoning and
an action, run the tool, and, on retrieval steps, compute SE/RE/epsilon. An
anomalous step is sent to the critic together with experiences retrieved from
memory; a confirmed error turns into guidance for the next step only.
"""

from __future__ import annotations

import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from .backends.base import (
    ChatBackend,
    ChatMessage,
    ChatRequest,
    ChatResponse,
    EmbeddingBackend,
    SearchBackend,
)
from .calibration import DEFAULT_K, CalibrationModel
from .critic import CriticEvents, criticize
from .errors import ConfigError, MonitorError
from .memory import (
    AbstractionBackend,
    InsertResult,
    MemoryStore,
    Origin,
    RetrievalResult,
    build_entry,
    history_digest,
    label_online,
    retrieve,
)
from .prompts import Templates, render
from .signals import DEFAULT_D_MERGE, DEFAULT_TOP_LOGPROBS, ClusterParams, compute_signals
from .trajectory import (
    Action,
    ActionKind,
    Outcome,
    Query,
    Session,
    Termination,
    TokenAlternatives,
    Trajectory,
    serialize_trajectory,
)

logger = logging.getLogger(__name__)

SEARCH_TOOL = "search"
TOOL_ERROR = "TOOL_ERROR: "
MONITOR_ROLE = "system"

_TOOL_OPEN, _TOOL_CLOSE = "<tool_call>", "</tool_call>"
_ANSWER_OPEN, _ANSWER_CLOSE = "<answer>", "</answer>"


@dataclass(frozen=True)
class RunConfig:
    max_steps: int = 20
    k_per_pool: int = 2
    fast_monitor_enabled: bool = True
    slow_monitor_enabled: bool = True
    online_memory_enabled: bool = False
    anomaly_k: float = DEFAULT_K
    doc_top_k: int = 5
    top_logprobs: int = DEFAULT_TOP_LOGPROBS
    d_merge: float = DEFAULT_D_MERGE
    cluster_mass: str = "count"
    injection_template: str = "[Metacognitive guidance] {delta}"
    temperature: float = 0.0
    max_tokens: int = 2048
    # Allow one extra step when the last budgeted step produced guidance.
    grace_step_on_final_anomaly: bool = False

    def __post_init__(self) -> None:
        problems = []
        if self.max_steps < 1:
            problems.append("max_steps must be >= 1")
        if self.k_per_pool < 1:
            problems.append("k_per_pool must be >= 1")
        if self.anomaly_k <= 0:
            problems.append("anomaly_k must be > 0")
        if self.doc_top_k < 1:
            problems.append("doc_top_k must be >= 1")
        if self.top_logprobs < 1:
            problems.append("top_logprobs must be >= 1")
        if "{delta}" not in self.injection_template:
            problems.append("injection_template lacks the {delta} slot")
        if problems:
            raise ConfigError(problems)

    @property
    def cluster_params(self) -> ClusterParams:
        return ClusterParams(self.d_merge, self.cluster_mass)


@dataclass
class Deps:
    policy: ChatBackend
    embedder: EmbeddingBackend
    search: SearchBackend
    calibration: CalibrationModel | None = None
    memory: MemoryStore | None = None
    critic: ChatBackend | None = None
    abstractor: AbstractionBackend | None = None
    templates: Templates = field(default_factory=Templates.defaults)
    critic_events: CriticEvents = field(default_factory=CriticEvents)
    judge: Callable[[Query, str | None], Outcome] | None = None


@dataclass(frozen=True)
class StepOutcome:
    session: Session
    injected_delta: str | None
    terminal: bool
    # Guidance produced by this step's critique, for the next step's prompt.
    next_delta: str | None = None
    critic_called: bool = False


class StepFailed(MonitorError):
    """The policy backend could not produce a step."""


# ---------------------------------------------------------------------------
# Policy output parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParsedTurn:
    reasoning_text: str
    reasoning_end: int
    action: Action


def parse_policy_output(text: str) -> ParsedTurn:
    """Split a policy turn into reasoning and action.

    The first ``<tool_call>`` or ``<answer>`` marker ends the reasoning
    segment. A turn with no marker is read as a final answer.
    """
    tool_at = text.find(_TOOL_OPEN)
    answer_at = text.find(_ANSWER_OPEN)
    marks = [m for m in (tool_at, answer_at) if m >= 0]
    if not marks:
        return ParsedTurn(text.strip(), len(text), Action.terminate(text.strip()))
    at = min(marks)
    reasoning = text[:at].strip()
    if at == answer_at:
        body = text[at + len(_ANSWER_OPEN):]
        body = body.split(_ANSWER_CLOSE, 1)[0]
        return ParsedTurn(reasoning, at, Action.terminate(body.strip()))
    body = text[at + len(_TOOL_OPEN):].split(_TOOL_CLOSE, 1)[0].strip()
    try:
        call = json.loads(body)
        name = call["name"]
        args = call.get("arguments", {})
        if not isinstance(name, str) or not isinstance(args, dict):
            raise TypeError("bad tool call shape")
    except (json.JSONDecodeError, KeyError, TypeError):
        return ParsedTurn(reasoning, at, Action.tool_call("unparsed", {"raw": body}))
    return ParsedTurn(reasoning, at, Action.tool_call(name, args))


def reasoning_positions(response: ChatResponse, reasoning_end: int) -> tuple[TokenAlternatives, ...]:
    """Logprob positions that belong to the reasoning segment (before the action marker)."""
    lps = response.token_logprobs or ()
    if response.tokens is None:
        return tuple(lps)
    out = []
    offset = 0
    for tok, alts in zip(response.tokens, lps):
        if offset >= reasoning_end:
            break
        out.append(alts)
        offset += len(tok)
    return tuple(out)


def render_action(action: Action) -> str:
    if action.kind is ActionKind.TERMINATE:
        return f"{_ANSWER_OPEN}{action.final_answer}{_ANSWER_CLOSE}"
    call = {"name": action.tool_name, "arguments": action.arguments}
    return f"{_TOOL_OPEN}{json.dumps(call, ensure_ascii=False)}{_TOOL_CLOSE}"


def build_messages(query: Query, history: Sequence[Session], pending_delta: str | None,
                   templates: Templates, injection_template: str) -> tuple[ChatMessage, ...]:
    msgs = [ChatMessage("system", templates.policy_system), ChatMessage("user", query.text)]
    for s in history:
        assistant = f"{s.reasoning_text}\n{render_action(s.action)}" if s.reasoning_text \
            else render_action(s.action)
        msgs.append(ChatMessage("assistant", assistant))
        if s.action.kind is ActionKind.TOOL_CALL:
            msgs.append(ChatMessage("user", f"Observation:\n{s.tool_observation}"))
    if pending_delta:
        msgs.append(ChatMessage(MONITOR_ROLE, render(injection_template, delta=pending_delta)))
    return tuple(msgs)


def format_documents(docs) -> str:
    if not docs:
        return "No results found."
    return "\n\n".join(f"[{d.rank}] {d.title}\n{d.content}" for d in docs)


def execute_tool(action: Action, search: SearchBackend, top_k: int):
    """Run a tool call; failures come back as ``TOOL_ERROR`` observations."""
    if action.tool_name != SEARCH_TOOL:
        return (), f"{TOOL_ERROR}unknown tool {action.tool_name!r}"
    query = action.arguments.get("query") if action.arguments else None
    if not isinstance(query, str) or not query.strip():
        return (), f"{TOOL_ERROR}search needs a non-empty 'query' argument"
    try:
        result = search.search(query, top_k)
    except Exception as exc:  # noqa: BLE001 - tool failures are observations
        return (), f"{TOOL_ERROR}{type(exc).__name__}: {exc}"
    docs = tuple(result.documents)[:top_k]
    return docs, format_documents(docs)


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------

def run_step(query: Query, history: Sequence[Session], pending_delta: str | None, deps: Deps,
             cfg: RunConfig, *, budget: int | None = None) -> StepOutcome:
    budget = cfg.max_steps if budget is None else budget
    index = len(history) + 1
    if index > budget:
        raise ValueError(f"step {index} exceeds the budget of {budget}")

    request = ChatRequest(
        build_messages(query, history, pending_delta, deps.templates, cfg.injection_template),
        want_logprobs=True, top_logprobs=cfg.top_logprobs,
        temperature=cfg.temperature, max_tokens=cfg.max_tokens,
    )
    try:
        response = deps.policy.chat(request)
    except Exception as exc:  # noqa: BLE001 - any policy failure ends the trajectory
        raise StepFailed(f"policy failed at step {index}: {exc}") from exc

    turn = parse_policy_output(response.text)
    logprobs = reasoning_positions(response, turn.reasoning_end)
    documents: tuple = ()
    observation = ""
    if turn.action.kind is ActionKind.TOOL_CALL:
        documents, observation = execute_tool(turn.action, deps.search, cfg.doc_top_k)

    session = Session(index=index, reasoning_text=turn.reasoning_text, action=turn.action,
                      reasoning_token_logprobs=logprobs, documents=documents,
                      tool_observation=observation, injected_delta=pending_delta or None)

    signals = None
    if cfg.fast_monitor_enabled and documents:
        if not logprobs:
            logger.warning("step %d: no reasoning logprobs, fast monitor skipped", index)
        else:
            try:
                signals = compute_signals(session, deps.embedder,
                                          deps.calibration.with_k(cfg.anomaly_k), cfg.cluster_params)
            except MonitorError as exc:
                logger.warning("step %d: fast monitor failed: %s", index, exc)

    critique = None
    critic_called = False
    if signals is not None and signals.anomaly and cfg.slow_monitor_enabled and deps.critic is not None:
        hits = RetrievalResult()
        if deps.memory is not None:
            try:
                hits = retrieve(deps.memory, session, deps.embedder, cfg.k_per_pool, query_text=query.text)
            except MonitorError as exc:
                logger.warning("step %d: memory retrieval failed: %s", index, exc)
        critique = criticize(session, hits, history_digest(history), deps.critic,
                             query_text=query.text, templates=deps.templates, events=deps.critic_events)
        critic_called = True

    session = Session(index=index, reasoning_text=session.reasoning_text, action=session.action,
                      reasoning_token_logprobs=logprobs, documents=documents,
                      tool_observation=observation, signals=signals, critique=critique,
                      injected_delta=session.injected_delta)

    if cfg.online_memory_enabled and deps.memory is not None and deps.abstractor is not None:
        _update_memory_online(query, history, session, deps)

    terminal = session.action.kind is ActionKind.TERMINATE or index >= budget
    next_delta = critique.delta if critique is not None and critique.err == 1 else None
    return StepOutcome(session, pending_delta, terminal, next_delta, critic_called)


def _update_memory_online(query: Query, history: Sequence[Session], session: Session, deps: Deps) -> None:
    flagged = session.signals is not None and session.signals.anomaly
    label = label_online(session, flagged, session.critique)
    try:
        entry = build_entry(session, history, label, deps.abstractor, deps.embedder,
                            query_text=query.text, trajectory_id=query.id, origin=Origin.ONLINE)
        result = deps.memory.insert(entry)
    except MonitorError as exc:
        logger.warning("step %d: online memory update skipped: %s", session.index, exc)
        return
    if result is InsertResult.DISCARDED_DUPLICATE:
        logger.debug("step %d: online memory entry discarded as duplicate", session.index)


def run_info(deps: Deps, cfg: RunConfig) -> dict[str, Any]:
    info: dict[str, Any] = asdict(cfg)
    cal = deps.calibration
    info["calibration"] = None if cal is None else {
        "a": cal.a, "b": cal.b, "sigma": cal.sigma, "k": cfg.anomaly_k, "n_fit": cal.n_fit}
    spec = getattr(deps.embedder, "spec", None)
    info["embedder"] = spec() if callable(spec) else {"kind": "unknown"}
    info["embedding_model_id"] = getattr(deps.embedder, "model_id", "")
    return info


def check_deps(deps: Deps, cfg: RunConfig) -> None:
    problems = []
    if cfg.fast_monitor_enabled and deps.calibration is None:
        problems.append("fast monitor enabled but no calibration model loaded")
    if cfg.online_memory_enabled and (deps.memory is None or deps.abstractor is None):
        problems.append("online memory needs both a memory store and an abstractor")
    if problems:
        raise ConfigError(problems)


def log_path(log_dir: str | Path, query_id: str) -> Path:
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", query_id) or "query"
    return Path(log_dir) / f"{safe}.jsonl"


def run_trajectory(query: Query, deps: Deps, cfg: RunConfig, log_dir: str | Path | None = None) -> Trajectory:
    """Run the loop to completion. Never raises on backend trouble; see ``termination``."""
    check_deps(deps, cfg)
    sessions: list[Session] = []
    pending: str | None = None
    budget = cfg.max_steps
    termination = Termination.MAX_STEPS_EXCEEDED
    while len(sessions) < budget:
        try:
            step = run_step(query, sessions, pending, deps, cfg, budget=budget)
        except StepFailed as exc:
            logger.error("query %s: %s", query.id, exc)
            termination = Termination.BACKEND_ERROR
            break
        sessions.append(step.session)
        pending = step.next_delta
        if step.session.action.kind is ActionKind.TERMINATE:
            termination = Termination.ANSWERED
            break
        if (step.terminal and pending and cfg.grace_step_on_final_anomaly
                and budget == cfg.max_steps):
            budget += 1

    trajectory = Trajectory(query, tuple(sessions), Outcome.UNKNOWN, termination, run_info(deps, cfg))
    if deps.judge is not None:
        outcome = deps.judge(query, trajectory.final_answer)
        trajectory = Trajectory(query, trajectory.sessions, outcome, termination, trajectory.run_info)
    if log_dir is not None:
        path = log_path(log_dir, query.id)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(serialize_trajectory(trajectory), encoding="utf-8")
    return trajectory


@dataclass
class BatchReport:
    n: int = 0
    answered: int = 0
    retrieval_steps: int = 0
    anomalies: int = 0
    critic_calls: int = 0
    total_steps: int = 0
    wall_time_s: float = 0.0
    failures: list[dict[str, str]] = field(default_factory=list)

    @property
    def anomaly_rate(self) -> float:
        return self.anomalies / self.retrieval_steps if self.retrieval_steps else 0.0

    @property
    def critic_trigger_rate(self) -> float:
        return self.critic_calls / self.retrieval_steps if self.retrieval_steps else 0.0

    @property
    def mean_steps(self) -> float:
        return self.total_steps / self.n if self.n else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {"n": self.n, "answered": self.answered, "retrieval_steps": self.retrieval_steps,
                "anomalies": self.anomalies, "critic_calls": self.critic_calls,
                "anomaly_rate": self.anomaly_rate, "critic_trigger_rate": self.critic_trigger_rate,
                "mean_steps": self.mean_steps, "wall_time_s": self.wall_time_s,
                "failures": self.failures}


def summarize(trajectories: Sequence[Trajectory]) -> BatchReport:
    report = BatchReport(n=len(trajectories))
    for t in trajectories:
        report.total_steps += len(t.sessions)
        if t.termination is Termination.ANSWERED:
            report.answered += 1
        elif t.termination is not Termination.MAX_STEPS_EXCEEDED:
            report.failures.append({"query_id": t.query.id, "error": t.termination.value})
        for s in t.sessions:
            if s.documents:
                report.retrieval_steps += 1
            if s.signals is not None and s.signals.anomaly:
                report.anomalies += 1
            if s.critique is not None:
                report.critic_calls += 1
    return report


def run_batch(queries: Sequence[Query], deps: Deps, cfg: RunConfig, parallelism: int = 1,
              log_dir: str | Path | None = None) -> tuple[list[Trajectory], BatchReport]:
    """Run many queries, at most ``parallelism`` at a time. Results keep input order."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    check_deps(deps, cfg)
    start = time.perf_counter()

    def one(q: Query) -> Trajectory:
        try:
            return run_trajectory(q, deps, cfg, log_dir)
        except Exception as exc:  # noqa: BLE001 - isolate per-query failures
            logger.exception("query %s aborted", q.id)
            t = Trajectory(q, (), Outcome.UNKNOWN, Termination.ABORTED,
                           {"error": f"{type(exc).__name__}: {exc}"})
            if log_dir is not None:
                log_path(log_dir, q.id).write_text(serialize_trajectory(t), encoding="utf-8")
            return t

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        trajectories = list(pool.map(one, queries))
    report = summarize(trajectories)
    report.wall_time_s = time.perf_counter() - start
    if log_dir is not None and queries:
        Path(log_dir, "batch_summary.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n",
                                                        encoding="utf-8")
    return trajectories, report
