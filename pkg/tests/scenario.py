"""Fully scripted 3-step scenario: clean retrieval, anomalous retrieval, answer.

Frozen values (independent mpmath evaluation, 50 digits):
  SE of masses (0.6, 0.4)           = 0.67301166700925643...
  entropy of the 30-way distribution with p0 = 0.28713246842394991... is 3.0
  epsilon = 3.0 - 0.67301166700925... = 2.32698833299074356...
"""

from __future__ import annotations

import json
import math

from metamonitor.backends import ChatResponse, FunctionChat, InMemorySearch, ScriptedChat, TopicEmbedder, step_key
from metamonitor.calibration import CalibrationModel
from metamonitor.memory import MemoryStore, TemplateAbstractor, build_entry
from metamonitor.orchestrator import Deps, RunConfig
from metamonitor.trajectory import Action, OutcomeLabel, Query, RetrievedDocument, Session

SE_TWO_GROUPS = 0.67301166700925643
EPSILON_STEP2 = 2.32698833299074356
P_HEAD = 0.28713246842394991721
GUIDANCE = "Re-verify the opening year against an official source before answering."
ANSWER = "1921"

TOPICS = ["alpha", "beta"]


def embedder() -> TopicEmbedder:
    return TopicEmbedder(TOPICS, dim=64)


def calibration() -> CalibrationModel:
    # tau = 2 * 0.3 = 0.6
    return CalibrationModel(a=1.0, b=0.0, sigma=0.3, k=2.0, n_fit=10)


def entropy3_alternatives() -> tuple[tuple[str, float], ...]:
    tail = (1.0 - P_HEAD) / 29
    return (("w0", math.log(P_HEAD)),) + tuple((f"w{i}", math.log(tail)) for i in range(1, 30))


ONE_HOT = (("x", 0.0),)
UNIFORM2 = (("a", math.log(0.5)), ("b", math.log(0.5)))


def _turn(reasoning: str, action_markup: str, reasoning_alts) -> ChatResponse:
    """Word-level tokens; the action tokens get uniform-2 alternatives that must not count."""
    words = [w + " " for w in reasoning.split(" ")]
    tokens = words + [action_markup]
    alts = [reasoning_alts] * len(words) + [UNIFORM2]
    text = "".join(tokens)
    return ChatResponse(text=text, token_logprobs=tuple(alts), tokens=tuple(tokens))


def search_markup(q: str) -> str:
    return "<tool_call>" + json.dumps({"name": "search", "arguments": {"query": q}}) + "</tool_call>"


def query_text(n: int = 0) -> str:
    return "In which year did the Alpha Observatory open?" + ("" if n == 0 else f" (variant {n})")


def search_strings(n: int = 0) -> tuple[str, str]:
    return f"alpha observatory opening {n}", f"alpha observatory opening dispute {n}"


def corpus(n: int = 0) -> dict[str, list[RetrievedDocument]]:
    s1, s2 = search_strings(n)
    clean = [RetrievedDocument(f"c{i}", f"Alpha record {i}", f"The alpha observatory opened in 1921 ({i}).", i)
             for i in range(1, 6)]
    mixed = [RetrievedDocument(f"m{i}", f"Alpha source {i}", f"alpha archive says 1921 ({i}).", i)
             for i in range(1, 4)]
    mixed += [RetrievedDocument(f"m{i}", f"Beta source {i}", f"beta registry says 1923 ({i}).", i)
              for i in range(4, 6)]
    return {s1: clean, s2: mixed}


def policy_table(n: int = 0, *, steady_re: bool = False) -> dict[str, ChatResponse]:
    """``steady_re`` makes step 2's RE equal its prediction (no anomaly)."""
    q = query_text(n)
    s1, s2 = search_strings(n)
    step2_alts = entropy3_alternatives()
    if steady_re:
        # entropy of (0.6, 0.4) equals the step's SE, so epsilon is ~0
        step2_alts = (("p", math.log(0.6)), ("q", math.log(0.4)))
    return {
        f"{q}#1": _turn("I should look up the opening year first.", search_markup(s1), ONE_HOT),
        f"{q}#2": _turn("The records look uniform but I am unsure which is right.", search_markup(s2), step2_alts),
        f"{q}#3": _turn("The official archive settles it.", f"<answer>{ANSWER}</answer>", ONE_HOT),
    }


def critic_reply(_request) -> str:
    return "Assessment follows.\n```json\n" + json.dumps(
        {"error": True, "suggestion": GUIDANCE, "rationale": "high uncertainty on coherent evidence"}
    ) + "\n```"


def seed_memory(emb: TopicEmbedder) -> MemoryStore:
    store = MemoryStore(emb.dim, 0.95, emb.model_id)
    abstractor = TemplateAbstractor()
    examples = [
        ("s-ok", OutcomeLabel.SUCCESS, "Cross-checked the alpha date in two sources."),
        ("s-ok2", OutcomeLabel.SUCCESS, "Searched the official beta registry."),
        ("f-bad", OutcomeLabel.FAILURE, "Answered from the first alpha hit without checking."),
        ("f-bad2", OutcomeLabel.FAILURE, "Ignored conflicting beta evidence."),
    ]
    for tid, label, reasoning in examples:
        s = Session(1, reasoning, Action.tool_call("search", {"query": tid}), tool_observation="obs " + tid)
        store.insert(build_entry(s, [], label, abstractor, emb, query_text="historic query " + tid,
                                 trajectory_id=tid, created_at="2026-01-01T00:00:00+00:00"))
    return store


def make_deps(n_queries: int = 1, *, steady_re: bool = False, with_critic: bool = True,
              critic_fn=critic_reply) -> Deps:
    table: dict[str, ChatResponse] = {}
    docs: dict[str, list[RetrievedDocument]] = {}
    for n in range(n_queries):
        table.update(policy_table(n, steady_re=steady_re))
        docs.update(corpus(n))
    emb = embedder()
    return Deps(
        policy=ScriptedChat(table, key=step_key),
        embedder=emb,
        search=InMemorySearch(docs),
        calibration=calibration(),
        memory=seed_memory(emb),
        critic=FunctionChat(critic_fn) if with_critic else None,
    )


def queries(n_queries: int = 1) -> list[Query]:
    return [Query(f"scenario-{n}", query_text(n)) for n in range(n_queries)]


def config(**overrides) -> RunConfig:
    return RunConfig(max_steps=overrides.pop("max_steps", 5), **overrides)
