import json

import pytest
from hypothesis import given, settings

from metamonitor.errors import EmptyTrajectory, ParseError, SchemaViolation
from metamonitor.trajectory import (
    DEFAULT_DELTA,
    Action,
    Critique,
    Outcome,
    OutcomeLabel,
    Query,
    RetrievedDocument,
    Session,
    Trajectory,
    deserialize_trajectory,
    propagate_label,
    serialize_trajectory,
)

from strategies import trajectories


@settings(max_examples=150, deadline=None)
@given(trajectories())
def test_log_round_trip_is_bit_exact(t):
    text = serialize_trajectory(t)
    back = deserialize_trajectory(text)
    assert serialize_trajectory(back) == text
    assert back.sessions == t.sessions
    assert back.query == t.query


def test_critique_invariants():
    with pytest.raises(SchemaViolation):
        Critique(0, "do something")
    with pytest.raises(SchemaViolation):
        Critique(1, "  ")
    with pytest.raises(SchemaViolation):
        Critique(2, "x")
    assert Critique.from_verdict(False, "ignored").delta is None
    assert Critique.from_verdict(True, "").delta == DEFAULT_DELTA
    assert Critique.from_verdict(True, " fix it ").delta == "fix it"


def test_action_fields_must_match_kind():
    with pytest.raises(SchemaViolation):
        Action(Action.terminate("x").kind, tool_name="search", final_answer="x")
    assert Action.tool_call("search", {"query": "q"}).describe() == 'search({"query": "q"})'
    assert Action.terminate("42").describe() == "answer: 42"


def test_session_invariants():
    doc = RetrievedDocument("d", "t", "c", 1)
    with pytest.raises(SchemaViolation):
        Session(0, "r", Action.terminate("x"))
    with pytest.raises(SchemaViolation):
        Session(1, "r", Action.terminate("x"), documents=(doc,))
    with pytest.raises(SchemaViolation):
        Session(1, "r", Action.tool_call("search", {}), documents=(RetrievedDocument("d", "t", "c", 2),))
    with pytest.raises(SchemaViolation):
        RetrievedDocument("d", "t", "", 1)
    with pytest.raises(SchemaViolation):
        Query("q", "")


def test_trajectory_ordering_rules():
    call = Session(1, "r", Action.tool_call("search", {"query": "q"}))
    end = Session(2, "r", Action.terminate("x"))
    Trajectory(Query("q", "text"), (call, end))
    with pytest.raises(SchemaViolation):
        Trajectory(Query("q", "text"), (end,))  # index 2 first
    with pytest.raises(SchemaViolation):
        Trajectory(Query("q", "text"), (Session(1, "r", Action.terminate("x")),
                                        Session(2, "r", Action.tool_call("search", {}))))


def test_propagate_label():
    t = Trajectory(Query("q", "text"), (Session(1, "r", Action.tool_call("s", {})),
                                        Session(2, "r", Action.terminate("a"))))
    pairs = propagate_label(t, OutcomeLabel.FAILURE)
    assert [label for _, label in pairs] == [OutcomeLabel.FAILURE] * 2
    with pytest.raises(EmptyTrajectory):
        propagate_label(Trajectory(Query("q", "text")), OutcomeLabel.SUCCESS)
    assert OutcomeLabel.from_outcome(Outcome.SUCCESS) is OutcomeLabel.SUCCESS
    with pytest.raises(ValueError):
        OutcomeLabel.from_outcome(Outcome.UNKNOWN)


def test_parse_errors_carry_line_numbers():
    good = serialize_trajectory(Trajectory(Query("q", "text"), (Session(1, "r", Action.terminate("a")),)))
    header, session = good.splitlines()
    with pytest.raises(ParseError) as info:
        deserialize_trajectory(header + "\n{broken\n")
    assert info.value.line == 2
    rec = json.loads(session)
    rec["critique"] = {"err": 0, "delta": "should not be here", "rationale": None, "raw": ""}
    with pytest.raises(SchemaViolation):
        deserialize_trajectory(header + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(SchemaViolation):
        deserialize_trajectory(header.replace('"schema_version": "1"', '"schema_version": "9"'))


def test_neg_inf_logprobs_survive_round_trip():
    s = Session(1, "r", Action.terminate("a"), ((("a", 0.0), ("b", float("-inf"))),))
    t = Trajectory(Query("q", "text"), (s,))
    assert deserialize_trajectory(serialize_trajectory(t)).sessions == (s,)
