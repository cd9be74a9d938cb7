"""Hypothesis strategies for random but valid trajectories."""

from hypothesis import strategies as st

from metamonitor.trajectory import (
    Action,
    Critique,
    Outcome,
    Query,
    RetrievedDocument,
    Session,
    Termination,
    Trajectory,
    UncertaintySignals,
)

text = st.text(min_size=0, max_size=30)
nonempty = st.text(min_size=1, max_size=30)
finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
logprob = st.one_of(st.floats(max_value=0.0, allow_nan=False, allow_infinity=False), st.just(float("-inf")))
positions = st.lists(st.lists(st.tuples(text, logprob), min_size=1, max_size=4).map(tuple), max_size=5).map(tuple)

json_scalars = st.one_of(st.none(), st.booleans(), st.integers(-10**6, 10**6), finite, text)
arguments = st.dictionaries(st.text(min_size=1, max_size=8), json_scalars, max_size=3)


@st.composite
def critiques(draw):
    if draw(st.booleans()):
        return Critique(1, draw(nonempty.filter(str.strip)), draw(st.none() | text), draw(text))
    return Critique(0, None, draw(st.none() | text), draw(text))


@st.composite
def sessions(draw, index, terminal):
    reasoning = draw(text)
    if terminal:
        return Session(index, reasoning, Action.terminate(draw(text)), draw(positions),
                       injected_delta=draw(st.none() | nonempty))
    n_docs = draw(st.integers(0, 4))
    docs = tuple(RetrievedDocument(draw(text), draw(text), draw(nonempty), r) for r in range(1, n_docs + 1))
    signals = None
    if docs and draw(st.booleans()):
        signals = UncertaintySignals(draw(finite), draw(finite), draw(finite), draw(finite), draw(st.booleans()))
    return Session(index, reasoning, Action.tool_call(draw(nonempty), draw(arguments)), draw(positions),
                   docs, draw(text), signals, draw(st.none() | critiques()), draw(st.none() | nonempty))


@st.composite
def trajectories(draw):
    n = draw(st.integers(0, 4))
    answered = n > 0 and draw(st.booleans())
    ss = tuple(draw(sessions(i, answered and i == n)) for i in range(1, n + 1))
    query = Query(draw(text), draw(nonempty), draw(st.dictionaries(nonempty, text, max_size=2)))
    info = draw(st.dictionaries(nonempty, json_scalars, max_size=3))
    return Trajectory(query, ss, draw(st.sampled_from(Outcome)), draw(st.sampled_from(Termination)), info)
