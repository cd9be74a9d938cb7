"""Small builders for memory entries with chosen embeddings."""

import math
from fractions import Fraction

from metamonitor.memory import Abstraction, MemoryEntry, Origin, Provenance
from metamonitor.trajectory import OutcomeLabel


def entry(entry_id: str, embedding, label=OutcomeLabel.SUCCESS, text="x") -> MemoryEntry:
    return MemoryEntry(
        entry_id=entry_id,
        session_snapshot={"query": "q", "reasoning": text, "action": "search({})", "observation": ""},
        history_summary="no prior steps",
        abstraction=Abstraction("pattern " + text, "evidence", "insight"),
        label=label,
        embedding=tuple(float(x) for x in embedding),
        provenance=Provenance("traj-" + entry_id, 1, "2026-01-01T00:00:00+00:00", Origin.OFFLINE, "t"),
    )


def cosine(u, v) -> float:
    nu = math.sqrt(math.fsum(x * x for x in u))
    nv = math.sqrt(math.fsum(x * x for x in v))
    if nu == 0 or nv == 0:
        return 0.0
    return math.fsum(x * y for x, y in zip(u, v)) / (nu * nv)


def exact_rank_key(u, q) -> Fraction:
    """Exact key ordered like cos(u, q) for a fixed integer-valued q: sign(u.q) * (u.q)^2 / |u|^2.

    Only valid for integer-valued vectors, where it is computed in exact integer arithmetic.
    """
    iu, iq = [int(x) for x in u], [int(x) for x in q]
    dot = sum(a * b for a, b in zip(iu, iq))
    norm2 = sum(a * a for a in iu)
    if norm2 == 0:
        return Fraction(0)
    return Fraction((1 if dot >= 0 else -1) * dot * dot, norm2)


def _integral(v) -> bool:
    return all(float(x).is_integer() for x in v)


def brute_top_k(entries, vector, k):
    """Reference top-k by full scan: highest cosine first, ties broken by entry_id.

    Integer-valued data is ranked exactly, so mathematically tied cosines really
    tie. Other data is ranked by a compensated-sum cosine.
    """
    if _integral(vector) and all(_integral(e.embedding) for e in entries):
        key = lambda e: (-exact_rank_key(e.embedding, vector), e.entry_id)  # noqa: E731
    else:
        key = lambda e: (-cosine(e.embedding, vector), e.entry_id)  # noqa: E731
    return [(e, cosine(e.embedding, vector)) for e in sorted(entries, key=key)[:k]]
