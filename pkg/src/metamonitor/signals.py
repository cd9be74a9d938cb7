"""Searching Entropy over retrieved documents and Reasoning Entropy over reasoning tokens.

Both quantities are Shannon entropies in nats. Searching Entropy is taken over
the mass of semantic clusters of the retrieved documents; Reasoning Entropy is
the mean entropy of the renormalized top-K next-token distributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import (
    DegenerateDistribution,
    DimMismatch,
    EmptyInput,
    EmptyReasoning,
    PreconditionError,
)
from .trajectory import Session, UncertaintySignals

if TYPE_CHECKING:
    from .backends.base import EmbeddingBackend
    from .calibration import CalibrationModel

DEFAULT_D_MERGE = 0.35
DEFAULT_TOP_LOGPROBS = 20


@dataclass(frozen=True)
class ClusterParams:
    d_merge: float = DEFAULT_D_MERGE
    # "count": every document weighs 1; "rank": weight 1/rank.
    mass: str = "count"

    def __post_init__(self) -> None:
        if not 0.0 < self.d_merge < 2.0:
            raise ValueError(f"d_merge must lie in (0, 2), got {self.d_merge}")
        if self.mass not in ("count", "rank"):
            raise ValueError(f"unknown cluster mass mode {self.mass!r}")


@dataclass(frozen=True)
class ClusterAssignment:
    labels: tuple[int, ...]
    cluster_count: int
    masses: tuple[float, ...]


def cosine_distance_matrix(embeddings: Sequence[Sequence[float]]) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = x / safe[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    # Zero vectors have no direction: treat them as orthogonal to everything else.
    zero = norms == 0
    sim[zero, :] = 0.0
    sim[:, zero] = 0.0
    np.fill_diagonal(sim, 1.0)
    return 1.0 - sim


def _check_embeddings(embeddings: Sequence[Sequence[float]]) -> None:
    if len(embeddings) == 0:
        raise EmptyInput("no embeddings to cluster")
    dim = len(embeddings[0])
    if dim == 0:
        raise DimMismatch("embeddings have zero dimension")
    for i, e in enumerate(embeddings):
        if len(e) != dim:
            raise DimMismatch(f"embedding {i} has dim {len(e)}, expected {dim}")
        if not all(math.isfinite(v) for v in e):
            raise ValueError(f"embedding {i} has non-finite entries")


def cluster_documents(embeddings: Sequence[Sequence[float]], params: ClusterParams = ClusterParams(),
                      ranks: Sequence[int] | None = None) -> ClusterAssignment:
    """Single-linkage clustering: documents within cosine distance ``d_merge`` share a cluster.

    Labels are dense and numbered by first appearance, so the result is
    deterministic. No document is left unassigned.
    """
    _check_embeddings(embeddings)
    n = len(embeddings)
    dist = cosine_distance_matrix(embeddings)

    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    rows, cols = np.nonzero(np.triu(dist <= params.d_merge, k=1))
    for i, j in zip(rows.tolist(), cols.tolist()):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    dense: dict[int, int] = {}
    labels = []
    for i in range(n):
        labels.append(dense.setdefault(find(i), len(dense)))

    if params.mass == "rank":
        if ranks is None or len(ranks) != n:
            raise PreconditionError("rank-weighted mass needs one rank per document")
        weights = [1.0 / r for r in ranks]
    else:
        weights = [1.0] * n
    total = math.fsum(weights)
    masses = tuple(
        math.fsum(w for w, lab in zip(weights, labels) if lab == c) / total for c in range(len(dense))
    )
    return ClusterAssignment(tuple(labels), len(dense), masses)


def shannon_entropy(probs: Sequence[float]) -> float:
    return max(0.0, -math.fsum(p * math.log(p) for p in probs if p > 0.0))


def searching_entropy(assignment: ClusterAssignment) -> float:
    return shannon_entropy(assignment.masses)


def position_entropy(alternatives: Sequence[tuple[str, float]]) -> float:
    """Entropy of one position's top-K alternatives after renormalization."""
    if not alternatives:
        raise EmptyReasoning("reasoning position without candidates")
    logprobs = [lp for _, lp in alternatives]
    if any(math.isnan(lp) or lp == math.inf for lp in logprobs):
        raise DegenerateDistribution("logprobs must be finite or -inf")
    finite = [lp for lp in logprobs if lp != -math.inf]
    if not finite:
        raise DegenerateDistribution("all candidates have zero probability")
    top = max(finite)
    log_z = top + math.log(math.fsum(math.exp(lp - top) for lp in finite))
    # H = -sum p (lp - log_z)
    return max(0.0, -math.fsum(math.exp(lp - log_z) * (lp - log_z) for lp in finite))


def reasoning_entropy(positions: Sequence[Sequence[tuple[str, float]]]) -> float:
    if len(positions) == 0:
        raise EmptyReasoning("no reasoning positions")
    return math.fsum(position_entropy(p) for p in positions) / len(positions)


def compute_signals(session: Session, embedder: "EmbeddingBackend", calibration: "CalibrationModel",
                    params: ClusterParams = ClusterParams()) -> UncertaintySignals:
    """Fast-monitor signals for a completed retrieval step. Pure: the session is not modified."""
    from .calibration import is_anomaly, predict

    if not session.documents:
        raise PreconditionError(f"session {session.index} has no retrieved documents")
    if not session.reasoning_token_logprobs:
        raise PreconditionError(f"session {session.index} has no reasoning logprobs")
    vectors = embedder.embed([d.text for d in session.documents])
    assignment = cluster_documents(vectors, params, ranks=[d.rank for d in session.documents])
    se = searching_entropy(assignment)
    re = reasoning_entropy(session.reasoning_token_logprobs)
    re_hat = predict(calibration, se)
    epsilon = re - re_hat
    return UncertaintySignals(se=se, re=re, re_hat=re_hat, epsilon=epsilon,
                              anomaly=is_anomaly(calibration, epsilon))
