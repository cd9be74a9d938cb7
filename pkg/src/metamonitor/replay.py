"""Recompute stored fast-monitor signals from the raw data in a trajectory log."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .backends.base import EmbeddingBackend
from .calibration import CalibrationModel
from .signals import ClusterParams, compute_signals
from .trajectory import Trajectory, deserialize_trajectory

TOLERANCE = 1e-9


@dataclass
class ReplayReport:
    path: str
    verified: int = 0
    mismatches: list[dict[str, Any]] = field(default_factory=list)
    unverifiable: list[dict[str, Any]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def to_dict(self) -> dict[str, Any]:
        return {"path": self.path, "verified": self.verified, "mismatches": self.mismatches,
                "unverifiable": self.unverifiable}


def replay_trajectory(trajectory: Trajectory, embedder: EmbeddingBackend | None,
                      path: str = "", tolerance: float = TOLERANCE) -> ReplayReport:
    report = ReplayReport(path)
    info = trajectory.run_info
    cal = info.get("calibration")
    params = ClusterParams(float(info.get("d_merge", 0.35)), str(info.get("cluster_mass", "count")))
    for s in trajectory.sessions:
        if s.signals is None:
            report.unverifiable.append({"index": s.index, "reason": "no stored signals"})
            continue
        missing = [name for name, present in (("documents", bool(s.documents)),
                                              ("reasoning_token_logprobs", bool(s.reasoning_token_logprobs)),
                                              ("calibration", cal is not None),
                                              ("embedder", embedder is not None)) if not present]
        if missing:
            report.unverifiable.append({"index": s.index, "reason": "missing " + ", ".join(missing)})
            continue
        model = CalibrationModel(a=float(cal["a"]), b=float(cal["b"]), sigma=float(cal["sigma"]),
                                 k=float(cal["k"]))
        fresh = compute_signals(s, embedder, model, params)
        stored = s.signals
        for name in ("se", "re", "re_hat", "epsilon"):
            a, b = getattr(stored, name), getattr(fresh, name)
            if abs(a - b) > tolerance:
                report.mismatches.append({"index": s.index, "field": name, "stored": a, "recomputed": b})
        if stored.anomaly != fresh.anomaly:
            report.mismatches.append({"index": s.index, "field": "anomaly",
                                      "stored": stored.anomaly, "recomputed": fresh.anomaly})
        report.verified += 1
    return report


def replay_file(path: str | Path, embedder: EmbeddingBackend | None = None) -> ReplayReport:
    """Replay one log; without an explicit embedder, rebuild the one recorded in the header."""
    from .config import build_embedder
    from .errors import ConfigError

    trajectory = deserialize_trajectory(Path(path).read_text(encoding="utf-8"))
    if embedder is None:
        try:
            embedder = build_embedder(trajectory.run_info.get("embedder"))
        except (ConfigError, KeyError, TypeError, ValueError):
            embedder = None
    return replay_trajectory(trajectory, embedder, str(path))
