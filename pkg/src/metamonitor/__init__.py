"""Metacognitive monitoring for ReAct deep-search agents.

A fast monitor compares reasoning uncertainty with the uncertainty of the
retrieved evidence at every retrieval step; anomalous steps are reviewed by a
critic that draws on a memory of successful and failed experiences.
"""

from .calibration import CalibrationModel, CalibrationPoint, fit, is_anomaly, predict, residual
from .critic import criticize
from .memory import MemoryStore, build_entry, label_online, retrieve
from .orchestrator import Deps, RunConfig, run_batch, run_step, run_trajectory
from .signals import ClusterParams, cluster_documents, compute_signals, reasoning_entropy, searching_entropy
from .trajectory import (
    Action,
    Critique,
    Outcome,
    OutcomeLabel,
    Query,
    RetrievedDocument,
    Session,
    Termination,
    Trajectory,
    UncertaintySignals,
    deserialize_trajectory,
    propagate_label,
    serialize_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationModel", "CalibrationPoint", "fit", "is_anomaly", "predict", "residual",
    "criticize",
    "MemoryStore", "build_entry", "label_online", "retrieve",
    "Deps", "RunConfig", "run_batch", "run_step", "run_trajectory",
    "ClusterParams", "cluster_documents", "compute_signals", "reasoning_entropy", "searching_entropy",
    "Action", "Critique", "Outcome", "OutcomeLabel", "Query", "RetrievedDocument", "Session",
    "Termination", "Trajectory", "UncertaintySignals", "deserialize_trajectory", "propagate_label",
    "serialize_trajectory",
]
