"""Linear SE -> RE calibration with a nonnegative slope, and the k-sigma anomaly gate."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from .errors import InsufficientData, ParseError
from .trajectory import OutcomeLabel

logger = logging.getLogger(__name__)

DEFAULT_K = 2.0


@dataclass(frozen=True)
class CalibrationPoint:
    se: float
    re: float
    source: tuple[str, int] = ("", 0)
    label: OutcomeLabel | None = None


@dataclass(frozen=True)
class CalibrationModel:
    a: float
    b: float
    sigma: float
    k: float = DEFAULT_K
    n_fit: int = 0
    degenerate: bool = False

    def __post_init__(self) -> None:
        if self.a < 0:
            raise ValueError(f"calibration slope must be >= 0, got {self.a}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.k <= 0:
            raise ValueError(f"k must be > 0, got {self.k}")

    @property
    def tau(self) -> float:
        return self.k * self.sigma

    def with_k(self, k: float) -> "CalibrationModel":
        return replace(self, k=k)


def _population_std(values: Sequence[float]) -> float:
    mean = math.fsum(values) / len(values)
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / len(values))


def fit(points: Sequence[CalibrationPoint], k: float = DEFAULT_K,
        sigma_points: Sequence[CalibrationPoint] | None = None) -> CalibrationModel:
    """Least-squares fit of ``re ~ a*se + b`` subject to ``a >= 0``.

    With the constraint active the optimum is ``a = 0, b = mean(re)``. Sigma is
    the population standard deviation of the residuals on ``sigma_points``
    (defaults to the fit set).
    """
    if len(points) < 2:
        raise InsufficientData(f"need at least 2 calibration points, got {len(points)}")
    bad = [p.source for p in points if p.label is not None and p.label is not OutcomeLabel.SUCCESS]
    if bad:
        raise ValueError(f"calibration points must come from successful steps; offending sources {bad}")
    se = [p.se for p in points]
    re = [p.re for p in points]
    if not all(math.isfinite(v) for v in se + re):
        raise ValueError("calibration points must be finite")

    n = len(points)
    se_mean = math.fsum(se) / n
    re_mean = math.fsum(re) / n
    sxx = math.fsum((x - se_mean) ** 2 for x in se)
    degenerate = sxx == 0.0
    if degenerate:
        logger.warning("all %d calibration points share se=%r; fitting a constant model", n, se[0])
        a, b = 0.0, re_mean
    else:
        sxy = math.fsum((x - se_mean) * (y - re_mean) for x, y in zip(se, re))
        a = sxy / sxx
        if a < 0:
            a, b = 0.0, re_mean
        else:
            b = re_mean - a * se_mean

    held = sigma_points if sigma_points is not None else points
    residuals = [p.re - (a * p.se + b) for p in held]
    sigma = _population_std(residuals) if residuals else 0.0
    # Centering subtracts the residual mean, which is ~0 on the fit set; exact
    # zero residuals must give exactly zero sigma.
    if all(r == 0.0 for r in residuals):
        sigma = 0.0
    return CalibrationModel(a=a, b=b, sigma=sigma, k=k, n_fit=n, degenerate=degenerate)


def predict(model: CalibrationModel, se: float) -> float:
    return model.a * se + model.b


def residual(model: CalibrationModel, se: float, re: float) -> float:
    """Observed minus predicted RE.

    Positive: more reasoning uncertainty than the evidence warrants.
    Negative: overconfident reasoning on ambiguous evidence.
    """
    return re - predict(model, se)


def is_anomaly(model: CalibrationModel, epsilon: float) -> bool:
    return abs(epsilon) > model.tau


def save_calibration(model: CalibrationModel, path: str | Path,
                     source_log_paths: Sequence[str] = (), fitted_at: str | None = None) -> None:
    record = asdict(model)
    record["sigma_estimator"] = "population"
    record["fitted_at"] = fitted_at or datetime.now(timezone.utc).isoformat()
    record["source_log_paths"] = list(source_log_paths)
    Path(path).write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")


def load_calibration(path: str | Path) -> CalibrationModel:
    try:
        record = json.loads(Path(path).read_text(encoding="utf-8"))
        return CalibrationModel(
            a=float(record["a"]), b=float(record["b"]), sigma=float(record["sigma"]),
            k=float(record.get("k", DEFAULT_K)), n_fit=int(record.get("n_fit", 0)),
            degenerate=bool(record.get("degenerate", False)),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad calibration file {path}: {exc}") from None
