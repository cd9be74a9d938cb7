"""Exception hierarchy shared by every subsystem."""

from __future__ import annotations


class MonitorError(Exception):
    """Base class for all errors raised by this package."""


class EmptyTrajectory(MonitorError):
    pass


class ParseError(MonitorError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaViolation(MonitorError):
    pass


class EmptyInput(MonitorError):
    pass


class DimMismatch(MonitorError):
    pass


class EmptyReasoning(MonitorError):
    pass


class DegenerateDistribution(MonitorError):
    pass


class PreconditionError(MonitorError):
    pass


class InsufficientData(MonitorError):
    pass


class LabelRequired(MonitorError):
    pass


class AbstractionFailed(MonitorError):
    pass


class UnsupportedVersion(MonitorError):
    pass


class BackendUnavailable(MonitorError):
    pass


class CapabilityMissing(MonitorError):
    pass


class UnscriptedRequest(MonitorError):
    """A scripted mock backend received a request it has no response for."""


class ConfigError(MonitorError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
