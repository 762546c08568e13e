"""Exception types shared across the pipeline."""

from __future__ import annotations


class PlaytestError(Exception):
    """Base class for all package errors."""


class ValidationError(PlaytestError):
    """A record or config value violates a declared invariant."""


class RecordParseError(PlaytestError):
    """A persisted record line could not be parsed."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class TransportError(PlaytestError):
    """Network-level failure after exhausting retries."""


class RateLimitError(TransportError):
    """Retryable throttle signal from the endpoint."""


class EndpointError(PlaytestError):
    """Non-success HTTP status from the endpoint."""

    def __init__(self, status: int, body_excerpt: str = ""):
        self.status = status
        self.body_excerpt = body_excerpt[:500]
        super().__init__(f"endpoint returned status {status}: {self.body_excerpt}")


class JsonExtractError(PlaytestError):
    """No parseable JSON value in a model reply."""


class JsonShapeError(JsonExtractError):
    """Parsed JSON does not match the expected shape."""

    def __init__(self, message: str, missing: list[str] | None = None, extra: list[str] | None = None):
        self.missing = missing or []
        self.extra = extra or []
        super().__init__(message)


class StructuringError(PlaytestError):
    """Rulebook reply still violates the section schema after re-query."""

    def __init__(self, message: str, violations: list | None = None):
        self.violations = violations or []
        super().__init__(message)


class ClusteringError(PlaytestError):
    """Clustering preconditions not met."""


class SynthesisError(PlaytestError):
    """Reasoning-chain synthesis failed after re-query."""


class UndefinedMetricError(PlaytestError):
    """Metric has no defined value on the given input."""


class ConfigError(PlaytestError):
    """Run configuration is missing or inconsistent."""
