"""Exception hierarchy shared across the mesh."""

from __future__ import annotations


class MeshError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(MeshError):
    """Caller passed a value that violates a contract."""


class ConfigurationError(MeshError):
    """A manifest, rule set, or registry entry is unusable."""


class NotFoundError(MeshError):
    """The referenced record, node, or URI does not exist."""


class ConflictError(MeshError):
    """The operation raced with or repeats a completed mutation."""


class FormatError(MeshError):
    """Payload could not be decoded against the expected schema."""


class StorageError(MeshError):
    """The backing store is unavailable. Retryable."""


class SourceError(MeshError):
    """A fetcher failed. Retryable; carries the attempt count."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class StageError(MeshError):
    """A pipeline stage failed; tags the stage so reruns can resume."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class InsufficientDataError(MeshError):
    """Not enough values to run the statistic; names the minimum."""

    def __init__(self, message: str, minimum: int):
        super().__init__(message)
        self.minimum = minimum


class UndefinedSimilarityError(MeshError):
    """Cosine of a zero vector is undefined."""


class ProviderError(MeshError):
    """A remote LLM/embedding provider failed or timed out. Retryable."""


class ProviderFormatError(MeshError):
    """Provider replied with a payload we cannot parse."""
