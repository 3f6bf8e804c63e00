"""Exception taxonomy shared across the package."""

from __future__ import annotations


class ArcsError(Exception):
    """Base class for all package errors."""


class ConfigError(ArcsError):
    """Invalid or inconsistent configuration; maps to CLI exit code 2."""


class IngestError(ArcsError):
    """An input path could not be read during ingestion."""


class EmptyCorpusError(ArcsError):
    """Ingestion produced zero corpus items."""


class SnapshotCorruptionError(ArcsError):
    """A persisted snapshot failed its integrity check on load."""


class EmbedderMismatchError(ArcsError):
    """Query-time embedder does not match the snapshot's embedder."""


class DimensionMismatchError(ArcsError):
    """Vectors of different dimensions were combined."""


class ContextExhaustedError(ArcsError):
    """Prompt still over budget after maximal truncation."""


class TransportError(ArcsError):
    """A remote adapter request failed; retriable."""


class ModelProposalError(ArcsError):
    """The proposal model failed hard for one call (after retries)."""


class RuntimeMissingError(ConfigError):
    """The configured target runtime binary is not available."""


class SandboxSetupError(ArcsError):
    """The executor could not prepare an isolated workspace."""


class NoCandidateError(ArcsError):
    """Every round produced an empty candidate; nothing to return.

    Carries the run log of the aborted run in ``run_log`` when available.
    """

    def __init__(self, message: str, run_log=None):
        super().__init__(message)
        self.run_log = run_log


class ReplayAssetError(ArcsError):
    """Replay is impossible because a referenced asset diverged or is missing."""
