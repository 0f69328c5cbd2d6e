"""Exception hierarchy shared by all deepsaucer modules."""

from __future__ import annotations


class DeepSaucerError(Exception):
    """Base class for all anticipated failures."""


class FileNotReadable(DeepSaucerError):
    """A script file is missing or cannot be read."""


class DuplicateName(DeepSaucerError):
    """An asset with the same (name, kind) is already registered."""


class StoreLocked(DeepSaucerError):
    """Another process held a store lock beyond the timeout."""


class LockTimeout(DeepSaucerError):
    """Waiting for a per-environment provisioning lock timed out."""


class UnknownAsset(DeepSaucerError):
    """No registered asset matches the given id or name."""


class AmbiguousAsset(DeepSaucerError):
    """A name matches more than one asset; an id is required."""


class KindMismatch(DeepSaucerError):
    """An asset has the wrong kind for the requested operation."""


class Unassociated(DeepSaucerError):
    """A selected asset has no environment-setup association."""


class IncompatibleEnvironments(DeepSaucerError):
    """The selected scripts are associated with different environments."""


class CorruptRegistry(DeepSaucerError):
    """The registry file failed to parse or violates integrity rules."""


class ProvisionFailed(DeepSaucerError):
    """An environment-setup script failed to produce a usable environment."""

    def __init__(self, message: str, log_path: str | None = None):
        super().__init__(message)
        self.log_path = log_path


class HashMismatch(DeepSaucerError):
    """A script's bytes no longer match its registered content hash."""


class InvalidResult(DeepSaucerError):
    """A result document violates the result schema."""


class RunnerFailure(DeepSaucerError):
    """The runner process failed to deliver a usable result."""

    def __init__(self, message: str, record=None):
        super().__init__(message)
        self.record = record


class SpawnError(DeepSaucerError):
    """The environment interpreter is missing or not executable."""

    def __init__(self, message: str, record=None):
        super().__init__(message)
        self.record = record


class UnknownRun(DeepSaucerError):
    """No run with the given id exists in the store."""


class CorruptRunRecord(DeepSaucerError):
    """A persisted run record failed to parse."""
