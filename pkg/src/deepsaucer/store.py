"""On-disk store layout, advisory locking, and atomic-write plumbing.

A store root holds everything the orchestrator persists:

    <root>/registry.json      asset catalog
    <root>/registry.lock      advisory lock for registry mutations
    <root>/envs/              provisioned environments, logs, per-env locks
    <root>/runs/              one directory per verification run

Writers replace files atomically (temp file + rename), so readers never
observe torn content and may load without taking a lock.
"""

from __future__ import annotations

import fcntl
import hashlib
import os
import tempfile
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .errors import DeepSaucerError, StoreLocked

DEFAULT_LOCK_TIMEOUT_S = 10.0
DEFAULT_PROVISION_TIMEOUT_S = 600.0


@dataclass
class Store:
    """Handle to a store root plus the timeouts used by its operations."""

    root: Path
    lock_timeout_s: float = DEFAULT_LOCK_TIMEOUT_S
    provision_timeout_s: float = DEFAULT_PROVISION_TIMEOUT_S

    def __post_init__(self) -> None:
        self.root = Path(self.root).expanduser().resolve()

    @property
    def registry_path(self) -> Path:
        return self.root / "registry.json"

    @property
    def registry_lock_path(self) -> Path:
        return self.root / "registry.lock"

    @property
    def envs_dir(self) -> Path:
        return self.root / "envs"

    @property
    def runs_dir(self) -> Path:
        return self.root / "runs"

    def ensure_root(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)

    def registry_lock(self) -> "FileLock":
        self.ensure_root()
        return FileLock(
            self.registry_lock_path,
            timeout_s=self.lock_timeout_s,
            error=StoreLocked,
        )


class FileLock:
    """Advisory exclusive lock on a path, with a polling timeout.

    Uses flock(2), so the lock is held per open file description: it
    excludes other processes and other FileLock instances within the
    same process. Raises the configured error class when the lock
    cannot be acquired before the timeout expires.
    """

    _POLL_INTERVAL_S = 0.05

    def __init__(
        self,
        path: Path,
        timeout_s: float = DEFAULT_LOCK_TIMEOUT_S,
        error: type[DeepSaucerError] = StoreLocked,
    ):
        self.path = Path(path)
        self.timeout_s = timeout_s
        self.error = error
        self._fd: int | None = None

    def acquire(self) -> None:
        fd = os.open(self.path, os.O_RDWR | os.O_CREAT, 0o644)
        deadline = time.monotonic() + self.timeout_s
        while True:
            try:
                fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
                self._fd = fd
                return
            except (BlockingIOError, PermissionError):
                if time.monotonic() >= deadline:
                    os.close(fd)
                    raise self.error(
                        f"could not acquire lock {self.path} "
                        f"within {self.timeout_s:g}s"
                    )
                time.sleep(self._POLL_INTERVAL_S)

    def release(self) -> None:
        if self._fd is not None:
            fcntl.flock(self._fd, fcntl.LOCK_UN)
            os.close(self._fd)
            self._fd = None

    def __enter__(self) -> "FileLock":
        self.acquire()
        return self

    def __exit__(self, *exc_info) -> None:
        self.release()


def atomic_write_text(path: Path, text: str) -> None:
    """Write text to path via a same-directory temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(
        dir=path.parent, prefix=f".{path.name}.", suffix=".tmp"
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except FileNotFoundError:
            pass
        raise


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def format_timestamp(moment: datetime) -> str:
    """Render a UTC datetime as RFC 3339 with a Z suffix."""
    if moment.tzinfo is None:
        raise ValueError("timestamp must be timezone-aware")
    moment = moment.astimezone(timezone.utc)
    return moment.isoformat(timespec="microseconds").replace("+00:00", "Z")


def parse_timestamp(text: str) -> datetime:
    """Parse an RFC 3339 UTC timestamp; Z and +00:00 both accepted."""
    if not isinstance(text, str):
        raise ValueError(f"timestamp must be a string, got {type(text).__name__}")
    normalized = text[:-1] + "+00:00" if text.endswith("Z") else text
    moment = datetime.fromisoformat(normalized)
    if moment.tzinfo is None:
        raise ValueError(f"timestamp lacks a timezone: {text!r}")
    return moment.astimezone(timezone.utc)
