"""Provisioning of isolated environments from environment-setup scripts.

An environment is identified by the first 12 hex chars of the SHA-256
of its setup script's bytes, so editing a script yields a new
environment instead of mutating the old one. A setup script is run as

    sh <script> <env_root>          (env var SAUCER_ENV_ROOT=<env_root>)

and must leave ``<env_root>/interpreter``: a UTF-8 file holding one
absolute path to an executable (a trailing newline is permitted). Exit
status 0 plus a valid marker means Ready; anything else is a failure,
the root is renamed to ``<env_root>.failed-<timestamp>`` and the
captured output stays at ``<store_root>/envs/<env_id>.log``.

In-progress roots carry a ``.provisioning`` sentinel so that a
partially provisioned environment is never observed as Ready; status
reads are lock-free.
"""

from __future__ import annotations

import os
import re
import shutil
import signal
import subprocess
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from .errors import (
    FileNotReadable,
    KindMismatch,
    LockTimeout,
    ProvisionFailed,
    StoreLocked,
)
from .registry import AssetKind, AssetRecord, Registry
from .store import FileLock, Store, sha256_hex

ENV_ID_LEN = 12
INTERPRETER_MARKER = "interpreter"
PROVISIONING_SENTINEL = ".provisioning"

_ENV_ID_RE = re.compile(r"^[0-9a-f]{12}$")
_FAILED_RE = re.compile(r"^([0-9a-f]{12})\.failed-")


class EnvState(Enum):
    ABSENT = "absent"
    PROVISIONING = "provisioning"
    READY = "ready"
    FAILED = "failed"


@dataclass(frozen=True)
class EnvRecord:
    env_id: str
    root: Path
    state: EnvState
    interpreter: Path | None
    provisioned_at: datetime | None
    log_path: Path


def env_id_for(script_bytes: bytes) -> str:
    """Content-address an environment: 12-hex prefix of SHA-256."""
    return sha256_hex(script_bytes)[:ENV_ID_LEN]


def env_root(store: Store, env_id: str) -> Path:
    return store.envs_dir / env_id


def env_log_path(store: Store, env_id: str) -> Path:
    return store.envs_dir / f"{env_id}.log"


def _env_lock(store: Store, env_id: str, timeout_s: float, error=LockTimeout) -> FileLock:
    store.envs_dir.mkdir(parents=True, exist_ok=True)
    return FileLock(store.envs_dir / f"{env_id}.lock", timeout_s=timeout_s, error=error)


def read_interpreter(root: Path) -> Path | None:
    """Return the marker's interpreter path, or None if the marker is invalid."""
    try:
        raw = (root / INTERPRETER_MARKER).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError):
        return None
    text = raw[:-1] if raw.endswith("\n") else raw
    if not text or "\n" in text or "\r" in text:
        return None
    path = Path(text)
    if not path.is_absolute():
        return None
    if not path.is_file() or not os.access(path, os.X_OK):
        return None
    return path


def _failed_dirs(store: Store, env_id: str) -> list[Path]:
    if not store.envs_dir.is_dir():
        return []
    return sorted(store.envs_dir.glob(f"{env_id}.failed-*"))


def env_status(store: Store, env_id: str) -> EnvState:
    """Derive the state from on-disk sentinels and markers, lock-free."""
    root = env_root(store, env_id)
    if root.is_dir():
        if (root / PROVISIONING_SENTINEL).exists():
            return EnvState.PROVISIONING
        if read_interpreter(root) is not None:
            return EnvState.READY
        return EnvState.FAILED
    if _failed_dirs(store, env_id):
        return EnvState.FAILED
    return EnvState.ABSENT


def get_env_record(store: Store, env_id: str) -> EnvRecord:
    root = env_root(store, env_id)
    state = env_status(store, env_id)
    interpreter = read_interpreter(root) if state is EnvState.READY else None
    provisioned_at = None
    if interpreter is not None:
        marker_stat = (root / INTERPRETER_MARKER).stat()
        provisioned_at = datetime.fromtimestamp(marker_stat.st_mtime, tz=timezone.utc)
    return EnvRecord(
        env_id=env_id,
        root=root,
        state=state,
        interpreter=interpreter,
        provisioned_at=provisioned_at,
        log_path=env_log_path(store, env_id),
    )


def list_env_ids(store: Store) -> list[str]:
    """Every environment id with any on-disk trace (roots or failures)."""
    ids: set[str] = set()
    if store.envs_dir.is_dir():
        for entry in store.envs_dir.iterdir():
            if entry.is_dir() and _ENV_ID_RE.match(entry.name):
                ids.add(entry.name)
            else:
                match = _FAILED_RE.match(entry.name)
                if match and entry.is_dir():
                    ids.add(match.group(1))
    return sorted(ids)


def _read_setup_script(env_setup: AssetRecord) -> bytes:
    if env_setup.kind is not AssetKind.ENV_SETUP:
        raise KindMismatch(
            f"asset {env_setup.name!r} has kind {env_setup.kind.value}; "
            "only env-setup scripts can be provisioned"
        )
    try:
        return Path(env_setup.path).read_bytes()
    except OSError as exc:
        raise FileNotReadable(f"cannot read {env_setup.path}: {exc}") from exc


def _run_setup_script(
    store: Store, script_path: str, root: Path, log_path: Path
) -> int:
    env = dict(os.environ)
    env["SAUCER_ENV_ROOT"] = str(root)
    with open(log_path, "wb") as log_fh:
        proc = subprocess.Popen(
            ["sh", script_path, str(root)],
            stdout=log_fh,
            stderr=subprocess.STDOUT,
            stdin=subprocess.DEVNULL,
            env=env,
            start_new_session=True,
        )
        try:
            return proc.wait(timeout=store.provision_timeout_s)
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            proc.wait()
            log_fh.write(
                f"\n[deepsaucer] setup script killed after "
                f"{store.provision_timeout_s:g}s timeout\n".encode()
            )
            return -1


def _quarantine_root(root: Path) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    candidate = root.with_name(f"{root.name}.failed-{stamp}")
    suffix = 0
    while candidate.exists():
        suffix += 1
        candidate = root.with_name(f"{root.name}.failed-{stamp}.{suffix}")
    os.rename(root, candidate)
    return candidate


def _provision_locked(store: Store, env_setup: AssetRecord, env_id: str) -> EnvRecord:
    """Run the setup script for env_id; caller must hold the env lock."""
    root = env_root(store, env_id)
    log_path = env_log_path(store, env_id)
    if root.exists():
        shutil.rmtree(root)

    # Stage the root with its sentinel already inside so lock-free status
    # readers only ever see Absent or Provisioning, never a bare root.
    staging = root.with_name(f"{root.name}.staging-{os.getpid()}")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    (staging / PROVISIONING_SENTINEL).touch()
    os.rename(staging, root)

    exit_code = _run_setup_script(store, env_setup.path, root, log_path)
    interpreter = read_interpreter(root)

    if exit_code != 0 or interpreter is None:
        _quarantine_root(root)
        if exit_code != 0:
            reason = f"setup script exited with status {exit_code}"
        else:
            reason = f"setup script left no valid {INTERPRETER_MARKER} marker in {root}"
        raise ProvisionFailed(
            f"provisioning of environment {env_id} failed: {reason} "
            f"(log: {log_path})",
            log_path=str(log_path),
        )

    (root / PROVISIONING_SENTINEL).unlink()
    return get_env_record(store, env_id)


def provision(store: Store, env_setup: AssetRecord) -> EnvRecord:
    """Provision the environment for a setup script, always from scratch.

    An existing root for the same script bytes is discarded first; use
    ensure_ready for the cached, run-at-most-once behaviour.
    """
    script_bytes = _read_setup_script(env_setup)
    env_id = env_id_for(script_bytes)
    with _env_lock(store, env_id, store.provision_timeout_s, error=StoreLocked):
        return _provision_locked(store, env_setup, env_id)


def ensure_ready(store: Store, env_setup: AssetRecord) -> EnvRecord:
    """Return a Ready environment, provisioning at most once.

    A Ready environment with a matching id is returned without running
    the script. Concurrent callers serialize on a per-environment lock:
    exactly one executes the script, the rest wait and adopt its
    outcome, including a ProvisionFailed raised on its behalf.
    """
    script_bytes = _read_setup_script(env_setup)
    env_id = env_id_for(script_bytes)

    record = get_env_record(store, env_id)
    if record.state is EnvState.READY:
        return record

    failures_before = {p.name for p in _failed_dirs(store, env_id)}
    with _env_lock(store, env_id, store.provision_timeout_s):
        record = get_env_record(store, env_id)
        if record.state is EnvState.READY:
            return record
        fresh_failures = {
            p.name for p in _failed_dirs(store, env_id)
        } - failures_before
        if fresh_failures:
            raise ProvisionFailed(
                f"provisioning of environment {env_id} failed in a concurrent "
                f"caller (log: {env_log_path(store, env_id)})",
                log_path=str(env_log_path(store, env_id)),
            )
        return _provision_locked(store, env_setup, env_id)


def gc(store: Store, registry: Registry) -> list[str]:
    """Remove environments no registered setup script still maps to.

    Live ids come from hashing each env-setup asset's file as it is
    now; an unreadable file falls back to the hash recorded at
    registration so a missing script never triggers deletion of an
    environment that may still be wanted. In-progress environments are
    skipped.
    """
    live_ids: set[str] = set()
    for record in registry.by_kind(AssetKind.ENV_SETUP):
        try:
            live_ids.add(env_id_for(Path(record.path).read_bytes()))
        except OSError:
            live_ids.add(record.content_hash[:ENV_ID_LEN])

    removed: list[str] = []
    for env_id in list_env_ids(store):
        if env_id in live_ids:
            continue
        if env_status(store, env_id) is EnvState.PROVISIONING:
            continue
        with _env_lock(store, env_id, store.lock_timeout_s, error=StoreLocked):
            if env_status(store, env_id) is EnvState.PROVISIONING:
                continue
            root = env_root(store, env_id)
            if root.exists():
                shutil.rmtree(root)
            for failed in _failed_dirs(store, env_id):
                shutil.rmtree(failed)
            log_path = env_log_path(store, env_id)
            if log_path.exists():
                log_path.unlink()
        removed.append(env_id)
    return removed
