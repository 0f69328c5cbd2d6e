"""Planning, execution, and history of verification runs.

A run lives in ``<store_root>/runs/<run_id>/``:

    manifest.json   what to run: the three scripts, params, result_path
    output.log      combined stdout/stderr of the runner process
    result.json     verdict document written by the in-environment runner
    record.json     durable history entry (manifest + result + snapshot)
    workdir/        the runner's working directory

The runner is spawned as ``<interpreter> <shim> <manifest.json>`` with
``SAUCER_RUN_DIR`` pointing at the run directory; its combined output
is streamed to the console and captured to output.log byte for byte.
Whatever happens, exactly one record.json and one output.log remain.
"""

from __future__ import annotations

import json
import math
import os
import secrets
import selectors
import signal
import subprocess
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import BinaryIO

from .environments import EnvRecord, EnvState, ensure_ready
from .errors import (
    CorruptRunRecord,
    FileNotReadable,
    HashMismatch,
    InvalidResult,
    RunnerFailure,
    SpawnError,
    UnknownRun,
)
from .registry import (
    AssetRecord,
    asset_from_obj,
    asset_to_obj,
    load_registry,
    validate_selection,
)
from .store import (
    Store,
    atomic_write_text,
    format_timestamp,
    parse_timestamp,
    sha256_file,
    utc_now,
)

RESULT_SCHEMA_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1

STAGES = ("model_load", "dataset_load", "verification")
VERDICTS = ("pass", "fail", "error")

SNAPSHOT_KEYS = ("model_load", "dataset_load", "verification", "env_setup")

_RESULT_FIELDS = {
    "schema_version",
    "verdict",
    "failed_stage",
    "stage_timings",
    "metrics",
    "messages",
}

ParamValue = str | int | float | bool


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    model_load_script: str
    dataset_load_script: str
    verification_script: str
    params: dict[str, ParamValue]
    workdir: str
    result_path: str
    schema_version: int = MANIFEST_SCHEMA_VERSION

    @property
    def run_dir(self) -> Path:
        return Path(self.result_path).parent


@dataclass(frozen=True)
class RunResult:
    verdict: str
    failed_stage: str | None = None
    stage_timings: dict[str, float] = field(default_factory=dict)
    metrics: dict[str, float] = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class RunRecord:
    manifest: RunManifest
    result: RunResult | None
    runner_exit_code: int
    started_at: datetime
    finished_at: datetime
    output_log: str
    env_id: str
    asset_snapshot: dict[str, AssetRecord]


@dataclass(frozen=True)
class RunPlan:
    """Everything a planned run carries into execution."""

    manifest: RunManifest
    env: EnvRecord
    asset_snapshot: dict[str, AssetRecord]


@dataclass(frozen=True)
class RunSummary:
    run_id: str
    started_at: datetime
    finished_at: datetime
    outcome: str
    runner_exit_code: int
    verification: str
    env_id: str


def outcome_of(record: RunRecord) -> str:
    """Collapse a record to pass | fail | error | runner-failure."""
    if record.runner_exit_code != 0 or record.result is None:
        return "runner-failure"
    return record.result.verdict


# ---------------------------------------------------------------------------
# result schema


def _check_number(value: object, label: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidResult(f"{label} must be a number, got {value!r}")
    number = float(value)
    if not math.isfinite(number):
        raise InvalidResult(f"{label} must be finite, got {value!r}")
    return number


def parse_result(data: bytes) -> RunResult:
    """Parse and strictly validate a result document.

    Unknown top-level keys are rejected; a verdict of error requires
    failed_stage while pass/fail forbid it and require all three stage
    timings; metrics must be finite numbers.
    """
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidResult(f"result is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise InvalidResult("result document must be a JSON object")
    unknown = set(obj) - _RESULT_FIELDS
    if unknown:
        raise InvalidResult(f"result has unknown keys: {sorted(unknown)}")
    if obj.get("schema_version") != RESULT_SCHEMA_VERSION:
        raise InvalidResult(
            f"result schema_version must be {RESULT_SCHEMA_VERSION}, "
            f"got {obj.get('schema_version')!r}"
        )

    verdict = obj.get("verdict")
    if verdict not in VERDICTS:
        raise InvalidResult(f"verdict must be one of {VERDICTS}, got {verdict!r}")

    failed_stage = obj.get("failed_stage")
    if failed_stage is not None and failed_stage not in STAGES:
        raise InvalidResult(f"failed_stage must be one of {STAGES}, got {failed_stage!r}")
    if verdict == "error" and failed_stage is None:
        raise InvalidResult("verdict 'error' requires failed_stage")
    if verdict != "error" and failed_stage is not None:
        raise InvalidResult(f"verdict {verdict!r} must not carry failed_stage")

    timings_obj = obj.get("stage_timings", {})
    if not isinstance(timings_obj, dict):
        raise InvalidResult("stage_timings must be an object")
    timings: dict[str, float] = {}
    for stage, value in timings_obj.items():
        if stage not in STAGES:
            raise InvalidResult(f"stage_timings has unknown stage {stage!r}")
        seconds = _check_number(value, f"stage_timings[{stage!r}]")
        if seconds < 0:
            raise InvalidResult(f"stage_timings[{stage!r}] must be nonnegative")
        timings[stage] = seconds
    if verdict != "error":
        missing = [stage for stage in STAGES if stage not in timings]
        if missing:
            raise InvalidResult(
                f"verdict {verdict!r} requires timings for all stages; "
                f"missing {missing}"
            )

    metrics_obj = obj.get("metrics", {})
    if not isinstance(metrics_obj, dict):
        raise InvalidResult("metrics must be an object")
    metrics = {
        label: _check_number(value, f"metrics[{label!r}]")
        for label, value in metrics_obj.items()
    }

    messages_obj = obj.get("messages", [])
    if not isinstance(messages_obj, list) or any(
        not isinstance(m, str) for m in messages_obj
    ):
        raise InvalidResult("messages must be a list of strings")

    return RunResult(
        verdict=verdict,
        failed_stage=failed_stage,
        stage_timings=timings,
        metrics=metrics,
        messages=list(messages_obj),
    )


def result_to_obj(result: RunResult) -> dict:
    obj: dict = {
        "schema_version": RESULT_SCHEMA_VERSION,
        "verdict": result.verdict,
    }
    if result.failed_stage is not None:
        obj["failed_stage"] = result.failed_stage
    obj["stage_timings"] = dict(result.stage_timings)
    obj["metrics"] = dict(result.metrics)
    obj["messages"] = list(result.messages)
    return obj


# ---------------------------------------------------------------------------
# manifest and record serialization


def manifest_to_obj(manifest: RunManifest) -> dict:
    return {
        "schema_version": manifest.schema_version,
        "run_id": manifest.run_id,
        "model_load_script": manifest.model_load_script,
        "dataset_load_script": manifest.dataset_load_script,
        "verification_script": manifest.verification_script,
        "params": dict(manifest.params),
        "workdir": manifest.workdir,
        "result_path": manifest.result_path,
    }


def manifest_from_obj(obj: dict) -> RunManifest:
    try:
        return RunManifest(
            schema_version=obj["schema_version"],
            run_id=obj["run_id"],
            model_load_script=obj["model_load_script"],
            dataset_load_script=obj["dataset_load_script"],
            verification_script=obj["verification_script"],
            params=dict(obj["params"]),
            workdir=obj["workdir"],
            result_path=obj["result_path"],
        )
    except (KeyError, TypeError) as exc:
        raise CorruptRunRecord(f"bad manifest object: {exc}") from exc


def record_to_obj(record: RunRecord) -> dict:
    return {
        "manifest": manifest_to_obj(record.manifest),
        "result": None if record.result is None else result_to_obj(record.result),
        "runner_exit_code": record.runner_exit_code,
        "started_at": format_timestamp(record.started_at),
        "finished_at": format_timestamp(record.finished_at),
        "output_log": record.output_log,
        "env_id": record.env_id,
        "asset_snapshot": {
            key: asset_to_obj(asset) for key, asset in record.asset_snapshot.items()
        },
    }


def record_from_obj(obj: object) -> RunRecord:
    if not isinstance(obj, dict):
        raise CorruptRunRecord("run record must be a JSON object")
    try:
        result_obj = obj["result"]
        result = (
            None
            if result_obj is None
            else parse_result(json.dumps(result_obj).encode("utf-8"))
        )
        snapshot_obj = obj["asset_snapshot"]
        if set(snapshot_obj) != set(SNAPSHOT_KEYS):
            raise CorruptRunRecord(
                f"asset_snapshot must have keys {SNAPSHOT_KEYS}, "
                f"got {sorted(snapshot_obj)}"
            )
        return RunRecord(
            manifest=manifest_from_obj(obj["manifest"]),
            result=result,
            runner_exit_code=int(obj["runner_exit_code"]),
            started_at=parse_timestamp(obj["started_at"]),
            finished_at=parse_timestamp(obj["finished_at"]),
            output_log=obj["output_log"],
            env_id=obj["env_id"],
            asset_snapshot={
                key: asset_from_obj(asset) for key, asset in snapshot_obj.items()
            },
        )
    except CorruptRunRecord:
        raise
    except (KeyError, TypeError, ValueError, InvalidResult) as exc:
        raise CorruptRunRecord(f"bad run record: {exc}") from exc
    except Exception as exc:  # registry parse errors carry their own types
        raise CorruptRunRecord(f"bad run record: {exc}") from exc


# ---------------------------------------------------------------------------
# planning


def _new_run_id() -> str:
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    return f"{stamp}-{secrets.token_hex(3)}"


def _check_params(params: dict) -> dict[str, ParamValue]:
    checked: dict[str, ParamValue] = {}
    for key, value in params.items():
        if not isinstance(key, str) or not key:
            raise ValueError(f"param labels must be nonempty strings, got {key!r}")
        if not isinstance(value, (str, int, float, bool)):
            raise ValueError(
                f"param {key!r} must be a string, number, or boolean, got {value!r}"
            )
        checked[key] = value
    return checked


def _check_script_readable(record: AssetRecord) -> None:
    path = Path(record.path)
    if not path.is_file() or not os.access(path, os.R_OK):
        raise FileNotReadable(
            f"script for asset {record.name!r} is not readable: {record.path}"
        )


def _check_hash(record: AssetRecord) -> None:
    actual = sha256_file(Path(record.path))
    if actual != record.content_hash:
        raise HashMismatch(
            f"asset {record.name!r} has drifted since registration: "
            f"registered {record.content_hash[:12]}.., file now {actual[:12]}.."
        )


def plan_run(
    store: Store,
    model_id: str,
    dataset_id: str,
    verif_id: str,
    params: dict[str, ParamValue] | None = None,
    *,
    strict_hash: bool = False,
) -> RunPlan:
    """Validate a selection, ready its environment, and lay out a run.

    The run directory is created, and the manifest written, only after
    the selection validates and the shared environment is Ready; a
    rejected selection leaves no trace in the store.
    """
    params = _check_params(params or {})
    registry = load_registry(store.root)
    env_setup_id = validate_selection(registry, model_id, dataset_id, verif_id)

    model = registry.get(model_id)
    dataset = registry.get(dataset_id)
    verif = registry.get(verif_id)
    env_setup = registry.get(env_setup_id)
    for record in (model, dataset, verif, env_setup):
        _check_script_readable(record)
        if strict_hash:
            _check_hash(record)

    env = ensure_ready(store, env_setup)

    store.runs_dir.mkdir(parents=True, exist_ok=True)
    while True:
        run_id = _new_run_id()
        run_dir = store.runs_dir / run_id
        if not run_dir.exists():
            break
    workdir = run_dir / "workdir"
    workdir.mkdir(parents=True)

    manifest = RunManifest(
        run_id=run_id,
        model_load_script=model.path,
        dataset_load_script=dataset.path,
        verification_script=verif.path,
        params=params,
        workdir=str(workdir),
        result_path=str(run_dir / "result.json"),
    )
    atomic_write_text(
        run_dir / "manifest.json", json.dumps(manifest_to_obj(manifest), indent=2) + "\n"
    )
    snapshot = {
        "model_load": model,
        "dataset_load": dataset,
        "verification": verif,
        "env_setup": env_setup,
    }
    return RunPlan(manifest=manifest, env=env, asset_snapshot=snapshot)


# ---------------------------------------------------------------------------
# execution


def _stream_process(
    proc: subprocess.Popen,
    log_path: Path,
    console: BinaryIO | None,
    timeout_s: float | None,
) -> tuple[int, bool]:
    """Tee the process's combined output to console and log.

    Returns (exit_code, timed_out). On timeout the whole process group
    is killed; the pipe is then drained so the log stays complete.
    """
    assert proc.stdout is not None
    fd = proc.stdout.fileno()
    deadline = None if not timeout_s else time.monotonic() + timeout_s
    # after a kill, drain whatever is buffered but never wait on a pipe a
    # runaway grandchild might still hold open
    drain_deadline = None
    timed_out = False
    selector = selectors.DefaultSelector()
    selector.register(proc.stdout, selectors.EVENT_READ)
    with open(log_path, "wb") as log_fh:
        while True:
            if timed_out:
                wait = drain_deadline - time.monotonic()
                if wait <= 0:
                    break
            else:
                wait = None
                if deadline is not None:
                    wait = deadline - time.monotonic()
                    if wait <= 0:
                        timed_out = True
                        drain_deadline = time.monotonic() + 5.0
                        try:
                            os.killpg(proc.pid, signal.SIGKILL)
                        except ProcessLookupError:
                            pass
                        continue
            ready = selector.select(timeout=wait)
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                break
            log_fh.write(chunk)
            log_fh.flush()
            if console is not None:
                console.write(chunk)
                console.flush()
    selector.close()
    return proc.wait(), timed_out


def execute_run(
    store: Store,
    plan: RunPlan,
    shim_path: Path | str,
    timeout_s: float | None = None,
    console: BinaryIO | None = None,
) -> RunRecord:
    """Run the shim in the plan's environment and persist the outcome.

    Returns the RunRecord when the runner honoured the protocol (exit 0
    and a schema-valid result, whatever the verdict). Raises
    RunnerFailure or SpawnError otherwise, with the already-persisted
    record attached; every call leaves record.json and output.log in
    the run directory. ``timeout_s`` of None or 0 means unlimited; on
    expiry the runner's process group is killed.
    """
    manifest = plan.manifest
    env = plan.env
    run_dir = manifest.run_dir
    manifest_path = run_dir / "manifest.json"
    log_path = run_dir / "output.log"
    if not manifest_path.is_file():
        raise FileNotReadable(f"manifest not persisted at {manifest_path}")
    if console is None:
        console = sys.stdout.buffer

    started_at = utc_now()

    def persist(result, exit_code, finished_at) -> RunRecord:
        record = RunRecord(
            manifest=manifest,
            result=result,
            runner_exit_code=exit_code,
            started_at=started_at,
            finished_at=finished_at,
            output_log=str(log_path),
            env_id=env.env_id,
            asset_snapshot=plan.asset_snapshot,
        )
        atomic_write_text(
            run_dir / "record.json", json.dumps(record_to_obj(record), indent=2) + "\n"
        )
        return record

    if env.state is not EnvState.READY or env.interpreter is None:
        log_path.touch()
        record = persist(None, 127, utc_now())
        raise SpawnError(
            f"environment {env.env_id} is not ready (state {env.state.value})",
            record=record,
        )

    run_env = dict(os.environ)
    run_env["SAUCER_RUN_DIR"] = str(run_dir)
    try:
        proc = subprocess.Popen(
            [str(env.interpreter), str(shim_path), str(manifest_path)],
            cwd=manifest.workdir,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            stdin=subprocess.DEVNULL,
            bufsize=0,
            env=run_env,
            start_new_session=True,
        )
    except OSError as exc:
        log_path.touch()
        record = persist(None, 127, utc_now())
        raise SpawnError(
            f"cannot spawn {env.interpreter}: {exc}", record=record
        ) from exc

    exit_code, timed_out = _stream_process(proc, log_path, console, timeout_s)
    finished_at = utc_now()

    result: RunResult | None = None
    failure_reason: str | None = None
    result_path = Path(manifest.result_path)
    if timed_out:
        failure_reason = f"run timed out after {timeout_s:g}s; process group killed"
    elif result_path.is_file():
        try:
            result = parse_result(result_path.read_bytes())
        except (OSError, InvalidResult) as exc:
            failure_reason = f"result file is unusable: {exc}"
    else:
        failure_reason = f"runner left no result file at {result_path}"

    record = persist(result, exit_code, finished_at)

    if timed_out:
        raise RunnerFailure(failure_reason, record=record)
    if exit_code != 0:
        raise RunnerFailure(
            f"runner exited with status {exit_code} (log: {log_path})",
            record=record,
        )
    if result is None:
        raise RunnerFailure(failure_reason, record=record)
    return record


# ---------------------------------------------------------------------------
# history


def _record_path(store: Store, run_id: str) -> Path:
    return store.runs_dir / run_id / "record.json"


def show_run(store: Store, run_id: str) -> RunRecord:
    path = _record_path(store, run_id)
    if not path.is_file():
        raise UnknownRun(f"no run {run_id!r} in {store.runs_dir}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptRunRecord(f"cannot parse {path}: {exc}") from exc
    return record_from_obj(obj)


def list_history(store: Store) -> list[RunSummary]:
    """Run summaries, newest first; unreadable records are skipped."""
    summaries: list[RunSummary] = []
    if not store.runs_dir.is_dir():
        return summaries
    for run_dir in store.runs_dir.iterdir():
        if not run_dir.is_dir():
            continue
        try:
            record = show_run(store, run_dir.name)
        except (UnknownRun, CorruptRunRecord):
            continue
        summaries.append(
            RunSummary(
                run_id=record.manifest.run_id,
                started_at=record.started_at,
                finished_at=record.finished_at,
                outcome=outcome_of(record),
                runner_exit_code=record.runner_exit_code,
                verification=record.asset_snapshot["verification"].name,
                env_id=record.env_id,
            )
        )
    summaries.sort(key=lambda s: (s.started_at, s.run_id), reverse=True)
    return summaries
