"""Command-line frontend.

Command grammar::

    deepsaucer [--store PATH] register --kind KIND --name NAME PATH
    deepsaucer [--store PATH] associate --asset NAME_OR_ID --env NAME_OR_ID
    deepsaucer [--store PATH] list [--kind KIND] [--json]
    deepsaucer [--store PATH] triples [--json]
    deepsaucer [--store PATH] env provision --env NAME_OR_ID
    deepsaucer [--store PATH] env status [--json]
    deepsaucer [--store PATH] env gc
    deepsaucer [--store PATH] run --model M --dataset D --verify V
               [--param key=value]... [--timeout SECONDS] [--strict-hash] [--json]
    deepsaucer [--store PATH] history list [--json]
    deepsaucer [--store PATH] history show RUN_ID [--json]

The store root is ``--store`` when given, else ``$SAUCER_HOME``, else
``~/.deepsaucer``. Exit codes: 0 success or verdict pass, 1 verdict
fail, 2 usage error, 3 environment/provisioning error, 4 incompatible
or invalid selection, 5 runner failure or invalid result.
"""

from __future__ import annotations

import argparse
import importlib.util
import json
import os
import sys
from pathlib import Path

from . import environments, registry as registry_mod, runs
from .environments import EnvRecord, env_id_for, get_env_record
from .errors import (
    AmbiguousAsset,
    CorruptRegistry,
    CorruptRunRecord,
    DeepSaucerError,
    DuplicateName,
    FileNotReadable,
    HashMismatch,
    IncompatibleEnvironments,
    InvalidResult,
    KindMismatch,
    LockTimeout,
    ProvisionFailed,
    RunnerFailure,
    SpawnError,
    StoreLocked,
    Unassociated,
    UnknownAsset,
    UnknownRun,
)
from .registry import (
    AssetKind,
    AssetRecord,
    Registry,
    asset_to_obj,
    compatible_triples,
    find_asset,
    list_assets,
    load_registry,
)
from .store import Store, format_timestamp

EXIT_OK = 0
EXIT_VERDICT_FAIL = 1
EXIT_USAGE = 2
EXIT_ENVIRONMENT = 3
EXIT_SELECTION = 4
EXIT_RUNNER = 5

KIND_TOKENS = {
    "model-load": AssetKind.MODEL_LOAD,
    "dataset-load": AssetKind.DATASET_LOAD,
    "verification": AssetKind.VERIFICATION,
    "env-setup": AssetKind.ENV_SETUP,
}

# Outcome buckets: infrastructure trouble is 3, naming or selecting the
# wrong assets is 4, anything that kept a run from yielding a usable
# verdict is 5.
_ERROR_CODES: list[tuple[type[DeepSaucerError], int]] = [
    (ProvisionFailed, EXIT_ENVIRONMENT),
    (StoreLocked, EXIT_ENVIRONMENT),
    (LockTimeout, EXIT_ENVIRONMENT),
    (CorruptRegistry, EXIT_ENVIRONMENT),
    (IncompatibleEnvironments, EXIT_SELECTION),
    (Unassociated, EXIT_SELECTION),
    (KindMismatch, EXIT_SELECTION),
    (UnknownAsset, EXIT_SELECTION),
    (AmbiguousAsset, EXIT_SELECTION),
    (DuplicateName, EXIT_SELECTION),
    (FileNotReadable, EXIT_SELECTION),
    (HashMismatch, EXIT_SELECTION),
    (UnknownRun, EXIT_SELECTION),
    (RunnerFailure, EXIT_RUNNER),
    (SpawnError, EXIT_RUNNER),
    (InvalidResult, EXIT_RUNNER),
    (CorruptRunRecord, EXIT_RUNNER),
]


def exit_code_for_error(error: DeepSaucerError) -> int:
    for cls, code in _ERROR_CODES:
        if isinstance(error, cls):
            return code
    return EXIT_RUNNER


def exit_code_for_record(record: runs.RunRecord) -> int:
    """Map a run record's outcome to its exit code; pure and total."""
    outcome = runs.outcome_of(record)
    if outcome == "pass":
        return EXIT_OK
    if outcome == "fail":
        return EXIT_VERDICT_FAIL
    return EXIT_RUNNER


def resolve_store_root(flag_value: str | None) -> Path:
    if flag_value:
        return Path(flag_value)
    env_value = os.environ.get("SAUCER_HOME")
    if env_value:
        return Path(env_value)
    return Path.home() / ".deepsaucer"


def resolve_shim_path() -> Path:
    """Locate the in-environment runner shim file.

    ``SAUCER_SHIM`` wins; otherwise the installed runner package is
    looked up by file path only (it is never imported here, since it
    runs under the provisioned interpreter).
    """
    override = os.environ.get("SAUCER_SHIM")
    if override:
        path = Path(override)
        if not path.is_file():
            raise SpawnError(f"SAUCER_SHIM points at a missing file: {path}")
        return path
    spec = importlib.util.find_spec("deepsaucer_runner")
    if spec is not None and spec.origin:
        path = Path(spec.origin).parent / "shim.py"
        if path.is_file():
            return path
    raise SpawnError(
        "no runner shim found: set SAUCER_SHIM or install deepsaucer-runner"
    )


# ---------------------------------------------------------------------------
# rendering


def _table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip()]
    for row in rows:
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)).rstrip())
    return "\n".join(lines)


def _env_column(registry: Registry, record: AssetRecord) -> str:
    if record.env_setup_ref is None:
        return "-"
    try:
        return registry.get(record.env_setup_ref).name
    except UnknownAsset:
        return record.env_setup_ref


def render_assets(records: list[AssetRecord], registry: Registry) -> str:
    headers = ["ID", "KIND", "NAME", "ENV", "PATH"]
    if not records:
        return _table(headers, []) + "\nno assets"
    rows = []
    for record in records:
        path = record.path
        if not Path(record.path).is_file():
            path += " (missing)"
        rows.append(
            [record.id, record.kind.value, record.name,
             _env_column(registry, record), path]
        )
    return _table(headers, rows)


def render_triples(
    mapping: dict[str, list[tuple[str, str, str]]], registry: Registry
) -> str:
    if not mapping:
        return "no environment-setup assets registered"
    blocks = []
    for env_id, triples in mapping.items():
        env_name = registry.get(env_id).name
        lines = [f"environment {env_name} ({env_id}):"]
        if not triples:
            lines.append("  (no runnable triples)")
        for model_id, dataset_id, verif_id in triples:
            lines.append(
                "  "
                + " / ".join(
                    registry.get(asset_id).name
                    for asset_id in (model_id, dataset_id, verif_id)
                )
            )
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def _render_env_record(record: EnvRecord, setup_names: list[str]) -> list[str]:
    return [
        record.env_id,
        record.state.value,
        ",".join(setup_names) or "-",
        str(record.interpreter) if record.interpreter else "-",
    ]


def _render_result(result: runs.RunResult) -> str:
    lines = [f"verdict: {result.verdict}"]
    if result.failed_stage:
        lines.append(f"failed stage: {result.failed_stage}")
    for stage in runs.STAGES:
        if stage in result.stage_timings:
            lines.append(f"  {stage}: {result.stage_timings[stage]:.3f}s")
    for label in sorted(result.metrics):
        lines.append(f"  metric {label} = {result.metrics[label]:g}")
    for message in result.messages:
        lines.append(f"  note: {message}")
    return "\n".join(lines)


def _render_record(record: runs.RunRecord) -> str:
    lines = [
        f"run {record.manifest.run_id}: {runs.outcome_of(record)}",
        f"started:  {format_timestamp(record.started_at)}",
        f"finished: {format_timestamp(record.finished_at)}",
        f"runner exit code: {record.runner_exit_code}",
        f"environment: {record.env_id}",
        f"output log: {record.output_log}",
    ]
    if record.result is not None:
        lines.append(_render_result(record.result))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# argument parsing


def _parse_param(text: str) -> tuple[str, runs.ParamValue]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ValueError(f"--param expects key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        return key, raw
    if isinstance(value, bool) or isinstance(value, (int, float)):
        return key, value
    if isinstance(value, str):
        return key, value
    return key, raw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepsaucer",
        description="Retain, associate, and run verification script assets.",
    )
    parser.add_argument("--store", metavar="PATH", help="store root directory")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("register", help="register a script as an asset")
    p.add_argument("--kind", required=True, choices=sorted(KIND_TOKENS))
    p.add_argument("--name", required=True)
    p.add_argument("path", metavar="PATH")

    p = commands.add_parser("associate", help="link a script to an environment")
    p.add_argument("--asset", required=True, metavar="NAME_OR_ID")
    p.add_argument("--env", required=True, metavar="NAME_OR_ID")

    p = commands.add_parser("list", help="list registered assets")
    p.add_argument("--kind", choices=sorted(KIND_TOKENS))
    p.add_argument("--json", action="store_true")

    p = commands.add_parser("triples", help="show runnable selections per environment")
    p.add_argument("--json", action="store_true")

    p = commands.add_parser("env", help="manage provisioned environments")
    env_commands = p.add_subparsers(dest="env_command", required=True)
    p = env_commands.add_parser("provision", help="provision from scratch")
    p.add_argument("--env", required=True, metavar="NAME_OR_ID")
    p = env_commands.add_parser("status", help="show environment states")
    p.add_argument("--json", action="store_true")
    env_commands.add_parser("gc", help="remove orphaned environments")

    p = commands.add_parser("run", help="execute a verification run")
    p.add_argument("--model", required=True, metavar="NAME_OR_ID")
    p.add_argument("--dataset", required=True, metavar="NAME_OR_ID")
    p.add_argument("--verify", required=True, metavar="NAME_OR_ID")
    p.add_argument(
        "--param", action="append", default=[], metavar="KEY=VALUE",
        help="passed to all three scripts; repeatable",
    )
    p.add_argument("--timeout", type=float, default=0.0, metavar="SECONDS",
                   help="kill the run after this long; 0 means unlimited")
    p.add_argument("--strict-hash", action="store_true",
                   help="refuse to run scripts whose bytes drifted since registration")
    p.add_argument("--json", action="store_true")

    p = commands.add_parser("history", help="inspect past runs")
    history_commands = p.add_subparsers(dest="history_command", required=True)
    p = history_commands.add_parser("list", help="list run summaries")
    p.add_argument("--json", action="store_true")
    p = history_commands.add_parser("show", help="show one run record")
    p.add_argument("run_id", metavar="RUN_ID")
    p.add_argument("--json", action="store_true")

    return parser


# ---------------------------------------------------------------------------
# command handlers


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2))


def _cmd_register(store: Store, args) -> int:
    record = registry_mod.register_asset(
        store, Path(args.path), KIND_TOKENS[args.kind], args.name
    )
    print(
        f"registered {record.kind.value} {record.name!r} (id {record.id})\n"
        f"  path:   {record.path}\n"
        f"  sha256: {record.content_hash}"
    )
    return EXIT_OK


def _cmd_associate(store: Store, args) -> int:
    registry = load_registry(store.root)
    asset = find_asset(registry, args.asset)
    env_asset = find_asset(registry, args.env, kind=AssetKind.ENV_SETUP)
    updated = registry_mod.associate(store, asset.id, env_asset.id)
    print(
        f"associated {updated.kind.value} {updated.name!r} "
        f"with env-setup {env_asset.name!r}"
    )
    return EXIT_OK


def _cmd_list(store: Store, args) -> int:
    registry = load_registry(store.root)
    kind = KIND_TOKENS[args.kind] if args.kind else None
    records = list_assets(registry, kind)
    if args.json:
        _print_json([asset_to_obj(record) for record in records])
    else:
        print(render_assets(records, registry))
    return EXIT_OK


def _cmd_triples(store: Store, args) -> int:
    registry = load_registry(store.root)
    mapping = compatible_triples(registry)
    if args.json:
        _print_json({env: [list(t) for t in triples] for env, triples in mapping.items()})
    else:
        print(render_triples(mapping, registry))
    return EXIT_OK


def _env_setup_ids_by_current_hash(store: Store, registry: Registry) -> dict[str, list[str]]:
    mapping: dict[str, list[str]] = {}
    for record in registry.by_kind(AssetKind.ENV_SETUP):
        try:
            env_id = env_id_for(Path(record.path).read_bytes())
        except OSError:
            env_id = record.content_hash[: environments.ENV_ID_LEN]
        mapping.setdefault(env_id, []).append(record.name)
    return mapping


def _cmd_env_provision(store: Store, args) -> int:
    registry = load_registry(store.root)
    env_asset = find_asset(registry, args.env, kind=AssetKind.ENV_SETUP)
    record = environments.provision(store, env_asset)
    print(
        f"environment {record.env_id} ready\n"
        f"  root:        {record.root}\n"
        f"  interpreter: {record.interpreter}"
    )
    return EXIT_OK


def _cmd_env_status(store: Store, args) -> int:
    registry = load_registry(store.root)
    by_hash = _env_setup_ids_by_current_hash(store, registry)
    env_ids = sorted(set(environments.list_env_ids(store)) | set(by_hash))
    records = [get_env_record(store, env_id) for env_id in env_ids]
    if args.json:
        _print_json(
            [
                {
                    "env_id": record.env_id,
                    "state": record.state.value,
                    "root": str(record.root),
                    "interpreter": (
                        None if record.interpreter is None else str(record.interpreter)
                    ),
                    "provisioned_at": (
                        None
                        if record.provisioned_at is None
                        else format_timestamp(record.provisioned_at)
                    ),
                    "log_path": str(record.log_path),
                    "setup_assets": by_hash.get(record.env_id, []),
                }
                for record in records
            ]
        )
        return EXIT_OK
    if not records:
        print("no environments")
        return EXIT_OK
    rows = [_render_env_record(r, by_hash.get(r.env_id, [])) for r in records]
    print(_table(["ENV_ID", "STATE", "SETUP_ASSETS", "INTERPRETER"], rows))
    return EXIT_OK


def _cmd_env_gc(store: Store, args) -> int:
    registry = load_registry(store.root)
    removed = environments.gc(store, registry)
    if removed:
        for env_id in removed:
            print(f"removed environment {env_id}")
    else:
        print("no orphaned environments")
    return EXIT_OK


def _cmd_run(store: Store, args) -> int:
    registry = load_registry(store.root)
    model = find_asset(registry, args.model, kind=AssetKind.MODEL_LOAD)
    dataset = find_asset(registry, args.dataset, kind=AssetKind.DATASET_LOAD)
    verif = find_asset(registry, args.verify, kind=AssetKind.VERIFICATION)
    params = dict(_parse_param(item) for item in args.param)

    plan = runs.plan_run(
        store, model.id, dataset.id, verif.id, params, strict_hash=args.strict_hash
    )
    shim = resolve_shim_path()
    # With --json the child's output goes to stderr so stdout stays a
    # single machine-readable record.
    console = sys.stderr.buffer if args.json else sys.stdout.buffer
    try:
        record = runs.execute_run(
            store, plan, shim, timeout_s=args.timeout or None, console=console
        )
    except (RunnerFailure, SpawnError) as exc:
        if exc.record is not None:
            _finish_run(exc.record, args.json)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNNER
    _finish_run(record, args.json)
    return exit_code_for_record(record)


def _finish_run(record: runs.RunRecord, as_json: bool) -> None:
    if as_json:
        _print_json(runs.record_to_obj(record))
    else:
        print(_render_record(record))


def _cmd_history_list(store: Store, args) -> int:
    summaries = runs.list_history(store)
    if args.json:
        _print_json(
            [
                runs.record_to_obj(runs.show_run(store, summary.run_id))
                for summary in summaries
            ]
        )
        return EXIT_OK
    if not summaries:
        print("no runs recorded")
        return EXIT_OK
    rows = [
        [
            summary.run_id,
            format_timestamp(summary.started_at),
            summary.outcome,
            str(summary.runner_exit_code),
            summary.verification,
            summary.env_id,
        ]
        for summary in summaries
    ]
    print(_table(["RUN_ID", "STARTED", "OUTCOME", "EXIT", "VERIFICATION", "ENV"], rows))
    return EXIT_OK


def _cmd_history_show(store: Store, args) -> int:
    record = runs.show_run(store, args.run_id)
    if args.json:
        _print_json(runs.record_to_obj(record))
    else:
        print(_render_record(record))
    return EXIT_OK


def dispatch(argv: list[str]) -> int:
    """Parse argv, run the command, and return the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    store = Store(resolve_store_root(args.store))
    handler = {
        "register": _cmd_register,
        "associate": _cmd_associate,
        "list": _cmd_list,
        "triples": _cmd_triples,
        "run": _cmd_run,
    }.get(args.command)
    if handler is None:
        if args.command == "env":
            handler = {
                "provision": _cmd_env_provision,
                "status": _cmd_env_status,
                "gc": _cmd_env_gc,
            }[args.env_command]
        else:
            handler = {
                "list": _cmd_history_list,
                "show": _cmd_history_show,
            }[args.history_command]

    try:
        return handler(store, args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DeepSaucerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for_error(exc)


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
