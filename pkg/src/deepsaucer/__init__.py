"""Retain, associate, and run verification script assets in reusable environments."""

from .environments import (
    EnvRecord,
    EnvState,
    ensure_ready,
    env_id_for,
    env_status,
    gc,
    get_env_record,
    provision,
)
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
    associate,
    commit_registry,
    compatible_triples,
    find_asset,
    list_assets,
    load_registry,
    register_asset,
    remove_asset,
    validate_selection,
)
from .runs import (
    RunManifest,
    RunPlan,
    RunRecord,
    RunResult,
    RunSummary,
    execute_run,
    list_history,
    outcome_of,
    parse_result,
    plan_run,
    show_run,
)
from .store import Store

__version__ = "0.1.0"

__all__ = [
    "AmbiguousAsset",
    "AssetKind",
    "AssetRecord",
    "CorruptRegistry",
    "CorruptRunRecord",
    "DeepSaucerError",
    "DuplicateName",
    "EnvRecord",
    "EnvState",
    "FileNotReadable",
    "HashMismatch",
    "IncompatibleEnvironments",
    "InvalidResult",
    "KindMismatch",
    "LockTimeout",
    "ProvisionFailed",
    "Registry",
    "RunManifest",
    "RunPlan",
    "RunRecord",
    "RunResult",
    "RunSummary",
    "RunnerFailure",
    "SpawnError",
    "Store",
    "StoreLocked",
    "Unassociated",
    "UnknownAsset",
    "UnknownRun",
    "associate",
    "commit_registry",
    "compatible_triples",
    "ensure_ready",
    "env_id_for",
    "env_status",
    "execute_run",
    "find_asset",
    "gc",
    "get_env_record",
    "list_assets",
    "list_history",
    "load_registry",
    "outcome_of",
    "parse_result",
    "plan_run",
    "provision",
    "register_asset",
    "remove_asset",
    "show_run",
    "validate_selection",
]
