"""Durable catalog of functional and environment-setup scripts.

The registry persists to ``<store_root>/registry.json`` as UTF-8 JSON:

    {"schema_version": 1,
     "assets": [{"id", "name", "kind", "path", "content_hash",
                 "env_setup_ref", "registered_at"}, ...]}

Functional scripts (model-load, dataset-load, verification) may carry a
single association to an environment-setup asset; a selection of three
functional scripts is runnable only when all three share one
association. Mutations take the store's advisory registry lock; loads
are lock-free because writes are atomic renames.
"""

from __future__ import annotations

import itertools
import json
import os
import re
import secrets
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import (
    AmbiguousAsset,
    CorruptRegistry,
    DuplicateName,
    FileNotReadable,
    IncompatibleEnvironments,
    KindMismatch,
    Unassociated,
    UnknownAsset,
)
from .store import (
    Store,
    atomic_write_text,
    format_timestamp,
    parse_timestamp,
    sha256_hex,
    utc_now,
)

SCHEMA_VERSION = 1

_HASH_RE = re.compile(r"^[0-9a-f]{64}$")
_ASSET_FIELDS = {
    "id",
    "name",
    "kind",
    "path",
    "content_hash",
    "env_setup_ref",
    "registered_at",
}


class AssetKind(Enum):
    """The four script kinds the catalog retains."""

    MODEL_LOAD = "model_load"
    DATASET_LOAD = "dataset_load"
    VERIFICATION = "verification"
    ENV_SETUP = "env_setup"

    @property
    def order(self) -> int:
        return _KIND_ORDER[self]

    @property
    def is_functional(self) -> bool:
        return self is not AssetKind.ENV_SETUP


_KIND_ORDER = {kind: index for index, kind in enumerate(AssetKind)}

FUNCTIONAL_KINDS = (
    AssetKind.MODEL_LOAD,
    AssetKind.DATASET_LOAD,
    AssetKind.VERIFICATION,
)


@dataclass(frozen=True)
class AssetRecord:
    """One registered script.

    ``content_hash`` captures SHA-256 of the file bytes at registration
    time; the file itself is never copied into the store. Environment-
    setup assets never carry an ``env_setup_ref`` of their own.
    """

    id: str
    name: str
    kind: AssetKind
    path: str
    content_hash: str
    env_setup_ref: str | None
    registered_at: datetime


@dataclass
class Registry:
    schema_version: int = SCHEMA_VERSION
    assets: list[AssetRecord] = field(default_factory=list)

    def get(self, asset_id: str) -> AssetRecord:
        for record in self.assets:
            if record.id == asset_id:
                return record
        raise UnknownAsset(f"no asset with id {asset_id!r}")

    def by_kind(self, kind: AssetKind) -> list[AssetRecord]:
        return [record for record in self.assets if record.kind is kind]


# ---------------------------------------------------------------------------
# serialization


def asset_to_obj(record: AssetRecord) -> dict:
    return {
        "id": record.id,
        "name": record.name,
        "kind": record.kind.value,
        "path": record.path,
        "content_hash": record.content_hash,
        "env_setup_ref": record.env_setup_ref,
        "registered_at": format_timestamp(record.registered_at),
    }


def asset_from_obj(obj: object) -> AssetRecord:
    """Parse one asset object, raising CorruptRegistry on any defect."""
    if not isinstance(obj, dict):
        raise CorruptRegistry(f"asset entry must be an object, got {type(obj).__name__}")
    unknown = set(obj) - _ASSET_FIELDS
    if unknown:
        raise CorruptRegistry(f"asset entry has unknown fields: {sorted(unknown)}")
    missing = _ASSET_FIELDS - set(obj)
    if missing:
        raise CorruptRegistry(f"asset entry lacks fields: {sorted(missing)}")

    kind_value = obj["kind"]
    try:
        kind = AssetKind(kind_value)
    except ValueError:
        raise CorruptRegistry(f"unknown asset kind {kind_value!r}") from None

    for key in ("id", "name", "path", "content_hash"):
        if not isinstance(obj[key], str) or not obj[key]:
            raise CorruptRegistry(f"asset field {key!r} must be a nonempty string")
    if not _HASH_RE.match(obj["content_hash"]):
        raise CorruptRegistry(
            f"content_hash must be 64 lowercase hex chars, got {obj['content_hash']!r}"
        )
    if not Path(obj["path"]).is_absolute():
        raise CorruptRegistry(f"asset path must be absolute, got {obj['path']!r}")
    ref = obj["env_setup_ref"]
    if ref is not None and (not isinstance(ref, str) or not ref):
        raise CorruptRegistry("env_setup_ref must be null or a nonempty string")
    try:
        registered_at = parse_timestamp(obj["registered_at"])
    except ValueError as exc:
        raise CorruptRegistry(f"bad registered_at: {exc}") from None

    return AssetRecord(
        id=obj["id"],
        name=obj["name"],
        kind=kind,
        path=obj["path"],
        content_hash=obj["content_hash"],
        env_setup_ref=ref,
        registered_at=registered_at,
    )


def registry_to_obj(registry: Registry) -> dict:
    return {
        "schema_version": registry.schema_version,
        "assets": [asset_to_obj(record) for record in registry.assets],
    }


def registry_from_obj(obj: object) -> Registry:
    if not isinstance(obj, dict):
        raise CorruptRegistry("registry document must be a JSON object")
    unknown = set(obj) - {"schema_version", "assets"}
    if unknown:
        raise CorruptRegistry(f"registry has unknown fields: {sorted(unknown)}")
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CorruptRegistry(f"unsupported schema_version {version!r}")
    assets_obj = obj.get("assets")
    if not isinstance(assets_obj, list):
        raise CorruptRegistry("registry 'assets' must be a list")
    registry = Registry(
        schema_version=version,
        assets=[asset_from_obj(entry) for entry in assets_obj],
    )
    check_integrity(registry)
    return registry


def check_integrity(registry: Registry) -> None:
    """Raise CorruptRegistry on duplicate ids/names or dangling refs."""
    ids: set[str] = set()
    names: set[tuple[str, AssetKind]] = set()
    env_ids = {r.id for r in registry.assets if r.kind is AssetKind.ENV_SETUP}
    for record in registry.assets:
        if record.id in ids:
            raise CorruptRegistry(f"duplicate asset id {record.id!r}")
        ids.add(record.id)
        key = (record.name, record.kind)
        if key in names:
            raise CorruptRegistry(
                f"duplicate (name, kind): ({record.name!r}, {record.kind.value})"
            )
        names.add(key)
        if record.kind is AssetKind.ENV_SETUP:
            if record.env_setup_ref is not None:
                raise CorruptRegistry(
                    f"env-setup asset {record.name!r} must not carry env_setup_ref"
                )
        elif record.env_setup_ref is not None and record.env_setup_ref not in env_ids:
            raise CorruptRegistry(
                f"asset {record.name!r} references unknown env-setup "
                f"{record.env_setup_ref!r}"
            )


def load_registry(store_root: Path | str) -> Registry:
    """Load the registry; a store without one yet is an empty registry."""
    path = Store(Path(store_root)).registry_path
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        return Registry()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptRegistry(f"cannot read {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptRegistry(f"{path} is not valid JSON: {exc}") from exc
    return registry_from_obj(obj)


def commit_registry(store_root: Path | str, registry: Registry) -> None:
    """Atomically persist the registry under the store's registry lock."""
    store = store_root if isinstance(store_root, Store) else Store(Path(store_root))
    check_integrity(registry)
    with store.registry_lock():
        _write_registry(store, registry)


def _write_registry(store: Store, registry: Registry) -> None:
    text = json.dumps(registry_to_obj(registry), indent=2) + "\n"
    atomic_write_text(store.registry_path, text)


# ---------------------------------------------------------------------------
# mutations


def _new_asset_id(existing: Iterable[str]) -> str:
    taken = set(existing)
    while True:
        candidate = secrets.token_hex(6)
        if candidate not in taken:
            return candidate


def register_asset(store: Store, path: Path | str, kind: AssetKind, name: str) -> AssetRecord:
    """Register the script at ``path`` and persist its content hash.

    Raises FileNotReadable when the file cannot be read, DuplicateName
    when (name, kind) is already taken, StoreLocked on lock timeout.
    """
    if not isinstance(kind, AssetKind):
        raise KindMismatch(f"not an asset kind: {kind!r}")
    if not name:
        raise ValueError("asset name must be nonempty")
    abs_path = Path(os.path.abspath(path))
    try:
        content = abs_path.read_bytes()
    except OSError as exc:
        raise FileNotReadable(f"cannot read {abs_path}: {exc}") from exc

    with store.registry_lock():
        registry = load_registry(store.root)
        for record in registry.assets:
            if record.name == name and record.kind is kind:
                raise DuplicateName(
                    f"an asset named {name!r} of kind {kind.value} already exists "
                    f"(id {record.id})"
                )
        record = AssetRecord(
            id=_new_asset_id(r.id for r in registry.assets),
            name=name,
            kind=kind,
            path=str(abs_path),
            content_hash=sha256_hex(content),
            env_setup_ref=None,
            registered_at=utc_now(),
        )
        registry.assets.append(record)
        _write_registry(store, registry)
    return record


def associate(store: Store, asset_id: str, env_setup_id: str) -> AssetRecord:
    """Link a functional asset to an environment-setup asset.

    Re-association overwrites the previous link; only one environment
    per functional script is retained.
    """
    with store.registry_lock():
        registry = load_registry(store.root)
        target = registry.get(asset_id)
        referent = registry.get(env_setup_id)
        if target.kind is AssetKind.ENV_SETUP:
            raise KindMismatch(
                f"asset {target.name!r} is an env-setup script and cannot be "
                "associated with an environment"
            )
        if referent.kind is not AssetKind.ENV_SETUP:
            raise KindMismatch(
                f"asset {referent.name!r} has kind {referent.kind.value}, "
                "expected env_setup"
            )
        updated = replace(target, env_setup_ref=referent.id)
        registry.assets = [
            updated if record.id == target.id else record for record in registry.assets
        ]
        _write_registry(store, registry)
    return updated


def remove_asset(store: Store, asset_id: str) -> None:
    """Remove an asset; removing an env-setup asset clears links to it.

    Run history is untouched: records store snapshots of the assets as
    they were at run time.
    """
    with store.registry_lock():
        registry = load_registry(store.root)
        target = registry.get(asset_id)
        remaining = [record for record in registry.assets if record.id != asset_id]
        if target.kind is AssetKind.ENV_SETUP:
            remaining = [
                replace(record, env_setup_ref=None)
                if record.env_setup_ref == asset_id
                else record
                for record in remaining
            ]
        registry.assets = remaining
        _write_registry(store, registry)


# ---------------------------------------------------------------------------
# queries


def list_assets(registry: Registry, kind: AssetKind | None = None) -> list[AssetRecord]:
    records = registry.assets if kind is None else registry.by_kind(kind)
    return sorted(records, key=lambda r: (r.kind.order, r.name))


def find_asset(
    registry: Registry, ref: str, kind: AssetKind | None = None
) -> AssetRecord:
    """Resolve a user-supplied id or name to a record.

    Exact id matches win; otherwise the name is looked up within
    ``kind`` when given, else across all kinds. A name shared by
    several assets is rejected rather than guessed at.
    """
    for record in registry.assets:
        if record.id == ref:
            return record
    candidates = [
        record
        for record in registry.assets
        if record.name == ref and (kind is None or record.kind is kind)
    ]
    if not candidates:
        scope = f" of kind {kind.value}" if kind else ""
        raise UnknownAsset(f"no asset{scope} with id or name {ref!r}")
    if len(candidates) > 1:
        kinds = ", ".join(sorted(record.kind.value for record in candidates))
        raise AmbiguousAsset(
            f"name {ref!r} matches several assets ({kinds}); use an id"
        )
    return candidates[0]


def _require_kind(record: AssetRecord, kind: AssetKind) -> None:
    if record.kind is not kind:
        raise KindMismatch(
            f"asset {record.name!r} has kind {record.kind.value}, "
            f"expected {kind.value}"
        )


def _env_label(registry: Registry, env_setup_ref: str | None) -> str:
    if env_setup_ref is None:
        return "(unassociated)"
    try:
        return f"{registry.get(env_setup_ref).name} ({env_setup_ref})"
    except UnknownAsset:
        return f"({env_setup_ref})"


def validate_selection(
    registry: Registry, model_id: str, dataset_id: str, verif_id: str
) -> str:
    """Check that a (model, dataset, verification) triple is runnable.

    Returns the shared environment-setup asset id. Raises Unassociated
    when any selected script lacks an association, and
    IncompatibleEnvironments, naming each asset and its environment,
    when the associations differ.
    """
    model = registry.get(model_id)
    dataset = registry.get(dataset_id)
    verif = registry.get(verif_id)
    _require_kind(model, AssetKind.MODEL_LOAD)
    _require_kind(dataset, AssetKind.DATASET_LOAD)
    _require_kind(verif, AssetKind.VERIFICATION)

    selected = (model, dataset, verif)
    missing = [record.name for record in selected if record.env_setup_ref is None]
    if missing:
        raise Unassociated(
            "selection is not runnable; no environment association for: "
            + ", ".join(repr(name) for name in missing)
        )
    refs = {record.env_setup_ref for record in selected}
    if len(refs) > 1:
        detail = "; ".join(
            f"{record.name} -> {_env_label(registry, record.env_setup_ref)}"
            for record in selected
        )
        raise IncompatibleEnvironments(
            f"selected scripts span different environments: {detail}"
        )
    return selected[0].env_setup_ref  # type: ignore[return-value]


def compatible_triples(registry: Registry) -> dict[str, list[tuple[str, str, str]]]:
    """All runnable triples, grouped by environment-setup asset id.

    Every registered env-setup asset appears as a key; environments
    missing any of the three functional kinds map to an empty list.
    Triples are ordered by (model, dataset, verification) asset name.
    """
    env_assets = sorted(registry.by_kind(AssetKind.ENV_SETUP), key=lambda r: r.name)
    by_name = lambda r: r.name  # noqa: E731
    result: dict[str, list[tuple[str, str, str]]] = {}
    for env in env_assets:
        factors = []
        for kind in FUNCTIONAL_KINDS:
            factors.append(
                sorted(
                    (r for r in registry.by_kind(kind) if r.env_setup_ref == env.id),
                    key=by_name,
                )
            )
        result[env.id] = [
            (m.id, d.id, v.id) for m, d, v in itertools.product(*factors)
        ]
    return result
