"""Shared fixtures-in-spirit: script factories and random registries."""

from __future__ import annotations

import os
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

from deepsaucer.registry import (
    FUNCTIONAL_KINDS,
    AssetKind,
    AssetRecord,
    Registry,
)

PYTHON = os.path.realpath("/usr/bin/python3")


def write_script(path: Path, body: str, executable: bool = False) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(body, encoding="utf-8")
    if executable:
        path.chmod(0o755)
    return path


def ok_setup_script(path: Path, interpreter: str = PYTHON, extra: str = "") -> Path:
    """A setup script that satisfies the provisioning contract."""
    return write_script(
        path,
        "set -eu\n"
        f"{extra}"
        f"printf '%s\\n' {interpreter} > \"$1/interpreter\"\n",
    )


def counter_setup_script(path: Path, counter: Path, delay_s: float = 0.0) -> Path:
    """A setup script that counts its own executions."""
    sleep = f"sleep {delay_s}\n" if delay_s else ""
    return write_script(
        path,
        "set -eu\n"
        f"echo x >> {counter}\n"
        f"{sleep}"
        f"printf '%s\\n' {PYTHON} > \"$1/interpreter\"\n",
    )


def stub_interpreter(path: Path, body: str) -> Path:
    """An executable shell script usable as an environment interpreter."""
    return write_script(path, "#!/bin/sh\n" + body, executable=True)


def result_stub_interpreter(path: Path, result_json: str, exit_code: int = 0) -> Path:
    """An interpreter that writes a canned result document and exits."""
    return stub_interpreter(
        path,
        f"cat > \"$SAUCER_RUN_DIR/result.json\" <<'RESULT_EOF'\n"
        f"{result_json}\n"
        f"RESULT_EOF\n"
        f"exit {exit_code}\n",
    )


PASS_RESULT = (
    '{"schema_version":1,"verdict":"pass",'
    '"stage_timings":{"model_load":0.0,"dataset_load":0.0,"verification":0.0},'
    '"metrics":{},"messages":[]}'
)
FAIL_RESULT = PASS_RESULT.replace('"pass"', '"fail"')
ERROR_RESULT = (
    '{"schema_version":1,"verdict":"error","failed_stage":"verification",'
    '"stage_timings":{"model_load":0.0,"dataset_load":0.0},'
    '"metrics":{},"messages":["boom"]}'
)


# ---------------------------------------------------------------------------
# random registries (in-memory, no files behind the paths)


def _unique_id(rng: random.Random, taken: set[str]) -> str:
    while True:
        candidate = f"{rng.getrandbits(48):012x}"
        if candidate not in taken:
            taken.add(candidate)
            return candidate


def _random_hash(rng: random.Random) -> str:
    return f"{rng.getrandbits(256):064x}"


def _random_timestamp(rng: random.Random) -> datetime:
    base = datetime(2020, 1, 1, tzinfo=timezone.utc)
    return base + timedelta(
        seconds=rng.randint(0, 10**8), microseconds=rng.randint(0, 999_999)
    )


def random_registry(
    rng: random.Random, max_assets: int = 12, max_envs: int = 3
) -> Registry:
    """A structurally valid registry with a mix of associations."""
    taken: set[str] = set()
    assets: list[AssetRecord] = []
    env_ids: list[str] = []
    for index in range(rng.randint(0, max_envs)):
        asset_id = _unique_id(rng, taken)
        assets.append(
            AssetRecord(
                id=asset_id,
                name=f"env{index}",
                kind=AssetKind.ENV_SETUP,
                path=f"/fake/env{index}.sh",
                content_hash=_random_hash(rng),
                env_setup_ref=None,
                registered_at=_random_timestamp(rng),
            )
        )
        env_ids.append(asset_id)

    remaining = max(0, max_assets - len(assets))
    for index in range(rng.randint(0, remaining)):
        kind = rng.choice(FUNCTIONAL_KINDS)
        # roughly one unassociated asset in three
        ref = rng.choice(env_ids) if env_ids and rng.random() < 0.67 else None
        assets.append(
            AssetRecord(
                id=_unique_id(rng, taken),
                name=f"{kind.value}-{index}",
                kind=kind,
                path=f"/fake/{kind.value}-{index}.py",
                content_hash=_random_hash(rng),
                env_setup_ref=ref,
                registered_at=_random_timestamp(rng),
            )
        )
    rng.shuffle(assets)
    return Registry(assets=assets)


def brute_force_triples(registry: Registry) -> dict[str, set[tuple[str, str, str]]]:
    """Independent enumeration of runnable triples per environment."""
    result: dict[str, set[tuple[str, str, str]]] = {}
    for env in registry.assets:
        if env.kind is not AssetKind.ENV_SETUP:
            continue
        triples = set()
        for model in registry.assets:
            for dataset in registry.assets:
                for verif in registry.assets:
                    if (
                        model.kind is AssetKind.MODEL_LOAD
                        and dataset.kind is AssetKind.DATASET_LOAD
                        and verif.kind is AssetKind.VERIFICATION
                        and model.env_setup_ref == env.id
                        and dataset.env_setup_ref == env.id
                        and verif.env_setup_ref == env.id
                    ):
                        triples.add((model.id, dataset.id, verif.id))
        result[env.id] = triples
    return result
