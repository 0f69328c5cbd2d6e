import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import pytest

from deepsaucer.environments import (
    EnvState,
    ensure_ready,
    env_id_for,
    env_log_path,
    env_root,
    env_status,
    gc,
    get_env_record,
    list_env_ids,
    provision,
)
from deepsaucer.errors import FileNotReadable, KindMismatch, ProvisionFailed
from deepsaucer.registry import AssetKind, load_registry, register_asset
from deepsaucer.store import Store

from util import PYTHON, counter_setup_script, ok_setup_script, write_script


def _register_setup(store, path, name="env"):
    return register_asset(store, path, AssetKind.ENV_SETUP, name)


# ---------------------------------------------------------------------------
# content addressing


def test_env_id_frozen_values():
    assert env_id_for(b"") == "e3b0c44298fc"
    assert env_id_for(b"abc") == "ba7816bf8f01"


def test_env_id_deterministic():
    payload = os.urandom(64)
    assert env_id_for(payload) == env_id_for(bytes(payload))


def test_env_id_distinct_on_random_corpus():
    blobs = {os.urandom(32) for _ in range(200)}
    ids = {env_id_for(blob) for blob in blobs}
    assert len(ids) == len(blobs)


# ---------------------------------------------------------------------------
# provision


def test_provision_ready(store, tmp_path):
    asset = _register_setup(store, ok_setup_script(tmp_path / "setup.sh"))
    record = provision(store, asset)
    assert record.state is EnvState.READY
    assert record.interpreter == Path(PYTHON)
    assert record.env_id == env_id_for((tmp_path / "setup.sh").read_bytes())
    assert (record.root / "interpreter").is_file()
    assert record.provisioned_at is not None
    assert env_status(store, record.env_id) is EnvState.READY


def test_provision_receives_root_argument_and_env_var(store, tmp_path):
    script = write_script(
        tmp_path / "setup.sh",
        'set -eu\n'
        'test "$SAUCER_ENV_ROOT" = "$1"\n'
        'echo "$1" > "$1/seen_root"\n'
        f'printf \'%s\\n\' {PYTHON} > "$1/interpreter"\n',
    )
    record = provision(store, _register_setup(store, script))
    assert (record.root / "seen_root").read_text().strip() == str(record.root)


def test_provision_nonzero_exit_fails_and_keeps_log(store, tmp_path):
    script = write_script(tmp_path / "bad.sh", "echo doomed\nexit 1\n")
    asset = _register_setup(store, script)
    with pytest.raises(ProvisionFailed) as excinfo:
        provision(store, asset)
    env_id = env_id_for(script.read_bytes())
    log = env_log_path(store, env_id)
    assert str(log) in str(excinfo.value)
    assert "doomed" in log.read_text()
    assert env_status(store, env_id) is EnvState.FAILED
    assert not env_root(store, env_id).exists()


def test_provision_without_marker_fails(store, tmp_path):
    script = write_script(tmp_path / "nomarker.sh", "exit 0\n")
    with pytest.raises(ProvisionFailed) as excinfo:
        provision(store, _register_setup(store, script))
    assert "interpreter" in str(excinfo.value)


def test_provision_with_bogus_marker_fails(store, tmp_path):
    script = write_script(
        tmp_path / "bogus.sh", 'printf "not-an-absolute-path\\n" > "$1/interpreter"\n'
    )
    with pytest.raises(ProvisionFailed):
        provision(store, _register_setup(store, script))


def test_provision_timeout_kills_script(store, tmp_path):
    store.provision_timeout_s = 0.4
    script = write_script(tmp_path / "slow.sh", "sleep 30\n")
    started = time.monotonic()
    with pytest.raises(ProvisionFailed):
        provision(store, _register_setup(store, script))
    assert time.monotonic() - started < 5.0


def test_provision_rejects_functional_asset(store, tmp_path):
    asset = register_asset(
        store, write_script(tmp_path / "m.py", "x = 1\n"), AssetKind.MODEL_LOAD, "m"
    )
    with pytest.raises(KindMismatch):
        provision(store, asset)


def test_provision_missing_script(store, tmp_path):
    asset = _register_setup(store, ok_setup_script(tmp_path / "gone.sh"))
    (tmp_path / "gone.sh").unlink()
    with pytest.raises(FileNotReadable):
        provision(store, asset)


# ---------------------------------------------------------------------------
# ensure_ready


def test_ensure_ready_runs_script_once_sequentially(store, tmp_path):
    counter = tmp_path / "counter"
    script = counter_setup_script(tmp_path / "setup.sh", counter)
    asset = _register_setup(store, script)
    first = ensure_ready(store, asset)
    second = ensure_ready(store, asset)
    assert counter.read_text() == "x\n"
    assert first.env_id == second.env_id
    assert second.state is EnvState.READY


def test_ensure_ready_reprovisions_after_script_edit(store, tmp_path):
    script = ok_setup_script(tmp_path / "setup.sh")
    asset = _register_setup(store, script)
    old = ensure_ready(store, asset)
    ok_setup_script(tmp_path / "setup.sh", extra="# edited\n")
    new = ensure_ready(store, asset)
    assert new.env_id != old.env_id
    assert env_status(store, old.env_id) is EnvState.READY  # old env untouched


def _ensure_ready_in_process(store_root: str, script: str, name: str) -> tuple[str, str]:
    store = Store(Path(store_root))
    registry = load_registry(store.root)
    asset = next(r for r in registry.assets if r.name == name)
    record = ensure_ready(store, asset)
    return record.env_id, record.state.value


def test_ensure_ready_concurrent_single_execution(store, tmp_path):
    counter = tmp_path / "counter"
    script = counter_setup_script(tmp_path / "setup.sh", counter, delay_s=0.3)
    _register_setup(store, script, name="env")
    with ProcessPoolExecutor(max_workers=8) as pool:
        results = list(
            pool.map(
                _ensure_ready_in_process,
                [str(store.root)] * 8,
                [str(script)] * 8,
                ["env"] * 8,
            )
        )
    assert counter.read_text() == "x\n"
    assert len({env_id for env_id, _ in results}) == 1
    assert all(state == "ready" for _, state in results)


def test_ensure_ready_concurrent_failure_adopted(store, tmp_path):
    script = write_script(tmp_path / "bad.sh", "sleep 0.3\nexit 1\n")
    _register_setup(store, script, name="env")
    with ProcessPoolExecutor(max_workers=4) as pool:
        futures = [
            pool.submit(_ensure_ready_in_process, str(store.root), str(script), "env")
            for _ in range(4)
        ]
        outcomes = []
        for future in futures:
            try:
                outcomes.append(future.result())
            except ProvisionFailed:
                outcomes.append("failed")
    assert outcomes == ["failed"] * 4
    # the script ran at most once: a single quarantined root
    env_id = env_id_for(script.read_bytes())
    failed_dirs = list(store.envs_dir.glob(f"{env_id}.failed-*"))
    assert len(failed_dirs) == 1


# ---------------------------------------------------------------------------
# status and gc


def test_status_absent_for_unknown_id(store):
    assert env_status(store, "0" * 12) is EnvState.ABSENT


def test_status_provisioning_sentinel(store):
    root = env_root(store, "a" * 12)
    root.mkdir(parents=True)
    (root / ".provisioning").touch()
    assert env_status(store, "a" * 12) is EnvState.PROVISIONING
    record = get_env_record(store, "a" * 12)
    assert record.interpreter is None and record.provisioned_at is None


def test_gc_keeps_referenced_environments(store, tmp_path):
    asset = _register_setup(store, ok_setup_script(tmp_path / "setup.sh"))
    record = ensure_ready(store, asset)
    assert gc(store, load_registry(store.root)) == []
    assert env_status(store, record.env_id) is EnvState.READY


def test_gc_removes_orphans_after_edit(store, tmp_path):
    script = ok_setup_script(tmp_path / "setup.sh")
    asset = _register_setup(store, script)
    old = ensure_ready(store, asset)
    ok_setup_script(tmp_path / "setup.sh", extra="# v2\n")
    removed = gc(store, load_registry(store.root))
    assert removed == [old.env_id]
    assert env_status(store, old.env_id) is EnvState.ABSENT
    assert not env_log_path(store, old.env_id).exists()


def test_gc_removes_failed_leftovers(store, tmp_path):
    script = write_script(tmp_path / "bad.sh", "exit 1\n")
    asset = _register_setup(store, script)
    with pytest.raises(ProvisionFailed):
        provision(store, asset)
    env_id = env_id_for(script.read_bytes())
    # still registered: kept
    assert gc(store, load_registry(store.root)) == []
    write_script(tmp_path / "bad.sh", "exit 2\n")
    removed = gc(store, load_registry(store.root))
    assert removed == [env_id]
    assert list_env_ids(store) != [env_id]


def test_gc_missing_script_falls_back_to_recorded_hash(store, tmp_path):
    script = ok_setup_script(tmp_path / "setup.sh")
    asset = _register_setup(store, script)
    record = ensure_ready(store, asset)
    script.unlink()
    assert gc(store, load_registry(store.root)) == []
    assert env_status(store, record.env_id) is EnvState.READY


def test_ready_never_observed_while_provisioning(store, tmp_path):
    # the marker is written while the sentinel is still present
    script = write_script(
        tmp_path / "slowmark.sh",
        "set -eu\n"
        f"printf '%s\\n' {PYTHON} > \"$1/interpreter\"\n"
        "sleep 0.4\n",
    )
    asset = _register_setup(store, script)
    env_id = env_id_for(script.read_bytes())

    from threading import Thread

    seen: list[EnvState] = []

    def poll():
        deadline = time.monotonic() + 3.0
        while time.monotonic() < deadline:
            state = env_status(store, env_id)
            seen.append(state)
            if state is EnvState.READY:
                return
            time.sleep(0.01)

    poller = Thread(target=poll)
    poller.start()
    ensure_ready(store, asset)
    poller.join()
    # once the poller saw READY the script had already exited; no READY
    # may be observed while the sentinel is in place
    first_ready = seen.index(EnvState.READY)
    assert EnvState.PROVISIONING in seen[:first_ready]
    assert all(s is not EnvState.READY for s in seen[:first_ready])
