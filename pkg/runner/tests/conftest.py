import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from deepsaucer_runner import shim_path

STAGES = ("model_load", "dataset_load", "verification")

PASSING_MODEL = """
def load_model(ctx):
    return {"tag": "model"}
"""

PASSING_DATASET = """
def load_dataset(ctx):
    return [[1.0, 2.0], [3.0, 4.0]]
"""

PASSING_VERIFY = """
def verify(model, dataset, ctx):
    return {"verdict": "pass"}
"""


def write_script(path: Path, body: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(body, encoding="utf-8")
    return path


class ShimRun:
    def __init__(self, proc: subprocess.CompletedProcess, run_dir: Path, result_path: Path):
        self.proc = proc
        self.run_dir = run_dir
        self.result_path = result_path

    @property
    def returncode(self) -> int:
        return self.proc.returncode

    @property
    def result(self) -> dict:
        return json.loads(self.result_path.read_text(encoding="utf-8"))


@pytest.fixture
def shim_harness(tmp_path):
    """Builds a run directory and drives the shim as a subprocess."""

    def run(
        model_body=PASSING_MODEL,
        dataset_body=PASSING_DATASET,
        verify_body=PASSING_VERIFY,
        params=None,
        manifest_override=None,
        scripts=None,
    ) -> ShimRun:
        run_dir = tmp_path / "run"
        run_dir.mkdir(exist_ok=True)
        workdir = run_dir / "workdir"
        workdir.mkdir(exist_ok=True)
        if scripts is None:
            scripts = {
                "model_load_script": str(
                    write_script(tmp_path / "model.py", model_body)
                ),
                "dataset_load_script": str(
                    write_script(tmp_path / "dataset.py", dataset_body)
                ),
                "verification_script": str(
                    write_script(tmp_path / "verify.py", verify_body)
                ),
            }
        manifest = {
            "schema_version": 1,
            "run_id": "20260101T000000Z-abc123",
            **scripts,
            "params": params or {},
            "workdir": str(workdir),
            "result_path": str(run_dir / "result.json"),
        }
        if manifest_override:
            manifest.update(manifest_override)
        manifest_path = run_dir / "manifest.json"
        manifest_path.write_text(json.dumps(manifest), encoding="utf-8")
        env = dict(os.environ)
        env["SAUCER_RUN_DIR"] = str(run_dir)
        proc = subprocess.run(
            [sys.executable, str(shim_path()), str(manifest_path)],
            cwd=workdir,
            env=env,
            capture_output=True,
            text=True,
            timeout=60,
        )
        return ShimRun(proc, run_dir, Path(manifest["result_path"]))

    return run


def check_result_shape(doc: dict) -> None:
    """Independent check of the result file schema."""
    assert set(doc) <= {
        "schema_version", "verdict", "failed_stage",
        "stage_timings", "metrics", "messages",
    }
    assert doc["schema_version"] == 1
    assert doc["verdict"] in ("pass", "fail", "error")
    if doc["verdict"] == "error":
        assert doc["failed_stage"] in STAGES
    else:
        assert "failed_stage" not in doc
        assert set(doc["stage_timings"]) == set(STAGES)
    for stage, seconds in doc["stage_timings"].items():
        assert stage in STAGES
        assert isinstance(seconds, (int, float)) and seconds >= 0
    for label, value in doc["metrics"].items():
        assert isinstance(label, str)
        assert isinstance(value, (int, float))
    assert all(isinstance(m, str) for m in doc["messages"])
