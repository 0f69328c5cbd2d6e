"""In-environment runner: executes one verification run from a manifest.

Invoked as ``<interpreter> shim.py <manifest.json>`` inside the
provisioned environment. The manifest names three functional scripts,
loaded by path and called in a fixed order:

    load_model(ctx)            -> model object       (model-load script)
    load_dataset(ctx)          -> dataset object     (dataset-load script)
    verify(model, dataset, ctx) -> output mapping    (verification script)

The verification output must contain ``verdict`` ("pass" or "fail")
and may carry ``metrics`` (finite numbers) and ``messages`` (strings);
anything else is a contract violation. A stage that raises turns the
run into verdict "error" with that stage recorded and later stages
skipped. The process exits 0 whenever the result document was written,
whatever the verdict; nonzero only when no result could be produced.

This file is self-contained on purpose: it runs under whatever Python
the environment-setup script installed, so it must not import anything
beyond the standard library.
"""

import copy
import json
import math
import os
import re
import sys
import time
import traceback
import types

MANIFEST_SCHEMA_VERSION = 1
RESULT_SCHEMA_VERSION = 1
STAGES = ("model_load", "dataset_load", "verification")

ENTRY_POINTS = {
    "model_load": ("model_load_script", "load_model"),
    "dataset_load": ("dataset_load_script", "load_dataset"),
    "verification": ("verification_script", "verify"),
}

VERIFY_CONTRACT = (
    "verify(model, dataset, ctx) must return a mapping with key 'verdict' "
    "in {'pass', 'fail'}; optional keys: 'metrics' (label -> finite number) "
    "and 'messages' (list of strings)"
)


class ManifestError(Exception):
    """The manifest is unreadable or schema-invalid; nothing can run."""


class StageError(Exception):
    """A functional script failed; the run records verdict 'error'."""


class StageContext(object):
    """What a functional script gets to see.

    Each stage receives its own copy of params, so one script's
    mutations never leak into the next.
    """

    def __init__(self, params, workdir, run_dir, stage):
        self.params = params
        self.workdir = workdir
        self.run_dir = run_dir
        self.stage = stage

    def __repr__(self):
        return "StageContext(stage={!r}, workdir={!r})".format(self.stage, self.workdir)


def load_manifest(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, UnicodeDecodeError, ValueError) as exc:
        raise ManifestError("cannot read manifest {}: {}".format(path, exc))
    if not isinstance(obj, dict):
        raise ManifestError("manifest must be a JSON object")
    if obj.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ManifestError(
            "manifest schema_version must be {}, got {!r}".format(
                MANIFEST_SCHEMA_VERSION, obj.get("schema_version")
            )
        )
    for key in (
        "run_id",
        "model_load_script",
        "dataset_load_script",
        "verification_script",
        "workdir",
        "result_path",
    ):
        value = obj.get(key)
        if not isinstance(value, str) or not value:
            raise ManifestError("manifest field {!r} must be a nonempty string".format(key))
    params = obj.get("params")
    if not isinstance(params, dict):
        raise ManifestError("manifest 'params' must be an object")
    for label, value in params.items():
        if not isinstance(label, str) or not isinstance(value, (str, int, float, bool)):
            raise ManifestError(
                "manifest param {!r} must map a string to a scalar".format(label)
            )
    return obj


def load_entrypoint(script_path, function_name, module_cache):
    """Load a script by path and return its named top-level function.

    Repeat loads of the same path within one run reuse the module, so a
    script's import-time side effects happen once. The source is
    compiled directly instead of going through the import system's
    bytecode cache: scripts are living files, and a stale ``.pyc``
    (same size, same whole-second mtime) must never shadow an edit.
    """
    real_path = os.path.realpath(script_path)
    module = module_cache.get(real_path)
    if module is None:
        stem = re.sub(r"\W", "_", os.path.splitext(os.path.basename(script_path))[0])
        module_name = "saucer_asset_{}_{}".format(len(module_cache), stem)
        try:
            with open(real_path, "rb") as fh:
                source = fh.read()
            code = compile(source, real_path, "exec")
            module = types.ModuleType(module_name)
            module.__file__ = real_path
            sys.modules[module_name] = module
            exec(code, module.__dict__)
        except Exception as exc:
            sys.modules.pop(module_name, None)
            raise StageError("failed to load script {}: {}".format(script_path, exc))
        module_cache[real_path] = module
    function = getattr(module, function_name, None)
    if not callable(function):
        raise StageError(
            "missing entry point {} in {}".format(function_name, script_path)
        )
    return function


def check_verification_output(output):
    if not isinstance(output, dict):
        raise StageError(
            "verification returned {}; {}".format(type(output).__name__, VERIFY_CONTRACT)
        )
    unknown = set(output) - {"verdict", "metrics", "messages"}
    if unknown:
        raise StageError(
            "verification output has unknown keys {}; {}".format(
                sorted(unknown), VERIFY_CONTRACT
            )
        )
    verdict = output.get("verdict")
    if verdict not in ("pass", "fail"):
        raise StageError(
            "verification output verdict is {!r}; {}".format(verdict, VERIFY_CONTRACT)
        )
    metrics = output.get("metrics", {})
    if not isinstance(metrics, dict):
        raise StageError("verification metrics must be a mapping; " + VERIFY_CONTRACT)
    checked_metrics = {}
    for label, value in metrics.items():
        if (
            not isinstance(label, str)
            or isinstance(value, bool)
            or not isinstance(value, (int, float))
            or not math.isfinite(float(value))
        ):
            raise StageError(
                "verification metric {!r} must be a finite number; {}".format(
                    label, VERIFY_CONTRACT
                )
            )
        checked_metrics[label] = float(value)
    messages = output.get("messages", [])
    if not isinstance(messages, list) or any(not isinstance(m, str) for m in messages):
        raise StageError("verification messages must be strings; " + VERIFY_CONTRACT)
    return verdict, checked_metrics, list(messages)


def execute(manifest, run_dir):
    """Run the three stages and assemble the result document."""
    timings = {}
    module_cache = {}

    def stage_context(stage):
        return StageContext(
            params=copy.deepcopy(manifest["params"]),
            workdir=manifest["workdir"],
            run_dir=run_dir,
            stage=stage,
        )

    def fail(stage, exc):
        traceback.print_exc(file=sys.stderr)
        print("[runner] {}: error".format(stage))
        message = "{}: {}".format(type(exc).__name__, exc)
        if isinstance(exc, StageError):
            message = str(exc)
        return {
            "schema_version": RESULT_SCHEMA_VERSION,
            "verdict": "error",
            "failed_stage": stage,
            "stage_timings": timings,
            "metrics": {},
            "messages": [message],
        }

    values = {}
    for stage in ("model_load", "dataset_load"):
        script_key, function_name = ENTRY_POINTS[stage]
        started = time.perf_counter()
        try:
            function = load_entrypoint(
                manifest[script_key], function_name, module_cache
            )
            values[stage] = function(stage_context(stage))
        except Exception as exc:
            timings[stage] = max(0.0, time.perf_counter() - started)
            return fail(stage, exc)
        timings[stage] = max(0.0, time.perf_counter() - started)
        print("[runner] {}: ok ({:.3f}s)".format(stage, timings[stage]))

    script_key, function_name = ENTRY_POINTS["verification"]
    started = time.perf_counter()
    try:
        function = load_entrypoint(manifest[script_key], function_name, module_cache)
        output = function(
            values["model_load"], values["dataset_load"], stage_context("verification")
        )
        verdict, metrics, messages = check_verification_output(output)
    except Exception as exc:
        timings["verification"] = max(0.0, time.perf_counter() - started)
        return fail("verification", exc)
    timings["verification"] = max(0.0, time.perf_counter() - started)
    print("[runner] verification: verdict {} ({:.3f}s)".format(
        verdict, timings["verification"]))

    return {
        "schema_version": RESULT_SCHEMA_VERSION,
        "verdict": verdict,
        "stage_timings": timings,
        "metrics": metrics,
        "messages": messages,
    }


def write_result(result_path, document):
    tmp_path = result_path + ".tmp"
    with open(tmp_path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2)
        fh.write("\n")
    os.replace(tmp_path, result_path)


def main(argv):
    if len(argv) != 2:
        print("usage: shim.py MANIFEST_JSON", file=sys.stderr)
        return 2
    try:
        manifest = load_manifest(argv[1])
    except ManifestError as exc:
        print("[runner] fatal: {}".format(exc), file=sys.stderr)
        return 2

    run_dir = os.environ.get("SAUCER_RUN_DIR") or os.path.dirname(
        manifest["result_path"]
    )
    try:
        document = execute(manifest, run_dir)
        write_result(manifest["result_path"], document)
    except Exception:
        # only reachable for shim bugs or an unwritable result path
        traceback.print_exc(file=sys.stderr)
        print(
            "[runner] fatal: could not produce {}".format(manifest["result_path"]),
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
