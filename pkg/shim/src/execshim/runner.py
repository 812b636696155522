"""Parent-side backend runs: one fresh child interpreter per backend, with a
hard wall-clock timeout."""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path


class ShimInternalError(Exception):
    """The shim itself failed; reported upstream as a fault frame."""


def run_backend(
    profile_name: str,
    backend: str,
    source_path: Path,
    seed: int,
    timeout_s: float,
    want_coverage: bool,
    collector_path: str | None,
) -> tuple[dict, list[str]]:
    """Run one backend; returns (wire BackendResult, covered line ids)."""
    cmd = [
        sys.executable,
        "-m",
        "execshim.child",
        "--profile", profile_name,
        "--backend", backend,
        "--source", str(source_path),
        "--seed", str(seed),
    ]
    if want_coverage:
        cmd.append("--want-coverage")
    if collector_path:
        cmd += ["--collector", collector_path]
    try:
        proc = subprocess.run(cmd, capture_output=True, timeout=timeout_s)
    except subprocess.TimeoutExpired:
        return {"backend": backend, "status": "timeout"}, []

    try:
        payload = json.loads(proc.stdout.decode("utf-8"))
        status = payload["status"]
    except (ValueError, KeyError):
        # A hard interpreter death (native crash, OOM kill) is SUT behavior.
        tail = proc.stderr.decode("utf-8", "replace")[-500:]
        result = {
            "backend": backend,
            "status": "exception",
            "exception": {
                "type": "ChildCrash",
                "message": f"backend process exited with {proc.returncode}",
                "trace": tail,
            },
        }
        return result, []

    if status == "shim_fault":
        raise ShimInternalError(payload.get("message", "unspecified child fault"))
    covered = list(payload.get("covered", []))
    result = {"backend": backend, "status": status}
    if status == "ok":
        result["outputs"] = payload["outputs"]
    elif status == "exception":
        result["exception"] = payload["exception"]
    return result, covered
