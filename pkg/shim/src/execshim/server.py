"""Request loop: handshake, then serve exec frames one at a time."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import BinaryIO

from .profiles import get_profile
from .protocol import handshake_frame, read_frame, write_frame
from .runner import ShimInternalError, run_backend

logger = logging.getLogger(__name__)


class Server:
    def __init__(self, profile_name: str, workdir: str | Path,
                 collector_path: str | None = None):
        self.profile = get_profile(profile_name)
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.collector_path = collector_path

    def serve(self, rx: BinaryIO, tx: BinaryIO) -> None:
        write_frame(tx, handshake_frame(self.profile.name))
        while True:
            frame = read_frame(rx)
            if frame is None or frame.get("type") == "shutdown":
                return
            if frame.get("type") != "exec":
                write_frame(tx, _fault(f"unexpected frame type {frame.get('type')!r}"))
                continue
            try:
                response = self.handle_request(frame)
            except Exception as exc:  # internal errors never masquerade as SUT ones
                logger.exception("request failed inside the shim")
                response = _fault(f"{type(exc).__name__}: {exc}")
            write_frame(tx, response)

    def handle_request(self, request: dict) -> dict:
        test_id = request["test_id"]
        source = request["source"]
        backends = request["backends"]
        want_coverage = bool(request["want_coverage"])
        for label in backends:
            if label not in self.profile.backends:
                raise ShimInternalError(f"backend {label!r} not served by this profile")

        missing = [m for m in self.profile.markers if m not in source]
        if missing:
            results = [_marker_error(label, missing) for label in backends]
            return {"type": "result", "test_id": test_id, "results": results}

        source_path = self.workdir / f"test_{test_id}.py"
        source_path.write_text(source, encoding="utf-8")

        results = []
        covered: set[str] = set()
        for label in backends:
            result, lines = run_backend(
                self.profile.name,
                label,
                source_path,
                seed=request["seed"],
                timeout_s=float(request["timeout_s"]),
                want_coverage=want_coverage,
                collector_path=self.collector_path,
            )
            results.append(result)
            covered.update(lines)

        response = {"type": "result", "test_id": test_id, "results": results}
        if want_coverage and any(r["status"] == "ok" for r in results):
            response["covered"] = sorted(covered)
        return response


def _fault(message: str) -> dict:
    return {"type": "fault", "message": message}


def _marker_error(backend: str, missing: list[str]) -> dict:
    return {
        "backend": backend,
        "status": "exception",
        "exception": {
            "type": "MarkerError",
            "message": f"test source lacks required markers: {missing}",
            "trace": "",
        },
    }
