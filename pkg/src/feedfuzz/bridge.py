"""Executor bridge: frame protocol, shim child-process management, and an
in-process scripted executor for hermetic tests.

Frames are a 4-byte big-endian payload length followed by that many bytes of
UTF-8 JSON. One request is in flight at a time; an independent deadline timer
bounds every request to sum(per-backend timeout) + a fixed grace, so a wedged
shim cannot stall the orchestrator. The full schema lives in docs/protocol.md.
"""

from __future__ import annotations

import queue
import re
import shlex
import struct
import subprocess
import threading
from dataclasses import dataclass
from typing import Any, BinaryIO, Sequence

import numpy as np

from .core import CoverageSet
from .oracle import BackendResult, ExceptionInfo, Status, TensorValue

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 64 * 1024 * 1024
HANDSHAKE_TIMEOUT_S = 30.0
ORCH_GRACE_S = 5.0

_LEN = struct.Struct(">I")


class ProtocolError(Exception):
    """A frame or message violated the wire protocol; the iteration fails."""


class FatalProtocolError(ProtocolError):
    """Frame alignment is lost (bad length prefix); the stream is unusable."""


class ShimFault(Exception):
    """The shim reported an internal fault for the current request."""


class ShimError(Exception):
    """The shim is unusable (spawn/handshake failure or death past the respawn
    allowance); the campaign aborts with a resumable state."""


def encode_frame(payload: dict[str, Any]) -> bytes:
    body = _json_dumps(payload).encode("utf-8")
    if len(body) > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {len(body)} bytes exceeds the cap")
    return _LEN.pack(len(body)) + body


def read_frame(stream: BinaryIO) -> dict[str, Any]:
    header = _read_exact(stream, _LEN.size)
    if header is None:
        raise EOFError("stream closed")
    (length,) = _LEN.unpack(header)
    if length > MAX_FRAME_BYTES:
        # The advertised body cannot be trusted, so alignment is gone.
        raise FatalProtocolError(f"frame length {length} exceeds the cap")
    body = _read_exact(stream, length)
    if body is None:
        raise EOFError("stream closed mid-frame")
    return decode_frame_body(body)


def decode_frame_body(body: bytes) -> dict[str, Any]:
    import json

    try:
        payload = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"frame body is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "type" not in payload:
        raise ProtocolError("frame body must be an object with a 'type' field")
    return payload


def _read_exact(stream: BinaryIO, n: int) -> bytes | None:
    chunks = b""
    while len(chunks) < n:
        piece = stream.read(n - len(chunks))
        if not piece:
            return None
        chunks += piece
    return chunks


def _json_dumps(payload: dict[str, Any]) -> str:
    import json

    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


@dataclass
class ExecRequest:
    test_id: int
    source: str
    backends: list[str]
    timeout_s: float
    want_coverage: bool
    seed: int

    def __post_init__(self) -> None:
        if not self.backends:
            raise ValueError("at least one backend must be requested")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")

    def to_wire(self) -> dict[str, Any]:
        return {
            "type": "exec",
            "test_id": self.test_id,
            "source": self.source,
            "backends": list(self.backends),
            "timeout_s": self.timeout_s,
            "want_coverage": self.want_coverage,
            "seed": self.seed,
        }


@dataclass
class ExecResponse:
    test_id: int
    results: list[BackendResult]
    covered: CoverageSet | None = None

    def result_for(self, label: str) -> BackendResult:
        for result in self.results:
            if result.backend == label:
                return result
        raise KeyError(label)


def _float_render(value: float) -> str:
    return repr(float(value))  # shortest round-trip rendering; nan/inf included


def _int_render(value: float) -> str:
    return str(int(value))


def tensor_to_wire(tensor: TensorValue) -> dict[str, Any]:
    if tensor.digest is not None:
        return {
            "shape": list(tensor.shape),
            "dtype": tensor.dtype,
            "digest": tensor.digest,
            "summary": tensor.summary or {},
        }
    render = _int_render if tensor.dtype.startswith(("i", "u", "b")) else _float_render
    return {
        "shape": list(tensor.shape),
        "dtype": tensor.dtype,
        "data": [render(v) for v in tensor.data.tolist()],
    }


def tensor_from_wire(d: dict[str, Any]) -> TensorValue:
    try:
        shape = [int(x) for x in d["shape"]]
        dtype = str(d["dtype"])
        if "digest" in d:
            return TensorValue(
                shape=shape, dtype=dtype, digest=str(d["digest"]), summary=d.get("summary")
            )
        data = np.array([float(v) for v in d["data"]], dtype=np.float64)
        return TensorValue(shape=shape, dtype=dtype, data=data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed tensor payload: {exc}") from exc


def backend_result_to_wire(result: BackendResult) -> dict[str, Any]:
    wire: dict[str, Any] = {"backend": result.backend, "status": result.status.value}
    if result.status is Status.OK:
        wire["outputs"] = [tensor_to_wire(t) for t in result.outputs]
    elif result.status is Status.EXCEPTION:
        wire["exception"] = {
            "type": result.exception.type,
            "message": result.exception.message,
            "trace": result.exception.trace,
        }
    return wire


def backend_result_from_wire(d: dict[str, Any]) -> BackendResult:
    try:
        status = Status(d["status"])
        outputs = None
        exception = None
        if status is Status.OK:
            outputs = [tensor_from_wire(t) for t in d["outputs"]]
        elif status is Status.EXCEPTION:
            exc = d["exception"]
            exception = ExceptionInfo(
                type=str(exc["type"]), message=str(exc["message"]), trace=str(exc.get("trace", ""))
            )
        return BackendResult(
            backend=str(d["backend"]), status=status, outputs=outputs, exception=exception
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed backend result: {exc}") from exc


def response_from_wire(payload: dict[str, Any], request: ExecRequest) -> ExecResponse:
    """Validate a result frame against the request that produced it."""
    if payload.get("test_id") != request.test_id:
        raise ProtocolError(
            f"response test_id {payload.get('test_id')} != request {request.test_id}"
        )
    results = [backend_result_from_wire(r) for r in payload.get("results", [])]
    got = [r.backend for r in results]
    if got != list(request.backends):
        raise ProtocolError(f"response backends {got} != requested {request.backends}")
    any_ok = any(r.status is Status.OK for r in results)
    covered = None
    if "covered" in payload:
        if not (request.want_coverage and any_ok):
            raise ProtocolError("coverage present although not requested or nothing ran ok")
        covered = CoverageSet(set(str(line) for line in payload["covered"]))
    elif request.want_coverage and any_ok:
        raise ProtocolError("coverage missing from response")
    return ExecResponse(test_id=request.test_id, results=results, covered=covered)


class ShimExecutor:
    """Long-lived shim child process speaking the frame protocol.

    One respawn is allowed per campaign; a second death (or a death while
    retrying the in-flight request) aborts the campaign.
    """

    def __init__(self, cmd: str | Sequence[str], profile_name: str,
                 handshake_timeout_s: float = HANDSHAKE_TIMEOUT_S,
                 grace_s: float = ORCH_GRACE_S):
        self.cmd = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self.profile_name = profile_name
        self.handshake_timeout_s = handshake_timeout_s
        self.grace_s = grace_s
        self.respawn_budget = 1
        self.proc: subprocess.Popen | None = None
        self._frames: queue.Queue = queue.Queue()
        self.capabilities: dict[str, Any] = {}
        self.spawn()

    # -- lifecycle ---------------------------------------------------------

    def spawn(self) -> None:
        try:
            self.proc = subprocess.Popen(
                self.cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        except OSError as exc:
            raise ShimError(f"cannot spawn shim {self.cmd!r}: {exc}") from exc
        self._frames = queue.Queue()
        thread = threading.Thread(
            target=self._reader, args=(self.proc.stdout, self._frames), daemon=True
        )
        thread.start()
        self._handshake()

    def _handshake(self) -> None:
        kind, payload = self._next_frame(self.handshake_timeout_s)
        if kind != "frame":
            raise ShimError(f"shim did not complete the handshake: {payload}")
        if payload.get("type") != "handshake":
            raise ShimError(f"expected handshake frame, got {payload.get('type')!r}")
        if payload.get("protocol_version") != PROTOCOL_VERSION:
            raise ShimError(
                f"protocol version mismatch: shim speaks {payload.get('protocol_version')}, "
                f"orchestrator speaks {PROTOCOL_VERSION}"
            )
        if payload.get("profile") != self.profile_name:
            raise ShimError(
                f"shim serves profile {payload.get('profile')!r}, expected {self.profile_name!r}"
            )
        self.capabilities = dict(payload.get("capabilities", {}))

    @staticmethod
    def _reader(stream: BinaryIO, frames: queue.Queue) -> None:
        while True:
            try:
                frames.put(("frame", read_frame(stream)))
            except EOFError:
                frames.put(("eof", None))
                return
            except FatalProtocolError as exc:
                frames.put(("protocol_error", exc))
                return
            except ProtocolError as exc:
                # Body decoded but made no sense; framing is still aligned.
                frames.put(("protocol_error", exc))

    def _next_frame(self, timeout: float):
        try:
            return self._frames.get(timeout=timeout)
        except queue.Empty:
            return ("timeout", None)

    def alive(self) -> bool:
        return self.proc is not None and self.proc.poll() is None

    def close(self) -> None:
        if self.proc is None:
            return
        if self.alive():
            try:
                self.proc.stdin.write(encode_frame({"type": "shutdown"}))
                self.proc.stdin.flush()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        self.proc = None

    def _kill(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()
        self.proc = None

    def _respawn_or_abort(self, reason: str) -> None:
        self._kill()
        if self.respawn_budget <= 0:
            raise ShimError(f"shim died and the respawn allowance is spent ({reason})")
        self.respawn_budget -= 1
        self.spawn()

    # -- execution ---------------------------------------------------------

    def execute(self, request: ExecRequest, _retried: bool = False) -> ExecResponse:
        if not self.alive():
            self._respawn_or_abort("dead before request")
        try:
            self.proc.stdin.write(encode_frame(request.to_wire()))
            self.proc.stdin.flush()
        except OSError:
            if _retried:
                raise ShimError("shim died twice on the same request")
            self._respawn_or_abort("write failed")
            return self.execute(request, _retried=True)

        deadline = request.timeout_s * len(request.backends) + self.grace_s
        kind, payload = self._next_frame(deadline)
        if kind == "timeout":
            # Wedged shim: kill it and report the whole request as timed out.
            self._kill()
            results = [
                BackendResult(backend=label, status=Status.TIMEOUT)
                for label in request.backends
            ]
            return ExecResponse(test_id=request.test_id, results=results)
        if kind == "eof":
            if _retried:
                raise ShimError("shim died twice on the same request")
            self._respawn_or_abort("died mid-request")
            return self.execute(request, _retried=True)
        if kind == "protocol_error":
            raise payload
        if payload.get("type") == "fault":
            raise ShimFault(str(payload.get("message", "unspecified shim fault")))
        if payload.get("type") != "result":
            raise ProtocolError(f"unexpected frame type {payload.get('type')!r}")
        return response_from_wire(payload, request)


_DIRECTIVE_RE = re.compile(r"^#\s*exec:\s*(.*)$", re.MULTILINE)
_COVERED_RE = re.compile(r"^#\s*covered:\s*(.*)$", re.MULTILINE)


class ScriptedExecutor:
    """In-process executor driven by directives embedded in the test source.

        # exec: eager=ok compiled=raise:RuntimeError:boom
        # covered: toy/ops.py:1 toy/ops.py:2

    Backend specs: ok | ok:<float> | raise:<Type>:<msg>[:<func>] | timeout.
    Without a directive both backends return ok with a scalar 0.0 output.
    Satisfies the same contract as ShimExecutor, so the whole loop test suite
    runs with no child process.
    """

    def __init__(self) -> None:
        self.executed: list[int] = []

    def execute(self, request: ExecRequest) -> ExecResponse:
        self.executed.append(request.test_id)
        match = _DIRECTIVE_RE.search(request.source)
        specs = {}
        if match:
            for token in match.group(1).split():
                key, _, spec = token.partition("=")
                specs[key.strip()] = spec.strip()
        results = []
        for pos, label in enumerate(request.backends):
            key = "eager" if pos == 0 else "compiled"
            results.append(self._result(label, specs.get(key, "ok")))
        covered = None
        if request.want_coverage and any(r.status is Status.OK for r in results):
            cov_match = _COVERED_RE.search(request.source)
            lines = set(cov_match.group(1).split()) if cov_match else set()
            covered = CoverageSet(lines)
        return ExecResponse(test_id=request.test_id, results=results, covered=covered)

    def close(self) -> None:
        pass

    @staticmethod
    def _result(label: str, spec: str) -> BackendResult:
        parts = spec.split(":")
        if parts[0] == "ok":
            value = float(parts[1]) if len(parts) > 1 else 0.0
            tensor = TensorValue(shape=[], dtype="f64", data=np.array([value]))
            return BackendResult(backend=label, status=Status.OK, outputs=[tensor])
        if parts[0] == "timeout":
            return BackendResult(backend=label, status=Status.TIMEOUT)
        if parts[0] == "raise":
            etype = parts[1] if len(parts) > 1 else "RuntimeError"
            message = parts[2] if len(parts) > 2 else "scripted failure"
            func = parts[3] if len(parts) > 3 else "forward"
            trace = (
                "Traceback (most recent call last):\n"
                '  File "model.py", line 1, in <module>\n'
                f'  File "model.py", line 3, in {func}\n'
                f"{etype}: {message}"
            )
            return BackendResult(
                backend=label,
                status=Status.EXCEPTION,
                exception=ExceptionInfo(type=etype, message=message, trace=trace),
            )
        raise ValueError(f"unknown scripted backend spec {spec!r}")
