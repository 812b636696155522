"""Per-backend child interpreter.

Runs one test source on one backend, collecting coverage on request, and
writes a single JSON result to the inherited stdout. User code's stdout is
redirected to stderr so it cannot corrupt the result channel. SUT exceptions
become exception results; the child's own failures become a shim_fault
result, never a fabricated SUT exception.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import traceback

import numpy as np

from .linecov import line_ids, load_collector
from .profiles import get_profile

TENSOR_ELEMENT_CAP = 10**6

_DTYPE_TAGS = {
    "float16": "f16",
    "float32": "f32",
    "float64": "f64",
    "int32": "i32",
    "int64": "i64",
    "uint8": "u8",
    "bool": "bool",
}


def tensor_to_wire(array: np.ndarray) -> dict:
    array = np.asarray(array)
    tag = _DTYPE_TAGS.get(array.dtype.name, array.dtype.name)
    shape = [int(s) for s in array.shape]
    if array.size > TENSOR_ELEMENT_CAP:
        return {"shape": shape, "dtype": tag, **_digest_payload(array, tag)}
    flat = array.reshape(-1)
    if tag.startswith(("i", "u", "b")):
        data = [str(int(v)) for v in flat.tolist()]
    else:
        data = [repr(float(v)) for v in flat.tolist()]
    return {"shape": shape, "dtype": tag, "data": data}


def _digest_payload(array: np.ndarray, tag: str) -> dict:
    digest = hashlib.sha256()
    digest.update(tag.encode("utf-8"))
    digest.update(str(list(array.shape)).encode("utf-8"))
    digest.update(np.ascontiguousarray(array).tobytes())
    finite = array[np.isfinite(array)] if array.dtype.kind == "f" else array
    summary = {
        "elements": int(array.size),
        "nan_count": int(np.isnan(array).sum()) if array.dtype.kind == "f" else 0,
        "inf_count": int(np.isinf(array).sum()) if array.dtype.kind == "f" else 0,
        "finite_min": repr(float(finite.min())) if finite.size else "nan",
        "finite_max": repr(float(finite.max())) if finite.size else "nan",
    }
    return {"digest": f"sha256:{digest.hexdigest()}", "summary": summary}


def sut_trace(exc: BaseException, roots: list[str], source_path: str) -> str:
    """Render the traceback truncated to SUT and test-source frames."""
    frames = traceback.extract_tb(exc.__traceback__)
    keep = [
        f
        for f in frames
        if f.filename == source_path or any(f.filename.startswith(r) for r in roots)
    ]
    if not keep:
        keep = frames[-3:]
    lines = ["Traceback (most recent call last):"]
    for f in keep:
        lines.append(f'  File "{f.filename}", line {f.lineno}, in {f.name}')
        if f.line:
            lines.append(f"    {f.line}")
    lines.append(f"{type(exc).__name__}: {exc}")
    return "\n".join(lines)


def execute_test(profile_name: str, backend: str, source_path: str, seed: int,
                 want_coverage: bool, collector_path: str | None) -> dict:
    profile = get_profile(profile_name)
    roots = profile.coverage_roots()
    source_text = open(source_path, "r", encoding="utf-8").read()
    state: dict = {}

    def run_user():
        try:
            namespace = {"__name__": "__main__", "__file__": source_path}
            exec(compile(source_text, source_path, "exec"), namespace)
            state["outputs"] = profile.run_model(backend, namespace, seed)
        except BaseException as exc:  # noqa: BLE001 (any SUT failure is a result)
            state["error"] = exc

    covered: list[str] = []
    if want_coverage:
        collector = load_collector(collector_path)
        raw = collector(run_user, roots)
        covered = line_ids(set(raw), roots)
    else:
        run_user()

    if "error" in state:
        exc = state["error"]
        result = {
            "status": "exception",
            "exception": {
                "type": type(exc).__name__,
                "message": str(exc),
                "trace": sut_trace(exc, roots, source_path),
            },
        }
    else:
        result = {
            "status": "ok",
            "outputs": [tensor_to_wire(a) for a in state["outputs"]],
        }
    if want_coverage:
        result["covered"] = covered
    return result


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="execshim.child")
    parser.add_argument("--profile", required=True)
    parser.add_argument("--backend", required=True)
    parser.add_argument("--source", required=True)
    parser.add_argument("--seed", type=int, required=True)
    parser.add_argument("--want-coverage", action="store_true")
    parser.add_argument("--collector")
    args = parser.parse_args(argv)

    result_channel = sys.stdout
    sys.stdout = sys.stderr  # user prints must not corrupt the result channel
    try:
        result = execute_test(
            args.profile, args.backend, args.source, args.seed,
            args.want_coverage, args.collector,
        )
    except Exception as exc:  # child infrastructure failed, not the SUT
        result = {"status": "shim_fault", "message": f"{type(exc).__name__}: {exc}"}
    print(json.dumps(result), file=result_channel)
    result_channel.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
