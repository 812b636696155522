"""Differential oracles: elementwise tolerance comparison, three-way outcome
classification, and bug-signature deduplication.

The numerical oracle is |eager_i - compiled_i| <= atol + rtol * |compiled_i|,
evaluated with the eager output as the left argument; the inequality is not
symmetric in its arguments. Non-finite elements are consistent only when
bitwise equal (both-NaN consistency is governed by equal_nan).
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Sequence

import numpy as np

from .core import FeedbackKind, FeedbackPayload, TestCase


class Backend(str, Enum):
    EAGER = "eager"
    COMPILED = "compiled"


class Status(str, Enum):
    OK = "ok"
    EXCEPTION = "exception"
    TIMEOUT = "timeout"


class Classification(str, Enum):
    PASS = "pass"
    BUG_NUMERICAL = "bug_numerical"
    BUG_BEHAVIORAL = "bug_behavioral"
    INVALID = "invalid"


@dataclass
class TensorValue:
    """A flat row-major tensor as it crosses the wire.

    Oversized tensors arrive as a content digest plus summary statistics
    instead of data; those compare by digest equality only.
    """

    shape: list[int]
    dtype: str
    data: np.ndarray | None = None
    digest: str | None = None
    summary: dict[str, Any] | None = None

    def __post_init__(self) -> None:
        if (self.data is None) == (self.digest is None):
            raise ValueError("exactly one of data or digest must be present")
        if self.data is not None:
            self.data = np.asarray(self.data, dtype=np.float64).reshape(-1)
            expected = 1
            for extent in self.shape:
                expected *= extent
            if self.data.size != expected:
                raise ValueError(
                    f"data length {self.data.size} does not match shape {self.shape}"
                )


@dataclass
class ExceptionInfo:
    type: str
    message: str
    trace: str = ""


@dataclass
class BackendResult:
    """Execution result of one backend: outputs iff ok, exception iff raised."""

    backend: str
    status: Status
    outputs: list[TensorValue] | None = None
    exception: ExceptionInfo | None = None

    def __post_init__(self) -> None:
        if (self.status is Status.OK) != (self.outputs is not None):
            raise ValueError("outputs must be present exactly when status is ok")
        if (self.status is Status.EXCEPTION) != (self.exception is not None):
            raise ValueError("exception must be present exactly when status is exception")


@dataclass(frozen=True)
class ToleranceConfig:
    atol: float = 0.001
    rtol: float = 0.001
    equal_nan: bool = True

    def __post_init__(self) -> None:
        if self.atol < 0 or self.rtol < 0:
            raise ValueError("tolerances must be nonnegative")


@dataclass(frozen=True)
class Violation:
    """First point of disagreement between two outputs."""

    kind: str  # "value" | "structure" | "digest"
    detail: str
    output_index: int = 0
    index: int | None = None
    eager_value: float | None = None
    compiled_value: float | None = None


@dataclass(frozen=True)
class Outcome:
    classification: Classification
    feedback: FeedbackPayload
    signature: str | None = None
    violation: Violation | None = None
    crash: ExceptionInfo | None = None  # the failing side's exception on a behavioral bug

    def with_signature(self, signature: str) -> "Outcome":
        return replace(self, signature=signature)


def elementwise_consistent(
    a: TensorValue, b: TensorValue, tol: ToleranceConfig
) -> tuple[bool, Violation | None]:
    """Compare one eager output `a` against one compiled output `b`."""
    if list(a.shape) != list(b.shape) or a.dtype != b.dtype:
        return False, Violation(
            kind="structure",
            detail=f"shape/dtype mismatch: {a.shape}/{a.dtype} vs {b.shape}/{b.dtype}",
        )
    if a.digest is not None or b.digest is not None:
        if a.digest is not None and a.digest == b.digest:
            return True, None
        return False, Violation(
            kind="digest",
            detail=f"content digest mismatch: {a.digest} vs {b.digest}",
        )
    x, y = a.data, b.data
    if x.size == 0:
        return True, None
    with np.errstate(invalid="ignore", over="ignore"):
        finite = np.isfinite(x) & np.isfinite(y)
        ok = np.where(finite, np.abs(x - y) <= tol.atol + tol.rtol * np.abs(y), x == y)
        if tol.equal_nan:
            ok |= np.isnan(x) & np.isnan(y)
    if ok.all():
        return True, None
    idx = int(np.argmin(ok))  # first False in flat row-major order
    return False, Violation(
        kind="value",
        detail=f"|a-b| > atol + rtol*|b| at flat index {idx}",
        index=idx,
        eager_value=float(x[idx]),
        compiled_value=float(y[idx]),
    )


def classify(
    eager: BackendResult,
    compiled: BackendResult,
    tol: ToleranceConfig,
    new_lines: Sequence[str] | None = None,
) -> Outcome:
    """Map the two backend results onto the three feedback states.

    Both sides failing (exception or timeout, in any mix) is an invalid test;
    exactly one side failing is a behavioral bug; two ok results either
    disagree numerically or structurally, or pass. `new_lines` feeds the
    coverage payload on a pass.
    """
    eager_ok = eager.status is Status.OK
    compiled_ok = compiled.status is Status.OK

    if not eager_ok and not compiled_ok:
        body = "Both backends failed.\n\n{}\n\n{}".format(
            _render_failure(eager), _render_failure(compiled)
        )
        return Outcome(
            classification=Classification.INVALID,
            feedback=FeedbackPayload(kind=FeedbackKind.EXCEPTION_LOG, body=body),
        )

    if eager_ok != compiled_ok:
        failed = compiled if eager_ok else eager
        passed = eager if eager_ok else compiled
        body = (
            f"Behavior inconsistency: backend '{passed.backend}' succeeded while "
            f"backend '{failed.backend}' did not.\n\n{_render_failure(failed)}"
        )
        return Outcome(
            classification=Classification.BUG_BEHAVIORAL,
            feedback=FeedbackPayload(kind=FeedbackKind.BUG_REPORT, body=body),
            crash=failed.exception,
        )

    if len(eager.outputs) != len(compiled.outputs):
        violation = Violation(
            kind="structure",
            detail=f"output count mismatch: {len(eager.outputs)} vs {len(compiled.outputs)}",
        )
        return Outcome(
            classification=Classification.BUG_NUMERICAL,
            feedback=FeedbackPayload(
                kind=FeedbackKind.BUG_REPORT, body=_render_violation(violation, tol)
            ),
            violation=violation,
        )

    for pos, (a, b) in enumerate(zip(eager.outputs, compiled.outputs)):
        consistent, violation = elementwise_consistent(a, b, tol)
        if not consistent:
            violation = replace(violation, output_index=pos)
            return Outcome(
                classification=Classification.BUG_NUMERICAL,
                feedback=FeedbackPayload(
                    kind=FeedbackKind.BUG_REPORT, body=_render_violation(violation, tol)
                ),
                violation=violation,
            )

    return Outcome(
        classification=Classification.PASS,
        feedback=coverage_feedback(new_lines or []),
    )


def coverage_feedback(new_lines: Sequence[str], listing_cap: int = 200) -> FeedbackPayload:
    """Coverage payload listing newly covered lines, capped for prompt budgets."""
    shown = list(new_lines)[:listing_cap]
    header = f"Newly covered lines: {len(new_lines)}"
    if len(new_lines) > listing_cap:
        header += f" (showing first {listing_cap})"
    body = header + "\n" + "\n".join(shown) if shown else header
    return FeedbackPayload(kind=FeedbackKind.COVERAGE, body=body, delta_cov=len(new_lines))


def bug_signature(outcome: Outcome, test: TestCase) -> str:
    """Deduplication key: identical root causes hash identically across runs.

    Behavioral bugs key on (exception type, topmost SUT frame) so message text
    and shifting line numbers do not split a bucket; numerical bugs key on the
    sorted selected operators plus whether the mismatch was structural.
    """
    if outcome.classification is Classification.BUG_BEHAVIORAL:
        if outcome.crash is not None:
            filename, func = _topmost_sut_frame(outcome.crash.trace)
            key = f"behavioral|{outcome.crash.type}|{filename}|{func}"
        else:
            key = "behavioral|Timeout||"
    elif outcome.classification is Classification.BUG_NUMERICAL:
        structural = outcome.violation is not None and outcome.violation.kind != "value"
        key = "numerical|{}|{}".format(",".join(sorted(test.selected_ops)), int(structural))
    else:
        raise ValueError(f"bug_signature requires a bug outcome, got {outcome.classification}")
    return hashlib.blake2b(key.encode("utf-8"), digest_size=8).hexdigest()


_FRAME_RE = re.compile(r'File "([^"]+)", line \d+, in (\S+)')


def _topmost_sut_frame(trace: str) -> tuple[str, str]:
    frames = _FRAME_RE.findall(trace or "")
    if not frames:
        return "", ""
    path, func = frames[-1]  # innermost frame of the SUT-truncated trace
    return path.replace("\\", "/").rsplit("/", 1)[-1], func


def _render_failure(result: BackendResult) -> str:
    if result.status is Status.TIMEOUT:
        return f"[{result.backend}] timed out"
    exc = result.exception
    return f"[{result.backend}] {exc.type}: {exc.message}\n{exc.trace}".rstrip()


def _render_violation(violation: Violation, tol: ToleranceConfig) -> str:
    lines = [
        "Numerical inconsistency between eager and compiled outputs.",
        f"Tolerance: atol={tol.atol}, rtol={tol.rtol}, equal_nan={tol.equal_nan}",
        f"Output #{violation.output_index}: {violation.detail}",
    ]
    if violation.index is not None:
        lines.append(
            f"First violation at flat index {violation.index}: "
            f"eager={violation.eager_value!r} compiled={violation.compiled_value!r}"
        )
    return "\n".join(lines)
