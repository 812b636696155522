"""Domain types, campaign state, coverage arithmetic, and append-only persistence.

A campaign directory looks like:

    config.snapshot       resolved configuration (operators and profile inlined)
    oplog/000000.json     one record file per iteration, append-only
    state.snapshot        periodically rewritten state mirror (advisory; the
                          oplog is the source of truth)
    coverage.cumulative   sorted cumulative line identifiers, one per line
    bugs/<signature>.txt  one report per unique bug signature
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

logger = logging.getLogger(__name__)

# Serialized classification vocabulary. The full enum lives in feedfuzz.oracle;
# the store only needs to recognize these two values when folding a log.
CLASS_PASS = "pass"
CLASS_INVALID = "invalid"

CONFIG_SNAPSHOT = "config.snapshot"
STATE_SNAPSHOT = "state.snapshot"
COVERAGE_FILE = "coverage.cumulative"
OPLOG_DIR = "oplog"
BUGS_DIR = "bugs"


class LoopMode(str, Enum):
    DEFAULT = "default"
    FEEDBACK_GUIDED = "feedback_guided"
    REPAIR = "repair"


class FeedbackKind(str, Enum):
    COVERAGE = "coverage"
    BUG_REPORT = "bug_report"
    EXCEPTION_LOG = "exception_log"


class StorageError(Exception):
    """Durable storage failed; the campaign aborts but remains resumable."""


class CorruptLogError(Exception):
    """A non-final oplog record cannot be parsed; the log is not trustworthy."""


@dataclass
class OperatorRecord:
    """One SUT operator plus its three feedback counters.

    `used_times`, `exp_count`, and `cov_count` are the x, y, z inputs of the
    operator valuation; they only ever grow over a campaign.
    """

    name: str
    signature: str | None = None
    used_times: int = 0
    exp_count: int = 0
    cov_count: int = 0


@dataclass
class TestCase:
    """Source text of one model-level test plus provenance metadata."""

    __test__ = False  # keep pytest from collecting the domain type

    id: int
    source: str
    selected_ops: list[str]
    origin: LoopMode

    def __post_init__(self) -> None:
        if not self.source:
            raise ValueError("test source must be nonempty")
        if not self.selected_ops:
            raise ValueError("selected_ops must be nonempty")


@dataclass
class CoverageSet:
    """A set of line identifiers, each "relative-file-path:line"."""

    lines: set[str] = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.lines)

    def __contains__(self, line: str) -> bool:
        return line in self.lines

    def union(self, other: "CoverageSet") -> "CoverageSet":
        return CoverageSet(self.lines | other.lines)

    def update(self, lines: Iterable[str]) -> None:
        self.lines.update(lines)

    def sorted_lines(self) -> list[str]:
        return sorted(self.lines)


@dataclass
class FeedbackPayload:
    """The per-iteration feedback handed to the analysis agent.

    Exactly one kind per iteration; `delta_cov` is zero unless the kind is
    COVERAGE.
    """

    kind: FeedbackKind
    body: str
    delta_cov: int = 0

    def __post_init__(self) -> None:
        if self.kind is not FeedbackKind.COVERAGE and self.delta_cov != 0:
            raise ValueError("delta_cov must be 0 for non-coverage feedback")

    def to_payload(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "body": self.body, "delta_cov": self.delta_cov}

    @classmethod
    def from_payload(cls, d: dict[str, Any]) -> "FeedbackPayload":
        return cls(kind=FeedbackKind(d["kind"]), body=d["body"], delta_cov=d["delta_cov"])


@dataclass
class CampaignState:
    """The resumable unit: everything the loop needs to continue a campaign."""

    cumulative_cov: CoverageSet = field(default_factory=CoverageSet)
    op_table: dict[str, OperatorRecord] = field(default_factory=dict)
    iteration: int = 0
    last_ops: list[str] = field(default_factory=list)
    last_mode: LoopMode | None = None
    rng_seed: int = 0
    bug_signatures: set[str] = field(default_factory=set)


def coverage_delta(current: CoverageSet, cumulative: CoverageSet) -> int:
    """Number of lines in `current` not yet in `cumulative`; mutates neither."""
    return len(current.lines - cumulative.lines)


def derive_seed(seed: int, *parts: object) -> int:
    """Stable per-purpose sub-seed so resumed runs replay the same streams."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(seed).encode("utf-8"))
    for part in parts:
        h.update(b"|")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest(), "big")


def initial_state(config: dict[str, Any]) -> CampaignState:
    """Fresh state from a resolved config dict (the config.snapshot content)."""
    table = {}
    for op in config["operators"]:
        name = op["name"]
        if name in table:
            raise ValueError(f"duplicate operator name: {name}")
        table[name] = OperatorRecord(name=name, signature=op.get("signature"))
    return CampaignState(op_table=table, rng_seed=int(config["seed"]))


def charge_args(mode: LoopMode, prev: dict[str, Any] | None) -> tuple[list[str], int, bool]:
    """Stat-charge inputs for the iteration entering `mode`, given the previous record.

    The charge lags one iteration by design: operators selected at iteration
    i-1 are charged when iteration i selects. Repair iterations charge nothing
    (the repair opportunity reuses the previous sequence untouched); a failed
    repair charges its operators an exception on the following iteration.
    Iterations that never executed a test charge nothing.
    """
    if prev is None or mode is LoopMode.REPAIR:
        return [], 0, False
    executed = prev.get("classification") is not None
    if not executed:
        return [], 0, False
    exception_occurred = (
        prev["classification"] == CLASS_INVALID and prev["mode"] == LoopMode.REPAIR.value
    )
    return list(prev["selected_ops"]), int(prev["delta_cov"]), exception_occurred


class CampaignStore:
    """Filesystem layout and atomic append for one campaign directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.oplog = self.root / OPLOG_DIR
        self.bugs = self.root / BUGS_DIR

    def create(self, config: dict[str, Any]) -> None:
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            self.oplog.mkdir(exist_ok=True)
            self.bugs.mkdir(exist_ok=True)
            self._write_atomic(self.root / CONFIG_SNAPSHOT, _dumps(config))
        except OSError as exc:
            raise StorageError(f"cannot initialize campaign directory: {exc}") from exc

    def load_config(self) -> dict[str, Any]:
        path = self.root / CONFIG_SNAPSHOT
        if not path.exists():
            raise StorageError(f"missing {CONFIG_SNAPSHOT} in {self.root}")
        return json.loads(path.read_text(encoding="utf-8"))

    def record_path(self, record_id: int) -> Path:
        return self.oplog / f"{record_id:06d}.json"

    def append_record(self, payload: dict[str, Any]) -> None:
        path = self.record_path(payload["id"])
        if path.exists():
            raise StorageError(f"record {path.name} already exists")
        try:
            self._write_atomic(path, _dumps(payload))
        except OSError as exc:
            raise StorageError(f"cannot append record {payload['id']}: {exc}") from exc

    def read_record(self, record_id: int) -> dict[str, Any] | None:
        path = self.record_path(record_id)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def read_records(self, quarantine_dropped: bool = False) -> list[dict[str, Any]]:
        """All well-formed records in id order.

        A truncated or malformed *final* record is dropped with a warning
        (the last fully-written record wins); damage anywhere earlier raises
        CorruptLogError. With `quarantine_dropped` the dropped file is moved
        aside so its record slot can be rewritten on resume.
        """
        if not self.oplog.exists():
            return []
        files = sorted(self.oplog.glob("*.json"))
        records: list[dict[str, Any]] = []
        for pos, path in enumerate(files):
            last = pos == len(files) - 1
            try:
                payload = json.loads(path.read_text(encoding="utf-8"))
                if payload["id"] != pos:
                    raise ValueError(f"record id {payload['id']} at position {pos}")
            except (ValueError, KeyError, json.JSONDecodeError) as exc:
                if last:
                    logger.warning("dropping truncated final record %s: %s", path.name, exc)
                    if quarantine_dropped:
                        os.replace(path, path.with_name(path.name + ".dropped"))
                    break
                raise CorruptLogError(f"corrupt oplog record {path.name}: {exc}") from exc
            records.append(payload)
        return records

    def write_state_snapshot(self, state: CampaignState) -> None:
        payload = {
            "iteration": state.iteration,
            "rng_seed": state.rng_seed,
            "last_ops": state.last_ops,
            "last_mode": state.last_mode.value if state.last_mode else None,
            "bug_signatures": sorted(state.bug_signatures),
            "cumulative_cov_size": len(state.cumulative_cov),
            "op_table": {
                name: {
                    "signature": rec.signature,
                    "used_times": rec.used_times,
                    "exp_count": rec.exp_count,
                    "cov_count": rec.cov_count,
                }
                for name, rec in state.op_table.items()
            },
        }
        try:
            self._write_atomic(self.root / STATE_SNAPSHOT, _dumps(payload))
            cov_text = "".join(line + "\n" for line in state.cumulative_cov.sorted_lines())
            self._write_atomic(self.root / COVERAGE_FILE, cov_text)
        except OSError as exc:
            raise StorageError(f"cannot write state snapshot: {exc}") from exc

    def write_bug_report(self, signature: str, text: str) -> None:
        try:
            self.bugs.mkdir(exist_ok=True)
            self._write_atomic(self.bugs / f"{signature}.txt", text)
        except OSError as exc:
            raise StorageError(f"cannot write bug report {signature}: {exc}") from exc

    @staticmethod
    def _write_atomic(path: Path, text: str) -> None:
        # Rename is the commit point; readers never observe partial writes.
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)


def persist_iteration(store: CampaignStore, state: CampaignState, payload: dict[str, Any]) -> None:
    """Append one iteration record and fold it into the in-memory state.

    The record append is the commit point. The snapshot rewrite afterwards is
    best-effort: if the process dies in between, reload folds the oplog and
    reconstructs the same state.
    """
    if payload["id"] != state.iteration:
        raise ValueError(
            f"record id {payload['id']} does not match campaign iteration {state.iteration}"
        )
    feedback = payload.get("feedback")
    if feedback is not None and feedback["delta_cov"] != payload["delta_cov"]:
        raise ValueError("record delta_cov disagrees with its feedback payload")
    store.append_record(payload)
    _apply_record(state, payload)
    store.write_state_snapshot(state)


def load_campaign(directory: str | Path) -> CampaignState:
    """Reconstruct campaign state by folding the oplog.

    The result equals the in-memory state that produced the log, including
    operator stat counters (whose updates lag one iteration, see charge_args).
    """
    from .opsel import update_stats  # local import: opsel depends on core types

    store = CampaignStore(directory)
    config = store.load_config()
    state = initial_state(config)
    prev = None
    # Quarantine a dropped final record so resuming can rewrite its slot.
    for payload in store.read_records(quarantine_dropped=True):
        if payload["id"] > 0:
            ops, delta, exc = charge_args(LoopMode(payload["mode"]), prev)
            update_stats(state.op_table, ops, delta, exc)
        _apply_record(state, payload)
        prev = payload
    return state


def _apply_record(state: CampaignState, payload: dict[str, Any]) -> None:
    if payload.get("classification") == CLASS_PASS and payload.get("covered"):
        state.cumulative_cov.update(payload["covered"])
    signature = payload.get("signature")
    if signature:
        state.bug_signatures.add(signature)
    state.last_ops = list(payload["selected_ops"])
    state.last_mode = LoopMode(payload["mode"])
    state.iteration = payload["id"] + 1


def _dumps(payload: dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
