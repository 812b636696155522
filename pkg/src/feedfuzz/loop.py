"""The fuzzing campaign state machine.

Each iteration: pick the prompt mode from the previous outcome, select
operators (charging the previous iteration's stats), build prompts and call
the agents, execute the generated test on both backends, classify, persist.
Any agent/parse/executor failure turns the iteration into a failure record
and the next iteration falls back to default generation.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import bridge, llm, opsel, oracle
from .config import CampaignConfig, load_config_snapshot
from .core import (
    CampaignStore,
    CoverageSet,
    FeedbackPayload,
    LoopMode,
    TestCase,
    charge_args,
    coverage_delta,
    derive_seed,
    initial_state,
    load_campaign,
    persist_iteration,
)

logger = logging.getLogger(__name__)

# Classification placeholder for iterations that never executed a test.
FAILURE = "failure"

REPRO_COMMAND = "feedfuzz replay --workdir . --test-id {test_id}"


def next_mode(
    prev_mode: LoopMode | None,
    prev_class: oracle.Classification | str | None,
    iteration: int,
    *,
    repair_streak: int | None = None,
    repair_window: int = 1,
) -> LoopMode:
    """Prompt mode for `iteration` given the previous iteration's outcome.

    Invalid tests get one repair attempt (a window of consecutive attempts is
    configurable); a failed repair and any agent failure fall back to default
    generation so the loop cannot get trapped repairing the same test forever.
    """
    if iteration == 0:
        return LoopMode.DEFAULT
    if prev_class is None:
        raise ValueError("iterations past the first need the previous classification")
    if prev_class == FAILURE:
        return LoopMode.DEFAULT
    if prev_class == oracle.Classification.INVALID:
        if repair_streak is None:
            repair_streak = 1 if prev_mode is LoopMode.REPAIR else 0
        return LoopMode.REPAIR if repair_streak < repair_window else LoopMode.DEFAULT
    return LoopMode.FEEDBACK_GUIDED


def prev_class_of(payload: dict[str, Any] | None):
    if payload is None:
        return None
    if payload.get("classification") is None:
        return FAILURE
    return oracle.Classification(payload["classification"])


@dataclass
class IterationRecord:
    """Everything one iteration produced. `wall_time` stays in memory only so
    hermetic runs persist byte-identical logs."""

    id: int
    mode: LoopMode
    selected_ops: list[str]
    test: TestCase | None
    results: list[oracle.BackendResult] | None
    outcome: oracle.Outcome | None
    summary: llm.AnalysisSummary | None
    exchanges: list[llm.ChatExchange]
    covered: list[str] | None
    delta_cov: int
    failure: str | None
    wall_time: float

    def to_payload(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "mode": self.mode.value,
            "selected_ops": list(self.selected_ops),
            "test": (
                {"source": self.test.source, "origin": self.test.origin.value}
                if self.test
                else None
            ),
            "exchanges": [ex.to_payload() for ex in self.exchanges],
            "summary": self.summary.to_payload() if self.summary else None,
            "results": (
                [bridge.backend_result_to_wire(r) for r in self.results]
                if self.results is not None
                else None
            ),
            "classification": self.outcome.classification.value if self.outcome else None,
            "failure": self.failure,
            "feedback": self.outcome.feedback.to_payload() if self.outcome else None,
            "covered": self.covered,
            "delta_cov": self.delta_cov,
            "signature": self.outcome.signature if self.outcome else None,
        }


class CampaignRuntime:
    """Owns the live state of one campaign run (fresh or resumed)."""

    def __init__(self, config: CampaignConfig, *, resume: bool = False):
        self.config = config
        if config.workdir is None:
            raise ValueError("config.workdir must be set")
        self.store = CampaignStore(config.workdir)
        self.profile = llm.SutProfile.from_payload(config.profile)
        self.tolerance = oracle.ToleranceConfig(
            atol=config.atol, rtol=config.rtol, equal_nan=config.equal_nan
        )
        self.analysis_agent, self.generation_agent = _build_agents(config)
        self._executor = None
        self._started = time.monotonic()

        if resume:
            self.state = load_campaign(config.workdir)
            self.last_record_payload = self.store.read_record(self.state.iteration - 1)
        else:
            snapshot = config.to_snapshot()
            self.store.create(snapshot)
            self.state = initial_state(snapshot)
            self.store.write_state_snapshot(self.state)
            self.last_record_payload = None

    # -- wiring ------------------------------------------------------------

    @property
    def executor(self):
        if self._executor is None:
            if self.config.shim_cmd == "scripted":
                self._executor = bridge.ScriptedExecutor()
            else:
                self._executor = bridge.ShimExecutor(self.config.shim_cmd, self.profile.name)
        return self._executor

    def close(self) -> None:
        if self._executor is not None:
            self._executor.close()
            self._executor = None

    # -- budget ------------------------------------------------------------

    def budget_exhausted(self) -> bool:
        if self.config.iterations is not None:
            return self.state.iteration >= self.config.iterations
        # The wall clock restarts on resume; only the iteration budget is
        # tracked across interruptions.
        return time.monotonic() - self._started >= self.config.hours * 3600.0

    # -- the loop ----------------------------------------------------------

    def run(self, limit: int | None = None) -> int:
        """Run until the budget is exhausted (or `limit` more iterations)."""
        steps = 0
        try:
            while not self.budget_exhausted() and (limit is None or steps < limit):
                self.run_iteration()
                steps += 1
        finally:
            self.close()
        return steps

    def run_iteration(self) -> IterationRecord:
        started = time.monotonic()
        i = self.state.iteration
        prev = self.last_record_payload
        mode = next_mode(
            self.state.last_mode,
            prev_class_of(prev),
            i,
            repair_streak=self._repair_streak(),
            repair_window=self.config.repair_window,
        )
        rng = np.random.default_rng(derive_seed(self.state.rng_seed, "opsel", i))
        if mode is LoopMode.REPAIR:
            seq = opsel.ops_selection(
                self.state.op_table,
                delta_cov=0,
                repair_pending=True,
                exception_occurred=False,
                last_ops=prev["selected_ops"],
                params=self.config.sa,
                rng=rng,
            )
        else:
            ops, delta, exc_flag = charge_args(mode, prev)
            seq = opsel.ops_selection(
                self.state.op_table,
                delta_cov=delta,
                repair_pending=False,
                exception_occurred=exc_flag,
                last_ops=ops,
                params=self.config.sa,
                rng=rng,
            )
        selected = list(seq)

        exchanges: list[llm.ChatExchange] = []
        summary = None
        test = None
        results = None
        outcome = None
        covered_sorted = None
        delta_cov = 0
        failure = None

        stage = "analysis"
        try:
            if mode is LoopMode.DEFAULT:
                messages = llm.build_default_prompt(self.profile, selected)
            else:
                feedback = FeedbackPayload.from_payload(prev["feedback"])
                analysis_messages = llm.build_analysis_prompt(
                    self.profile, prev["test"]["source"], feedback
                )
                exchange = self.analysis_agent.call(analysis_messages, tag=f"analysis:{i}")
                exchanges.append(exchange)
                stage = "analysis_parse"
                summary = llm.parse_summary(exchange.response)
                messages = llm.build_feedback_prompt(
                    self.profile, prev["test"]["source"], summary, selected
                )
            stage = "generation"
            exchange = self.generation_agent.call(messages, tag=f"generation:{i}")
            exchanges.append(exchange)
            stage = "generation_parse"
            source = llm.parse_code(exchange.response, self.profile)
            test = TestCase(id=i, source=source, selected_ops=selected, origin=mode)
        except (llm.BackendError, llm.AnalysisParseError, llm.GenerationParseError) as exc:
            failure = f"{stage}: {exc}"
            logger.warning("iteration %d failed at %s: %s", i, stage, exc)

        if test is not None:
            stage = "execution"
            request = bridge.ExecRequest(
                test_id=i,
                source=test.source,
                backends=[self.profile.eager_label, self.profile.compiled_label],
                timeout_s=self.config.timeout_s,
                want_coverage=True,
                seed=derive_seed(self.state.rng_seed, "exec", i),
            )
            try:
                response = self.executor.execute(request)
            except (bridge.ProtocolError, bridge.ShimFault) as exc:
                failure = f"{stage}: {exc}"
                logger.warning("iteration %d failed at execution: %s", i, exc)
            else:
                results = response.results
                covered = response.covered or CoverageSet()
                covered_sorted = covered.sorted_lines() if response.covered else None
                new_lines = sorted(covered.lines - self.state.cumulative_cov.lines)
                outcome = oracle.classify(
                    response.result_for(self.profile.eager_label),
                    response.result_for(self.profile.compiled_label),
                    self.tolerance,
                    new_lines=new_lines,
                )
                if outcome.classification is oracle.Classification.PASS:
                    delta_cov = coverage_delta(covered, self.state.cumulative_cov)
                if outcome.classification in (
                    oracle.Classification.BUG_NUMERICAL,
                    oracle.Classification.BUG_BEHAVIORAL,
                ):
                    outcome = outcome.with_signature(oracle.bug_signature(outcome, test))

        record = IterationRecord(
            id=i,
            mode=mode,
            selected_ops=selected,
            test=test,
            results=results,
            outcome=outcome,
            summary=summary,
            exchanges=exchanges,
            covered=covered_sorted,
            delta_cov=delta_cov,
            failure=failure,
            wall_time=time.monotonic() - started,
        )
        payload = record.to_payload()
        new_bug = (
            outcome is not None
            and outcome.signature is not None
            and outcome.signature not in self.state.bug_signatures
        )
        persist_iteration(self.store, self.state, payload)
        if new_bug:
            self.store.write_bug_report(outcome.signature, _render_bug_report(record))
        self.last_record_payload = payload
        return record

    def _repair_streak(self) -> int:
        streak = 0
        check = self.state.iteration - 1
        while check >= 0:
            if self.last_record_payload is not None and self.last_record_payload["id"] == check:
                payload = self.last_record_payload
            else:
                payload = self.store.read_record(check)
            if payload is None or payload["mode"] != LoopMode.REPAIR.value:
                break
            streak += 1
            check -= 1
        return streak


def _build_agents(config: CampaignConfig) -> tuple[llm.LlmAgent, llm.LlmAgent]:
    import os

    if config.mock_transcript:
        backend = llm.MockChatBackend.from_file(config.mock_transcript)
        analysis_backend = generation_backend = backend
    else:
        analysis_backend = _http_backend(config.analysis, os.environ)
        generation_backend = _http_backend(config.generation, os.environ)
    analysis = llm.LlmAgent(
        role="analysis",
        backend=analysis_backend,
        temperature=config.analysis.temperature,
        max_tokens=config.analysis.max_tokens,
    )
    generation = llm.LlmAgent(
        role="generation",
        backend=generation_backend,
        temperature=config.generation.temperature,
        max_tokens=config.generation.max_tokens,
    )
    return analysis, generation


def _http_backend(backend_config, env) -> llm.HttpChatBackend:
    if not backend_config.endpoint or not backend_config.model:
        raise ValueError(
            "LLM backend needs an endpoint and model (or use a mock transcript)"
        )
    api_key = env.get(backend_config.api_key_env) if backend_config.api_key_env else None
    return llm.HttpChatBackend(
        endpoint=backend_config.endpoint, model=backend_config.model, api_key=api_key
    )


def _render_bug_report(record: IterationRecord) -> str:
    outcome = record.outcome
    parts = [
        f"signature: {outcome.signature}",
        f"classification: {outcome.classification.value}",
        f"test id: {record.id}",
        f"selected operators: {', '.join(record.selected_ops)}",
        "reproduction: " + REPRO_COMMAND.format(test_id=record.id),
        "",
        "--- test source ---",
        record.test.source,
        "",
    ]
    for result in record.results:
        parts.append(f"--- backend {result.backend} ---")
        parts.append(json.dumps(bridge.backend_result_to_wire(result), sort_keys=True, indent=2))
        parts.append("")
    parts.append("--- details ---")
    parts.append(outcome.feedback.body)
    parts.append("")
    return "\n".join(parts)


@dataclass
class CampaignSummary:
    """Tallies folded from the persisted log (not from in-memory counters)."""

    iterations: int
    executed: int
    valid: int
    validity_rate: float
    unique_bugs: int
    coverage_lines: int
    repairs_attempted: int
    repairs_succeeded: int
    failures: int
    kind_counts: dict[str, int]

    def to_payload(self) -> dict[str, Any]:
        return {
            "iterations": self.iterations,
            "tests_executed": self.executed,
            "valid_tests": self.valid,
            "validity_rate": round(self.validity_rate, 4),
            "bugs": self.unique_bugs,
            "coverage": self.coverage_lines,
            "repairs_attempted": self.repairs_attempted,
            "repairs_succeeded": self.repairs_succeeded,
            "failures": self.failures,
            "feedback_kinds": self.kind_counts,
        }


def summarize(workdir: str | Path) -> CampaignSummary:
    """Independent fold over the oplog; must agree with the live counters."""
    store = CampaignStore(workdir)
    records = store.read_records()
    executed = valid = repairs = repairs_ok = failures = 0
    signatures: set[str] = set()
    cumulative: set[str] = set()
    kind_counts: dict[str, int] = {}
    for payload in records:
        classification = payload.get("classification")
        if classification is None:
            failures += 1
        else:
            executed += 1
            kind = payload["feedback"]["kind"]
            kind_counts[kind] = kind_counts.get(kind, 0) + 1
            # A test that violates an oracle still executed; only a test that
            # crashed on both backends is invalid.
            if classification != oracle.Classification.INVALID.value:
                valid += 1
            if classification == oracle.Classification.PASS.value and payload.get("covered"):
                cumulative.update(payload["covered"])
        if payload["mode"] == LoopMode.REPAIR.value:
            repairs += 1
            if classification is not None and classification != oracle.Classification.INVALID.value:
                repairs_ok += 1
        if payload.get("signature"):
            signatures.add(payload["signature"])
    return CampaignSummary(
        iterations=len(records),
        executed=executed,
        valid=valid,
        validity_rate=(valid / executed) if executed else 0.0,
        unique_bugs=len(signatures),
        coverage_lines=len(cumulative),
        repairs_attempted=repairs,
        repairs_succeeded=repairs_ok,
        failures=failures,
        kind_counts=kind_counts,
    )


def run_campaign(config: CampaignConfig, *, resume: bool = False) -> CampaignSummary:
    """Run (or continue) a campaign to its budget and fold the summary."""
    runtime = CampaignRuntime(config, resume=resume)
    runtime.run()
    return summarize(config.workdir)


def replay_record(
    workdir: str | Path,
    test_id: int,
    tolerance: oracle.ToleranceConfig | None = None,
) -> tuple[str, str]:
    """Re-execute a stored test and re-classify; returns (old, new) labels."""
    config = load_config_snapshot(workdir)
    store = CampaignStore(workdir)
    payload = store.read_record(test_id)
    if payload is None:
        raise KeyError(f"no record {test_id} in {workdir}")
    if payload.get("test") is None:
        raise KeyError(f"record {test_id} holds no executable test (failure record)")
    profile = llm.SutProfile.from_payload(config.profile)
    tol = tolerance or oracle.ToleranceConfig(
        atol=config.atol, rtol=config.rtol, equal_nan=config.equal_nan
    )
    if config.shim_cmd == "scripted":
        executor = bridge.ScriptedExecutor()
    else:
        executor = bridge.ShimExecutor(config.shim_cmd, profile.name)
    try:
        request = bridge.ExecRequest(
            test_id=test_id,
            source=payload["test"]["source"],
            backends=[profile.eager_label, profile.compiled_label],
            timeout_s=config.timeout_s,
            want_coverage=False,
            seed=derive_seed(config.seed, "exec", test_id),
        )
        response = executor.execute(request)
    finally:
        executor.close()
    outcome = oracle.classify(
        response.result_for(profile.eager_label),
        response.result_for(profile.compiled_label),
        tol,
    )
    old = payload.get("classification") or FAILURE
    return old, outcome.classification.value
