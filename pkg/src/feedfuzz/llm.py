"""Prompt construction for the analysis and generation agents, pluggable
chat-completion backends, and parsing of agent responses.

Prompt builders are pure text substitution: the same inputs always produce
byte-identical prompts, and no bracketed placeholder token survives into an
emitted prompt.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import requests
import yaml

from .core import FeedbackKind, FeedbackPayload

Message = dict[str, str]

# Feedback bodies are clipped to fit small-context models; coverage bodies are
# already capped at the payload level (see oracle.coverage_feedback).
FEEDBACK_BODY_BUDGET = 4000

PLACEHOLDERS = (
    "[LIBRARY]",
    "[SELECTED_OPS]",
    "[MODEL CODE]",
    "[COVERAGE]",
    "[BUG]",
    "[EXCEPTION]",
    "[ANALYSIS SUMMARY]",
    "[PLACEHOLDER...]",
)


class BackendError(Exception):
    """The chat backend could not produce a response."""


class GenerationParseError(Exception):
    """The generation agent's response does not contain a usable test."""


class AnalysisParseError(Exception):
    """The analysis agent's response is unusable."""


@dataclass
class FewShotExample:
    selected_ops: list[str]
    instruction: str
    model_source: str


@dataclass
class SutProfile:
    """Everything prompt construction needs to know about one SUT."""

    name: str
    library_token: str
    few_shot_examples: list[FewShotExample]
    code_markers: list[str]
    backend_labels: dict[str, str] = field(
        default_factory=lambda: {"eager": "eager", "compiled": "compiled"}
    )

    def __post_init__(self) -> None:
        if not self.few_shot_examples:
            raise ValueError("profile needs at least one few-shot example")
        if not self.code_markers:
            raise ValueError("profile needs at least one code marker")

    @property
    def eager_label(self) -> str:
        return self.backend_labels["eager"]

    @property
    def compiled_label(self) -> str:
        return self.backend_labels["compiled"]

    def to_payload(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "library_token": self.library_token,
            "backend_labels": dict(self.backend_labels),
            "code_markers": list(self.code_markers),
            "few_shot_examples": [
                {
                    "selected_ops": list(ex.selected_ops),
                    "instruction": ex.instruction,
                    "model_source": ex.model_source,
                }
                for ex in self.few_shot_examples
            ],
        }

    @classmethod
    def from_payload(cls, d: dict[str, Any]) -> "SutProfile":
        return cls(
            name=d["name"],
            library_token=d["library_token"],
            few_shot_examples=[FewShotExample(**ex) for ex in d["few_shot_examples"]],
            code_markers=list(d["code_markers"]),
            backend_labels=dict(d["backend_labels"]),
        )


def load_profile(path: str | Path) -> SutProfile:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return SutProfile.from_payload(data)


def packaged_profile_dir() -> Path:
    return Path(__file__).parent / "profiles"


@dataclass
class AnalysisSummary:
    """The analysis agent's three-part distillation of the last feedback."""

    explanation: str
    reasons: str
    next_strategy: str
    raw: str

    def to_payload(self) -> dict[str, str]:
        return {
            "explanation": self.explanation,
            "reasons": self.reasons,
            "next_strategy": self.next_strategy,
            "raw": self.raw,
        }

    def rendered(self) -> str:
        parts = []
        if self.explanation:
            parts.append(f"Explanation: {self.explanation}")
        if self.reasons:
            parts.append(f"Reasons: {self.reasons}")
        parts.append(f"Next testing strategy: {self.next_strategy}")
        return "\n".join(parts)


@dataclass
class ChatExchange:
    """One request/response pair, recorded verbatim in the iteration log."""

    agent: str
    prompt: list[Message]
    temperature: float
    max_tokens: int
    response: str
    backend_id: str

    def to_payload(self) -> dict[str, Any]:
        return {
            "agent": self.agent,
            "prompt": self.prompt,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "response": self.response,
            "backend_id": self.backend_id,
        }


_DEFAULT_TASK = """### Task
Please generate a valid [LIBRARY] model with the selected operators.
Selected operators: [SELECTED_OPS]
Reply with a single fenced code block containing the model definition and the input construction."""

_ANALYSIS_HEADER = (
    "Shown here is a [LIBRARY] model along with input tensors from the last iteration."
)

_ANALYSIS_SECTIONS = {
    FeedbackKind.COVERAGE: "The test passed on both backends. Coverage feedback:\n[COVERAGE]",
    FeedbackKind.BUG_REPORT: "Differential testing flagged a potential bug. Bug report:\n[BUG]",
    FeedbackKind.EXCEPTION_LOG: "The test crashed on both backends. Exception log:\n[EXCEPTION]",
}

_ANALYSIS_INSTRUCTION = """Analyze the feedback step by step and reply using exactly these headings:
Explanation: what the feedback shows about the framework's behavior.
Reasons: why the behavior occurred.
Next testing strategy: one concrete strategy for the next generated test."""

_FEEDBACK_TASK = """Please generate a valid [LIBRARY] model with the selected operators, following the testing strategy below.

Model from the last iteration:
```python
[MODEL CODE]
```

Analysis summary:
[ANALYSIS SUMMARY]

Selected operators: [SELECTED_OPS]
Reply with a single fenced code block containing the model definition and the input construction."""


def build_default_prompt(profile: SutProfile, selected_ops: Sequence[str]) -> list[Message]:
    """Few-shot examples followed by the default generation instruction."""
    if not selected_ops:
        raise ValueError("selected_ops must be nonempty")
    blocks = []
    for ex in profile.few_shot_examples:
        blocks.append(
            "### Example\n"
            f"Selected operators: {', '.join(ex.selected_ops)}\n"
            f"{ex.instruction}\n"
            f"```python\n{ex.model_source.rstrip()}\n```"
        )
    task = _DEFAULT_TASK.replace("[LIBRARY]", profile.library_token).replace(
        "[SELECTED_OPS]", ", ".join(selected_ops)
    )
    blocks.append(task)
    return [{"role": "user", "content": "\n\n".join(blocks)}]


def build_analysis_prompt(
    profile: SutProfile, last_test_source: str, feedback: FeedbackPayload
) -> list[Message]:
    """Template chosen by feedback kind, with the matching placeholder filled."""
    section = _ANALYSIS_SECTIONS[feedback.kind]
    body = clip_middle(feedback.body, FEEDBACK_BODY_BUDGET)
    for placeholder in ("[COVERAGE]", "[BUG]", "[EXCEPTION]"):
        section = section.replace(placeholder, body)
    content = "\n\n".join(
        [
            _ANALYSIS_HEADER.replace("[LIBRARY]", profile.library_token),
            f"```python\n{last_test_source.rstrip()}\n```",
            section,
            _ANALYSIS_INSTRUCTION,
        ]
    )
    return [{"role": "user", "content": content}]


def build_feedback_prompt(
    profile: SutProfile,
    last_test_source: str,
    summary: AnalysisSummary,
    selected_ops: Sequence[str],
) -> list[Message]:
    """Feedback-guided generation prompt: last model, summary, selected ops."""
    if not summary.next_strategy:
        raise ValueError("analysis summary carries no next testing strategy")
    content = (
        _FEEDBACK_TASK.replace("[LIBRARY]", profile.library_token)
        .replace("[MODEL CODE]", last_test_source.rstrip())
        .replace("[ANALYSIS SUMMARY]", summary.rendered())
        .replace("[SELECTED_OPS]", ", ".join(selected_ops))
    )
    return [{"role": "user", "content": content}]


_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def parse_code(response: str, profile: SutProfile) -> str:
    """Extract the test source: first fenced code block, else the whole reply."""
    match = _FENCE_RE.search(response)
    if match:
        source = match.group(1)
        if source.endswith("\n"):
            source = source[:-1]
    else:
        source = response.strip()
    if not source.strip():
        raise GenerationParseError("response contains no code")
    missing = [m for m in profile.code_markers if m not in source]
    if missing:
        raise GenerationParseError(f"generated code lacks required markers: {missing}")
    return source


_SUMMARY_HEADING_RE = re.compile(
    r"(?im)^[ \t>#*]*(explanation|reasons|next testing strategy)\s*[:*]+\s*"
)


def parse_summary(response: str) -> AnalysisSummary:
    """Split the reply on the three labeled headings.

    Without headings the entire response becomes the next testing strategy,
    so downstream prompting always has a nonempty strategy to work with.
    """
    if not response or not response.strip():
        raise AnalysisParseError("empty analysis response")
    sections: dict[str, str] = {}
    matches = list(_SUMMARY_HEADING_RE.finditer(response))
    for pos, match in enumerate(matches):
        end = matches[pos + 1].start() if pos + 1 < len(matches) else len(response)
        label = match.group(1).lower()
        sections.setdefault(label, response[match.end():end].strip())
    explanation = sections.get("explanation", "")
    reasons = sections.get("reasons", "")
    strategy = sections.get("next testing strategy", "")
    if not strategy:
        strategy = response.strip()
    return AnalysisSummary(
        explanation=explanation, reasons=reasons, next_strategy=strategy, raw=response
    )


def clip_middle(text: str, budget: int) -> str:
    """Clip oversized text to `budget` characters, keeping head and tail."""
    if len(text) <= budget:
        return text
    marker = f"\n... [{len(text) - budget} characters elided] ...\n"
    half = max((budget - len(marker)) // 2, 1)
    return text[:half] + marker + text[len(text) - half:]


class ChatBackend:
    """Blocking chat-completion contract shared by the HTTP and mock backends."""

    backend_id: str = "base"

    def complete(self, messages: list[Message], *, temperature: float,
                 max_tokens: int, tag: str) -> str:
        raise NotImplementedError


class HttpChatBackend(ChatBackend):
    """OpenAI-compatible chat-completions endpoint with retry and backoff."""

    def __init__(self, endpoint: str, model: str, api_key: str | None = None,
                 timeout_s: float = 120.0, retries: int = 3, backoff_s: float = 1.0):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s
        self.backend_id = f"http:{model}"

    def complete(self, messages: list[Message], *, temperature: float,
                 max_tokens: int, tag: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = requests.post(
                    f"{self.endpoint}/chat/completions",
                    json=body,
                    headers=headers,
                    timeout=self.timeout_s,
                )
                resp.raise_for_status()
                data = resp.json()
                return data["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff_s * (2 ** attempt))
        raise BackendError(f"chat backend failed after {self.retries} attempts: {last_error}")


class MockChatBackend(ChatBackend):
    """Replays a transcript keyed by '<agent>:<iteration>' tags."""

    backend_id = "mock"

    def __init__(self, transcript: dict[str, str]):
        self.transcript = transcript

    @classmethod
    def from_file(cls, path: str | Path) -> "MockChatBackend":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def complete(self, messages: list[Message], *, temperature: float,
                 max_tokens: int, tag: str) -> str:
        if tag not in self.transcript:
            raise BackendError(f"mock transcript has no entry for {tag!r}")
        return self.transcript[tag]


@dataclass
class LlmAgent:
    """One configured agent role (analysis or generation) bound to a backend."""

    role: str
    backend: ChatBackend
    temperature: float
    max_tokens: int = 2048

    def call(self, messages: list[Message], tag: str) -> ChatExchange:
        response = self.backend.complete(
            messages, temperature=self.temperature, max_tokens=self.max_tokens, tag=tag
        )
        return ChatExchange(
            agent=self.role,
            prompt=messages,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            response=response,
            backend_id=self.backend.backend_id,
        )
