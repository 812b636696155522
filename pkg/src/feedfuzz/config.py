"""Campaign configuration: validation, resolution (inlining operator set and
profile), and the config.snapshot round-trip.

The snapshot inlines everything a resume needs except the workdir itself, so
a campaign directory is self-contained and byte-stable across hosts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from .core import CONFIG_SNAPSHOT
from .llm import load_profile
from .opsel import SAParams


class ConfigError(Exception):
    pass


DEFAULT_ITERATIONS = 1000


@dataclass(frozen=True)
class LlmBackendConfig:
    endpoint: str | None = None
    model: str | None = None
    temperature: float = 0.0
    max_tokens: int = 2048
    api_key_env: str | None = None

    def to_payload(self) -> dict[str, Any]:
        return {
            "endpoint": self.endpoint,
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "api_key_env": self.api_key_env,
        }


@dataclass(frozen=True)
class CampaignConfig:
    profile_path: str | None = None
    opset_path: str | None = None
    workdir: str | None = None
    seed: int = 0
    iterations: int | None = None
    hours: float | None = None
    atol: float = 0.001
    rtol: float = 0.001
    equal_nan: bool = True
    # Analysis summaries want determinism; generation wants fuzzing entropy.
    analysis: LlmBackendConfig = field(default_factory=lambda: LlmBackendConfig(temperature=0.0))
    generation: LlmBackendConfig = field(default_factory=lambda: LlmBackendConfig(temperature=1.0))
    mock_transcript: str | None = None
    shim_cmd: str = "scripted"
    timeout_s: float = 30.0
    repair_window: int = 1
    sa: SAParams = field(default_factory=SAParams)
    # Resolved content, inlined at campaign start:
    operators: tuple[dict[str, Any], ...] = ()
    profile: dict[str, Any] | None = None

    def validate(self) -> "CampaignConfig":
        cfg = self
        if cfg.iterations is None and cfg.hours is None:
            cfg = replace(cfg, iterations=DEFAULT_ITERATIONS)
        if (cfg.iterations is None) == (cfg.hours is None):
            raise ConfigError("exactly one of iterations or hours must be set")
        if cfg.iterations is not None and cfg.iterations < 0:
            raise ConfigError("iteration budget must be nonnegative")
        if cfg.hours is not None and cfg.hours <= 0:
            raise ConfigError("wall-clock budget must be positive")
        if cfg.repair_window < 1:
            raise ConfigError("repair_window must be at least 1")
        if cfg.atol < 0 or cfg.rtol < 0:
            raise ConfigError("tolerances must be nonnegative")
        return cfg

    def resolve(self) -> "CampaignConfig":
        """Load and inline the operator set and profile files."""
        cfg = self.validate()
        if not cfg.operators:
            if not cfg.opset_path:
                raise ConfigError("an operator-set path is required")
            cfg = replace(cfg, operators=tuple(load_operator_set(cfg.opset_path)))
        if cfg.profile is None:
            if not cfg.profile_path:
                raise ConfigError("a profile path is required")
            path = Path(cfg.profile_path)
            if not path.exists():
                raise ConfigError(f"profile file not found: {path}")
            try:
                cfg = replace(cfg, profile=load_profile(path).to_payload())
            except (yaml.YAMLError, KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad profile file {path}: {exc}") from exc
        if cfg.mock_transcript and not Path(cfg.mock_transcript).exists():
            raise ConfigError(f"mock transcript not found: {cfg.mock_transcript}")
        return cfg

    def to_snapshot(self) -> dict[str, Any]:
        # The workdir is the directory holding the snapshot; persisting it
        # would bake an absolute path into otherwise reproducible bytes.
        return {
            "profile_path": self.profile_path,
            "opset_path": self.opset_path,
            "workdir": None,
            "seed": self.seed,
            "iterations": self.iterations,
            "hours": self.hours,
            "atol": self.atol,
            "rtol": self.rtol,
            "equal_nan": self.equal_nan,
            "analysis": self.analysis.to_payload(),
            "generation": self.generation.to_payload(),
            "mock_transcript": self.mock_transcript,
            "shim_cmd": self.shim_cmd,
            "timeout_s": self.timeout_s,
            "repair_window": self.repair_window,
            "sa": {
                "t0": self.sa.t0,
                "ns": self.sa.ns,
                "gamma": self.sa.gamma,
                "t_min": self.sa.t_min,
                "k_min": self.sa.k_min,
                "k_max": self.sa.k_max,
                "alpha": self.sa.alpha,
                "beta": self.sa.beta,
            },
            "operators": list(self.operators),
            "profile": self.profile,
        }

    @classmethod
    def from_snapshot(cls, payload: dict[str, Any], workdir: str | None = None) -> "CampaignConfig":
        return cls(
            profile_path=payload.get("profile_path"),
            opset_path=payload.get("opset_path"),
            workdir=workdir,
            seed=payload["seed"],
            iterations=payload.get("iterations"),
            hours=payload.get("hours"),
            atol=payload["atol"],
            rtol=payload["rtol"],
            equal_nan=payload["equal_nan"],
            analysis=LlmBackendConfig(**payload["analysis"]),
            generation=LlmBackendConfig(**payload["generation"]),
            mock_transcript=payload.get("mock_transcript"),
            shim_cmd=payload["shim_cmd"],
            timeout_s=payload["timeout_s"],
            repair_window=payload["repair_window"],
            sa=SAParams(**payload["sa"]),
            operators=tuple(payload["operators"]),
            profile=payload.get("profile"),
        )


def load_operator_set(path: str | Path) -> list[dict[str, Any]]:
    """Operator-set file: JSON lines, one record per operator.

    Each record needs a "name"; "signature" (a doc snippet) is optional.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"operator-set file not found: {path}")
    operators: list[dict[str, Any]] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            record = json.loads(line)
            name = record["name"]
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad operator record: {exc}") from exc
        if name in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate operator {name!r}")
        seen.add(name)
        operators.append({"name": name, "signature": record.get("signature")})
    if not operators:
        raise ConfigError(f"operator set {path} is empty")
    return operators


def load_config_snapshot(workdir: str | Path) -> CampaignConfig:
    path = Path(workdir) / CONFIG_SNAPSHOT
    if not path.exists():
        raise ConfigError(f"no campaign found in {workdir} (missing {CONFIG_SNAPSHOT})")
    payload = json.loads(path.read_text(encoding="utf-8"))
    return CampaignConfig.from_snapshot(payload, workdir=str(workdir))
