"""Operator-facing command line: run or resume campaigns and replay records."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any

import yaml

from .bridge import ShimError
from .config import CampaignConfig, ConfigError, LlmBackendConfig, load_config_snapshot
from .core import CorruptLogError, StorageError
from .loop import CampaignRuntime, replay_record, summarize
from .opsel import SAParams
from .oracle import ToleranceConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SHIM = 3
EXIT_STORAGE = 4
EXIT_LOG = 5


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "resume":
            return cmd_resume(args)
        return cmd_replay(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ShimError as exc:
        print(f"shim error: {exc}", file=sys.stderr)
        return EXIT_SHIM
    except StorageError as exc:
        print(f"storage error: {exc}", file=sys.stderr)
        return EXIT_STORAGE
    except (CorruptLogError, KeyError) as exc:
        print(f"campaign log error: {exc}", file=sys.stderr)
        return EXIT_LOG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feedfuzz",
        description="Feedback-driven differential fuzzing for DL frameworks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="start a fresh campaign")
    run.add_argument("--config", help="YAML or JSON config file")
    run.add_argument("--workdir", help="campaign directory (must be empty or absent)")
    run.add_argument("--profile", help="SUT profile file or packaged profile name")
    run.add_argument("--opset", help="operator-set file (JSON lines)")
    run.add_argument("--iterations", type=int, help="iteration budget")
    run.add_argument("--hours", type=float, help="wall-clock budget in hours")
    run.add_argument("--seed", type=int, help="campaign seed")
    run.add_argument("--atol", type=float, help="absolute tolerance")
    run.add_argument("--rtol", type=float, help="relative tolerance")
    run.add_argument("--llm-analysis-endpoint")
    run.add_argument("--llm-analysis-model")
    run.add_argument("--llm-generation-endpoint")
    run.add_argument("--llm-generation-model")
    run.add_argument("--mock-transcript", help="transcript file; replaces both LLM backends")
    run.add_argument("--shim-cmd", help="executor shim command line, or 'scripted'")

    resume = sub.add_parser("resume", help="continue an interrupted campaign")
    resume.add_argument("--workdir", required=True)

    replay = sub.add_parser("replay", help="re-execute and re-classify one stored test")
    replay.add_argument("--workdir", required=True)
    replay.add_argument("--test-id", type=int, required=True)
    replay.add_argument("--atol", type=float)
    replay.add_argument("--rtol", type=float)
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    config = _assemble_config(args)
    workdir = Path(config.workdir)
    if workdir.exists() and not workdir.is_dir():
        raise ConfigError(f"workdir {workdir} is not a directory")
    if workdir.is_dir() and any(workdir.iterdir()):
        raise ConfigError(f"workdir {workdir} is not empty")
    config = config.resolve()
    runtime = CampaignRuntime(config)
    runtime.run()
    _print_summary(config.workdir)
    return EXIT_OK


def cmd_resume(args: argparse.Namespace) -> int:
    config = load_config_snapshot(args.workdir)
    runtime = CampaignRuntime(config, resume=True)
    if runtime.budget_exhausted():
        print("campaign already complete")
    else:
        runtime.run()
    _print_summary(args.workdir)
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    tolerance = None
    if args.atol is not None or args.rtol is not None:
        base = load_config_snapshot(args.workdir)
        tolerance = ToleranceConfig(
            atol=args.atol if args.atol is not None else base.atol,
            rtol=args.rtol if args.rtol is not None else base.rtol,
            equal_nan=base.equal_nan,
        )
    old, new = replay_record(args.workdir, args.test_id, tolerance=tolerance)
    print(f"stored classification:   {old}")
    print(f"replayed classification: {new}")
    if old != new:
        print("verdict changed on replay")
    return EXIT_OK


def _assemble_config(args: argparse.Namespace) -> CampaignConfig:
    payload: dict[str, Any] = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            payload = yaml.safe_load(fh) or {}

    def picked(flag, key):
        return flag if flag is not None else payload.get(key)

    iterations = picked(args.iterations, "iterations")
    hours = picked(args.hours, "hours")
    # A budget flag on the command line overrides the file's budget kind.
    if args.iterations is not None and args.hours is None:
        hours = None
    if args.hours is not None and args.iterations is None:
        iterations = None

    analysis = LlmBackendConfig(
        endpoint=args.llm_analysis_endpoint or payload.get("analysis", {}).get("endpoint"),
        model=args.llm_analysis_model or payload.get("analysis", {}).get("model"),
        temperature=payload.get("analysis", {}).get("temperature", 0.0),
        max_tokens=payload.get("analysis", {}).get("max_tokens", 2048),
        api_key_env=payload.get("analysis", {}).get("api_key_env"),
    )
    generation = LlmBackendConfig(
        endpoint=args.llm_generation_endpoint or payload.get("generation", {}).get("endpoint"),
        model=args.llm_generation_model or payload.get("generation", {}).get("model"),
        temperature=payload.get("generation", {}).get("temperature", 1.0),
        max_tokens=payload.get("generation", {}).get("max_tokens", 2048),
        api_key_env=payload.get("generation", {}).get("api_key_env"),
    )

    workdir = picked(args.workdir, "workdir")
    if not workdir:
        raise ConfigError("a workdir is required")
    profile = picked(args.profile, "profile")
    if not profile:
        raise ConfigError("a profile is required")
    opset = picked(args.opset, "opset")
    if not opset:
        raise ConfigError("an operator set is required")

    sa_payload = payload.get("sa", {})
    try:
        sa = SAParams(**sa_payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad SA parameters: {exc}") from exc

    return CampaignConfig(
        profile_path=_resolve_profile_path(profile),
        opset_path=opset,
        workdir=str(workdir),
        seed=picked(args.seed, "seed") or 0,
        iterations=iterations,
        hours=hours,
        atol=_pick_float(args.atol, payload, "atol", 0.001),
        rtol=_pick_float(args.rtol, payload, "rtol", 0.001),
        equal_nan=payload.get("equal_nan", True),
        analysis=analysis,
        generation=generation,
        mock_transcript=picked(args.mock_transcript, "mock_transcript"),
        shim_cmd=picked(args.shim_cmd, "shim_cmd") or "scripted",
        timeout_s=payload.get("timeout_s", 30.0),
        repair_window=payload.get("repair_window", 1),
        sa=sa,
    )


def _pick_float(flag, payload, key, default):
    if flag is not None:
        return flag
    return payload.get(key, default)


def _resolve_profile_path(profile: str) -> str:
    path = Path(profile)
    if path.exists():
        return str(path)
    packaged = Path(__file__).parent / "profiles" / f"{profile}.yaml"
    if packaged.exists():
        return str(packaged)
    raise ConfigError(f"profile not found: {profile}")


def _print_summary(workdir: str | Path) -> None:
    summary = summarize(workdir)
    pct = summary.validity_rate * 100.0
    print("campaign summary")
    print(f"  # Bugs             {summary.unique_bugs}")
    print(f"  Coverage           {summary.coverage_lines}")
    print(f"  # Valid Tests (%)  {summary.valid} ({pct:.2f}%)")
    print(f"  # Tests            {summary.iterations}")
    print(
        f"  repairs            {summary.repairs_attempted} attempted, "
        f"{summary.repairs_succeeded} succeeded"
    )
    print(json.dumps(summary.to_payload(), sort_keys=True))


if __name__ == "__main__":
    sys.exit(main())
