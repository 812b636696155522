from __future__ import annotations

import json
from dataclasses import replace

from campaign_fixtures import Step, build_transcript, hermetic_config, passing
from feedfuzz.cli import EXIT_CONFIG, EXIT_LOG, EXIT_OK, main
from feedfuzz.config import load_config_snapshot
from feedfuzz.core import CampaignStore
from feedfuzz.llm import packaged_profile_dir
from feedfuzz.loop import CampaignRuntime


def write_transcript(tmp_path, plan, name="transcript.json"):
    path = tmp_path / name
    path.write_text(json.dumps(build_transcript(plan)), encoding="utf-8")
    return path


def run_args(tmp_path, workdir, transcript, extra=()):
    return [
        "run",
        "--workdir", str(workdir),
        "--profile", str(packaged_profile_dir() / "toy.yaml"),
        "--opset", str(packaged_profile_dir() / "toy.opset.jsonl"),
        "--mock-transcript", str(transcript),
        "--shim-cmd", "scripted",
        "--seed", "7",
        *extra,
    ]


class TestCmdRun:
    def test_hermetic_smoke(self, tmp_path, capsys):
        plan = [passing(f"f:{i}") for i in range(20)]
        transcript = write_transcript(tmp_path, plan)
        workdir = tmp_path / "camp"
        code = main(run_args(tmp_path, workdir, transcript, ["--iterations", "20"]))
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "# Tests            20" in out
        summary = json.loads(out.strip().splitlines()[-1])
        assert summary["iterations"] == 20
        assert summary["coverage"] == 20

    def test_missing_opset_is_config_error(self, tmp_path, capsys):
        transcript = write_transcript(tmp_path, [passing()])
        args = run_args(tmp_path, tmp_path / "c", transcript, ["--iterations", "1"])
        args[args.index("--opset") + 1] = str(tmp_path / "missing.jsonl")
        assert main(args) == EXIT_CONFIG

    def test_budget_zero_succeeds_empty(self, tmp_path, capsys):
        transcript = write_transcript(tmp_path, [])
        code = main(run_args(tmp_path, tmp_path / "c", transcript, ["--iterations", "0"]))
        assert code == EXIT_OK
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["iterations"] == 0

    def test_nonempty_workdir_rejected(self, tmp_path, capsys):
        workdir = tmp_path / "c"
        workdir.mkdir()
        (workdir / "junk").write_text("x")
        transcript = write_transcript(tmp_path, [passing()])
        assert main(run_args(tmp_path, workdir, transcript, ["--iterations", "1"])) == EXIT_CONFIG

    def test_two_budget_kinds_rejected(self, tmp_path):
        transcript = write_transcript(tmp_path, [passing()])
        args = run_args(
            tmp_path, tmp_path / "c", transcript, ["--iterations", "1", "--hours", "1"]
        )
        assert main(args) == EXIT_CONFIG

    def test_missing_profile_is_config_error(self, tmp_path):
        transcript = write_transcript(tmp_path, [passing()])
        args = run_args(tmp_path, tmp_path / "c", transcript, ["--iterations", "1"])
        args[args.index("--profile") + 1] = "no-such-profile"
        assert main(args) == EXIT_CONFIG

    def test_workdir_that_is_a_file_is_config_error(self, tmp_path):
        target = tmp_path / "not-a-dir"
        target.write_text("x")
        transcript = write_transcript(tmp_path, [passing()])
        assert main(run_args(tmp_path, target, transcript, ["--iterations", "1"])) == EXIT_CONFIG

    def test_unspawnable_shim_is_shim_error(self, tmp_path):
        from feedfuzz.cli import EXIT_SHIM

        transcript = write_transcript(tmp_path, [passing()])
        args = run_args(tmp_path, tmp_path / "c", transcript, ["--iterations", "1"])
        args[args.index("--shim-cmd") + 1] = "/nonexistent/shim-binary"
        assert main(args) == EXIT_SHIM

    def test_config_file_with_flag_overrides(self, tmp_path, capsys):
        plan = [passing("z:1"), passing("z:2")]
        transcript = write_transcript(tmp_path, plan)
        config_file = tmp_path / "campaign.yaml"
        config_file.write_text(
            "\n".join(
                [
                    f"workdir: {tmp_path / 'camp'}",
                    f"profile: {packaged_profile_dir() / 'toy.yaml'}",
                    f"opset: {packaged_profile_dir() / 'toy.opset.jsonl'}",
                    f"mock_transcript: {transcript}",
                    "shim_cmd: scripted",
                    "iterations: 999",
                    "seed: 7",
                ]
            ),
            encoding="utf-8",
        )
        code = main(["run", "--config", str(config_file), "--iterations", "2"])
        assert code == EXIT_OK
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["iterations"] == 2


class TestCmdResume:
    def test_interrupted_then_resumed_to_budget(self, tmp_path, capsys):
        plan = [passing(f"f:{i}") for i in range(20)]
        config = hermetic_config(tmp_path / "camp", plan)
        runtime = CampaignRuntime(config)
        runtime.run(limit=10)
        runtime.close()
        assert runtime.state.iteration == 10
        code = main(["resume", "--workdir", str(tmp_path / "camp")])
        assert code == EXIT_OK
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["iterations"] == 20

    def test_already_complete_is_noop_success(self, tmp_path, capsys):
        plan = [passing()]
        config = hermetic_config(tmp_path / "camp", plan)
        CampaignRuntime(config).run()
        code = main(["resume", "--workdir", str(tmp_path / "camp")])
        assert code == EXIT_OK
        assert "already complete" in capsys.readouterr().out

    def test_empty_directory_errors(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        assert main(["resume", "--workdir", str(tmp_path / "empty")]) == EXIT_CONFIG

    def test_corrupt_log_exit_code(self, tmp_path, capsys):
        plan = [passing(), passing(), passing()]
        config = hermetic_config(tmp_path / "camp", plan, iterations=5)
        runtime = CampaignRuntime(config)
        runtime.run(limit=3)
        runtime.close()
        store = CampaignStore(config.workdir)
        store.record_path(0).write_text("garbage", encoding="utf-8")
        assert main(["resume", "--workdir", str(tmp_path / "camp")]) == EXIT_LOG


class TestCmdReplay:
    def test_replay_same_classification(self, tmp_path, capsys):
        plan = [Step("bug_num")]
        config = hermetic_config(tmp_path / "camp", plan)
        CampaignRuntime(config).run()
        code = main(["replay", "--workdir", str(tmp_path / "camp"), "--test-id", "0"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "stored classification:   bug_numerical" in out
        assert "replayed classification: bug_numerical" in out

    def test_replay_with_looser_tolerance_prints_both(self, tmp_path, capsys):
        plan = [Step("bug_num")]
        config = hermetic_config(tmp_path / "camp", plan)
        CampaignRuntime(config).run()
        code = main(
            ["replay", "--workdir", str(tmp_path / "camp"), "--test-id", "0", "--atol", "10"]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "stored classification:   bug_numerical" in out
        assert "replayed classification: pass" in out
        assert "verdict changed" in out

    def test_missing_record_errors(self, tmp_path, capsys):
        config = hermetic_config(tmp_path / "camp", [passing()])
        CampaignRuntime(config).run()
        code = main(["replay", "--workdir", str(tmp_path / "camp"), "--test-id", "42"])
        assert code == EXIT_LOG


class TestConfigSnapshot:
    def test_round_trip_reload_equals_original(self, tmp_path):
        plan = [passing()]
        config = hermetic_config(tmp_path / "camp", plan)
        CampaignRuntime(config).run()
        reloaded = load_config_snapshot(tmp_path / "camp")
        assert reloaded == replace(config, workdir=str(tmp_path / "camp"))

    def test_snapshot_contains_no_workdir_path(self, tmp_path):
        plan = [passing()]
        config = hermetic_config(
            tmp_path / "camp", plan, transcript_path=tmp_path / "t.json"
        )
        CampaignRuntime(config).run()
        payload = json.loads((tmp_path / "camp" / "config.snapshot").read_text("utf-8"))
        assert payload["workdir"] is None
        raw = (tmp_path / "camp" / "config.snapshot").read_text(encoding="utf-8")
        assert str(tmp_path / "camp") not in raw
