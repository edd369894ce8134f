"""Tests for the platoon-lab command line."""

import json

import pytest
import yaml

from app.cli import build_parser, config_from_args, main
from app.core.errors import ConfigurationError
from app.schemas.experiment import ExperimentConfig
from app.services.artifacts import read_result, write_manifest


def dry_run_payload(output: str) -> dict:
    """The config JSON printed before the digest line."""
    return json.loads(output.split("config_digest:")[0])


class TestConfigFromArgs:
    """Tests for building a config from flags."""

    def test_flags_override_defaults(self, tmp_path):
        """Test that command-line flags land in the config."""
        args = build_parser().parse_args(
            ["platoon", "--problem", "P4", "--problem", "P5", "--seeds", "2", "--episodes-per-stage", "7", "--out", str(tmp_path)]
        )
        config = config_from_args(args, "platoon")
        assert config.scenario == "platoon"
        assert config.problems == ["P4", "P5"]
        assert config.seeds == 2
        assert config.trainer.episodes_per_stage == 7
        assert config.output_dir == str(tmp_path)

    def test_manifest_is_reproduced(self, tmp_path):
        """Test that a manifest keeps its own problems and seeds."""
        original = ExperimentConfig(problems=["P2"], seeds=3)
        write_manifest(tmp_path, original, [])
        args = build_parser().parse_args(
            ["two-vehicle", "--manifest", str(tmp_path / "manifest.json"), "--seeds", "9"]
        )
        assert config_from_args(args, "two_vehicle").digest() == original.digest()

    def test_config_and_manifest_conflict(self, tmp_path):
        """Test that --config and --manifest cannot be combined."""
        args = build_parser().parse_args(["kl", "--config", "a.yaml", "--manifest", "b.json"])
        with pytest.raises(ConfigurationError):
            config_from_args(args, "kl")

    def test_yaml_config(self, tmp_path):
        """Test loading a YAML config file."""
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump({"problems": ["P1"], "seeds": 4, "dynamics": {"horizon": 20}}))
        args = build_parser().parse_args(["two-vehicle", "--config", str(path)])
        config = config_from_args(args, "two_vehicle")
        assert config.seeds == 4
        assert config.dynamics.horizon == 20


class TestMain:
    """Tests for command dispatch and exit codes."""

    def test_dry_run(self, capsys):
        """Test that a dry run prints the config, digest and workload."""
        assert main(["two-vehicle", "--dry-run", "--seeds", "2"]) == 0
        out = capsys.readouterr().out
        assert dry_run_payload(out)["seeds"] == 2
        assert "config_digest:" in out
        assert '"workload"' in out

    def test_unknown_problem_exit_code(self, capsys):
        """Test that an invalid problem exits with code 2 and an error code."""
        assert main(["two-vehicle", "--dry-run", "--problem", "P9"]) == 2
        assert "error [INVALID_CONFIG]" in capsys.readouterr().err

    def test_report_without_run(self, tmp_path, capsys):
        """Test that reporting a missing run names the artifact error."""
        assert main(["report", str(tmp_path)]) == 2
        assert "error [MISSING_ARTIFACT]" in capsys.readouterr().err

    def test_check_theorems(self, tmp_path, capsys):
        """Test a small theorem suite from a config file."""
        path = tmp_path / "suite.yaml"
        path.write_text(yaml.safe_dump({"oracle": {"instances": 2, "families": ["markov_hidden", "irrelevant_hidden"]}}))
        code = main(["check-theorems", "--config", str(path), "--out", str(tmp_path), "--run-name", "suite"])
        assert code == 0
        assert read_result(tmp_path / "suite", "theorems")["passed"].all()
        assert "irrelevant_hidden" in capsys.readouterr().out

    def test_unknown_command(self):
        """Test that argparse rejects unknown commands."""
        with pytest.raises(SystemExit):
            main(["fly"])
