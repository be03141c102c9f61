"""Tests for the twinwatch command line."""

import json

import pytest
import yaml

from runner.main import build_parser, main
from runner.scenario import EXIT_ABORTED, EXIT_CONFIG, EXIT_OK
from store.timeseries import TimeSeriesStore


@pytest.fixture
def tiny_config(tmp_path):
    """A scenario small enough to run from the CLI in a test."""
    path = tmp_path / "tiny.yaml"
    config = {
        "replications": 4,
        "calibration_runs": 3,
        "runs": 3,
        "seed": 5,
        "metrics": {"eps_mean_by_quantity": {"velocity": 0.005, "angular_position": 0.002}},
        "output_dir": str(tmp_path / "out"),
        "studies": {"estimation": {"runs": 2}},
    }
    path.write_text(yaml.safe_dump(config))
    return path


class TestParser:
    """Argument parsing."""

    def test_commands(self):
        """Every subcommand takes the shared flags."""
        args = build_parser().parse_args(["run", "-c", "x.yaml", "--seed", "3", "--policy", "majority"])
        assert args.command == "run"
        assert args.seed == 3
        assert args.policy == "majority"

    def test_unknown_study(self):
        """Study names are checked by the parser."""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["study", "reliability"])


class TestInit:
    """Tests for `twinwatch init`."""

    def test_writes_default(self, tmp_path):
        """init writes a loadable default config."""
        path = tmp_path / "scenario.yaml"
        assert main(["init", str(path)]) == EXIT_OK
        assert yaml.safe_load(path.read_text())["policy"] == "majority"

    def test_refuses_overwrite(self, tmp_path):
        """An existing file is left alone."""
        path = tmp_path / "scenario.yaml"
        path.write_text("runs: 1\n")
        assert main(["init", str(path)]) == EXIT_CONFIG
        assert path.read_text() == "runs: 1\n"


class TestConfigErrors:
    """Configuration problems exit with the config code."""

    def test_missing_config(self, tmp_path):
        """A missing config file."""
        assert main(["run", "-c", str(tmp_path / "none.yaml")]) == EXIT_CONFIG

    def test_invalid_config(self, tmp_path, capsys):
        """A config that fails validation names the field."""
        path = tmp_path / "bad.yaml"
        path.write_text("replications: 0\n")
        assert main(["calibrate", "-c", str(path)]) == EXIT_CONFIG
        assert "replications" in capsys.readouterr().out


class TestCommands:
    """End-to-end commands on a tiny scenario."""

    def test_calibrate(self, tiny_config, tmp_path, capsys):
        """calibrate stores thresholds and writes them next to the outputs."""
        assert main(["calibrate", "-c", str(tiny_config)]) == EXIT_OK
        assert (tmp_path / "out" / "thresholds.json").exists()
        assert TimeSeriesStore.open(tmp_path / "out" / "store").load_thresholds() is not None
        assert "Calibrated" in capsys.readouterr().out

    def test_run_and_report(self, tiny_config, tmp_path, capsys):
        """run writes the scenario report; report reads the store back."""
        assert main(["run", "-c", str(tiny_config)]) == EXIT_OK
        with open(tmp_path / "out" / "scenario.json") as f:
            scenario = json.load(f)
        assert [r["verdict"] for r in scenario["runs"]] == ["valid"] * 3
        assert "valid" in capsys.readouterr().out

        store_dir = tmp_path / "out" / "store"
        assert main(["report", "2", "--store", str(store_dir), "--out", str(tmp_path / "reports")]) == EXIT_OK
        assert (tmp_path / "reports" / "run_2.json").exists()
        assert main(["report", "9", "--store", str(store_dir)]) == EXIT_ABORTED

    def test_out_override(self, tiny_config, tmp_path):
        """--out redirects outputs and the store."""
        assert main(["run", "-c", str(tiny_config), "--out", str(tmp_path / "elsewhere")]) == EXIT_OK
        assert (tmp_path / "elsewhere" / "scenario.json").exists()
        assert (tmp_path / "elsewhere" / "store").is_dir()

    def test_store_env_var(self, tiny_config, tmp_path, monkeypatch):
        """TWINWATCH_STORE redirects the store only."""
        monkeypatch.setenv("TWINWATCH_STORE", str(tmp_path / "env_store"))
        assert main(["calibrate", "-c", str(tiny_config)]) == EXIT_OK
        assert TimeSeriesStore.open(tmp_path / "env_store").load_thresholds() is not None

    def test_study(self, tiny_config, tmp_path):
        """study writes its report under the output directory."""
        assert main(["study", "estimation", "-c", str(tiny_config)]) == EXIT_OK
        report = tmp_path / "out" / "estimation"
        assert (report / "estimation.json").exists()
        assert (report / "estimation.csv").exists()

    def test_report_study(self, tiny_config, tmp_path):
        """report re-emits a saved study by name or by directory."""
        assert main(["study", "estimation", "-c", str(tiny_config)]) == EXIT_OK
        directory = tmp_path / "out" / "estimation"
        original = (directory / "estimation.csv").read_bytes()
        (directory / "estimation.csv").unlink()
        assert main(["report", "estimation", "-c", str(tiny_config)]) == EXIT_OK
        assert (directory / "estimation.csv").read_bytes() == original
        copy = tmp_path / "copy"
        assert main(["report", str(directory), "--out", str(copy)]) == EXIT_OK
        assert (copy / "estimation.csv").read_bytes() == original
        assert (copy / "estimation.json").exists()

    def test_report_missing_study(self, tmp_path):
        """An unknown study directory is not found."""
        assert main(["report", str(tmp_path / "nowhere")]) == EXIT_ABORTED

    def test_report_schema(self, tmp_path):
        """report --schema writes the study report schema."""
        path = tmp_path / "schema.json"
        assert main(["report", "--schema", str(path)]) == EXIT_OK
        with open(path) as f:
            assert json.load(f)["title"] == "StudyReport"
