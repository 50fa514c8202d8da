"""Tests for run_switching.py - the command-line entry point."""

import csv

import pytest

from artifacts import read_manifest
from conftest import SCENARIO1_CFG
from run_switching import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(line for line in f if not line.startswith("#")))


@pytest.fixture
def solved_field(scenario1_cfg, tmp_path):
    out = tmp_path / "solve"
    assert main(["solve", "--config", str(scenario1_cfg), "--n", "8", "--out", str(out), "-q"]) == EXIT_OK
    return out / "field.csv"


class TestUsage:
    """Argument handling and exit codes."""

    def test_help_exits_zero(self, capsys):
        """--help is a success."""
        assert main(["--help"]) == EXIT_OK

    def test_no_command(self):
        """A missing subcommand is a usage error."""
        assert main([]) == EXIT_USAGE

    def test_missing_config(self, tmp_path):
        """Commands other than check need --config or --scenario."""
        assert main(["simulate", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_config_and_scenario_together(self, scenario1_cfg, tmp_path):
        """--config and --scenario are exclusive."""
        args = ["simulate", "--config", str(scenario1_cfg), "--scenario", "1", "--out", str(tmp_path)]
        assert main(args) == EXIT_USAGE

    def test_missing_delta(self, tmp_path):
        """A config without delta exits with a usage error."""
        path = tmp_path / "no_delta.cfg"
        path.write_text(SCENARIO1_CFG.replace("delta = 0.2\n", ""))
        assert main(["solve", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_USAGE

    def test_unknown_policy(self, scenario1_cfg, tmp_path):
        """An unknown policy name is a usage error."""
        args = ["evaluate", "--config", str(scenario1_cfg), "--policy", "sometimes",
                "--paths", "10", "--out", str(tmp_path)]
        assert main(args) == EXIT_USAGE

    def test_optimal_needs_value_source(self, scenario1_cfg, tmp_path):
        """The optimal policy without a value source is a usage error."""
        args = ["evaluate", "--config", str(scenario1_cfg), "--policy", "optimal",
                "--paths", "10", "--out", str(tmp_path)]
        assert main(args) == EXIT_USAGE

    def test_solver_failure_exit_code(self, scenario1_cfg, tmp_path):
        """A solve that runs out of sweeps exits with a failure."""
        args = ["solve", "--config", str(scenario1_cfg), "--n", "8", "--max-sweeps", "2",
                "--tol", "1e-14", "--out", str(tmp_path), "-q"]
        assert main(args) == EXIT_FAILURE


class TestSolve:
    """solve --solver grid."""

    def test_grid_artifacts(self, solved_field):
        """Field, residuals, regions and the manifest are written."""
        out = solved_field.parent
        assert len(read_csv(solved_field)) == 4 * 9 * 10 // 2
        for name in ("residuals.csv", "regions.csv", "regions.svg", "run_config.cfg", "manifest.txt"):
            assert (out / name).exists(), name
        manifest = read_manifest(out / "manifest.txt")
        assert manifest["command"] == "solve"
        assert manifest["flag.n"] == "8"
        assert len(manifest["params_hash"]) == 16
        assert float(manifest["result.max_complementarity"]) <= 1e-8
        assert list((out / "logs").glob("run_*.log"))


class TestSimulate:
    """simulate, with and without a value source."""

    def test_uncontrolled(self, scenario1_cfg, tmp_path):
        """Uncontrolled runs write a trajectory, a switch log and a chart."""
        out = tmp_path / "sim"
        args = ["simulate", "--config", str(scenario1_cfg), "--horizon", "5", "--out", str(out), "-q"]
        assert main(args) == EXIT_OK
        rows = read_csv(out / "trajectory.csv")
        assert len(rows) == 41
        assert rows[0]["s"] == "1" and rows[0]["i"] == "0"
        assert (out / "switch_log.csv").exists()
        assert (out / "trajectory.svg").exists()
        assert not (out / "uncontrolled.csv").exists()

    def test_controlled(self, scenario1_cfg, solved_field, tmp_path):
        """With a value source the uncontrolled path and actor log are added."""
        out = tmp_path / "controlled"
        args = ["simulate", "--config", str(scenario1_cfg), "--value-source", str(solved_field),
                "--horizon", "5", "--out", str(out), "-q"]
        assert main(args) == EXIT_OK
        assert (out / "uncontrolled.csv").exists()
        header = (out / "controlled_log.csv").read_text().splitlines()[0]
        assert header == "time,actor,from,to,value_gap"
        assert "result.owner_pattern" in read_manifest(out / "manifest.txt")

    def test_params_hash_mismatch(self, scenario1_cfg, solved_field, tmp_path):
        """A field solved for other parameters is refused."""
        other = tmp_path / "other.cfg"
        other.write_text(SCENARIO1_CFG.replace("beta = 0.04", "beta = 0.05"))
        args = ["simulate", "--config", str(other), "--value-source", str(solved_field),
                "--out", str(tmp_path / "out"), "-q"]
        assert main(args) == EXIT_USAGE

    def test_many_paths(self, scenario1_cfg, tmp_path):
        """--paths > 1 writes aggregate statistics and per-path summaries."""
        out = tmp_path / "batch"
        args = ["simulate", "--config", str(scenario1_cfg), "--paths", "5", "--horizon", "2",
                "--out", str(out), "-q"]
        assert main(args) == EXIT_OK
        assert len(read_csv(out / "aggregate.csv")) == 17
        assert len(read_csv(out / "paths.csv")) == 5
        assert not (out / "trajectory.csv").exists()

    def test_rerun_is_byte_identical(self, scenario1_cfg, tmp_path):
        """Two runs with one seed write identical CSVs."""
        for name in ("a", "b"):
            args = ["simulate", "--config", str(scenario1_cfg), "--seed", "7", "--horizon", "5",
                    "--out", str(tmp_path / name), "-q"]
            assert main(args) == EXIT_OK
        for name in ("trajectory.csv", "switch_log.csv", "trajectory.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_scenario_preset(self, tmp_path):
        """Presets run without a config file."""
        args = ["simulate", "--scenario", "2", "--horizon", "2", "--out", str(tmp_path / "s2"), "-q"]
        assert main(args) == EXIT_OK
        manifest = read_manifest(tmp_path / "s2" / "manifest.txt")
        assert manifest["config_source"] == "scenario:scenario2"


class TestEvaluate:
    """evaluate."""

    def test_clean_start_costs_nothing(self, tmp_path):
        """No infection and no attack give a zero mean cost."""
        path = tmp_path / "clean.cfg"
        path.write_text(SCENARIO1_CFG + "i0 = 0\na0 = 0\n")
        out = tmp_path / "eval"
        args = ["evaluate", "--config", str(path), "--policy", "never", "--paths", "20",
                "--horizon", "5", "--out", str(out), "-q"]
        assert main(args) == EXIT_OK
        rows = read_csv(out / "mc_summary.csv")
        assert rows[0]["policy"] == "never"
        assert float(rows[0]["mean"]) == 0.0

    def test_comparison_written(self, scenario1_cfg, tmp_path):
        """Two policies produce a comparison against the first."""
        out = tmp_path / "cmp"
        args = ["evaluate", "--config", str(scenario1_cfg), "--policy", "never",
                "--policy", "always", "--paths", "20", "--horizon", "5", "--out", str(out), "-q"]
        assert main(args) == EXIT_OK
        rows = read_csv(out / "comparison.csv")
        assert rows == [{"policy": "always", "reference": "never",
                         "mean_diff": rows[0]["mean_diff"], "se": rows[0]["se"]}]
        assert len(read_csv(out / "mc_summary.csv")) == 2


class TestCheck:
    """check."""

    def test_report_written(self, tmp_path):
        """A short sweep writes the scenario report and defaults to scenario 1."""
        out = tmp_path / "check"
        args = ["check", "--n", "8", "--sweep", "3", "--paths", "20", "--out", str(out), "-q"]
        assert main(args) == EXIT_OK
        report = read_manifest(out / "check_report.txt")
        for key in ("scenario1.modal_pattern", "scenario2.narrated_order_seeds", "efficacy.ratio"):
            assert key in report, key
        assert 0 <= int(report["scenario2.narrated_order_seeds"]) <= 3
        assert read_manifest(out / "manifest.txt")["config_source"] == "scenario:scenario1"
        assert report["scenario1.modal_pattern"].startswith("0")
        assert 0 < float(report["scenario1.modal_share"]) <= 1
        assert 0 <= float(report["efficacy.ratio"]) <= 1.5

    @pytest.mark.slow
    def test_scenario_behaviour(self, tmp_path):
        """At n = 32 over 100 seeds the report shows the expected scenario behaviour."""
        out = tmp_path / "check"
        args = ["check", "--n", "32", "--sweep", "100", "--paths", "1000", "--out", str(out), "-q"]
        assert main(args) == EXIT_OK
        report = read_manifest(out / "check_report.txt")
        assert report["scenario1.modal_pattern"] == "0→1→0"
        assert int(report["scenario2.narrated_order_seeds"]) >= 1
        assert float(report["efficacy.ratio"]) == pytest.approx(0.5, abs=0.15)
