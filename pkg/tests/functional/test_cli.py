"""
Functional tests for the twopoint command line: run, sweep, audit and init
end to end on small problems.
"""

import json
import os
import sys

import pytest
from click.testing import CliRunner

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from twopoint.cli import (
    EXIT_BLOWUP,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_THETA5,
    EXIT_VIOLATION,
    TRACE_COLUMNS,
    main,
    read_trace_csv,
)
from twopoint.config import OUTPUT_DIR_ENV
from twopoint.solver import NumericalBlowupError

SMALL = {"problem": {"kind": "diagexp", "n": 16, "samples": 200}}


@pytest.fixture
def runner(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    return CliRunner()


@pytest.fixture
def small_config(write_config):
    """Three noise levels on a 16-dimensional diagonal exponential problem."""
    return write_config(overrides=SMALL)


def _outputs(directory):
    return {path.name: path.read_bytes() for path in sorted(directory.iterdir()) if path.is_file()}


@pytest.mark.functional
class TestRunCommand:
    """Test `twopoint run`."""

    def test_run_writes_traces(self, runner, small_config, tmp_path):
        """Exit 0, one trace and summary per level, rows = k_delta + 1."""
        result = runner.invoke(main, ["run", str(small_config)])
        assert result.exit_code == EXIT_OK, result.output
        out = tmp_path / "results"
        for i in range(3):
            rows = read_trace_csv(out / f"trace_delta_{i}.csv")
            meta = json.loads((out / f"summary_delta_{i}.json").read_text())
            assert len(rows) == meta["k_delta"] + 1
            assert meta["stop_reason"] == "discrepancy"
            assert meta["report"]["ok"] is True
        assert (out / "sweep.csv").exists()
        assert json.loads((out / "sweep.json").read_text())["violations"] == []

    def test_trace_header(self, runner, small_config, tmp_path):
        """The CSV header lists the trace columns in order."""
        runner.invoke(main, ["run", str(small_config)])
        header = (tmp_path / "results" / "trace_delta_0.csv").read_text().splitlines()[0]
        assert header == ",".join(TRACE_COLUMNS)

    def test_reproducible_bytes(self, runner, small_config, tmp_path):
        """Same config and seed give byte-identical files, also with parallel levels."""
        first = runner.invoke(main, ["run", str(small_config), "-o", str(tmp_path / "a")])
        second = runner.invoke(main, ["run", str(small_config), "-o", str(tmp_path / "b"), "--workers", "2"])
        assert first.exit_code == second.exit_code == EXIT_OK
        assert _outputs(tmp_path / "a") == _outputs(tmp_path / "b")

    def test_forced_eta_refuses(self, runner, write_config, tmp_path):
        """eta = 0.95 exits 3, names the term and writes refused.json."""
        path = write_config(overrides={"problem": {**SMALL["problem"], "eta": 0.95}})
        result = runner.invoke(main, ["run", str(path)])
        assert result.exit_code == EXIT_THETA5
        assert "eta" in result.output
        refused = json.loads((tmp_path / "results" / "refused.json").read_text())
        assert refused["dominant"] == "eta"
        assert refused["theta5"] <= 0
        assert not list((tmp_path / "results").glob("trace_delta_*.csv"))

    def test_malformed_config(self, runner, tmp_path):
        """Invalid JSON exits 2."""
        path = tmp_path / "broken.json"
        path.write_text("{ solver: ")
        assert runner.invoke(main, ["run", str(path)]).exit_code == EXIT_CONFIG

    def test_unknown_key(self, runner, write_config):
        """Typos in the config exit 2."""
        path = write_config(overrides={"solver": {"thetal": 0.3}})
        result = runner.invoke(main, ["run", str(path)])
        assert result.exit_code == EXIT_CONFIG
        assert "thetal" in result.output

    def test_missing_config(self, runner, tmp_path):
        """A missing file exits 2 and is not created."""
        path = tmp_path / "absent.json"
        assert runner.invoke(main, ["run", str(path)]).exit_code == EXIT_CONFIG
        assert not path.exists()

    def test_overflow_while_calibrating(self, runner, write_config):
        """A radius where exp overflows on the sampled ball exits 4."""
        path = write_config(overrides={"problem": {**SMALL["problem"], "eps": 2000.0}})
        result = runner.invoke(main, ["run", str(path)])
        assert result.exit_code == EXIT_BLOWUP

    def test_blowup_during_iteration(self, runner, small_config, monkeypatch):
        """A non-finite iterate exits 4."""

        def _blowup(*args, **kwargs):
            raise NumericalBlowupError(3, "gamma")

        monkeypatch.setattr("twopoint.cli.iterate", _blowup)
        result = runner.invoke(main, ["run", str(small_config)])
        assert result.exit_code == EXIT_BLOWUP

    def test_output_dir_from_environment(self, runner, small_config, tmp_path, monkeypatch):
        """TWOPOINT_OUTPUT_DIR redirects the results."""
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
        result = runner.invoke(main, ["-q", "run", str(small_config)])
        assert result.exit_code == EXIT_OK, result.output
        assert (tmp_path / "env" / "summary_delta_0.json").exists()
        assert not (tmp_path / "results").exists()


@pytest.mark.functional
class TestSweepCommand:
    """Test `twopoint sweep`."""

    def test_needs_three_levels(self, runner, write_config):
        """Two noise levels are refused with exit 2."""
        path = write_config(overrides={**SMALL, "experiment": {"deltas": [0.1, 0.01]}})
        assert runner.invoke(main, ["sweep", str(path)]).exit_code == EXIT_CONFIG

    @pytest.mark.slow
    def test_compare_strategies(self, runner, small_config, tmp_path):
        """Each lambda strategy gets its own directory plus an acceleration note."""
        result = runner.invoke(main, ["sweep", str(small_config), "--compare-strategies"])
        assert result.exit_code == EXIT_OK, result.output
        out = tmp_path / "results"
        for name in ("zero", "nesterov", "dbts"):
            assert (out / name / "sweep.json").exists()
            meta = json.loads((out / name / "summary_delta_1.json").read_text())
            assert meta["lambda_strategy"] == name
        notes = json.loads((out / "acceleration.json").read_text())
        assert [note["delta"] for note in notes] == [0.1, 0.01, 0.001]
        assert set(notes[0]["k_delta"]) == {"zero", "nesterov", "dbts"}


@pytest.mark.functional
class TestAuditCommand:
    """Test `twopoint audit` on written results."""

    def test_clean_results(self, runner, small_config, tmp_path):
        """Untouched results pass."""
        runner.invoke(main, ["run", str(small_config)])
        result = runner.invoke(main, ["audit", str(tmp_path / "results")])
        assert result.exit_code == EXIT_OK, result.output

    def test_tampered_trace(self, runner, small_config, tmp_path):
        """A positive Theta_k written into a trace exits 1."""
        runner.invoke(main, ["run", str(small_config)])
        trace = tmp_path / "results" / "trace_delta_2.csv"
        lines = trace.read_text().splitlines()
        fields = lines[2].split(",")
        fields[-1] = "0.001"
        lines[2] = ",".join(fields)
        trace.write_text("\n".join(lines) + "\n")
        result = runner.invoke(main, ["audit", str(tmp_path / "results")])
        assert result.exit_code == EXIT_VIOLATION
        assert "monotonicity" in result.output

    def test_empty_directory(self, runner, tmp_path):
        """No summaries exits 2."""
        assert runner.invoke(main, ["audit", str(tmp_path)]).exit_code == EXIT_CONFIG

    def test_missing_trace_file(self, runner, small_config, tmp_path):
        """A summary without its trace exits 2."""
        runner.invoke(main, ["run", str(small_config)])
        (tmp_path / "results" / "trace_delta_1.csv").unlink()
        assert runner.invoke(main, ["audit", str(tmp_path / "results")]).exit_code == EXIT_CONFIG


@pytest.mark.functional
class TestInitCommand:
    """Test `twopoint init`."""

    def test_writes_preset(self, runner, tmp_path):
        """A new file gets the chosen preset."""
        path = tmp_path / "cfg" / "deconv.json"
        result = runner.invoke(main, ["init", str(path), "--preset", "deconv"])
        assert result.exit_code == EXIT_OK, result.output
        assert json.loads(path.read_text())["problem"]["kind"] == "deconv"

    def test_declined_overwrite_keeps_file(self, runner, tmp_path):
        """Answering no leaves the existing file alone."""
        path = tmp_path / "mine.json"
        path.write_text('{"solver": {"tau": 9.0}}')
        result = runner.invoke(main, ["init", str(path)], input="n\n")
        assert result.exit_code == EXIT_OK
        assert "Keeping existing configuration" in result.output
        assert json.loads(path.read_text()) == {"solver": {"tau": 9.0}}

    def test_force_overwrites(self, runner, tmp_path):
        """--force replaces the file with the preset."""
        path = tmp_path / "mine.json"
        path.write_text('{"solver": {"tau": 9.0}}')
        result = runner.invoke(main, ["init", str(path), "--force"])
        assert result.exit_code == EXIT_OK
        assert json.loads(path.read_text())["solver"]["tau"] == 5.0
