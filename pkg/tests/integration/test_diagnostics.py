"""
Integration tests for the post-run monitors: audit reports, audits of traces
read back from disk, noise-level sweeps and the acceleration note.
"""

import copy
import dataclasses
import json
import os
import sys
from types import SimpleNamespace

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from twopoint.cli import LevelRun, read_trace_csv, summary_document, write_outputs
from twopoint.diagnostics import (
    SweepError,
    acceleration_note,
    audit,
    audit_rows,
    delta_sweep_report,
    reference_solution,
)
from twopoint.geometry import SpaceModel
from twopoint.operators import LinearDeconv
from twopoint.solver import SolverConfig, iterate


@pytest.fixture
def landweber_run(diagexp_setup, noisy_data):
    """Plain Landweber run on the diagonal exponential problem at delta = 1e-2."""
    pen, fp = diagexp_setup
    cfg = SolverConfig.landweber()
    trace = iterate(cfg, pen, fp, noisy_data(fp, 1e-2), 1e-2)
    return cfg, pen, fp, trace


@pytest.mark.integration
class TestAudit:
    """Test audit reports of completed traces."""

    def test_landweber_passes(self, landweber_run):
        """A Landweber trace satisfies every monitored statement."""
        cfg, pen, fp, trace = landweber_run
        report = audit(trace, pen, fp, cfg)
        assert report.ok, report.violations
        assert report.stop_contract is True
        assert report.dbts_index_violations == 0
        assert report.summability_partials == (0.0, 0.0)
        assert report.to_dict()["ok"] is True

    def test_immediate_stop_keeps_full_budget(self, diagexp_setup):
        """With k_delta = 0 the summed-bound slack is the whole budget."""
        pen, fp = diagexp_setup
        cfg = SolverConfig()
        trace = iterate(cfg, pen, fp, fp.apply(fp.u0), 0.01)
        report = audit(trace, pen, fp, cfg)
        budget = cfg.zeta / (cfg.zeta - 1.0) * trace.bregman_initial / trace.theta5
        assert trace.stop_index == 0
        assert report.sum_bound_slack == pytest.approx(budget, rel=1e-12)

    def test_truth_at_initial_point(self, diagexp_setup):
        """u_dagger = u0 gives D_0 = 0 and the initial-distance check holds."""
        pen, fp = diagexp_setup
        at_start = dataclasses.replace(fp, u_dagger=np.array(fp.u0))
        cfg = SolverConfig()
        trace = iterate(cfg, pen, at_start, at_start.exact_data(), 0.01)
        report = audit(trace, pen, at_start, cfg)
        assert trace.bregman_initial == 0.0
        assert report.assumption3_check is True
        assert report.ok

    def test_audit_does_not_modify_trace(self, landweber_run):
        """Auditing leaves the records untouched."""
        cfg, pen, fp, trace = landweber_run
        before = copy.deepcopy(trace.records)
        audit(trace, pen, fp, cfg)
        assert trace.records == before

    def test_other_truth_needs_iterates(self, landweber_run):
        """Auditing against a different solution needs recorded iterates."""
        cfg, pen, fp, trace = landweber_run
        with pytest.raises(ValueError):
            audit(trace, pen, fp, cfg, truth=np.zeros(fp.domain.dim))

    def test_tampered_record_is_flagged(self, landweber_run):
        """An increasing Bregman distance is reported as a violation."""
        cfg, pen, fp, trace = landweber_run
        broken = copy.deepcopy(trace)
        broken.records[1] = dataclasses.replace(broken.records[1], theta_k=1e-3)
        report = audit(broken, pen, fp, cfg)
        assert report.monotone_violations == 1
        assert not report.ok
        assert any("monotonicity" in row for row in report.violations)

    def test_unfinished_trace_rejected(self, landweber_run):
        """Traces without a stopping index cannot be audited."""
        cfg, pen, fp, trace = landweber_run
        unfinished = copy.deepcopy(trace)
        unfinished.stop_index = None
        with pytest.raises(ValueError):
            audit(unfinished, pen, fp, cfg)


@pytest.mark.integration
class TestAuditRows:
    """Test audits of traces read back from disk."""

    def test_matches_in_memory_audit(self, landweber_run, tmp_path):
        """The disk audit agrees with the in-memory report."""
        cfg, pen, fp, trace = landweber_run
        report = audit(trace, pen, fp, cfg)
        write_outputs(tmp_path, [LevelRun(0, trace.delta, trace, report)], cfg, pen, fp)
        rows = read_trace_csv(tmp_path / "trace_delta_0.csv")
        meta = json.loads((tmp_path / "summary_delta_0.json").read_text())
        again = audit_rows(rows, meta)
        assert again.ok, again.violations
        assert len(rows) == trace.stop_index + 1
        assert again.max_theta_k == report.max_theta_k
        assert again.sum_bound_slack == pytest.approx(report.sum_bound_slack, rel=1e-12)

    def test_missing_rows_are_flagged(self, landweber_run):
        """A truncated trace no longer has k_delta + 1 rows."""
        cfg, pen, fp, trace = landweber_run
        meta = summary_document(LevelRun(0, trace.delta, trace, audit(trace, pen, fp, cfg)), cfg, pen, fp)
        rows = [
            {"residual_norm": r.residual_norm, "upsilon": r.upsilon, "theta_k": r.theta_k}
            for r in trace.records[:-1]
        ]
        report = audit_rows(rows, meta)
        assert not report.ok
        assert any("rows" in row for row in report.violations)

    def test_empty_trace_rejected(self):
        """No rows, no audit."""
        with pytest.raises(ValueError):
            audit_rows([], {})


@pytest.mark.integration
class TestSweep:
    """Test the noise-level sweep table."""

    def test_needs_three_levels(self, landweber_run):
        """Fewer than three traces are not a sweep."""
        _, pen, fp, trace = landweber_run
        with pytest.raises(SweepError):
            delta_sweep_report([trace, trace], pen, fp.u_dagger)

    def test_mixed_strategies_rejected(self, diagexp_setup, noisy_data):
        """Traces of different strategies are not compared."""
        pen, fp = diagexp_setup
        traces = [
            iterate(SolverConfig(lambda_strategy=name), pen, fp, noisy_data(fp, 0.1), 0.1)
            for name in ("zero", "nesterov", "dbts")
        ]
        with pytest.raises(SweepError):
            delta_sweep_report(traces, pen, fp.u_dagger)

    def test_identical_rows_pass(self, landweber_run):
        """Three copies of one trace show no upward trend."""
        _, pen, fp, trace = landweber_run
        table = delta_sweep_report([trace, trace, trace], pen, fp.u_dagger)
        assert table.trend_ok
        assert len(table.to_dicts()) == 3

    def test_rows_sorted_by_decreasing_delta(self, diagexp_setup, noisy_data):
        """Rows come out largest delta first, including an exact-data run."""
        pen, fp = diagexp_setup
        cfg = SolverConfig(k_max=300)
        traces = [iterate(cfg, pen, fp, noisy_data(fp, d), d) for d in (0.0, 0.1, 0.01)]
        table = delta_sweep_report(traces, pen, fp.u_dagger)
        assert [row.delta for row in table.rows] == [0.1, 0.01, 0.0]
        assert table.rows[-1].k_delta == 300

    def test_rising_error_is_flagged(self, landweber_run):
        """An error growing by more than 5% as delta shrinks is a violation."""
        _, pen, fp, trace = landweber_run
        worse = copy.deepcopy(trace)
        worse.delta = trace.delta / 10
        worse.u_final = np.array(fp.u0)
        worse.gamma_final = np.array(fp.gamma0)
        best = copy.deepcopy(trace)
        best.delta = trace.delta * 10
        table = delta_sweep_report([trace, worse, best], pen, fp.u_dagger)
        assert not table.trend_ok
        assert "regularization trend" in table.violations[0]


@pytest.mark.integration
class TestReferenceSolution:
    """Test the minimum-distance solution used for sweeps."""

    def test_nonlinear_problem_uses_known_solution(self, diagexp_setup):
        """Nonlinear problems keep u_dagger."""
        _, fp = diagexp_setup
        assert np.array_equal(reference_solution(fp), fp.u_dagger)

    def test_full_rank_keeps_known_solution(self):
        """An invertible matrix leaves u_dagger unchanged."""
        space = SpaceModel(3, 2.0)
        fp = LinearDeconv(
            name="diag",
            domain=space,
            data_space=space,
            u0=np.zeros(3),
            gamma0=np.zeros(3),
            eps=1.0,
            u_dagger=np.array([0.1, -0.2, 0.3]),
            matrix=np.diag([1.0, 2.0, 3.0]),
        )
        assert np.array_equal(reference_solution(fp), fp.u_dagger)

    def test_rank_deficient_projects(self):
        """Null-space components of u_dagger - u0 are removed."""
        space = SpaceModel(3, 2.0)
        fp = LinearDeconv(
            name="proj",
            domain=space,
            data_space=space,
            u0=np.zeros(3),
            gamma0=np.zeros(3),
            eps=1.0,
            u_dagger=np.array([0.1, -0.2, 0.3]),
            matrix=np.diag([1.0, 2.0, 0.0]),
        )
        assert np.allclose(reference_solution(fp), [0.1, -0.2, 0.0])
        assert np.allclose(fp.apply(reference_solution(fp)), fp.exact_data())


@pytest.mark.integration
class TestAccelerationNote:
    """Test the comparison of stopping indices across lambda strategies."""

    def test_acceleration_observed(self):
        """Extrapolating strategies stopping no later pass."""
        traces = {
            "zero": SimpleNamespace(stop_index=40, delta=0.01),
            "nesterov": SimpleNamespace(stop_index=25, delta=0.01),
            "dbts": SimpleNamespace(stop_index=40, delta=0.01),
        }
        assert acceleration_note(traces) is True

    def test_slower_strategy_warns(self, caplog):
        """A strategy needing more steps than lambda = 0 logs a warning."""
        traces = {
            "zero": SimpleNamespace(stop_index=10, delta=0.01),
            "dbts": SimpleNamespace(stop_index=12, delta=0.01),
        }
        assert acceleration_note(traces) is False
        assert "No acceleration" in caplog.text

    def test_without_baseline(self):
        """Nothing to compare without the lambda = 0 run."""
        assert acceleration_note({"dbts": SimpleNamespace(stop_index=3, delta=0.1)}) is True
