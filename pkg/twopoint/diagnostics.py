"""
Post-run monitors for the convergence statements the iteration relies on.

Checked per run:
    monotonicity   Theta_k = D_k - D_{k-1} <= 0 up to the stopping index
    summed bound   sum_k upsilon_k |r_k|^s <= zeta/(zeta-1) * D_0 / theta5
    balls          |u_k - u0| <= 2 eps, |w_k - u0| <= 3 eps
    stopping rule  |r_{k_delta}| <= tau * delta
    admissibility  every accepted lambda passes both inequalities
    DBTS indices   1 <= i_k - i_{k-1} <= jmax

Across noise levels, ``delta_sweep_report`` checks that the final error
shrinks with delta.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import pinv, svdvals

from .geometry import norm
from .solver import STOP_DISCREPANCY

logger = logging.getLogger(__name__)

THETA_TOL = 1e-10
BALL_TOL = 1e-9
SUM_TOL = 1e-8
SWEEP_UPTICK = 0.05
RANK_RTOL = 1e-10


class SweepError(ValueError):
    """Traces cannot be compared as one noise-level sweep."""


@dataclass
class TheoryReport:
    theta5: float
    monotone_violations: Optional[int]
    max_theta_k: Optional[float]
    sum_bound_slack: Optional[float]
    ball_violations: int
    summability_partials: Tuple[float, float]
    assumption3_check: Optional[bool]
    stop_contract: bool
    admissibility_violations: int
    dbts_index_violations: int
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        data = asdict(self)
        data["summability_partials"] = list(self.summability_partials)
        data["ok"] = self.ok
        return data


@dataclass(frozen=True)
class SweepRow:
    delta: float
    k_delta: int
    residual_norm: float
    bregman: float
    error_norm: float


@dataclass
class SweepTable:
    rows: List[SweepRow]
    violations: List[str] = field(default_factory=list)

    @property
    def trend_ok(self):
        return not self.violations

    def to_dicts(self):
        return [asdict(row) for row in self.rows]


def _monotone_checks(theta_column, violations):
    if theta_column.size == 0 or np.any(np.isnan(theta_column)):
        return None, None
    bad = np.flatnonzero(theta_column > THETA_TOL)
    if bad.size:
        violations.append(
            f"monotonicity: Bregman distance to the solution grew at k={int(bad[0])} "
            f"(Theta_k={theta_column[bad[0]]:.3e}, {bad.size} steps)"
        )
    return int(bad.size), float(theta_column.max())


def _sum_bound(upsilon, residual, s, zeta, theta5, bregman_initial, violations):
    if bregman_initial is None or math.isnan(bregman_initial):
        return None
    budget = zeta / (zeta - 1.0) * bregman_initial / theta5
    partial = np.cumsum(upsilon * residual**s) if upsilon.size else np.zeros(1)
    slack = budget - float(partial.max())
    if slack < -SUM_TOL:
        violations.append(f"summed bound: sum upsilon |r|^s exceeds {budget:.4e} by {-slack:.3e}")
    return slack


def _stop_contract(stop_reason, final_residual, tau, delta, violations):
    if stop_reason != STOP_DISCREPANCY:
        return True
    held = final_residual == 0.0 if delta == 0.0 else final_residual <= tau * delta
    if not held:
        violations.append(
            f"stopping rule: final residual {final_residual:.4e} above tau*delta={tau * delta:.4e}"
        )
    return held


def _dbts_index_violations(indices, jmax):
    steps = np.diff(indices)
    return int(np.sum((steps < 1) | (steps > jmax)))


def audit(trace, pen, fp, cfg, truth=None):
    """
    Check a completed trace against the convergence statements.

    ``truth`` defaults to the problem's known solution. A different truth needs
    a trace recorded with ``keep_iterates``; without any truth only the
    truth-free checks run.
    """
    if trace.stop_index is None:
        raise ValueError("Cannot audit an unfinished trace")
    violations = []

    if truth is None and fp.u_dagger is not None:
        truth = fp.u_dagger
    if truth is None:
        theta_column = np.array([])
        bregman_initial = None
    elif fp.u_dagger is not None and np.array_equal(truth, fp.u_dagger):
        theta_column = trace.column("theta_k")
        bregman_initial = trace.bregman_initial
    else:
        if not trace.iterates:
            raise ValueError("Auditing against another truth needs a trace with iterates")
        distances = np.array([pen.distance(truth, u, gamma) for gamma, u, _ in trace.iterates])
        theta_column = np.concatenate(([0.0], np.diff(distances)))
        bregman_initial = float(distances[0])

    monotone, max_theta = _monotone_checks(theta_column, violations)
    slack = _sum_bound(
        trace.column("upsilon"),
        trace.column("residual_norm"),
        cfg.s,
        cfg.zeta,
        trace.theta5,
        bregman_initial,
        violations,
    )

    dist_u = trace.column("dist_u")
    dist_w = trace.column("dist_w")
    balls = int(np.sum(dist_u > 2 * fp.eps + BALL_TOL) + np.sum(dist_w > 3 * fp.eps + BALL_TOL))
    if balls:
        violations.append(f"ball confinement: {balls} iterates left B(u0, 2 eps) or B(u0, 3 eps)")

    assumption3 = None
    if bregman_initial is not None:
        assumption3 = bool(bregman_initial <= pen.c0 * fp.eps**pen.p)

    final = trace.final
    stop_ok = _stop_contract(trace.stop_reason, final.residual_norm, cfg.tau, trace.delta, violations)

    admissibility = sum(
        1 for rec in trace.records if not (rec.admissible_descent and rec.admissible_ball)
    )
    if admissibility:
        violations.append(f"admissibility: {admissibility} accepted lambdas fail the inequalities")

    dbts = 0
    if trace.lambda_strategy == "dbts":
        dbts = _dbts_index_violations(trace.column("i_dbts"), cfg.jmax)
        if dbts:
            violations.append(f"DBTS index growth outside [1, {cfg.jmax}] on {dbts} steps")

    report = TheoryReport(
        theta5=trace.theta5,
        monotone_violations=monotone,
        max_theta_k=max_theta,
        sum_bound_slack=slack,
        ball_violations=balls,
        summability_partials=(final.alpha_partial, final.lambda_partial),
        assumption3_check=assumption3,
        stop_contract=stop_ok,
        admissibility_violations=admissibility,
        dbts_index_violations=dbts,
        violations=violations,
    )
    for row in violations:
        logger.warning(f"{trace.problem} delta={trace.delta:g}: {row}")
    return report


def audit_rows(rows, meta):
    """
    Audit a trace read back from disk.

    ``rows`` are the CSV records (dicts of floats), ``meta`` the run summary.
    Columns absent from the CSV (ball distances, admissibility flags, DBTS
    indices) are taken from the report stored in the summary.
    """
    if not rows:
        raise ValueError("Trace file has no rows")
    violations = []
    stored = meta.get("report", {})

    theta_column = np.array([row["theta_k"] for row in rows], dtype=float)
    monotone, max_theta = _monotone_checks(theta_column, violations)
    slack = _sum_bound(
        np.array([row["upsilon"] for row in rows], dtype=float),
        np.array([row["residual_norm"] for row in rows], dtype=float),
        meta["s"],
        meta["zeta"],
        meta["theta5"],
        meta.get("bregman_initial"),
        violations,
    )
    if len(rows) != meta["k_delta"] + 1:
        violations.append(f"trace has {len(rows)} rows, expected k_delta + 1 = {meta['k_delta'] + 1}")
    stop_ok = _stop_contract(
        meta["stop_reason"], float(rows[-1]["residual_norm"]), meta["tau"], meta["delta"], violations
    )

    for key, label in (
        ("ball_violations", "ball confinement"),
        ("admissibility_violations", "admissibility"),
        ("dbts_index_violations", "DBTS index growth"),
    ):
        if stored.get(key):
            violations.append(f"{label}: {stored[key]} recorded violations")

    return TheoryReport(
        theta5=meta["theta5"],
        monotone_violations=monotone,
        max_theta_k=max_theta,
        sum_bound_slack=slack,
        ball_violations=int(stored.get("ball_violations", 0)),
        summability_partials=tuple(stored.get("summability_partials", (0.0, 0.0))),
        assumption3_check=stored.get("assumption3_check"),
        stop_contract=stop_ok,
        admissibility_violations=int(stored.get("admissibility_violations", 0)),
        dbts_index_violations=int(stored.get("dbts_index_violations", 0)),
        violations=violations,
    )


def reference_solution(fp):
    """
    Solution the iteration can reach from u0.

    For a numerically rank-deficient linear problem this is
    u0 + A^+ (A u_dagger - A u0), the least-squares projection onto the
    solution set; otherwise the known solution itself.
    """
    if fp.u_dagger is None:
        return None
    if not fp.is_linear:
        return np.array(fp.u_dagger)
    matrix = fp.derivative_matrix(fp.u0)
    sv = svdvals(matrix)
    if np.all(sv > RANK_RTOL * sv[0]):
        return np.array(fp.u_dagger)
    rhs = matrix @ (fp.u_dagger - fp.u0)
    return fp.u0 + pinv(matrix, rtol=RANK_RTOL) @ rhs


def delta_sweep_report(traces, pen, truth):
    """
    Final errors over noise levels, largest delta first.

    The Bregman column may rise by at most 5% between adjacent levels.
    """
    if len(traces) < 3:
        raise SweepError(f"Need at least 3 noise levels, got {len(traces)}")
    problems = {(t.problem, t.lambda_strategy, t.alpha_strategy) for t in traces}
    if len(problems) > 1:
        raise SweepError(f"Traces come from different problems or strategies: {sorted(problems)}")
    if any(t.u_final is None or t.gamma_final is None for t in traces):
        raise SweepError("Every trace needs its final iterate")

    rows = []
    for t in sorted(traces, key=lambda t: -t.delta):
        rows.append(
            SweepRow(
                delta=t.delta,
                k_delta=t.stop_index,
                residual_norm=t.final.residual_norm,
                bregman=pen.distance(truth, t.u_final, t.gamma_final),
                error_norm=norm(pen.space, t.u_final - truth),
            )
        )

    table = SweepTable(rows)
    for before, after in zip(rows, rows[1:]):
        if after.bregman > (1.0 + SWEEP_UPTICK) * before.bregman:
            table.violations.append(
                f"regularization trend: error rose from {before.bregman:.4e} (delta={before.delta:g}) "
                f"to {after.bregman:.4e} (delta={after.delta:g})"
            )
    for row in table.violations:
        logger.warning(row)
    return table


def acceleration_note(traces_by_strategy):
    """
    Compare stopping indices across lambda strategies.

    Returns True when neither extrapolating strategy needs more steps than
    lambda = 0; otherwise logs a warning and returns False.
    """
    baseline = traces_by_strategy.get("zero")
    if baseline is None:
        return True
    observed = True
    for name in ("nesterov", "dbts"):
        other = traces_by_strategy.get(name)
        if other is not None and other.stop_index > baseline.stop_index:
            observed = False
            logger.warning(
                f"No acceleration at delta={other.delta:g}: {name} stopped at "
                f"k={other.stop_index}, lambda=0 at k={baseline.stop_index}"
            )
    return observed
