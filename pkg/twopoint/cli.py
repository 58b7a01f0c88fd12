"""
Command line experiment runner.

    twopoint run CONFIG        one trace per noise level plus audit reports
    twopoint sweep CONFIG      same, requires >= 3 levels (optionally all strategies)
    twopoint audit TRACE_DIR   re-check traces written by run/sweep
    twopoint init [PATH]       write the default configuration

Exit codes: 0 ok, 1 theory violation found, 2 bad configuration,
3 theta5 <= 0, 4 numerical blowup.
"""

import csv
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from .config import DEFAULT_CONFIG_FILE, PRESETS, ConfigError, ConfigManager, load_experiment
from .diagnostics import (
    SweepError,
    acceleration_note,
    audit,
    audit_rows,
    delta_sweep_report,
    reference_solution,
)
from .geometry import NonFiniteError, norm
from .operators import ProblemError
from .penalty import PenaltyError
from .solver import (
    LAMBDA_STRATEGIES,
    STOP_THETA5,
    NumericalBlowupError,
    Theta5Error,
    iterate,
    with_strategy,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2
EXIT_THETA5 = 3
EXIT_BLOWUP = 4

LOG_LEVEL_ENV = "TWOPOINT_LOG_LEVEL"

TRACE_COLUMNS = (
    "k",
    "residual_norm",
    "upsilon",
    "lambda",
    "alpha",
    "t_k",
    "bregman_to_truth",
    "theta_k",
)
_RECORD_FIELDS = dict(zip(TRACE_COLUMNS, TRACE_COLUMNS))
_RECORD_FIELDS["lambda"] = "lam"

_SUMMARY_NAME = re.compile(r"summary_delta_(\d+)\.json$")


def add_noise(v, delta, seed, space=None):
    """v + delta * xi / |xi| with seeded standard normal xi, so |v_delta - v| = delta"""
    if delta < 0:
        raise ValueError(f"Noise level must be nonnegative, got {delta}")
    v = np.asarray(v, dtype=float)
    if delta == 0:
        return v.copy()
    xi = np.random.default_rng(seed).standard_normal(v.shape)
    size = norm(space, xi) if space is not None else float(np.linalg.norm(xi))
    return v + delta * xi / size


@dataclass
class LevelRun:
    index: int
    delta: float
    trace: object
    report: object


def _fmt(value):
    return repr(float(value))


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for rec in trace.records:
            row = [str(rec.k)]
            row += [_fmt(getattr(rec, _RECORD_FIELDS[name])) for name in TRACE_COLUMNS[1:]]
            writer.writerow(row)


def read_trace_csv(path):
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [{key: float(value) for key, value in row.items()} for row in reader]


def summary_document(run, cfg, pen, fp, sweep=None):
    trace = run.trace
    truth = fp.u_dagger
    final = trace.final
    return {
        "problem": trace.problem,
        "delta": trace.delta,
        "lambda_strategy": trace.lambda_strategy,
        "alpha_strategy": trace.alpha_strategy,
        "tau": cfg.tau,
        "s": cfg.s,
        "zeta": cfg.zeta,
        "jmax": cfg.jmax,
        "theta5": trace.theta5,
        "k_delta": trace.stop_index,
        "stop_reason": trace.stop_reason,
        "residual_norm": final.residual_norm,
        "bregman_initial": trace.bregman_initial,
        "bregman_final": final.bregman_to_truth,
        "error_norm": norm(fp.domain, trace.u_final - truth) if truth is not None else None,
        "constants": {
            "p": pen.p,
            "c0": pen.c0,
            "eps": fp.eps,
            "eta": fp.eta,
            "C0": fp.C0,
            "C_stab": fp.C_stab,
        },
        "report": run.report.to_dict(),
        "sweep": sweep.to_dicts() if sweep is not None else None,
    }


def _write_json(data, path):
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def run_levels(exp, pen, fp, cfg=None, workers=None):
    """Run every noise level of ``exp``; results come back in level order"""
    cfg = exp.solver if cfg is None else cfg
    exact = fp.exact_data()

    def one(item):
        index, delta = item
        v_delta = add_noise(exact, delta, exp.seed, fp.data_space)
        trace = iterate(cfg, pen, fp, v_delta, delta)
        return LevelRun(index, delta, trace, audit(trace, pen, fp, cfg))

    with ThreadPoolExecutor(max_workers=workers or exp.workers) as pool:
        return list(pool.map(one, enumerate(exp.deltas)))


def write_outputs(out_dir, runs, cfg, pen, fp, sweep=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    for run in runs:
        write_trace_csv(run.trace, out_dir / f"trace_delta_{run.index}.csv")
        _write_json(
            summary_document(run, cfg, pen, fp, sweep), out_dir / f"summary_delta_{run.index}.json"
        )
    if sweep is not None:
        with open(out_dir / "sweep.csv", "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(("delta", "k_delta", "residual_norm", "bregman", "error_norm"))
            for row in sweep.rows:
                writer.writerow(
                    (_fmt(row.delta), str(row.k_delta), _fmt(row.residual_norm),
                     _fmt(row.bregman), _fmt(row.error_norm))
                )
        _write_json({"rows": sweep.to_dicts(), "violations": sweep.violations}, out_dir / "sweep.json")
    logger.info(f"Wrote {len(runs)} traces to {out_dir}")


def _fail(code, message):
    logger.error(message)
    click.secho(f"Error: {message}", fg="red", err=True)
    return code


def _echo_run(run):
    trace = run.trace
    status = click.style("ok", fg="green") if run.report.ok else click.style("VIOLATION", fg="red")
    click.echo(
        f"  [{trace.lambda_strategy}] delta={trace.delta:<8g} k_delta={trace.stop_index:<5d} "
        f"|r|={trace.final.residual_norm:.3e} D={trace.final.bregman_to_truth:.3e} {status}"
    )
    for row in run.report.violations:
        click.echo(f"      - {row}")


def execute(config_path, workers=None, output_dir=None, compare=False, require_sweep=False):
    """Shared body of ``run`` and ``sweep``; returns the exit code"""
    try:
        exp = load_experiment(config_path)
        if require_sweep and len(exp.deltas) < 3:
            raise ConfigError("A sweep needs at least 3 noise levels")
        pen, fp = exp.build()
    except (NumericalBlowupError, NonFiniteError) as e:
        # overflow while calibrating the constants on the ball
        return _fail(EXIT_BLOWUP, str(e))
    except (ConfigError, PenaltyError, ProblemError, ValueError) as e:
        return _fail(EXIT_CONFIG, str(e))

    out_root = Path(output_dir) if output_dir else exp.output_dir
    strategies = LAMBDA_STRATEGIES if compare else (exp.solver.lambda_strategy,)
    truth = reference_solution(fp)
    violations = 0
    by_strategy = {}
    click.secho(f"{fp.name}: n={fp.domain.dim}, {len(exp.deltas)} noise levels", bold=True)

    for strategy in strategies:
        cfg = with_strategy(exp.solver, lambda_strategy=strategy)
        out_dir = out_root / strategy if compare else out_root
        try:
            runs = run_levels(exp, pen, fp, cfg, workers)
        except Theta5Error as e:
            out_dir.mkdir(parents=True, exist_ok=True)
            _write_json(
                {"stop_reason": STOP_THETA5, "theta5": e.value, "terms": e.terms, "dominant": e.dominant},
                out_dir / "refused.json",
            )
            return _fail(EXIT_THETA5, str(e))
        except (NumericalBlowupError, NonFiniteError) as e:
            return _fail(EXIT_BLOWUP, str(e))

        sweep = None
        if len(runs) >= 3:
            try:
                sweep = delta_sweep_report([run.trace for run in runs], pen, truth)
            except SweepError as e:
                return _fail(EXIT_CONFIG, str(e))
            violations += len(sweep.violations)
        write_outputs(out_dir, runs, cfg, pen, fp, sweep)
        for run in runs:
            _echo_run(run)
            violations += len(run.report.violations)
        by_strategy[strategy] = runs

    if compare:
        notes = []
        for i, delta in enumerate(exp.deltas):
            traces = {name: runs[i].trace for name, runs in by_strategy.items()}
            notes.append(
                {
                    "delta": delta,
                    "k_delta": {name: t.stop_index for name, t in traces.items()},
                    "accelerated": acceleration_note(traces),
                }
            )
        _write_json(notes, out_root / "acceleration.json")

    if violations:
        return _fail(EXIT_VIOLATION, f"{violations} theory violations found")
    click.secho("All checks passed", fg="green")
    return EXIT_OK


def _set_log_level(verbose, quiet):
    name = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    level = getattr(logging, name, logging.INFO)
    if not isinstance(level, int):
        level = logging.INFO
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    logging.getLogger().setLevel(level)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log every iteration.")
@click.option("--quiet", "-q", is_flag=True, help="Only log warnings and errors.")
def main(verbose, quiet):
    """Two-point gradient regularization experiments."""
    _set_log_level(verbose, quiet)


@main.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--workers", "-w", type=click.IntRange(min=1), default=None, help="Noise levels run in parallel.")
@click.option("--output-dir", "-o", type=click.Path(file_okay=False), default=None)
@click.pass_context
def run(ctx, config_path, workers, output_dir):
    """Run every noise level of CONFIG_PATH and audit the traces."""
    ctx.exit(execute(config_path, workers, output_dir))


@main.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--workers", "-w", type=click.IntRange(min=1), default=None, help="Noise levels run in parallel.")
@click.option("--output-dir", "-o", type=click.Path(file_okay=False), default=None)
@click.option("--compare-strategies", is_flag=True, help="Run zero, nesterov and dbts side by side.")
@click.pass_context
def sweep(ctx, config_path, workers, output_dir, compare_strategies):
    """Noise-level sweep with the regularization trend check."""
    ctx.exit(execute(config_path, workers, output_dir, compare=compare_strategies, require_sweep=True))


def _trace_files(trace_dir):
    found = []
    for path in trace_dir.glob("summary_delta_*.json"):
        match = _SUMMARY_NAME.search(path.name)
        if match:
            found.append((int(match.group(1)), path))
    return sorted(found)


@main.command(name="audit")
@click.argument("trace_dir", type=click.Path(exists=True, file_okay=False))
@click.pass_context
def audit_command(ctx, trace_dir):
    """Re-check the traces and summaries in TRACE_DIR."""
    trace_dir = Path(trace_dir)
    files = _trace_files(trace_dir)
    if not files:
        ctx.exit(_fail(EXIT_CONFIG, f"No summary_delta_*.json files in {trace_dir}"))

    violations = 0
    for index, summary_path in files:
        try:
            with open(summary_path) as f:
                meta = json.load(f)
            rows = read_trace_csv(trace_dir / f"trace_delta_{index}.csv")
            report = audit_rows(rows, meta)
        except (OSError, ValueError, KeyError) as e:
            ctx.exit(_fail(EXIT_CONFIG, f"Cannot audit level {index}: {e}"))
        status = click.style("ok", fg="green") if report.ok else click.style("VIOLATION", fg="red")
        click.echo(f"  delta={meta['delta']:<8g} k_delta={meta['k_delta']:<5d} {status}")
        for row in report.violations:
            click.echo(f"      - {row}")
        violations += len(report.violations)

    if violations:
        ctx.exit(_fail(EXIT_VIOLATION, f"{violations} theory violations found"))
    click.secho("All checks passed", fg="green")


@main.command()
@click.argument("path", type=click.Path(dir_okay=False), default=str(DEFAULT_CONFIG_FILE))
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default="default", show_default=True)
@click.option("--force", is_flag=True, help="Overwrite without asking.")
def init(path, preset, force):
    """Write a preset experiment configuration to PATH."""
    path = Path(path)
    if path.exists():
        if not (force or click.confirm(f"{path} already exists. Overwrite?", default=False)):
            click.echo("Keeping existing configuration.")
            return
        path.unlink()
    ConfigManager(path, preset=preset)
    click.secho(f"{preset} configuration written to {path}", fg="green")

