"""
EGA - Command-line interface

    ega.py gen-data --config world.cfg --out runs/a
    ega.py pretrain --config world.cfg --out runs/a
    ega.py train-reward | rlaf | train-payment | evaluate ...
    ega.py flops --config world.cfg
    ega.py report --out runs/a

Errors are written to stderr as one JSON record and exit with status 1;
usage errors exit with status 2.
"""
import functools
import json
import logging
from pathlib import Path

import click
import pandas as pd
from rest_framework.exceptions import ValidationError

from evaluation.reports import reports_frame, summarize_runs, write_csv
from numerics.exceptions import EGAError

from .config import load_run_config
from .exceptions import MissingCheckpointError, MissingDataError
from .experiment import PIPELINE, RunPaths, flops_table, gen_data, run_experiment
from .report import read_reports
from .serializers import RunReportSerializer

logger = logging.getLogger(__name__)

PHASE_COMMANDS = {
    "pretrain": "pretrain",
    "train-reward": "reward",
    "rlaf": "rlaf",
    "train-payment": "payment",
    "evaluate": "evaluate",
}


def error_record(exc: Exception) -> dict:
    record = {"error": type(exc).__name__}
    if isinstance(exc, ValidationError):
        record["detail"] = exc.detail
    else:
        record["detail"] = str(exc)
    if isinstance(exc, MissingCheckpointError):
        record["phase"] = exc.phase
        record["path"] = str(exc.path)
    return record


def handle_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (EGAError, ValidationError) as exc:
            logger.debug(f"Command failed: {exc!r}")
            click.echo(json.dumps(error_record(exc), default=str, sort_keys=True), err=True)
            raise SystemExit(1)
    return wrapper


def run_options(func):
    """--config, --seed and --out, shared by every subcommand."""
    func = click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=Path("out"),
                        show_default=True, help="Output directory.")(func)
    func = click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None,
                        help="Overrides the seed of the config file.")(func)
    func = click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
                        help="Flat key = value run configuration.")(func)
    return func


def echo_json(data) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True, default=str))


@click.group()
def cli():
    """Generative ad allocation and auction pipeline on a synthetic world."""


# ==============================
# DATA
# ==============================
@cli.command("gen-data")
@run_options
@handle_errors
def gen_data_command(config_path, seed, out):
    """Generate the world and the train/test request splits."""
    config = load_run_config(config_path, seed)
    dataset = gen_data(config, out)
    echo_json({
        "out": str(RunPaths(out).data),
        "ads": len(dataset.ads),
        "users": len(dataset.users),
        "train": len(dataset.train),
        "test": len(dataset.test),
        "bayes_auc": dataset.world.bayes_auc,
    })


# ==============================
# PHASES
# ==============================
def _phase_command(name: str, phase: str):
    @run_options
    @handle_errors
    def command(config_path, seed, out):
        config = load_run_config(config_path, seed)
        report = run_experiment(config, out, phases=(phase,))
        echo_json(RunReportSerializer(report).data)

    command.__doc__ = f"Run the {phase} phase." if phase != "evaluate" else "Score the test split."
    return cli.command(name)(command)


for _name, _phase in PHASE_COMMANDS.items():
    _phase_command(_name, _phase)


@cli.command("run")
@run_options
@handle_errors
def run_command(config_path, seed, out):
    """Run every phase and the evaluation."""
    config = load_run_config(config_path, seed)
    report = run_experiment(config, out, phases=PIPELINE)
    echo_json(RunReportSerializer(report).data)


# ==============================
# FLOPS
# ==============================
@cli.command("flops")
@run_options
@handle_errors
def flops_command(config_path, seed, out):
    """Closed-form and measured FLOPs for one request of a fresh model."""
    config = load_run_config(config_path, seed)
    report = flops_table(config)
    closed = pd.DataFrame(sorted(report.closed_form.items()), columns=["formula", "flops"])
    compared = pd.DataFrame(
        [(c.module, c.closed_form, c.measured, c.ratio, c.flagged) for c in report.comparisons],
        columns=["module", "closed_form", "measured", "ratio", "flagged"],
    )
    click.echo(closed.to_string(index=False))
    click.echo("")
    click.echo(compared.to_string(index=False))
    click.echo("")
    click.echo(f"ega / mca = {report.ratio:.4f} (approximation {report.approx_ratio:.4f})")


# ==============================
# REPORT
# ==============================
@cli.command("report")
@run_options
@handle_errors
def report_command(config_path, seed, out):
    """Print stored run reports, write report.csv and the mean +- std across runs."""
    reports = read_reports(out)
    if not reports:
        raise MissingDataError(f"no run reports under {Path(out) / 'reports'}")
    metrics = [metric for report in reports for metric in report.metrics]
    for report in reports:
        click.echo(f"{report.run_id} [{report.phase}] seed={report.seed} wall={report.wall_time:.1f}s "
                   f"losses={json.dumps(report.losses, sort_keys=True)}")
    if not metrics:
        return
    write_csv(metrics, RunPaths(out).csv)
    click.echo(reports_frame(metrics).to_string(index=False))
    if len({metric.run_id for metric in metrics}) > 1:
        for variant, columns in summarize_runs(metrics).items():
            for metric, stats in columns.items():
                if stats["mean"] is not None:
                    click.echo(f"{variant} {metric}: {stats['mean']:.6g} +- {stats['std']:.6g} (n={stats['count']})")
