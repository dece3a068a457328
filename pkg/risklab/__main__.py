"""Click-based command line entry point for risklab."""

from __future__ import annotations

import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

import click
import pandas as pd

from . import __version__
from .config import PipelineConfig, apply_seed_override, load_config
from .errors import EXIT_CONFIG, EXIT_OK, ConfigError, DataError, RiskLabError
from .logging_conf import configure_logging
from .pipeline import RunState, build_report, execute_stages, load_stage, run_pipeline
from .plots import PLOT_KINDS, render_plot
from .report import write_report

JOBS_ENV = "RISKLAB_JOBS"

log = logging.getLogger(__name__)


class RiskLabCommandError(click.ClickException):
    """ClickException that keeps the category exit code of a RiskLabError."""

    def __init__(self, error: RiskLabError) -> None:
        super().__init__(str(error))
        self.exit_code = error.exit_code


def _jobs(value: Optional[int]) -> int:
    if value is not None:
        jobs = value
    else:
        raw = os.environ.get(JOBS_ENV, "1").strip() or "1"
        try:
            jobs = int(raw)
        except ValueError as exc:
            raise RiskLabCommandError(ConfigError(f"{JOBS_ENV} must be an integer, got {raw!r}")) from exc
    if jobs == 0 or jobs < -1:
        raise RiskLabCommandError(ConfigError(f"worker count must be >= 1 or -1 (all cores), got {jobs}"))
    return jobs


def _guard(action: Callable[[], Any]) -> Any:
    try:
        return action()
    except RiskLabError as exc:
        raise RiskLabCommandError(exc) from exc


jobs_option = click.option(
    "--jobs",
    "jobs",
    default=None,
    type=int,
    help=f"Worker threads (-1 = all cores). Defaults to ${JOBS_ENV} or 1; results do not depend on it.",
)


@click.group(help="County COVID-19 risk clustering, classification and attribution toolkit")
@click.version_option(__version__)
@click.option("--verbose", is_flag=True, help="Enable verbose logging output.")
@click.pass_context
def cli(ctx: click.Context, verbose: bool) -> None:
    """
    Root CLI group configuring logging before subcommands execute.
    """

    configure_logging("DEBUG" if verbose else "INFO")
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose


@cli.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(path_type=Path, exists=True, dir_okay=False))
@click.option("--out", "out_dir", default=None, type=click.Path(path_type=Path, file_okay=False),
              help="Override the configured output directory.")
@click.option("--resume-from", "resume_from", default=None,
              type=click.Path(path_type=Path, exists=True, dir_okay=False),
              help="Continue after the stage stored in this artifact.")
@jobs_option
def cli_run(config_path: Path, out_dir: Optional[Path], resume_from: Optional[Path], jobs: Optional[int]) -> None:
    """Run the whole pipeline from one config file."""

    n_jobs = _jobs(jobs)

    def _run() -> None:
        config = load_config(config_path)
        if out_dir is not None:
            config = replace(config, output_dir=out_dir)
        report = run_pipeline(config, resume_from=resume_from, n_jobs=n_jobs)
        log.info("best model %s; report in %s", report.best_model, config.output_dir)

    _guard(_run)


@cli.command("ingest")
@click.option("--in", "input_path", required=True, type=click.Path(path_type=Path, exists=True, dir_okay=False),
              help="Combined county CSV.")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path, file_okay=False))
@click.option("--config", "config_path", default=None, type=click.Path(path_type=Path, exists=True, dir_okay=False),
              help="Optional pipeline config supplying the remaining settings.")
def cli_ingest(input_path: Path, out_dir: Path, config_path: Optional[Path]) -> None:
    """Load, impute, standardize and screen the county table."""

    def _run() -> None:
        if config_path is not None:
            config = replace(load_config(config_path), input_path=input_path, output_dir=out_dir)
        else:
            config = apply_seed_override(
                PipelineConfig.from_dict({"input_path": str(input_path), "output_dir": str(out_dir)})
            )
        execute_stages(RunState(config=config), ("ingest",))

    _guard(_run)


def _stage_command(stage: str, help_text: str) -> None:
    @cli.command(stage, help=help_text)
    @click.option("--in", "artifact", required=True, type=click.Path(path_type=Path, exists=True, dir_okay=False),
                  help="Artifact written by the previous stage.")
    @click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path, file_okay=False))
    @jobs_option
    def _command(artifact: Path, out_dir: Path, jobs: Optional[int]) -> None:
        n_jobs = _jobs(jobs)

        def _run() -> None:
            state = load_stage(artifact, output_dir=out_dir)
            state = execute_stages(state, (stage,), n_jobs)
            if stage == "explain":
                write_report(build_report(state), out_dir, emit_plots=state.config.emit_plots)

        _guard(_run)


_stage_command("cluster", "Elbow curve, k-means and risk labels from an ingest artifact.")
_stage_command("train", "Cross-validate, fit and test every configured model from a cluster artifact.")
_stage_command("explain", "Importances, SHAP values and the final report from a train artifact.")


@cli.command("plot")
@click.option("--kind", required=True, type=click.Choice(sorted(PLOT_KINDS)))
@click.option("--in", "input_path", required=True, type=click.Path(path_type=Path, exists=True, dir_okay=False),
              help="CSV written by a stage or the report.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path, dir_okay=False))
@click.option("--class-label", default=None, help="Class shown by shap_rank_dots / shap_dependence.")
@click.option("--features", default=None, help="Comma separated features for shap_dependence.")
def cli_plot(kind: str, input_path: Path, out_path: Path, class_label: Optional[str], features: Optional[str]) -> None:
    """Render one SVG figure from a CSV file."""

    options: dict[str, Any] = {}
    if class_label and kind in ("shap_rank_dots", "shap_dependence"):
        options["class_label"] = class_label
    if features and kind == "shap_dependence":
        options["features"] = [item.strip() for item in features.split(",") if item.strip()]
    _guard(lambda: render_plot(kind, _read_table(input_path), out_path, **options))


def _read_table(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read plot input {path}: {exc}") from exc


def main(argv: Optional[Iterable[str]] = None) -> int:
    """
    Entry point returning the category exit code (0 ok, 2 config, 3 data, 4 compute).
    """

    argv_list = list(argv if argv is not None else sys.argv[1:])
    try:
        cli.main(args=argv_list, prog_name="risklab", standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code if isinstance(exc, RiskLabCommandError) else EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
