#!/usr/bin/env python3
"""
Policy-Gradient Laboratory - Main Entry Point

Command-line access to MDP validation, policy evaluation, gradient
diagnostics, training sweeps, bound certification, buffer sampling and the
built-in benchmark reproductions.

Exit codes: 0 success, 1 validation failure, 2 assumption violation,
3 divergence.
"""

import sys
import logging
from pathlib import Path
from typing import Optional

import click
import colorlog

from src.config import ConfigManager, ExperimentConfig, LoggingConfig
from src.evaluation import evaluate, tv_distance, discounted_distribution, undiscounted_distribution
from src.experiments import PRESETS, ExperimentReport, preset_config, run_bounds_suite, run_reproduction, run_sampling
from src.gradient import DEFAULT_FD_STEP, gradient_report
from src.mdp import load_mdp, validate
from src.models import AssumptionViolation, ConfigError, DivergenceError, ValidationFailure
from src.policy import load_policy
from src.reporting import ReportGenerator


EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_ASSUMPTION = 2
EXIT_DIVERGENCE = 3


def setup_logging(config: LoggingConfig, verbose: bool = False) -> None:
    """
    Set up logging configuration.

    Args:
        config: Logging configuration
        verbose: Enable verbose logging
    """
    log_level = logging.DEBUG if verbose else getattr(logging, config.level)

    # Create colored formatter for console output
    console_formatter = colorlog.ColoredFormatter(
        "%(log_color)s%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        log_colors={
            'DEBUG': 'cyan',
            'INFO': 'green',
            'WARNING': 'yellow',
            'ERROR': 'red',
            'CRITICAL': 'red,bg_white',
        }
    )

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(console_formatter)
    console_handler.setLevel(log_level)

    handlers = [console_handler]
    if config.file:
        file_handler = logging.FileHandler(config.file)
        file_handler.setFormatter(logging.Formatter(config.format))
        file_handler.setLevel(log_level)
        handlers.append(file_handler)

    logging.basicConfig(
        level=log_level,
        handlers=handlers,
        format=config.format,
        force=True,
    )

    # Reduce noise from external libraries
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel(logging.WARNING)


def exit_code_for(error: Exception) -> int:
    """Map a failure to its process exit code."""
    if isinstance(error, DivergenceError):
        return EXIT_DIVERGENCE
    if isinstance(error, AssumptionViolation):
        return EXIT_ASSUMPTION
    return EXIT_VALIDATION


def _fail(error: Exception) -> None:
    logger = logging.getLogger(__name__)
    logger.error(f"{type(error).__name__}: {error}")
    click.echo(f"[ERROR] {error}", err=True)
    if isinstance(error, ConfigError):
        if error.pointer:
            click.echo(f"  at {error.pointer}", err=True)
    else:
        for violation in getattr(error, "violations", []):
            click.echo(f"  - {violation}", err=True)
    sys.exit(exit_code_for(error))


def _load_experiment(ctx: click.Context, config_path: Path, out: Optional[Path]) -> ExperimentConfig:
    manager = ConfigManager(config_path)
    config = manager.load_config()
    setup_logging(config.logging, ctx.obj["verbose"])
    if out is not None:
        config.output.directory = str(out)
    if not manager.validate_config():
        raise ConfigError(f"output directory {config.output.directory} is not writable", pointer="/output/directory")
    return config


def _echo_report(report: ExperimentReport) -> None:
    click.echo(f"\n[SUMMARY] {report.name}: {len(report.rows)} row(s) written to {report.output_directory}")
    for row in report.rows:
        status = row.get("status", "ok")
        label = ", ".join(f"{key}={row[key]}" for key in ("parameterization", "gamma", "seed") if key in row)
        detail = f" ({row['error']})" if row.get("error") else ""
        click.echo(f"  - {label}: {status}{detail}")
    for bound_report in report.bound_reports:
        verdict = "pass" if bound_report.passed else "FAIL"
        click.echo(f"  - bounds gamma={bound_report.gamma:g}: {verdict}")
    if report.exit_code == EXIT_OK:
        click.echo("[SUCCESS] All cells completed")
    else:
        click.echo(f"[ERROR] {report.n_diverged} diverged, {report.n_violations} violation(s)", err=True)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging")
@click.pass_context
def cli(ctx: click.Context, verbose: bool) -> None:
    """Policy-gradient laboratory: distribution mismatch in finite MDPs."""
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    setup_logging(LoggingConfig(), verbose)


@cli.command("validate")
@click.argument("mdp_path", type=click.Path(path_type=Path))
def validate_command(mdp_path: Path) -> None:
    """Check an MDP JSON document."""
    try:
        mdp = load_mdp(mdp_path)
        violations = validate(mdp)
        if violations:
            raise ValidationFailure(f"{mdp_path} has {len(violations)} violation(s)", violations)
    except (ValidationFailure, FileNotFoundError) as e:
        _fail(e)
    click.echo(f"[SUCCESS] {mdp_path}: {mdp.kind.value} MDP '{mdp.name}' with "
               f"{mdp.n_states} states and {mdp.n_actions} actions is valid")


@cli.command("eval")
@click.argument("mdp_path", type=click.Path(path_type=Path))
@click.argument("policy_path", type=click.Path(path_type=Path))
def eval_command(mdp_path: Path, policy_path: Path) -> None:
    """Exact evaluation of a policy: J, kappa and the state distributions."""
    try:
        mdp = load_mdp(mdp_path)
        policy = load_policy(policy_path)
        bundle = evaluate(mdp, policy)
        d_gamma = discounted_distribution(mdp, policy)
        d_pi = undiscounted_distribution(mdp, policy)
    except (ValidationFailure, FileNotFoundError, ValueError, AssumptionViolation) as e:
        _fail(e)
    click.echo(f"[INFO] J = {bundle.j!r}")
    click.echo(f"[INFO] kappa = {bundle.kappa!r}")
    if mdp.is_episodic:
        click.echo(f"[INFO] mu_z = {bundle.mu_z!r}")
    click.echo(f"[INFO] V = {bundle.v.tolist()}")
    click.echo(f"[INFO] d_pi,gamma = {d_gamma.values.tolist()}")
    click.echo(f"[INFO] d_pi = {d_pi.values.tolist()}")
    click.echo(f"[INFO] TV(d_pi, d_pi,gamma) = {tv_distance(d_pi, d_gamma)!r}")


@cli.command("grad")
@click.argument("mdp_path", type=click.Path(path_type=Path))
@click.argument("policy_path", type=click.Path(path_type=Path))
@click.option("--h", "step", type=float, default=DEFAULT_FD_STEP, show_default=True, help="Finite-difference step")
@click.option("--out", type=click.Path(path_type=Path), help="Also write the report to this directory")
def grad_command(mdp_path: Path, policy_path: Path, step: float, out: Optional[Path]) -> None:
    """Unbiased, biased and finite-difference gradients at a policy."""
    try:
        mdp = load_mdp(mdp_path)
        policy = load_policy(policy_path)
        report = gradient_report(mdp, policy, step)
    except (ValidationFailure, FileNotFoundError, ValueError, AssumptionViolation) as e:
        _fail(e)
    click.echo(f"[INFO] true gradient source: {report.true_grad_source}")
    click.echo(f"[INFO] K_theta = {report.k_theta!r}")
    click.echo(f"[INFO] ||unbiased|| = {report.norm_unbiased!r}")
    click.echo(f"[INFO] ||biased|| = {report.norm_biased!r}")
    click.echo(f"[INFO] ||true|| = {report.norm_true!r}")
    click.echo(f"[INFO] <unbiased, biased> = {report.inner_product!r}")
    click.echo(f"[INFO] cos(biased, unbiased) = {report.cos_biased_unbiased!r}")
    click.echo(f"[INFO] scale residual = {report.scale_residual!r}")
    if out is not None:
        files = ReportGenerator(out, emit_plots=False).write_gradient_report(report, "gradient")
        click.echo(f"[SUCCESS] Gradient report written to {files['csv'].parent}")


@cli.command("train")
@click.argument("config_path", type=click.Path(path_type=Path))
@click.option("--out", type=click.Path(path_type=Path), help="Run directory (default ./runs/<timestamp>)")
@click.pass_context
def train_command(ctx: click.Context, config_path: Path, out: Optional[Path]) -> None:
    """Train biased and unbiased policy-gradient runs for every configured cell."""
    try:
        config = _load_experiment(ctx, config_path, out)
        report = run_reproduction(config, with_bounds=False)
    except (ValidationFailure, FileNotFoundError) as e:
        _fail(e)
    _echo_report(report)
    sys.exit(report.exit_code)


@cli.command("bounds")
@click.argument("config_path", type=click.Path(path_type=Path))
@click.option("--out", type=click.Path(path_type=Path), help="Run directory (default ./runs/<timestamp>)")
@click.pass_context
def bounds_command(ctx: click.Context, config_path: Path, out: Optional[Path]) -> None:
    """Estimate the mismatch constants and certify the bounds at every gamma."""
    try:
        config = _load_experiment(ctx, config_path, out)
        report = run_bounds_suite(config)
    except (ValidationFailure, FileNotFoundError) as e:
        _fail(e)
    _echo_report(report)
    sys.exit(report.exit_code)


@cli.command("sample")
@click.argument("config_path", type=click.Path(path_type=Path))
@click.option("--out", type=click.Path(path_type=Path), help="Run directory (default ./runs/<timestamp>)")
@click.pass_context
def sample_command(ctx: click.Context, config_path: Path, out: Optional[Path]) -> None:
    """Buffer convergence curves of the empirical state frequencies."""
    try:
        config = _load_experiment(ctx, config_path, out)
        report = run_sampling(config)
    except (ValidationFailure, FileNotFoundError) as e:
        _fail(e)
    _echo_report(report)
    sys.exit(report.exit_code)


@cli.command("reproduce")
@click.argument("preset", type=click.Choice(sorted(PRESETS)))
@click.option("--out", type=click.Path(path_type=Path), help="Run directory (default ./runs/<timestamp>)")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed of the probe policies")
def reproduce_command(preset: str, out: Optional[Path], seed: int) -> None:
    """Run a built-in benchmark configuration."""
    click.echo(f"[INFO] Reproducing {preset} (seed {seed})")
    try:
        report = run_reproduction(preset_config(preset, seed, out))
    except (ValidationFailure, ValueError) as e:
        _fail(e)
    _echo_report(report)
    sys.exit(report.exit_code)


@cli.command("create-config")
@click.argument("output_path", type=click.Path(path_type=Path))
def create_config_command(output_path: Path) -> None:
    """Write a commented default experiment configuration."""
    try:
        created_path = ConfigManager().create_default_config(output_path)
    except OSError as e:
        click.echo(f"[ERROR] Error creating configuration: {e}", err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo(f"[SUCCESS] Default configuration created at: {created_path}")


if __name__ == "__main__":
    cli()
