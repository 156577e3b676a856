"""
Experiment Runners

Configuration-driven sweeps over (gamma, parameterization, seed): paired
biased/unbiased training runs against the value-iteration optimum, bound
certification suites, and buffer-sampling convergence studies. Built-in
presets reproduce the car-rental and gridworld benchmark figures.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from tqdm import tqdm

from src.bounds import DominationAudit, build_bound_report, certify_iterates, convergence_bound_report
from src.buffer_sampler import convergence_curve, fill_buffer
from src.config import (
    EnvironmentConfig,
    ExperimentConfig,
    OutputConfig,
    resolve_threads,
)
from src.environments import build_environment
from src.evaluation import discounted_distribution, tv_distance, undiscounted_distribution
from src.models import (
    AbcConstants,
    AssumptionViolation,
    BoundReport,
    DivergenceError,
    Mdp,
    PolicyVariant,
    Trace,
)
from src.optimizer import TrainConfig, optimal_policy, train, train_variant_for
from src.policy import Policy, initial_policy, random_softmax, to_direct
from src.reporting import ReportGenerator


logger = logging.getLogger(__name__)

BENCHMARK_GAMMAS = [0.9, 0.7, 0.5, 0.3]
TARGET_FRACTION = 0.01
CUSTOM_START_THETA = 2.0

SUMMARY_FIELDS = [
    "environment", "parameterization", "gamma", "seed", "status", "error",
    "j_star", "j_initial",
    "final_j_biased", "final_j_unbiased", "gap_biased", "gap_unbiased",
    "iterations_biased", "iterations_unbiased",
    "iters_to_1pct_biased", "iters_to_1pct_unbiased",
    "iters_to_1pct_final_biased", "iters_to_1pct_final_unbiased",
    "mean_abs_j_diff", "final_j_agreement", "biased_not_slower", "j_decreases_biased", "j_decreases_unbiased",
    "eta", "budget", "bounds_passed",
]

PRESETS: Dict[str, Tuple[str, PolicyVariant]] = {
    "fig1": ("car_rental", PolicyVariant.DIRECT),
    "fig2": ("car_rental", PolicyVariant.SOFTMAX),
    "fig3": ("gridworld", PolicyVariant.DIRECT),
    "fig4": ("gridworld", PolicyVariant.SOFTMAX),
    "appendixA3": ("gridworld", PolicyVariant.CUSTOM),
}


class ExperimentReport(BaseModel):
    """Summary of a sweep: one row per cell plus every file written."""
    name: str
    output_directory: str
    rows: List[Dict[str, Any]] = Field(default_factory=list)
    files: List[str] = Field(default_factory=list)
    bound_reports: List[BoundReport] = Field(default_factory=list)
    trends: List[Dict[str, Any]] = Field(default_factory=list)

    @property
    def n_diverged(self) -> int:
        return sum(1 for row in self.rows if row.get("status") == "diverged")

    @property
    def n_violations(self) -> int:
        failed_rows = sum(1 for row in self.rows if row.get("status") == "assumption_violation")
        failed_reports = sum(1 for report in self.bound_reports if not report.passed)
        return failed_rows + failed_reports

    @property
    def exit_code(self) -> int:
        """0 on success, 3 if a run diverged, 2 if an assumption or bound failed."""
        if self.n_diverged:
            return 3
        if self.n_violations:
            return 2
        return 0


def default_output_directory(output: OutputConfig) -> Path:
    """The configured directory, or ./runs/<timestamp>."""
    if output.directory:
        return Path(output.directory)
    return Path("runs") / datetime.now().strftime(output.timestamp_format)


def preset_config(name: str, seed: int = 0, out: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """
    Built-in benchmark configuration.

    fig1/fig2 run the car rental with direct/softmax policies, fig3/fig4 the
    gridworld with direct/softmax policies, appendixA3 the gridworld with the
    one-parameter diagonal-wind policy started at theta = 2. All sweep gamma
    over 0.9, 0.7, 0.5, 0.3 with the default step sizes and budgets.

    Raises:
        ValueError: For an unknown preset name
    """
    if name not in PRESETS:
        raise ValueError(f"Unknown preset '{name}'. Available: {sorted(PRESETS)}")
    environment, variant = PRESETS[name]
    return ExperimentConfig(
        name=name,
        environment=EnvironmentConfig(kind=environment),
        gammas=list(BENCHMARK_GAMMAS),
        parameterizations=[variant],
        seeds=[seed],
        custom_theta0=CUSTOM_START_THETA if variant == PolicyVariant.CUSTOM else 0.0,
        output=OutputConfig(directory=str(out) if out is not None else None),
    )


def iterations_to_target(trace: Trace, target: float, fraction: float = TARGET_FRACTION) -> Optional[int]:
    """First iteration whose J lies within fraction * |target| of target, or None."""
    tolerance = fraction * abs(target) if target != 0 else fraction
    for record in trace.records:
        if abs(record.j - target) <= tolerance:
            return record.iter
    return None


def mean_abs_difference(first: Trace, second: Trace) -> float:
    """Mean |J_first(t) - J_second(t)| over the common iteration range."""
    n = min(len(first.records), len(second.records))
    if n == 0:
        return float("nan")
    return float(np.mean(np.abs(first.j_values()[:n] - second.j_values()[:n])))


def _biased_not_slower(row: Dict[str, Any]) -> Optional[bool]:
    biased, unbiased = row.get("iters_to_1pct_final_biased"), row.get("iters_to_1pct_final_unbiased")
    if biased is None or unbiased is None:
        return None
    return biased <= unbiased


def mismatch_trend(rows: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """
    Mean |J_biased - J_unbiased| as a function of gamma.

    Rows are grouped by (environment, parameterization, seed); each group
    with at least two completed gammas reports its values in increasing
    gamma order and whether they never increase.
    """
    groups: Dict[Tuple[str, str, int], List[Tuple[float, float]]] = {}
    for row in rows:
        if row.get("status") != "ok" or row.get("mean_abs_j_diff") is None:
            continue
        key = (row["environment"], row["parameterization"], row["seed"])
        groups.setdefault(key, []).append((row["gamma"], row["mean_abs_j_diff"]))

    trends = []
    for (environment, parameterization, seed), points in groups.items():
        if len(points) < 2:
            continue
        points.sort()
        values = [value for _, value in points]
        trends.append({
            "environment": environment,
            "parameterization": parameterization,
            "seed": seed,
            "gammas": [gamma for gamma, _ in points],
            "mean_abs_j_diff": values,
            "non_increasing": all(later <= earlier for earlier, later in zip(values, values[1:])),
        })
    return trends


def probe_policies(mdp: Mdp, n_policies: int, seed: int,
                   variant: PolicyVariant = PolicyVariant.SOFTMAX) -> List[Policy]:
    """
    Random probes with logits drawn from N(0, 1), one child seed each.

    Direct probes carry the same action probabilities as their softmax draw;
    every other variant is probed with softmax policies.
    """
    children = np.random.SeedSequence(seed).spawn(n_policies)
    probes = [
        random_softmax(mdp.n_states, mdp.n_actions, seed=int(child.generate_state(1)[0]))
        for child in children
    ]
    if variant == PolicyVariant.DIRECT:
        return [to_direct(policy) for policy in probes]
    return probes


def checkpoint_policies(policy0: Policy, trace: Trace, every: int = 1) -> List[Policy]:
    """Policies rebuilt from a trace's theta checkpoints, every ``every``-th one."""
    iterates = sorted(trace.checkpoints)[::max(every, 1)]
    return [policy0.with_theta(np.reshape(trace.checkpoints[it], policy0.theta.shape)) for it in iterates]


def _cell_name(config: ExperimentConfig, variant: PolicyVariant, gamma: float, seed: int) -> str:
    return f"{config.environment.kind}_{variant.value}_g{gamma:g}_s{seed}"


class _CellResult(BaseModel):
    row: Dict[str, Any]
    traces: Dict[str, Trace] = Field(default_factory=dict)
    files: List[str] = Field(default_factory=list)
    bound_report: Optional[BoundReport] = None


def _run_cell(config: ExperimentConfig, reporter: ReportGenerator, variant: PolicyVariant,
              gamma: float, seed: int, with_bounds: bool) -> _CellResult:
    """Train one (parameterization, gamma, seed) cell and write its files."""
    name = _cell_name(config, variant, gamma, seed)
    row: Dict[str, Any] = {
        "environment": config.environment.kind,
        "parameterization": variant.value,
        "gamma": gamma,
        "seed": seed,
        "status": "ok",
        "error": "",
    }
    result = _CellResult(row=row)
    runs = [False, True] if config.run_pairs else [True]

    try:
        mdp = build_environment(config.environment, gamma)
        pi_star, _, j_star = optimal_policy(mdp, config.value_iteration_tol)
        row["j_star"] = j_star
        policy0 = initial_policy(variant, mdp.n_states, mdp.n_actions, config.custom_theta0)
        audits: Dict[str, DominationAudit] = {}

        for use_biased in runs:
            label = "biased" if use_biased else "unbiased"
            train_cfg = TrainConfig(
                variant=train_variant_for(variant),
                use_biased=use_biased,
                eta=config.step_size_for(variant, gamma),
                max_iters=config.budget_for(variant, gamma),
                stop_grad_norm=config.stop_grad_norm,
                checkpoint_every=config.checkpoint_every,
            )
            if with_bounds:
                audits[label] = DominationAudit(mdp, pi_star)
            try:
                _, trace = train(mdp, policy0, train_cfg, callback=audits.get(label))
            except DivergenceError as e:
                if e.trace is not None:
                    result.files.append(str(reporter.write_trace(e.trace, f"traces/{name}_{label}")))
                raise
            result.traces[label] = trace
            result.files.append(str(reporter.write_trace(trace, f"traces/{name}_{label}")))

            row["j_initial"] = trace.initial_j
            row["eta"] = trace.metadata["eta_initial"]
            row["budget"] = trace.metadata["max_iters"]
            row[f"final_j_{label}"] = trace.final_j
            row[f"gap_{label}"] = j_star - trace.final_j
            row[f"iterations_{label}"] = trace.records[-1].iter
            row[f"iters_to_1pct_{label}"] = iterations_to_target(trace, j_star)
            row[f"iters_to_1pct_final_{label}"] = iterations_to_target(trace, trace.final_j)
            row[f"j_decreases_{label}"] = trace.j_decreases

        if len(result.traces) == 2:
            biased, unbiased = result.traces["biased"], result.traces["unbiased"]
            row["mean_abs_j_diff"] = mean_abs_difference(biased, unbiased)
            row["final_j_agreement"] = abs(biased.final_j - unbiased.final_j)
            row["biased_not_slower"] = _biased_not_slower(row)
            if row["biased_not_slower"] is False:
                logger.warning(f"Cell {name}: the biased run needs {row['iters_to_1pct_final_biased']} iterations "
                               f"to reach 1% of its final J, the unbiased run {row['iters_to_1pct_final_unbiased']}")

        if with_bounds:
            probes = probe_policies(mdp, config.bounds.n_random_policies, seed, variant)
            for trace in result.traces.values():
                probes.extend(checkpoint_policies(policy0, trace))
            report = build_bound_report(mdp, probes, config.bounds.alpha_target, pi_star=pi_star)
            certify_iterates(report, result.traces, audits)
            practical = result.traces.get("biased")
            if practical is not None and report.b is not None and report.l_estimate is not None:
                abc = AbcConstants(sigma=report.sigma, b=report.b, c=report.c,
                                   big_b=report.big_b, big_c=report.big_c)
                report.consistency = convergence_bound_report(
                    practical, abc, report.l_estimate, j_star - practical.initial_j, gamma
                )
            result.bound_report = report
            row["bounds_passed"] = report.passed
            result.files.extend(str(p) for p in reporter.write_bound_report(report, f"bounds/{name}").values())

    except DivergenceError as e:
        logger.error(f"Cell {name} diverged: {e}")
        row.update(status="diverged", error=str(e))
    except AssumptionViolation as e:
        logger.error(f"Cell {name} violates the {e.assumption} assumption: {e}")
        row.update(status="assumption_violation", error=str(e))
    except Exception as e:
        logger.error(f"Cell {name} failed: {e}")
        row.update(status="error", error=str(e))

    return result


def run_reproduction(config: ExperimentConfig, with_bounds: bool = True) -> ExperimentReport:
    """
    Run every (gamma, parameterization, seed) cell of a configuration.

    Each cell trains the biased and unbiased variants from the uniform
    starting policy, compares both against J* from value iteration, writes
    one trace CSV per run and, with ``with_bounds``, a bound report over
    random probes plus the training checkpoints. Cells run on a thread pool;
    the summary CSV and the overlay plots are written after all cells finish.
    A failing cell is recorded in its summary row and the sweep continues.

    Args:
        config: Experiment configuration
        with_bounds: Also certify the mismatch bounds per cell

    Returns:
        ExperimentReport with the summary rows and the files written
    """
    out_dir = default_output_directory(config.output)
    reporter = ReportGenerator(out_dir, config.output.formats, config.output.emit_plots)
    cells = [(variant, gamma, seed)
             for variant in config.parameterizations
             for gamma in config.gammas
             for seed in config.seeds]
    threads = resolve_threads(config)
    logger.info(f"Running '{config.name}': {len(cells)} cell(s) on {threads} thread(s) into {out_dir}")

    results: Dict[int, _CellResult] = {}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {
            pool.submit(_run_cell, config, reporter, variant, gamma, seed, with_bounds): index
            for index, (variant, gamma, seed) in enumerate(cells)
        }
        for future in tqdm(as_completed(futures), total=len(futures), desc=config.name, disable=len(cells) < 2):
            results[futures[future]] = future.result()

    report = ExperimentReport(name=config.name, output_directory=str(out_dir))
    for index, (variant, gamma, seed) in enumerate(cells):
        cell = results[index]
        report.rows.append(cell.row)
        report.files.extend(cell.files)
        if cell.bound_report is not None:
            report.bound_reports.append(cell.bound_report)
        if cell.traces:
            plot = reporter.plot_j_curves(
                cell.traces,
                f"plots/{_cell_name(config, variant, gamma, seed)}",
                title=f"{config.environment.kind} {variant.value} gamma={gamma:g}",
                j_star=cell.row.get("j_star") if variant != PolicyVariant.CUSTOM else None,
            )
            if plot is not None:
                report.files.append(str(plot))

    summary_files = reporter.write_summary(report.rows, SUMMARY_FIELDS, "summary")
    report.files.extend(str(p) for p in summary_files.values())
    report.trends = mismatch_trend(report.rows)
    if report.trends:
        report.files.append(str(reporter.write_json(report.trends, "mismatch_trend")))
    for trend in report.trends:
        if not trend["non_increasing"]:
            logger.warning(f"Mean |J_biased - J_unbiased| grows with gamma for {trend['environment']} "
                           f"{trend['parameterization']} (seed {trend['seed']}): {trend['mean_abs_j_diff']}")
    logger.info(f"Finished '{config.name}': {len(report.rows)} cell(s), {report.n_diverged} diverged, "
                f"{report.n_violations} violation(s)")
    return report


def run_bounds_suite(config: ExperimentConfig) -> ExperimentReport:
    """
    Certify the mismatch bounds at every gamma of ``config.bounds.gammas``.

    The probe set is ``n_random_policies`` random softmax policies plus, when
    enabled, every iterate of a biased training run for each configured
    parameterization. Assumption violations are recorded per gamma.
    """
    suite = config.bounds
    out_dir = default_output_directory(config.output)
    reporter = ReportGenerator(out_dir, config.output.formats, config.output.emit_plots)
    seed = config.seeds[0]
    report = ExperimentReport(name=f"{config.name}_bounds", output_directory=str(out_dir))
    logger.info(f"Bounds suite on {config.environment.kind} over gammas {suite.gammas}")

    for gamma in tqdm(suite.gammas, desc="bounds", disable=len(suite.gammas) < 2):
        row: Dict[str, Any] = {"environment": config.environment.kind, "gamma": gamma, "status": "ok", "error": ""}
        try:
            mdp = build_environment(config.environment, gamma)
            pi_star, _, _ = optimal_policy(mdp, config.value_iteration_tol)
            probes = probe_policies(mdp, suite.n_random_policies, seed, config.parameterizations[0])
            if suite.include_training_iterates:
                for variant in config.parameterizations:
                    policy0 = initial_policy(variant, mdp.n_states, mdp.n_actions, config.custom_theta0)
                    _, trace = train(mdp, policy0, TrainConfig(
                        variant=train_variant_for(variant),
                        use_biased=True,
                        eta=config.step_size_for(variant, gamma),
                        max_iters=suite.training_iters,
                        stop_grad_norm=config.stop_grad_norm,
                        checkpoint_every=1,
                    ))
                    probes.extend(checkpoint_policies(policy0, trace))
            bound_report = build_bound_report(mdp, probes, suite.alpha_target, pi_star=pi_star)
            report.bound_reports.append(bound_report)
            row.update({
                "n_policies": bound_report.n_policies,
                "ratio_dgamma_over_dpi": bound_report.ratio_dgamma_over_dpi,
                "ratio_dpi_over_dgamma": bound_report.ratio_dpi_over_dgamma,
                "bound_eq8": bound_report.bound_eq8,
                "bound_eq9": bound_report.bound_eq9,
                "bound_eq11": bound_report.bound_eq11,
                "bound_eq12": bound_report.bound_eq12,
                "min_margin": min(bound_report.margins.values()) if bound_report.margins else None,
                "passed": bound_report.passed,
            })
            name = f"bounds/{config.environment.kind}_g{gamma:g}"
            report.files.extend(str(p) for p in reporter.write_bound_report(bound_report, name).values())
        except AssumptionViolation as e:
            logger.error(f"Bounds at gamma={gamma} violate the {e.assumption} assumption: {e}")
            row.update(status="assumption_violation", error=str(e))
        except DivergenceError as e:
            logger.error(f"Probe training at gamma={gamma} diverged: {e}")
            row.update(status="diverged", error=str(e))
        report.rows.append(row)

    fields = ["environment", "gamma", "status", "error", "n_policies", "ratio_dgamma_over_dpi",
              "ratio_dpi_over_dgamma", "bound_eq8", "bound_eq9", "bound_eq11", "bound_eq12", "min_margin", "passed"]
    report.files.extend(str(p) for p in reporter.write_summary(report.rows, fields, "bounds_summary").values())
    return report


def run_sampling(config: ExperimentConfig) -> ExperimentReport:
    """
    Buffer convergence study for every (gamma, seed) under the uniform policy
    of the first configured parameterization.

    Writes the convergence curve, both state distributions, the smallest
    buffer and an SVG of the curve per cell.
    """
    sampling = config.sampling
    out_dir = default_output_directory(config.output)
    reporter = ReportGenerator(out_dir, config.output.formats, config.output.emit_plots)
    variant = config.parameterizations[0]
    report = ExperimentReport(name=f"{config.name}_sampling", output_directory=str(out_dir))

    for gamma in config.gammas:
        mdp = build_environment(config.environment, gamma)
        policy = initial_policy(variant, mdp.n_states, mdp.n_actions, config.custom_theta0)
        d_pi = undiscounted_distribution(mdp, policy)
        d_gamma = discounted_distribution(mdp, policy)
        mismatch = tv_distance(d_pi, d_gamma)
        prefix = f"{config.environment.kind}_g{gamma:g}"
        report.files.append(str(reporter.write_distribution(d_pi, f"sampling/{prefix}_d_pi")))
        report.files.append(str(reporter.write_distribution(d_gamma, f"sampling/{prefix}_d_gamma")))

        for seed in config.seeds:
            name = f"{prefix}_s{seed}"
            row: Dict[str, Any] = {"environment": config.environment.kind, "gamma": gamma, "seed": seed,
                                   "tv_dpi_dgamma": mismatch, "status": "ok", "error": ""}
            try:
                curve = convergence_curve(mdp, policy, sampling.capacities, seed, sampling.horizon_cap)
                buffer = fill_buffer(mdp, policy, sampling.capacities[0], seed, sampling.horizon_cap,
                                     sampling.max_episode_steps)
            except AssumptionViolation as e:
                logger.error(f"Sampling {name} violates the {e.assumption} assumption: {e}")
                row.update(status="assumption_violation", error=str(e))
                report.rows.append(row)
                continue

            curve_rows = [{"capacity": c, "tv_to_dpi": a, "tv_to_dgamma": b, "tv_dpi_dgamma": mismatch}
                          for c, a, b in curve]
            report.files.append(str(reporter.write_rows_csv(
                curve_rows, ["capacity", "tv_to_dpi", "tv_to_dgamma", "tv_dpi_dgamma"], f"sampling/{name}_curve")))
            report.files.append(str(reporter.write_buffer(buffer, f"sampling/{name}_buffer")))
            plot = reporter.plot_convergence_curve(curve, f"plots/{name}_sampling",
                                                   title=f"{config.environment.kind} gamma={gamma:g} seed={seed}")
            if plot is not None:
                report.files.append(str(plot))
            row.update(capacity=curve[-1][0], tv_to_dpi=curve[-1][1], tv_to_dgamma=curve[-1][2])
            report.rows.append(row)

    fields = ["environment", "gamma", "seed", "status", "error", "capacity", "tv_to_dpi", "tv_to_dgamma",
              "tv_dpi_dgamma"]
    report.files.extend(str(p) for p in reporter.write_summary(report.rows, fields, "sampling_summary").values())
    logger.info(f"Sampling study written to {out_dir}")
    return report
