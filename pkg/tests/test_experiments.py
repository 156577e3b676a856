"""
Tests for the experiment runners.
"""

import csv
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
import pytest

from src.config import (
    BoundsSuiteConfig, EnvironmentConfig, ExperimentConfig, OutputConfig, RandomMdpSpec, SamplingConfig,
)
from src.environments import random_mdp
from src.experiments import (
    BENCHMARK_GAMMAS, CUSTOM_START_THETA, PRESETS, SUMMARY_FIELDS, ExperimentReport, checkpoint_policies,
    default_output_directory, iterations_to_target, mean_abs_difference, mismatch_trend, preset_config,
    probe_policies, run_bounds_suite, run_reproduction, run_sampling,
)
from src.models import (
    AssumptionViolation, BoundReport, DivergenceError, MdpKind, PolicyVariant, Trace, TraceRecord, TrainVariant,
)
from src.optimizer import TrainConfig, train
from src.policy import uniform_softmax


def _trace(values):
    trace = Trace(variant=TrainVariant.SOFTMAX_ASCENT, use_biased=True)
    for it, j in enumerate(values):
        trace.records.append(TraceRecord(iter=it, j=j, grad_norm_biased=0.0, grad_norm_unbiased=0.0,
                                         tv_mismatch=0.0, eta=0.1))
    return trace


def _small_config(out_dir: Path, **overrides) -> ExperimentConfig:
    settings = dict(
        name="small",
        environment=EnvironmentConfig(kind="random_mdp", random_mdp=RandomMdpSpec(n_states=3, n_actions=2, seed=1)),
        gammas=[0.5],
        parameterizations=[PolicyVariant.SOFTMAX, PolicyVariant.DIRECT],
        budgets={"softmax": 30, "direct": 30},
        checkpoint_every=10,
        bounds=BoundsSuiteConfig(gammas=[0.5], n_random_policies=3, training_iters=5),
        sampling=SamplingConfig(capacities=[10, 100]),
        output=OutputConfig(directory=str(out_dir)),
    )
    settings.update(overrides)
    return ExperimentConfig(**settings)


def _read_rows(path: Path):
    with open(path, 'r', newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))


class TestPresets:
    """Tests for the built-in benchmark configurations."""

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_presets(self, name):
        config = preset_config(name)
        environment, variant = PRESETS[name]

        assert config.name == name
        assert config.environment.kind == environment
        assert config.parameterizations == [variant]
        assert config.gammas == BENCHMARK_GAMMAS
        assert config.output.directory is None

    def test_preset_seed_and_output(self):
        config = preset_config("fig4", seed=7, out="runs/fig4")
        assert config.seeds == [7]
        assert config.output.directory == "runs/fig4"

    def test_one_parameter_preset_starts_away_from_zero(self):
        assert preset_config("appendixA3").custom_theta0 == CUSTOM_START_THETA == 2.0
        assert preset_config("fig3").custom_theta0 == 0.0

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="Unknown preset 'fig9'"):
            preset_config("fig9")

    def test_default_output_directory(self):
        path = default_output_directory(OutputConfig())
        assert path.parent == Path("runs")
        assert default_output_directory(OutputConfig(directory="out")) == Path("out")


class TestHelpers:
    """Tests for trace summaries and probe sets."""

    def test_iterations_to_target(self):
        trace = _trace([0.0, 0.5, 0.995, 1.0])

        assert iterations_to_target(trace, 1.0) == 2
        assert iterations_to_target(trace, 2.0) is None
        assert iterations_to_target(trace, 0.0) == 0

    def test_iterations_to_negative_target(self):
        assert iterations_to_target(_trace([-3.0, -2.5, -2.01]), -2.0) == 2

    def test_mean_abs_difference(self):
        assert mean_abs_difference(_trace([0.0, 1.0, 2.0]), _trace([0.0, 0.5])) == pytest.approx(0.25)
        assert np.isnan(mean_abs_difference(_trace([]), _trace([1.0])))

    def test_mismatch_trend(self):
        def row(gamma, diff, parameterization="softmax", status="ok"):
            return {"environment": "gridworld", "parameterization": parameterization, "seed": 0,
                    "gamma": gamma, "mean_abs_j_diff": diff, "status": status}

        rows = [row(0.9, 0.01), row(0.3, 0.2), row(0.5, 0.05), row(0.7, 0.08, status="diverged"),
                row(0.3, 0.1, "direct"), row(0.9, 0.3, "direct"), row(0.5, 0.4, "custom")]

        trends = {trend["parameterization"]: trend for trend in mismatch_trend(rows)}

        assert set(trends) == {"softmax", "direct"}
        assert trends["softmax"]["gammas"] == [0.3, 0.5, 0.9]
        assert trends["softmax"]["mean_abs_j_diff"] == [0.2, 0.05, 0.01]
        assert trends["softmax"]["non_increasing"] is True
        assert trends["direct"]["non_increasing"] is False

    def test_mismatch_trend_skips_unpaired_rows(self):
        rows = [{"environment": "car_rental", "parameterization": "direct", "seed": 1, "gamma": gamma,
                 "status": "ok"} for gamma in (0.3, 0.9)]
        assert mismatch_trend(rows) == []

    def test_probe_policies(self):
        mdp = random_mdp(3, 2, seed=0)
        probes = probe_policies(mdp, 4, seed=5)
        again = probe_policies(mdp, 4, seed=5)

        assert len(probes) == 4
        assert all(p.variant == PolicyVariant.SOFTMAX for p in probes)
        assert np.array_equal(probes[2].theta, again[2].theta)
        assert not np.array_equal(probes[0].theta, probes[1].theta)

    def test_direct_probes_share_probabilities(self):
        mdp = random_mdp(3, 2, seed=0)
        softmax = probe_policies(mdp, 2, seed=1)
        direct = probe_policies(mdp, 2, seed=1, variant=PolicyVariant.DIRECT)

        assert all(p.variant == PolicyVariant.DIRECT for p in direct)
        assert np.allclose(direct[0].action_probs(), softmax[0].action_probs())

    def test_checkpoint_policies(self):
        mdp = random_mdp(3, 2, gamma=0.5, seed=0)
        policy0 = uniform_softmax(3, 2)
        cfg = TrainConfig(variant=TrainVariant.SOFTMAX_ASCENT, eta=0.01, max_iters=6, checkpoint_every=2,
                          stop_grad_norm=0.0)
        final, trace = train(mdp, policy0, cfg)

        policies = checkpoint_policies(policy0, trace)

        assert len(policies) == 4
        assert np.array_equal(policies[0].theta, policy0.theta)
        assert np.allclose(policies[-1].theta, final.theta)
        assert len(checkpoint_policies(policy0, trace, every=2)) == 2


class TestExperimentReport:
    """Tests for the process exit code of a sweep."""

    def test_exit_codes(self):
        failed = BoundReport(gamma=0.9, kind=MdpKind.EPISODIC, violations=["eq8"])

        assert ExperimentReport(name="a", output_directory=".", rows=[{"status": "ok"}]).exit_code == 0
        assert ExperimentReport(name="a", output_directory=".", bound_reports=[failed]).exit_code == 2
        assert ExperimentReport(name="a", output_directory=".",
                                rows=[{"status": "assumption_violation"}]).exit_code == 2
        assert ExperimentReport(name="a", output_directory=".",
                                rows=[{"status": "diverged"}, {"status": "assumption_violation"}]).exit_code == 3


class TestRunReproduction:
    """Tests for the paired training sweep."""

    def setup_method(self):
        self.temp_dir = TemporaryDirectory()
        self.out_dir = Path(self.temp_dir.name) / "run"

    def teardown_method(self):
        self.temp_dir.cleanup()

    def test_small_sweep(self, monkeypatch):
        monkeypatch.delenv("PGLAB_THREADS", raising=False)
        config = _small_config(self.out_dir, threads=2)

        report = run_reproduction(config)

        assert [row["parameterization"] for row in report.rows] == ["softmax", "direct"]
        assert all(row["status"] == "ok" for row in report.rows)
        assert all(row["bounds_passed"] is True for row in report.rows)
        assert report.exit_code == 0
        for row in report.rows:
            assert row["final_j_biased"] >= row["j_initial"] - 1e-12
            assert row["gap_unbiased"] >= -1e-9
            assert row["iterations_biased"] <= 30
            assert row["biased_not_slower"] in (True, False)
            assert row["eta"] > 0 and row["budget"] == 30

        for label in ("biased", "unbiased"):
            assert (self.out_dir / "traces" / f"random_mdp_softmax_g0.5_s0_{label}.csv").exists()
        assert (self.out_dir / "bounds" / "random_mdp_direct_g0.5_s0.json").exists()
        assert (self.out_dir / "plots" / "random_mdp_softmax_g0.5_s0.svg").exists()
        assert (self.out_dir / "summary.json").exists()

        rows = _read_rows(self.out_dir / "summary.csv")
        assert len(rows) == 2
        assert list(rows[0]) == SUMMARY_FIELDS
        assert report.bound_reports[0].consistency["label"].startswith("consistency check")

    def test_biased_only_without_pairs(self, monkeypatch):
        monkeypatch.delenv("PGLAB_THREADS", raising=False)
        config = _small_config(self.out_dir, run_pairs=False, parameterizations=[PolicyVariant.SOFTMAX])

        report = run_reproduction(config, with_bounds=False)

        row = report.rows[0]
        assert "final_j_biased" in row
        assert "final_j_unbiased" not in row
        assert "mean_abs_j_diff" not in row
        assert not (self.out_dir / "bounds").exists()

    def test_divergence_recorded(self, monkeypatch, mocker):
        """A diverging cell is reported and the sweep continues."""
        monkeypatch.delenv("PGLAB_THREADS", raising=False)
        mocker.patch("src.experiments.train", side_effect=DivergenceError("training diverged at iteration 3"))

        report = run_reproduction(_small_config(self.out_dir), with_bounds=False)

        assert [row["status"] for row in report.rows] == ["diverged", "diverged"]
        assert "iteration 3" in report.rows[0]["error"]
        assert report.exit_code == 3
        assert (self.out_dir / "summary.csv").exists()

    def test_assumption_violation_recorded(self, monkeypatch, mocker):
        monkeypatch.delenv("PGLAB_THREADS", raising=False)
        mocker.patch("src.experiments.train",
                     side_effect=AssumptionViolation("reducible chain", assumption="ergodicity"))

        report = run_reproduction(_small_config(self.out_dir, parameterizations=[PolicyVariant.SOFTMAX]),
                                  with_bounds=False)

        assert report.rows[0]["status"] == "assumption_violation"
        assert report.exit_code == 2

    def test_unexpected_error_recorded(self, monkeypatch, mocker):
        monkeypatch.delenv("PGLAB_THREADS", raising=False)
        mocker.patch("src.experiments.optimal_policy", side_effect=RuntimeError("solver failed"))

        report = run_reproduction(_small_config(self.out_dir, parameterizations=[PolicyVariant.SOFTMAX]),
                                  with_bounds=False)

        assert report.rows[0]["status"] == "error"
        assert report.rows[0]["error"] == "solver failed"


class TestSuites:
    """Tests for the bounds suite and the sampling study."""

    def setup_method(self):
        self.temp_dir = TemporaryDirectory()
        self.out_dir = Path(self.temp_dir.name)

    def teardown_method(self):
        self.temp_dir.cleanup()

    def test_bounds_suite(self):
        report = run_bounds_suite(_small_config(self.out_dir))

        assert len(report.rows) == 1
        row = report.rows[0]
        assert row["status"] == "ok"
        assert row["passed"] is True
        assert row["n_policies"] == 3 + 6 + 6
        assert (self.out_dir / "bounds" / "random_mdp_g0.5.json").exists()
        assert (self.out_dir / "bounds_summary.csv").exists()

    def test_bounds_suite_assumption_violation(self, mocker):
        mocker.patch("src.experiments.build_bound_report",
                     side_effect=AssumptionViolation("periodic chain", assumption="ergodicity"))

        report = run_bounds_suite(_small_config(self.out_dir))

        assert report.rows[0]["status"] == "assumption_violation"

    def test_sampling_study(self):
        config = _small_config(self.out_dir, seeds=[0, 1])

        report = run_sampling(config)

        assert [row["seed"] for row in report.rows] == [0, 1]
        assert all(row["capacity"] == 100 for row in report.rows)
        assert (self.out_dir / "sampling" / "random_mdp_g0.5_d_pi.csv").exists()
        assert (self.out_dir / "sampling" / "random_mdp_g0.5_s1_curve.csv").exists()
        assert len(_read_rows(self.out_dir / "sampling" / "random_mdp_g0.5_s0_buffer.csv")) == 10
        assert (self.out_dir / "plots" / "random_mdp_g0.5_s0_sampling.svg").exists()
        assert len(_read_rows(self.out_dir / "sampling_summary.csv")) == 2


@pytest.mark.slow
class TestBenchmarks:
    """Full-size presets with their shipped step sizes and budgets."""

    def setup_method(self):
        self.temp_dir = TemporaryDirectory()
        self.out_dir = Path(self.temp_dir.name)

    def teardown_method(self):
        self.temp_dir.cleanup()

    @pytest.mark.parametrize("name", ["fig1", "fig2", "fig3", "fig4"])
    def test_preset_reaches_optimum(self, name, monkeypatch):
        """Biased and unbiased runs end within 1e-3 max(1, |J*|) of J* and above their starting value."""
        monkeypatch.delenv("PGLAB_THREADS", raising=False)

        report = run_reproduction(preset_config(name, out=self.out_dir), with_bounds=False)

        assert [row["gamma"] for row in report.rows] == BENCHMARK_GAMMAS
        for row in report.rows:
            assert row["status"] == "ok", row["error"]
            tolerance = 1e-3 * max(1.0, abs(row["j_star"]))
            for label in ("biased", "unbiased"):
                assert abs(row[f"gap_{label}"]) <= tolerance, (row["gamma"], label, row[f"gap_{label}"])
                assert row[f"final_j_{label}"] >= row["j_initial"]
        assert len(report.trends) == 1
        assert report.trends[0]["gammas"] == sorted(BENCHMARK_GAMMAS)
        assert (self.out_dir / "mismatch_trend.json").exists()

    def test_gridworld_direct_bounds_along_training(self, monkeypatch):
        """ABC slack at every logged iterate and gradient domination at every tenth one."""
        monkeypatch.delenv("PGLAB_THREADS", raising=False)

        report = run_reproduction(preset_config("fig3", out=self.out_dir))

        assert all(row["bounds_passed"] is True for row in report.rows)
        for bound_report in report.bound_reports:
            assert bound_report.n_policies >= 100
            for key in ("abc_inner_biased_iterates", "abc_norm_unbiased_iterates", "gradient_domination_iterates"):
                assert key in bound_report.margins

    def test_one_parameter_family(self, monkeypatch):
        """Biased and unbiased runs of the diagonal-wind policy end at the same J."""
        monkeypatch.delenv("PGLAB_THREADS", raising=False)

        report = run_reproduction(preset_config("appendixA3", out=self.out_dir), with_bounds=False)

        for row in report.rows:
            assert row["status"] == "ok", row["error"]
            assert row["final_j_agreement"] <= 1e-4
            assert row["final_j_biased"] >= row["j_initial"]
        high = next(row for row in report.rows if row["gamma"] == 0.9)
        assert high["iters_to_1pct_final_biased"] is not None
        assert high["biased_not_slower"] in (True, False)

    @pytest.mark.parametrize("environment,bound", [("gridworld", "bound_eq8"), ("car_rental", "bound_eq11")])
    def test_bounds_suite_over_gamma(self, environment, bound):
        """Certified at every gamma; over a fixed policy sample the ratio bound shrinks toward 1 as gamma grows."""
        gammas = [0.3, 0.5, 0.7, 0.9, 0.99]
        trained = ExperimentConfig(
            name=environment,
            environment=EnvironmentConfig(kind=environment),
            parameterizations=[PolicyVariant.SOFTMAX],
            bounds=BoundsSuiteConfig(gammas=gammas, n_random_policies=100, training_iters=50),
            output=OutputConfig(directory=str(self.out_dir / "trained")),
        )
        fixed = trained.model_copy(update={
            "bounds": BoundsSuiteConfig(gammas=gammas, n_random_policies=20, include_training_iterates=False),
            "output": OutputConfig(directory=str(self.out_dir / "fixed")),
        })

        certified = run_bounds_suite(trained)
        values = [row[bound] for row in run_bounds_suite(fixed).rows]

        for row in certified.rows:
            assert row["status"] == "ok", row["error"]
            assert row["passed"] is True, row["gamma"]
        assert all(later < earlier for earlier, later in zip(values, values[1:]))
        assert values[-1] >= 1.0
