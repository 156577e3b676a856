"""
Tests for policy parameterizations and simplex projection.
"""

from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
import pytest
from pydantic import ValidationError

from src.models import PolicyVariant, ValidationFailure
from src.policy import (
    Policy, deterministic_direct, diagonal_wind_policy, direct_from_probs, initial_policy, load_policy,
    policy_from_dict, policy_jacobian, policy_to_dict, project_rows, project_simplex, random_softmax, save_policy,
    to_direct, uniform_direct, uniform_softmax,
)


def _numeric_jacobian(policy: Policy, h: float = 1e-6) -> np.ndarray:
    flat = policy.theta.ravel()
    columns = []
    for k in range(flat.size):
        step = np.zeros_like(flat)
        step[k] = h
        plus = policy.with_theta((flat + step).reshape(policy.theta.shape)).action_probs()
        minus = policy.with_theta((flat - step).reshape(policy.theta.shape)).action_probs()
        columns.append((plus - minus) / (2 * h))
    return np.stack(columns, axis=-1)


class TestPolicyValidation:
    """Tests for parameter validation at construction."""

    def test_direct_rows_must_sum_to_one(self):
        with pytest.raises(ValidationError, match="row 1 sums to"):
            Policy(variant=PolicyVariant.DIRECT, theta=[[0.5, 0.5], [0.5, 0.6]], n_states=2, n_actions=2)

    def test_direct_rejects_negative(self):
        with pytest.raises(ValidationError, match="negative at"):
            Policy(variant=PolicyVariant.DIRECT, theta=[[1.2, -0.2]], n_states=1, n_actions=2)

    def test_softmax_shape(self):
        with pytest.raises(ValidationError, match="softmax theta has shape"):
            Policy(variant=PolicyVariant.SOFTMAX, theta=np.zeros((3, 2)), n_states=2, n_actions=2)

    def test_non_finite_theta(self):
        with pytest.raises(ValidationError, match="non-finite"):
            Policy(variant=PolicyVariant.SOFTMAX, theta=[[np.nan, 0.0]], n_states=1, n_actions=2)

    def test_custom_requires_functions(self):
        with pytest.raises(ValidationError, match="prob_fn and jacobian_fn"):
            Policy(variant=PolicyVariant.CUSTOM, theta=[0.0], n_states=1, n_actions=2)

    def test_custom_jacobian_checked(self):
        """A custom Jacobian with the wrong sign is rejected."""
        def probs(theta):
            p = 1.0 / (1.0 + np.exp(-theta[0]))
            return np.array([[p, 1.0 - p]])

        def wrong_jacobian(theta):
            p = 1.0 / (1.0 + np.exp(-theta[0]))
            return -np.array([[p * (1 - p), -p * (1 - p)]])[:, :, None]

        with pytest.raises(ValidationError, match="disagrees with central differences"):
            Policy(variant=PolicyVariant.CUSTOM, theta=[0.3], n_states=1, n_actions=2,
                   prob_fn=probs, jacobian_fn=wrong_jacobian)

    def test_theta_read_only(self):
        policy = uniform_softmax(2, 3)
        with pytest.raises(ValueError):
            policy.theta[0, 0] = 1.0


class TestProbabilitiesAndJacobians:
    """Tests for action probabilities and their derivatives."""

    def test_uniform_policies(self):
        assert np.allclose(uniform_direct(3, 4).action_probs(), 0.25)
        assert np.allclose(uniform_softmax(3, 4).action_probs(), 0.25)

    def test_softmax_rows_sum_to_one(self):
        probs = random_softmax(5, 3, seed=2, scale=3.0).action_probs()
        assert np.allclose(probs.sum(axis=1), 1.0)
        assert np.all(probs > 0)

    def test_random_softmax_reproducible(self):
        assert np.array_equal(random_softmax(4, 2, seed=9).theta, random_softmax(4, 2, seed=9).theta)

    def test_direct_jacobian_is_identity(self):
        jac = policy_jacobian(uniform_direct(2, 3))
        assert jac.shape == (2, 3, 6)
        assert np.array_equal(jac.reshape(6, 6), np.eye(6))

    def test_softmax_jacobian_matches_finite_differences(self):
        policy = random_softmax(3, 4, seed=5)
        assert np.allclose(policy.jacobian(), _numeric_jacobian(policy), atol=1e-8)

    def test_softmax_jacobian_is_block_diagonal(self):
        jac = random_softmax(3, 2, seed=1).jacobian().reshape(3, 2, 3, 2)
        assert np.all(jac[0, :, 1, :] == 0.0)

    def test_diagonal_wind_policy(self):
        """At theta = 0 all four directions are equally likely."""
        policy = diagonal_wind_policy(15)
        assert policy.n_params == 1
        assert np.allclose(policy.action_probs(), 0.25)

        tilted = policy.with_theta([2.0])
        probs = tilted.action_probs()
        assert probs[0, 0] == pytest.approx(probs[0, 3])
        assert probs[0, 1] == pytest.approx(probs[0, 2])
        assert probs[0, 0] == pytest.approx(np.exp(2.0) / (2 * (1 + np.exp(2.0))))
        assert np.allclose(tilted.jacobian(), _numeric_jacobian(tilted), atol=1e-8)

    def test_to_direct(self):
        policy = random_softmax(3, 3, seed=0)
        direct = to_direct(policy)
        assert direct.variant == PolicyVariant.DIRECT
        assert np.allclose(direct.action_probs(), policy.action_probs())

    def test_deterministic_direct(self):
        policy = deterministic_direct([2, 0], 3)
        assert policy.theta.tolist() == [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]

    def test_initial_policy(self):
        assert initial_policy(PolicyVariant.DIRECT, 2, 3).variant == PolicyVariant.DIRECT
        assert initial_policy(PolicyVariant.CUSTOM, 15, 4).family == "diagonal_wind"
        with pytest.raises(ValueError, match="4 actions"):
            initial_policy(PolicyVariant.CUSTOM, 3, 2)

    def test_random_parameters_give_distributions(self):
        """Every parameterization maps random parameters to rows summing to one."""
        rng = np.random.default_rng(0)
        for k in range(100):
            n_states, n_actions = int(rng.integers(1, 9)), int(rng.integers(2, 6))
            policies = [
                direct_from_probs(rng.dirichlet(np.ones(n_actions), size=n_states)),
                uniform_softmax(n_states, n_actions).with_theta(rng.normal(size=(n_states, n_actions))),
                diagonal_wind_policy(15, theta=float(rng.normal(scale=3.0))),
            ]
            for policy in policies:
                probs = policy.action_probs()
                assert np.all(probs >= 0.0)
                assert np.allclose(probs.sum(axis=1), 1.0, rtol=0.0, atol=1e-10), (k, policy.variant)

    def test_initial_custom_theta(self):
        policy = initial_policy(PolicyVariant.CUSTOM, 15, 4, custom_theta=2.0)
        assert policy.theta.tolist() == [2.0]


class TestSimplexProjection:
    """Tests for Euclidean projection onto the simplex."""

    def test_points_on_simplex_unchanged(self):
        point = np.array([0.2, 0.3, 0.5])
        assert np.allclose(project_simplex(point), point)

    def test_known_projections(self):
        assert np.allclose(project_simplex([2.0, 0.0, 0.0]), [1.0, 0.0, 0.0])
        assert np.allclose(project_simplex([0.5, 0.5, 0.5]), [1 / 3, 1 / 3, 1 / 3])
        assert np.allclose(project_simplex([-1.0, 0.5, 1.0]), [0.0, 0.25, 0.75])

    def test_brute_force_on_three_vectors(self):
        """No grid point of the simplex at resolution 1e-3 is closer than the projection."""
        steps = np.arange(1001) / 1000.0
        first, second = np.meshgrid(steps, steps, indexing="ij")
        keep = first + second <= 1.0 + 1e-12
        grid = np.stack([first[keep], second[keep], np.clip(1.0 - first[keep] - second[keep], 0.0, None)], axis=1)

        rng = np.random.Generator(np.random.Philox(0))
        for _ in range(5):
            x = rng.normal(scale=2.0, size=3)
            projected = project_simplex(x)
            best = np.min(np.linalg.norm(grid - x, axis=1))
            assert np.linalg.norm(projected - x) <= best + 1e-9

    def test_kkt_conditions_on_five_vectors(self):
        """Positive coordinates share one shift tau; zeroed coordinates lie below it."""
        rng = np.random.Generator(np.random.Philox(1))
        for _ in range(20):
            x = rng.normal(scale=3.0, size=5)
            p = project_simplex(x)
            assert p.sum() == pytest.approx(1.0)
            assert np.all(p >= 0)
            shifts = x[p > 0] - p[p > 0]
            assert np.allclose(shifts, shifts[0])
            assert np.all(x[p == 0] <= shifts[0] + 1e-12)

    def test_project_rows(self):
        projected = project_rows([[2.0, 0.0], [0.3, 0.3]])
        assert np.allclose(projected, [[1.0, 0.0], [0.5, 0.5]])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            project_simplex([np.inf, 0.0])


class TestCheckpoints:
    """Tests for policy checkpoint files."""

    def setup_method(self):
        self.temp_dir = TemporaryDirectory()
        self.path = Path(self.temp_dir.name) / "policy.json"

    def teardown_method(self):
        self.temp_dir.cleanup()

    def test_softmax_checkpoint(self):
        policy = random_softmax(3, 2, seed=4)
        save_policy(policy, self.path)
        loaded = load_policy(self.path)

        assert loaded.variant == PolicyVariant.SOFTMAX
        assert np.array_equal(loaded.theta, policy.theta)

    def test_custom_checkpoint(self):
        policy = diagonal_wind_policy(15, 0.7)
        loaded = policy_from_dict(policy_to_dict(policy))

        assert loaded.family == "diagonal_wind"
        assert np.allclose(loaded.action_probs(), policy.action_probs())

    def test_direct_checkpoint_is_validated(self):
        data = policy_to_dict(direct_from_probs([[0.5, 0.5]]))
        data["theta"] = [[0.9, 0.5]]
        with pytest.raises(ValidationFailure, match="malformed"):
            policy_from_dict(data)

    def test_unknown_family(self):
        data = policy_to_dict(diagonal_wind_policy(2))
        data["family"] = "spiral"
        with pytest.raises(ValidationFailure, match="unknown custom policy family"):
            policy_from_dict(data)

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            load_policy(self.path)
