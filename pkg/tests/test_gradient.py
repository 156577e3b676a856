"""
Tests for expectation gradients, closed forms and finite differences.
"""

import numpy as np
import pytest

from src.environments import build_gridworld, random_mdp
from src.evaluation import discounted_distribution, evaluate, undiscounted_distribution
from src.gradient import (
    closed_form_gradient, direct_gradient, expectation_gradient, finite_difference_grad, gradient_report,
    softmax_gradient,
)
from src.models import MdpKind
from src.policy import deterministic_direct, diagonal_wind_policy, random_softmax, to_direct
from tests.conftest import make_corridor_mdp


class TestClosedForms:
    """Closed-form gradients agree with the generic Jacobian form."""

    def test_softmax_closed_form(self):
        mdp = random_mdp(5, 3, gamma=0.8, seed=12)
        policy = random_softmax(5, 3, seed=13)
        dist = undiscounted_distribution(mdp, policy)

        assert np.allclose(softmax_gradient(mdp, policy, dist), expectation_gradient(mdp, policy, dist), atol=1e-12)

    def test_direct_closed_form(self):
        mdp = random_mdp(4, 2, kind=MdpKind.EPISODIC, gamma=0.6, seed=2)
        policy = to_direct(random_softmax(4, 2, seed=3))
        dist = discounted_distribution(mdp, policy)

        assert np.allclose(direct_gradient(mdp, policy, dist), expectation_gradient(mdp, policy, dist), atol=1e-12)

    def test_custom_dispatch_uses_jacobian(self):
        mdp = build_gridworld(gamma=0.9)
        policy = diagonal_wind_policy(mdp.n_states, 0.3)
        dist = discounted_distribution(mdp, policy)

        grad = closed_form_gradient(mdp, policy, dist)

        assert grad.shape == (1,)
        assert np.allclose(grad, expectation_gradient(mdp, policy, dist))

    def test_distribution_length_checked(self):
        mdp = random_mdp(3, 2, seed=0)
        with pytest.raises(ValueError, match="2 entries"):
            expectation_gradient(mdp, random_softmax(3, 2, seed=0), np.array([0.5, 0.5]))

    def test_absorbing_mass_rejected(self):
        mdp = make_corridor_mdp()
        policy = deterministic_direct([1, 1, 1, 1], 2)
        with pytest.raises(ValueError, match="absorbing state 3"):
            direct_gradient(mdp, policy, np.array([0.25, 0.25, 0.25, 0.25]))


class TestGradientOracle:
    """The true gradient equals kappa times the unbiased expectation gradient."""

    def test_random_mdps(self):
        for i in range(30):
            kind = MdpKind.EPISODIC if i % 2 else MdpKind.CONTINUING
            n_states, n_actions = 2 + i % 5, 2 + i % 2
            mdp = random_mdp(n_states, n_actions, kind=kind, gamma=0.4 + 0.015 * i, seed=300 + i)
            policy = random_softmax(n_states, n_actions, seed=400 + i)

            report = gradient_report(mdp, policy, h=1e-5)

            assert report.true_grad_source == "finite_difference"
            assert report.scale_residual <= 1e-4

    def test_direct_interior_policy(self):
        mdp = random_mdp(4, 3, gamma=0.7, seed=21)
        policy = to_direct(random_softmax(4, 3, seed=22, scale=0.5))
        bundle = evaluate(mdp, policy)

        numeric = finite_difference_grad(mdp, policy, 1e-6)
        exact = bundle.kappa * direct_gradient(mdp, policy, discounted_distribution(mdp, policy), bundle)

        assert np.allclose(numeric, exact, atol=1e-6)

    def test_richardson_ratio_on_custom_policy(self):
        """Halving h cuts the central-difference error by about four."""
        mdp = build_gridworld(gamma=0.9)
        policy = diagonal_wind_policy(mdp.n_states, 0.5)
        bundle = evaluate(mdp, policy)
        exact = bundle.kappa * expectation_gradient(mdp, policy, discounted_distribution(mdp, policy), bundle)

        coarse = abs(finite_difference_grad(mdp, policy, 1e-2)[0] - exact[0])
        fine = abs(finite_difference_grad(mdp, policy, 5e-3)[0] - exact[0])

        assert 3.0 <= coarse / fine <= 5.0


class TestGradientReport:
    """Tests for the gradient report."""

    def test_report_fields(self):
        mdp = build_gridworld(gamma=0.5)
        policy = random_softmax(mdp.n_states, mdp.n_actions, seed=7)
        report = gradient_report(mdp, policy)

        assert report.unbiased.shape == (15, 4)
        assert report.k_theta == pytest.approx(evaluate(mdp, policy).kappa)
        assert report.inner_product == pytest.approx(float(np.vdot(report.unbiased, report.biased)))
        assert -1.0 <= report.cos_biased_unbiased <= 1.0
        assert report.norm_biased == pytest.approx(np.linalg.norm(report.biased))
        assert len(report.to_frame()) == 60

    def test_boundary_direct_policy_uses_exact_gradient(self):
        mdp = make_corridor_mdp()
        report = gradient_report(mdp, deterministic_direct([1, 1, 1, 1], 2))

        assert report.true_grad_source == "exact"
        assert report.scale_residual == 0.0

    def test_non_positive_step(self):
        mdp = random_mdp(3, 2, seed=1)
        with pytest.raises(ValueError, match="must be positive"):
            finite_difference_grad(mdp, random_softmax(3, 2, seed=1), 0.0)

    def test_boundary_check(self):
        mdp = make_corridor_mdp()
        with pytest.raises(ValueError, match="simplex boundary"):
            finite_difference_grad(mdp, deterministic_direct([1, 1, 1, 1], 2))
