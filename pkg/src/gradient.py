"""
Policy Gradients

Expectation gradients under any state distribution (the unbiased one under
d_{pi,gamma}, the biased one under d_pi), the closed forms for direct and
softmax policies, central finite differences of J, and the report that ties
them together through the scale factor kappa.
"""

import logging
from typing import Optional

import numpy as np

from src.evaluation import (
    DistributionLike,
    distribution_values,
    discounted_distribution,
    evaluate,
    policy_value,
    undiscounted_distribution,
)
from src.models import GradientReport, Mdp, PolicyVariant, ValueBundle
from src.policy import Policy


logger = logging.getLogger(__name__)

DEFAULT_FD_STEP = 1e-5


def _checked_weights(mdp: Mdp, dist: DistributionLike) -> np.ndarray:
    weights = distribution_values(dist)
    if weights.shape != (mdp.n_states,):
        raise ValueError(f"distribution has {weights.size} entries, MDP has {mdp.n_states} states")
    if mdp.is_episodic and weights[mdp.absorbing_index] != 0.0:
        raise ValueError(
            f"distribution puts mass {weights[mdp.absorbing_index]!r} on absorbing state {mdp.absorbing_index}"
        )
    return weights


def expectation_gradient(mdp: Mdp, policy: Policy, dist: DistributionLike,
                         bundle: Optional[ValueBundle] = None) -> np.ndarray:
    """
    Expectation gradient sum_s dist(s) sum_a d pi(a|s)/d theta * Q(s,a).

    Computed in Jacobian form, which equals the score-function form
    E[grad log pi * Q] without taking logs of zero probabilities.

    Args:
        mdp: MDP
        policy: Policy
        dist: State weighting (d_{pi,gamma} gives the unbiased gradient, d_pi the biased one)
        bundle: Precomputed evaluation of the policy

    Returns:
        Gradient shaped like policy.theta

    Raises:
        ValueError: If the distribution does not match the MDP
    """
    weights = _checked_weights(mdp, dist)
    if bundle is None:
        bundle = evaluate(mdp, policy)
    grad = np.einsum("s,sa,sak->k", weights, bundle.q, policy.jacobian())
    return grad.reshape(policy.theta.shape)


def direct_gradient(mdp: Mdp, policy: Policy, dist: DistributionLike,
                    bundle: Optional[ValueBundle] = None) -> np.ndarray:
    """Direct parameterization: component (s,a) is dist(s) Q(s,a)."""
    weights = _checked_weights(mdp, dist)
    if bundle is None:
        bundle = evaluate(mdp, policy)
    return weights[:, None] * bundle.q


def softmax_gradient(mdp: Mdp, policy: Policy, dist: DistributionLike,
                     bundle: Optional[ValueBundle] = None) -> np.ndarray:
    """Softmax parameterization: component (s,a) is dist(s) pi(a|s) A(s,a)."""
    weights = _checked_weights(mdp, dist)
    if bundle is None:
        bundle = evaluate(mdp, policy)
    return weights[:, None] * policy.action_probs() * bundle.adv


def closed_form_gradient(mdp: Mdp, policy: Policy, dist: DistributionLike,
                         bundle: Optional[ValueBundle] = None) -> np.ndarray:
    """Expectation gradient through the tabular closed forms when they apply."""
    if policy.variant == PolicyVariant.DIRECT:
        return direct_gradient(mdp, policy, dist, bundle)
    if policy.variant == PolicyVariant.SOFTMAX:
        return softmax_gradient(mdp, policy, dist, bundle)
    return expectation_gradient(mdp, policy, dist, bundle)


def finite_difference_grad(mdp: Mdp, policy: Policy, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """
    Central finite differences of J(theta), one coordinate at a time.

    Direct parameters are perturbed as raw probabilities, so every entry must
    be at least h away from the simplex boundary.

    Args:
        mdp: MDP
        policy: Policy
        h: Step size

    Returns:
        Gradient estimate shaped like policy.theta

    Raises:
        ValueError: If h is not positive or a direct policy is within h of the boundary
    """
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    if policy.variant == PolicyVariant.DIRECT and float(policy.theta.min()) < h:
        raise ValueError(
            f"direct policy has an entry {float(policy.theta.min())!r} within h={h} of the simplex boundary"
        )

    flat = policy.theta.ravel()
    grad = np.zeros(flat.size)
    for k in range(flat.size):
        step = np.zeros(flat.size)
        step[k] = h
        values = []
        for sign in (1.0, -1.0):
            theta = (flat + sign * step).reshape(policy.theta.shape)
            if policy.variant == PolicyVariant.DIRECT:
                probs = theta
            else:
                probs = policy.with_theta(theta).action_probs()
            values.append(policy_value(mdp, probs))
        grad[k] = (values[0] - values[1]) / (2.0 * h)
    return grad.reshape(policy.theta.shape)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    return float(np.vdot(a, b) / norm) if norm > 0 else 0.0


def gradient_report(mdp: Mdp, policy: Policy, h: float = DEFAULT_FD_STEP) -> GradientReport:
    """
    Unbiased, biased and true gradients at one (mdp, policy) pair.

    The true gradient comes from central finite differences; direct policies
    on the simplex boundary fall back to the exact kappa * unbiased gradient.
    """
    bundle = evaluate(mdp, policy)
    unbiased = expectation_gradient(mdp, policy, discounted_distribution(mdp, policy), bundle)
    biased = expectation_gradient(mdp, policy, undiscounted_distribution(mdp, policy), bundle)

    try:
        true_grad = finite_difference_grad(mdp, policy, h)
        source = "finite_difference"
    except ValueError as e:
        logger.debug(f"Using exact gradient on '{mdp.name}': {e}")
        true_grad = bundle.kappa * unbiased
        source = "exact"

    norm_true = float(np.linalg.norm(true_grad))
    residual = float(np.linalg.norm(true_grad - bundle.kappa * unbiased)) / max(1.0, norm_true)
    return GradientReport(
        unbiased=unbiased,
        biased=biased,
        true_grad=true_grad,
        true_grad_source=source,
        k_theta=bundle.kappa,
        inner_product=float(np.vdot(unbiased, biased)),
        cos_biased_unbiased=_cosine(unbiased, biased),
        norm_unbiased=float(np.linalg.norm(unbiased)),
        norm_biased=float(np.linalg.norm(biased)),
        norm_true=norm_true,
        scale_residual=residual,
    )
