"""
Exact Policy Evaluation

Dense LU solves for V, Q, A, J, discounted visitation and both state
distributions (discounted d_{pi,gamma} and undiscounted d_pi).
"""

import logging
from typing import Tuple, Union

import numpy as np
from scipy import linalg

from src.mdp import chain_from_probs, embed_transient, is_irreducible, reaches_absorbing, transient_restriction
from src.models import AssumptionViolation, DistributionRole, Mdp, StateDistribution, ValueBundle
from src.policy import Policy


logger = logging.getLogger(__name__)

ROUNDOFF_TOL = 1e-14

DistributionLike = Union[StateDistribution, np.ndarray]


def q_from_v(mdp: Mdp, v: np.ndarray) -> np.ndarray:
    """Q(s,a) = R(s,a) + gamma * sum_s' p(s'|s,a) V(s')."""
    return mdp.reward + mdp.gamma * np.einsum("sat,t->sa", mdp.transition, v)


def _factor(mdp: Mdp, chain: np.ndarray):
    system = np.eye(mdp.n_states) - mdp.gamma * chain
    return linalg.lu_factor(system, check_finite=True)


def _values(mdp: Mdp, probs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """V and the unnormalized discounted visitation mu for an action-probability table."""
    chain = chain_from_probs(mdp, probs)
    lu = _factor(mdp, chain)
    v = linalg.lu_solve(lu, np.einsum("sa,sa->s", probs, mdp.reward))
    mu = linalg.lu_solve(lu, mdp.d0, trans=1)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(mu))):
        raise ArithmeticError(f"singular evaluation system on '{mdp.name}' at gamma={mdp.gamma}")
    if mdp.is_episodic:
        v[mdp.absorbing_index] = 0.0
    return v, mu


def evaluate(mdp: Mdp, policy: Policy) -> ValueBundle:
    """
    Evaluate a policy exactly.

    Solves (I - gamma P^pi) V = r^pi by LU and reuses the factorization for
    mu = d0^T (I - gamma P^pi)^{-1}.

    Args:
        mdp: MDP
        policy: Policy with matching dimensions

    Returns:
        ValueBundle with V, Q, A, J, kappa and mu(z)
    """
    probs = policy.action_probs()
    v, mu = _values(mdp, probs)
    q = q_from_v(mdp, v)
    mu_z = 0.0
    kappa = 1.0 / (1.0 - mdp.gamma)
    if mdp.is_episodic:
        z = mdp.absorbing_index
        q[z] = 0.0
        mu_z = float(mu[z])
        kappa -= mu_z
    return ValueBundle(
        v=v,
        q=q,
        adv=q - v[:, None],
        j=float(mdp.d0 @ v),
        kappa=kappa,
        mu_z=mu_z,
        mu=mu,
    )


def policy_value(mdp: Mdp, probs: np.ndarray) -> float:
    """
    J for a raw action-probability table.

    Rows need not lie on the simplex, which gives the smooth extension of J
    used by finite differences on direct parameters.
    """
    v, _ = _values(mdp, np.asarray(probs, dtype=float))
    return float(mdp.d0 @ v)


def discounted_visitation(mdp: Mdp, policy: Policy) -> np.ndarray:
    """Unnormalized discounted visitation mu(s) = sum_t gamma^t P(s_t = s)."""
    _, mu = _values(mdp, policy.action_probs())
    return mu


def _as_distribution(values: np.ndarray, role: DistributionRole, mdp: Mdp) -> StateDistribution:
    values = np.array(values, dtype=float)
    most_negative = float(values.min())
    if most_negative < -ROUNDOFF_TOL:
        logger.warning(f"{role.value} distribution on '{mdp.name}' has entry {most_negative:.3e}; clamping to 0")
    values = np.maximum(values, 0.0)
    values /= values.sum()
    if mdp.is_episodic:
        values[mdp.absorbing_index] = 0.0
    return StateDistribution(values=values, role=role)


def discounted_distribution(mdp: Mdp, policy: Policy) -> StateDistribution:
    """
    Discounted state distribution d_{pi,gamma}.

    Continuing: (1 - gamma) d0^T (I - gamma P^pi)^{-1}.
    Episodic: the transient solve d~0^T (I - gamma P~^pi)^{-1} normalized to 1,
    with 0 at the absorbing state.
    """
    chain = chain_from_probs(mdp, policy.action_probs())
    if not mdp.is_episodic:
        mu = linalg.lu_solve(_factor(mdp, chain), mdp.d0, trans=1)
        return _as_distribution((1.0 - mdp.gamma) * mu, DistributionRole.DISCOUNTED, mdp)

    sub = transient_restriction(mdp, chain)
    counts = linalg.solve(np.eye(sub.shape[0]) - mdp.gamma * sub, transient_restriction(mdp, mdp.d0), transposed=True)
    return _as_distribution(embed_transient(mdp, counts / counts.sum()), DistributionRole.DISCOUNTED, mdp)


def visitation_distribution(mdp: Mdp, bundle: ValueBundle) -> StateDistribution:
    """d_{pi,gamma} from the visitation counts of an already evaluated policy."""
    mu = np.array(bundle.mu, dtype=float)
    if mdp.is_episodic:
        mu[mdp.absorbing_index] = 0.0
    return _as_distribution(mu, DistributionRole.DISCOUNTED, mdp)


def undiscounted_distribution(mdp: Mdp, policy: Policy) -> StateDistribution:
    """
    Undiscounted state distribution d_pi.

    Continuing: the stationary distribution of P^pi, from the null space of
    P^pi^T - I with a sum-to-one row. Episodic: normalized cumulative visitation
    counts d~0^T (I - P~^pi)^{-1}.

    Raises:
        AssumptionViolation: If the continuing chain is reducible or some
            transient state cannot reach the absorbing state
    """
    chain = chain_from_probs(mdp, policy.action_probs())

    if not mdp.is_episodic:
        if not is_irreducible(chain):
            raise AssumptionViolation(
                f"induced chain on '{mdp.name}' is reducible; no unique stationary distribution",
                assumption="ergodicity",
            )
        system = chain.T - np.eye(mdp.n_states)
        system[-1] = 1.0
        rhs = np.zeros(mdp.n_states)
        rhs[-1] = 1.0
        return _as_distribution(linalg.solve(system, rhs), DistributionRole.UNDISCOUNTED, mdp)

    reachable = reaches_absorbing(mdp, chain)
    if not reachable.all():
        stuck = np.flatnonzero(~reachable).tolist()
        raise AssumptionViolation(
            f"absorbing state of '{mdp.name}' is unreachable from states {stuck}",
            assumption="absorption",
        )
    sub = transient_restriction(mdp, chain)
    counts = linalg.solve(np.eye(sub.shape[0]) - sub, transient_restriction(mdp, mdp.d0), transposed=True)
    return _as_distribution(embed_transient(mdp, counts / counts.sum()), DistributionRole.UNDISCOUNTED, mdp)


def distribution_values(dist: DistributionLike) -> np.ndarray:
    return dist.values if isinstance(dist, StateDistribution) else np.asarray(dist, dtype=float)


def tv_distance(a: DistributionLike, b: DistributionLike) -> float:
    """Total variation distance, half the L1 distance."""
    left, right = distribution_values(a), distribution_values(b)
    if left.shape != right.shape:
        raise ValueError(f"distributions have lengths {left.size} and {right.size}")
    return min(1.0, 0.5 * float(np.abs(left - right).sum()))


def performance_difference(mdp: Mdp, policy: Policy, other: Policy) -> Tuple[float, float]:
    """
    Both sides of J(pi) - J(pi') = kappa_pi * E_{s~d_{pi,gamma}, a~pi}[A^{pi'}(s,a)].

    Returns:
        (lhs, rhs)
    """
    own = evaluate(mdp, policy)
    reference = evaluate(mdp, other)
    d_gamma = discounted_distribution(mdp, policy).values
    expected_adv = np.einsum("s,sa,sa->", d_gamma, policy.action_probs(), reference.adv)
    return own.j - reference.j, own.kappa * float(expected_adv)
