"""
Trajectory Buffer Sampling

Fills a transition buffer by rolling out a policy from d0, the way an
on-policy learner collects data, and measures how the empirical state
frequencies approach d_pi rather than d_{pi,gamma}.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.evaluation import discounted_distribution, tv_distance, undiscounted_distribution
from src.models import AssumptionViolation, Buffer, DistributionRole, Mdp, StateDistribution
from src.policy import Policy


logger = logging.getLogger(__name__)

HORIZON_CAP = 1_000
MAX_EPISODE_STEPS = 1_000_000


def _draw(cdf: np.ndarray, rng: np.random.Generator) -> int:
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), cdf.size - 1)


def fill_buffer(mdp: Mdp, policy: Policy, capacity: int, seed: int,
                horizon_cap: int = HORIZON_CAP, max_episode_steps: int = MAX_EPISODE_STEPS) -> Buffer:
    """
    Collect exactly ``capacity`` transitions (s, a, r, s').

    Episodes start from d0. Episodic rollouts stop at the absorbing state
    after storing the transition that reaches it; continuing rollouts are
    restarted from d0 every ``horizon_cap`` steps. The last episode is cut
    when the buffer is full.

    Args:
        mdp: MDP
        policy: Behavior policy
        capacity: Number of transitions to store
        seed: Seed of the Philox generator
        horizon_cap: Restart period for continuing MDPs
        max_episode_steps: Longest episodic rollout tolerated

    Returns:
        Buffer of length capacity

    Raises:
        AssumptionViolation: If an episode runs past max_episode_steps
    """
    if capacity < 0:
        raise ValueError(f"capacity must be non-negative, got {capacity}")
    rng = np.random.Generator(np.random.Philox(seed))
    d0_cdf = np.cumsum(mdp.d0)
    policy_cdf = np.cumsum(policy.action_probs(), axis=1)
    transition_cdf = np.cumsum(mdp.transition, axis=2)
    z = mdp.absorbing_index if mdp.is_episodic else None

    states = np.empty(capacity, dtype=int)
    actions = np.empty(capacity, dtype=int)
    rewards = np.empty(capacity, dtype=float)
    next_states = np.empty(capacity, dtype=int)
    episode_ids = np.empty(capacity, dtype=int)

    size, episode = 0, 0
    while size < capacity:
        s = _draw(d0_cdf, rng)
        steps = 0
        while size < capacity:
            a = _draw(policy_cdf[s], rng)
            s_next = _draw(transition_cdf[s, a], rng)
            states[size], actions[size], rewards[size] = s, a, mdp.reward[s, a]
            next_states[size], episode_ids[size] = s_next, episode
            size += 1
            steps += 1
            if z is not None and s_next == z:
                break
            if z is None and steps >= horizon_cap:
                break
            if steps >= max_episode_steps:
                raise AssumptionViolation(
                    f"episode {episode} on '{mdp.name}' ran {steps} steps without absorption",
                    assumption="absorption",
                )
            s = s_next
        episode += 1

    logger.debug(f"Filled buffer of {capacity} transitions over {episode} episode(s) on '{mdp.name}' (seed {seed})")
    return Buffer(
        capacity=capacity,
        rng_seed=seed,
        states=states,
        actions=actions,
        rewards=rewards,
        next_states=next_states,
        episode_ids=episode_ids,
    )


def empirical_state_distribution(buffer: Buffer, n_states: int,
                                 episodic_z: Optional[int] = None) -> StateDistribution:
    """Normalized frequencies of the source states S_t stored in the buffer."""
    if len(buffer) == 0:
        raise ValueError("cannot estimate a distribution from an empty buffer")
    counts = np.bincount(buffer.states, minlength=n_states).astype(float)
    if counts.size != n_states:
        raise ValueError(f"buffer holds state {counts.size - 1} but the MDP has {n_states} states")
    if episodic_z is not None and counts[episodic_z] > 0:
        raise ValueError(f"buffer stores transitions out of absorbing state {episodic_z}")
    return StateDistribution(values=counts / counts.sum(), role=DistributionRole.EMPIRICAL)


def convergence_curve(mdp: Mdp, policy: Policy, capacities: Sequence[int], seed: int,
                      horizon_cap: int = HORIZON_CAP) -> List[Tuple[int, float, float]]:
    """
    TV distance of the buffer frequencies to d_pi and to d_{pi,gamma} at growing capacities.

    One buffer is filled at the largest capacity and every smaller capacity
    uses its prefix, so the curve follows a single sampling stream.

    Returns:
        [(capacity, tv_to_dpi, tv_to_dgamma), ...]
    """
    capacities = list(capacities)
    if not capacities or any(c <= 0 for c in capacities):
        raise ValueError(f"capacities must be positive, got {capacities}")
    if any(b <= a for a, b in zip(capacities, capacities[1:])):
        raise ValueError(f"capacities must be strictly increasing, got {capacities}")

    d_pi = undiscounted_distribution(mdp, policy)
    d_gamma = discounted_distribution(mdp, policy)
    buffer = fill_buffer(mdp, policy, capacities[-1], seed, horizon_cap=horizon_cap)
    z = mdp.absorbing_index if mdp.is_episodic else None

    curve = []
    for capacity in capacities:
        empirical = empirical_state_distribution(buffer.prefix(capacity), mdp.n_states, z)
        curve.append((capacity, tv_distance(empirical, d_pi), tv_distance(empirical, d_gamma)))
        logger.debug(f"capacity {capacity}: TV to d_pi {curve[-1][1]:.4g}, TV to d_gamma {curve[-1][2]:.4g}")
    return curve
