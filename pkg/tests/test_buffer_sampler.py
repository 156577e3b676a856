"""
Tests for trajectory buffer sampling.
"""

import numpy as np
import pytest

from src.buffer_sampler import convergence_curve, empirical_state_distribution, fill_buffer
from src.environments import build_car_rental, build_gridworld
from src.evaluation import discounted_distribution, tv_distance, undiscounted_distribution
from src.models import AssumptionViolation, Buffer, DistributionRole
from src.policy import deterministic_direct, uniform_direct, uniform_softmax
from tests.conftest import make_coin_flip_mdp, make_continuing_mdp, make_corridor_mdp


def _buffer(states):
    states = np.asarray(states, dtype=int)
    zeros = np.zeros(states.size, dtype=int)
    return Buffer(capacity=states.size, rng_seed=0, states=states, actions=zeros, rewards=zeros.astype(float),
                  next_states=zeros, episode_ids=zeros)


class TestFillBuffer:
    """Tests for buffer filling."""

    def test_exact_capacity(self):
        buffer = fill_buffer(make_corridor_mdp(), uniform_direct(4, 2), 257, seed=1)

        assert len(buffer) == 257
        assert buffer.capacity == 257
        assert len(buffer.to_frame()) == 257

    def test_coin_flip_episode_count(self):
        """Episodes last two steps on average when each step ends the episode with probability 1/2."""
        buffer = fill_buffer(make_coin_flip_mdp(), uniform_direct(2, 2), 10_000, seed=0)
        assert 4_800 <= buffer.n_episodes <= 5_200

    def test_absorbing_transitions_are_stored(self):
        mdp = make_corridor_mdp()
        buffer = fill_buffer(mdp, uniform_direct(4, 2), 500, seed=2)

        assert np.all(buffer.states != 3)
        ends = np.flatnonzero(np.diff(buffer.episode_ids))
        assert np.all(buffer.next_states[ends] == 3)

    def test_rewards_follow_the_reward_table(self):
        mdp = make_continuing_mdp()
        buffer = fill_buffer(mdp, uniform_softmax(2, 2), 200, seed=3)
        assert np.array_equal(buffer.rewards, mdp.reward[buffer.states, buffer.actions])

    def test_continuing_restarts(self):
        buffer = fill_buffer(make_continuing_mdp(), uniform_direct(2, 2), 35, seed=4, horizon_cap=10)
        assert np.bincount(buffer.episode_ids).tolist() == [10, 10, 10, 5]

    def test_deterministic_per_seed(self):
        mdp = build_gridworld(gamma=0.9)
        policy = uniform_softmax(15, 4)
        first = fill_buffer(mdp, policy, 300, seed=11)
        second = fill_buffer(mdp, policy, 300, seed=11)
        other = fill_buffer(mdp, policy, 300, seed=12)

        assert np.array_equal(first.states, second.states)
        assert np.array_equal(first.next_states, second.next_states)
        assert not np.array_equal(first.states, other.states)

    def test_smaller_buffer_is_a_prefix(self):
        mdp = make_corridor_mdp()
        small = fill_buffer(mdp, uniform_direct(4, 2), 50, seed=7)
        large = fill_buffer(mdp, uniform_direct(4, 2), 400, seed=7)

        assert np.array_equal(small.states, large.prefix(50).states)
        assert np.array_equal(small.episode_ids, large.prefix(50).episode_ids)

    def test_runaway_episode(self):
        mdp = make_corridor_mdp()
        with pytest.raises(AssumptionViolation, match="without absorption"):
            fill_buffer(mdp, deterministic_direct([0, 0, 0, 0], 2), 100, seed=0, max_episode_steps=20)

    def test_negative_capacity(self):
        with pytest.raises(ValueError, match="non-negative"):
            fill_buffer(make_corridor_mdp(), uniform_direct(4, 2), -1, seed=0)


class TestEmpiricalDistribution:
    """Tests for empirical state frequencies."""

    def test_frequencies(self):
        dist = empirical_state_distribution(_buffer([0, 1, 1, 2]), 3)

        assert dist.role == DistributionRole.EMPIRICAL
        assert dist.values.tolist() == [0.25, 0.5, 0.25]

    def test_empty_buffer(self):
        with pytest.raises(ValueError, match="empty buffer"):
            empirical_state_distribution(_buffer([]), 3)

    def test_state_out_of_range(self):
        with pytest.raises(ValueError, match="holds state 3"):
            empirical_state_distribution(_buffer([0, 3]), 2)

    def test_absorbing_source_state(self):
        with pytest.raises(ValueError, match="absorbing state 2"):
            empirical_state_distribution(_buffer([0, 2]), 3, episodic_z=2)


class TestConvergenceCurve:
    """Buffer frequencies approach the undiscounted distribution."""

    def test_gridworld_buffer_tracks_undiscounted_distribution(self):
        mdp = build_gridworld(gamma=0.3)
        curve = convergence_curve(mdp, uniform_softmax(15, 4), [1_000, 10_000, 100_000], seed=0)

        assert [point[0] for point in curve] == [1_000, 10_000, 100_000]
        _, tv_dpi, tv_dgamma = curve[-1]
        assert tv_dpi < 0.04
        assert tv_dpi < tv_dgamma

    @pytest.mark.parametrize("capacities", [[], [0, 10], [10, 10], [100, 10]])
    def test_invalid_capacities(self, capacities):
        with pytest.raises(ValueError, match="capacities must be"):
            convergence_curve(make_corridor_mdp(), uniform_direct(4, 2), capacities, seed=0)

    def test_gridworld_buffer_keeps_its_distance_to_discounted(self):
        """The gap between buffer and d_{pi,gamma} settles at TV(d_pi, d_{pi,gamma})."""
        mdp = build_gridworld(gamma=0.5)
        policy = uniform_softmax(15, 4)
        mismatch = tv_distance(undiscounted_distribution(mdp, policy), discounted_distribution(mdp, policy))

        _, _, tv_dgamma = convergence_curve(mdp, policy, [100_000], seed=1)[-1]

        assert abs(tv_dgamma - mismatch) <= 0.02

    @pytest.mark.slow
    def test_car_rental_buffer_tracks_stationary_distribution(self):
        mdp = build_car_rental(gamma=0.9)
        policy = uniform_softmax(mdp.n_states, mdp.n_actions)

        close = [convergence_curve(mdp, policy, [100_000], seed=seed)[-1][1] <= 0.05 for seed in (0, 1, 2)]

        assert sum(close) >= 2
