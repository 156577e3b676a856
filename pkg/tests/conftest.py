"""
Shared fixtures: small hand-built MDPs with known answers.
"""

import numpy as np
import pytest

from src.models import Mdp, MdpKind


def make_continuing_mdp(gamma: float = 0.9) -> Mdp:
    """Two states, two actions; action 0 stays put with prob 0.8, action 1 switches with prob 0.8."""
    transition = np.array([
        [[0.8, 0.2], [0.2, 0.8]],
        [[0.2, 0.8], [0.8, 0.2]],
    ])
    reward = np.array([[1.0, 0.0], [0.0, 2.0]])
    return Mdp(
        n_states=2,
        n_actions=2,
        transition=transition,
        reward=reward,
        gamma=gamma,
        d0=[0.5, 0.5],
        kind=MdpKind.CONTINUING,
        name="two_state",
    )


def make_coin_flip_mdp(gamma: float = 0.9) -> Mdp:
    """One transient state that terminates with probability 1/2 under every action."""
    transition = np.array([
        [[0.5, 0.5], [0.5, 0.5]],
        [[0.0, 1.0], [0.0, 1.0]],
    ])
    reward = np.array([[1.0, -1.0], [0.0, 0.0]])
    return Mdp(
        n_states=2,
        n_actions=2,
        transition=transition,
        reward=reward,
        gamma=gamma,
        d0=[1.0, 0.0],
        kind=MdpKind.EPISODIC,
        absorbing_index=1,
        name="coin_flip",
    )


def make_corridor_mdp(gamma: float = 0.9) -> Mdp:
    """
    Episodic corridor 0 - 1 - 2 - z. Action 1 moves right, action 0 moves left
    (state 0 stays). Every step costs 1.
    """
    n, z = 4, 3
    transition = np.zeros((n, 2, n))
    for s in range(3):
        transition[s, 0, max(s - 1, 0)] = 1.0
        transition[s, 1, s + 1] = 1.0
    transition[z, :, z] = 1.0
    reward = np.full((n, 2), -1.0)
    reward[z] = 0.0
    return Mdp(
        n_states=n,
        n_actions=2,
        transition=transition,
        reward=reward,
        gamma=gamma,
        d0=[1 / 3, 1 / 3, 1 / 3, 0.0],
        kind=MdpKind.EPISODIC,
        absorbing_index=z,
        name="corridor",
    )


@pytest.fixture
def continuing_mdp() -> Mdp:
    return make_continuing_mdp()


@pytest.fixture
def coin_flip_mdp() -> Mdp:
    return make_coin_flip_mdp()


@pytest.fixture
def corridor_mdp() -> Mdp:
    return make_corridor_mdp()
