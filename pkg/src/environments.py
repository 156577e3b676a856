"""
Benchmark Environments

Builders for the two-location car rental problem, the windy gridworld and
seeded random MDPs. Every builder returns a validated ``Mdp`` with an exact
transition tensor.
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from src.config import CarRentalConfig, EnvironmentConfig, GridworldConfig
from src.mdp import ensure_valid
from src.models import Mdp, MdpKind, StateDistribution


logger = logging.getLogger(__name__)

# Gridworld action order.
UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
GRID_ACTIONS = ("up", "down", "left", "right")
_OFFSETS = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

InitialDistribution = Optional[Union[StateDistribution, np.ndarray, Sequence[float]]]


def uniform_transient_d0(n_states: int, absorbing_index: Optional[int] = None) -> np.ndarray:
    """Uniform distribution over every state except the absorbing one."""
    d0 = np.ones(n_states)
    if absorbing_index is not None:
        d0[absorbing_index] = 0.0
    return d0 / d0.sum()


def _resolve_d0(d0: InitialDistribution, n_states: int, absorbing_index: Optional[int]) -> np.ndarray:
    if d0 is None:
        return uniform_transient_d0(n_states, absorbing_index)
    values = d0.values if isinstance(d0, StateDistribution) else np.asarray(d0, dtype=float)
    if values.shape != (n_states,):
        raise ValueError(f"d0 has {values.size} entries, environment has {n_states} states")
    return values


def truncated_poisson(rate: float, truncation: int) -> np.ndarray:
    """
    Poisson pmf on 0..truncation with the tail folded into the last entry.

    Args:
        rate: Poisson mean (0 gives a point mass at 0)
        truncation: Largest enumerated count

    Returns:
        Probability vector of length truncation + 1 that sums to 1
    """
    if rate == 0:
        pmf = np.zeros(truncation + 1)
        pmf[0] = 1.0
        return pmf
    pmf = stats.poisson.pmf(np.arange(truncation + 1), rate)
    pmf[-1] = 1.0 - pmf[:-1].sum()
    return pmf


def _location_dynamics(cfg: CarRentalConfig, request_rate: float, return_rate: float) -> Tuple[np.ndarray, np.ndarray]:
    """Overnight-to-next-evening transition and expected rentals for one location."""
    cap, trunc = cfg.capacity, cfg.poisson_truncation
    requests = truncated_poisson(request_rate, trunc)
    returns = truncated_poisson(return_rate, trunc)
    counts = np.arange(trunc + 1)

    transition = np.zeros((cap + 1, cap + 1))
    expected_rentals = np.zeros(cap + 1)
    for cars in range(cap + 1):
        rented = np.minimum(counts, cars)
        expected_rentals[cars] = float(requests @ rented)
        remaining = np.zeros(cap + 1)
        np.add.at(remaining, cars - rented, requests)
        for left, p_left in enumerate(remaining):
            if p_left == 0.0:
                continue
            # Returns arrive after rentals and are clipped to capacity.
            np.add.at(transition[cars], np.minimum(left + counts, cap), p_left * returns)
    return transition, expected_rentals


def car_rental_state(cfg: CarRentalConfig, cars_first: int, cars_second: int) -> int:
    """State index of (cars at location 1, cars at location 2)."""
    return cars_first * (cfg.capacity + 1) + cars_second


def car_rental_action(cfg: CarRentalConfig, net_move: int) -> int:
    """Action index of a net move (positive moves cars from location 1 to location 2)."""
    if abs(net_move) > cfg.max_move:
        raise ValueError(f"net move {net_move} exceeds max_move={cfg.max_move}")
    return net_move + cfg.max_move


def apply_move(cfg: CarRentalConfig, cars_first: int, cars_second: int, net_move: int) -> Tuple[int, int, int, int]:
    """
    Overnight move with clipping to the cars actually available.

    Returns:
        (cars_first, cars_second, moved, excess) after the move
    """
    available = cars_first if net_move > 0 else cars_second
    moved = min(abs(net_move), available)
    excess = abs(net_move) - moved
    if net_move > 0:
        return cars_first - moved, min(cars_second + moved, cfg.capacity), moved, excess
    return min(cars_first + moved, cfg.capacity), cars_second - moved, moved, excess


def build_car_rental(cfg: Optional[CarRentalConfig] = None, gamma: float = 0.9, d0: InitialDistribution = None) -> Mdp:
    """
    Build the continuing two-location car rental MDP.

    States are (c1, c2) in {0..capacity}^2 with index c1*(capacity+1)+c2;
    actions are net moves -max_move..+max_move with index move+max_move.
    Each day cars are moved, then requests are served at each location,
    then returns arrive and are clipped to capacity.

    Args:
        cfg: Car rental parameters (defaults when None)
        gamma: Discount factor
        d0: Initial distribution over all states (uniform when None)

    Returns:
        Continuing Mdp

    Raises:
        ValueError: If d0 has the wrong length
        ValidationFailure: If the assembled model violates an MDP invariant
    """
    cfg = cfg or CarRentalConfig()
    cap = cfg.capacity
    n_states, n_actions = cfg.n_states, cfg.n_actions

    first_transition, first_rentals = _location_dynamics(cfg, cfg.request_rates[0], cfg.return_rates[0])
    second_transition, second_rentals = _location_dynamics(cfg, cfg.request_rates[1], cfg.return_rates[1])

    transition = np.zeros((n_states, n_actions, n_states))
    reward = np.zeros((n_states, n_actions))
    for c1 in range(cap + 1):
        for c2 in range(cap + 1):
            s = car_rental_state(cfg, c1, c2)
            for net_move in range(-cfg.max_move, cfg.max_move + 1):
                a = car_rental_action(cfg, net_move)
                m1, m2, moved, excess = apply_move(cfg, c1, c2, net_move)
                transition[s, a] = np.outer(first_transition[m1], second_transition[m2]).ravel()
                reward[s, a] = (
                    cfg.rental_reward * (first_rentals[m1] + second_rentals[m2])
                    - cfg.move_cost * moved
                    - cfg.excess_move_penalty * excess
                )

    mdp = Mdp(
        n_states=n_states,
        n_actions=n_actions,
        transition=transition,
        reward=reward,
        gamma=gamma,
        d0=_resolve_d0(d0, n_states, None),
        kind=MdpKind.CONTINUING,
        name="car_rental",
    )
    logger.info(f"Built car rental MDP: {n_states} states, {n_actions} actions, gamma={gamma}")
    return ensure_valid(mdp)


def gridworld_cell_states(cfg: GridworldConfig) -> List[int]:
    """
    State index of every grid cell.

    Non-terminal cells keep their row-major order as states 0..k-1 and every
    terminal cell maps to the merged absorbing state k.
    """
    terminals = set(cfg.terminal_cells)
    absorbing = cfg.n_cells - len(terminals)
    mapping, next_state = [], 0
    for cell in range(cfg.n_cells):
        if cell in terminals:
            mapping.append(absorbing)
        else:
            mapping.append(next_state)
            next_state += 1
    return mapping


def gridworld_state_cells(cfg: GridworldConfig) -> List[int]:
    """Cell index of every transient state, in state order."""
    terminals = set(cfg.terminal_cells)
    return [cell for cell in range(cfg.n_cells) if cell not in terminals]


def grid_step(cfg: GridworldConfig, cell: int, action: int) -> int:
    """Cell reached by a deterministic move; moves off the grid stay in place."""
    row, col = divmod(cell, cfg.width)
    d_row, d_col = _OFFSETS[action]
    new_row, new_col = row + d_row, col + d_col
    if not (0 <= new_row < cfg.height and 0 <= new_col < cfg.width):
        return cell
    return new_row * cfg.width + new_col


def build_gridworld(cfg: Optional[GridworldConfig] = None, gamma: float = 0.9, d0: InitialDistribution = None) -> Mdp:
    """
    Build the episodic windy gridworld.

    The intended move happens with probability 1-2*eps; the wind pushes the
    agent right with probability eps and down with probability eps. All
    terminal cells are merged into one absorbing state placed last.

    Args:
        cfg: Gridworld parameters (defaults when None)
        gamma: Discount factor
        d0: Initial distribution over states (uniform over transient states when None)

    Returns:
        Episodic Mdp
    """
    cfg = cfg or GridworldConfig()
    cell_states = gridworld_cell_states(cfg)
    transient_cells = gridworld_state_cells(cfg)
    n_states = len(transient_cells) + 1
    z = n_states - 1
    eps = cfg.wind_epsilon

    transition = np.zeros((n_states, len(GRID_ACTIONS), n_states))
    reward = np.zeros((n_states, len(GRID_ACTIONS)))
    for s, cell in enumerate(transient_cells):
        for a in range(len(GRID_ACTIONS)):
            for move, prob in ((a, 1.0 - 2.0 * eps), (RIGHT, eps), (DOWN, eps)):
                if prob > 0.0:
                    transition[s, a, cell_states[grid_step(cfg, cell, move)]] += prob
            reward[s, a] = cfg.step_reward
    transition[z, :, z] = 1.0

    mdp = Mdp(
        n_states=n_states,
        n_actions=len(GRID_ACTIONS),
        transition=transition,
        reward=reward,
        gamma=gamma,
        d0=_resolve_d0(d0, n_states, z),
        kind=MdpKind.EPISODIC,
        absorbing_index=z,
        name="gridworld",
    )
    logger.info(
        f"Built {cfg.width}x{cfg.height} gridworld: {n_states - 1} transient states, "
        f"eps={eps}, gamma={gamma}"
    )
    return ensure_valid(mdp)


def random_mdp(n_states: int, n_actions: int, kind: MdpKind = MdpKind.CONTINUING,
               gamma: float = 0.9, seed: int = 0) -> Mdp:
    """
    Seeded random MDP with strictly positive transition rows.

    Episodic instances use z = n_states - 1 and route at least 5% of every
    transient row to z.
    """
    if n_states < 2:
        raise ValueError(f"random_mdp needs at least 2 states, got {n_states}")
    rng = np.random.Generator(np.random.Philox(seed))

    raw = rng.uniform(0.01, 1.0, size=(n_states, n_actions, n_states))
    transition = raw / raw.sum(axis=2, keepdims=True)
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    d0 = rng.uniform(0.01, 1.0, size=n_states)

    absorbing_index = None
    if kind == MdpKind.EPISODIC:
        z = absorbing_index = n_states - 1
        transition *= 0.95
        transition[:, :, z] += 0.05
        transition[z] = 0.0
        transition[z, :, z] = 1.0
        reward[z] = 0.0
        d0[z] = 0.0

    return Mdp(
        n_states=n_states,
        n_actions=n_actions,
        transition=transition,
        reward=reward,
        gamma=gamma,
        d0=d0 / d0.sum(),
        kind=kind,
        absorbing_index=absorbing_index,
        name=f"random_{kind.value}_{seed}",
    )


def build_environment(env: EnvironmentConfig, gamma: float) -> Mdp:
    """Build the MDP an experiment configuration describes."""
    if env.kind == "car_rental":
        return build_car_rental(env.car_rental, gamma, env.d0)
    if env.kind == "gridworld":
        return build_gridworld(env.gridworld, gamma, env.d0)
    spec = env.random_mdp
    mdp = random_mdp(spec.n_states, spec.n_actions, spec.kind, gamma, spec.seed)
    if env.d0 is not None:
        mdp = Mdp(**{**dict(mdp), "d0": _resolve_d0(env.d0, mdp.n_states, mdp.absorbing_index)})
        ensure_valid(mdp)
    return mdp
