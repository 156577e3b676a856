"""
Policy Parameterizations

Tabular direct and softmax policies, low-dimensional custom policies with an
explicit Jacobian, Euclidean projection onto the probability simplex, and the
JSON checkpoint format.
"""

import json
import logging
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import expit, softmax

from src.models import DISTRIBUTION_TOL, PolicyVariant, ValidationFailure


logger = logging.getLogger(__name__)

JACOBIAN_CHECK_STEP = 1e-6
JACOBIAN_CHECK_RTOL = 1e-5

ProbFn = Callable[[np.ndarray], np.ndarray]


def _read_only(value) -> np.ndarray:
    array = np.array(value, dtype=float)
    array.setflags(write=False)
    return array


def _central_jacobian(prob_fn: ProbFn, theta: np.ndarray, h: float) -> np.ndarray:
    flat = theta.ravel()
    columns = []
    for k in range(flat.size):
        step = np.zeros_like(flat)
        step[k] = h
        plus = prob_fn((flat + step).reshape(theta.shape))
        minus = prob_fn((flat - step).reshape(theta.shape))
        columns.append((plus - minus) / (2.0 * h))
    return np.stack(columns, axis=-1)


class Policy(BaseModel):
    """
    Stationary stochastic policy pi_theta(a|s).

    Direct policies store the action probabilities themselves, softmax
    policies a logit table, and custom policies a parameter vector together
    with the maps theta -> pi and theta -> d pi / d theta.
    """

    variant: PolicyVariant = Field(..., description="Parameterization")
    theta: np.ndarray = Field(..., description="Parameters")
    n_states: int = Field(..., ge=1)
    n_actions: int = Field(..., ge=1)
    prob_fn: Optional[ProbFn] = Field(None, description="Custom theta -> pi map, shape (S, A)")
    jacobian_fn: Optional[ProbFn] = Field(None, description="Custom theta -> d pi/d theta, shape (S, A, K)")
    family: Optional[str] = Field(None, description="Registered custom family, used for checkpoints")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("theta", mode="before")
    @classmethod
    def coerce_theta(cls, v):
        return _read_only(v)

    @model_validator(mode="after")
    def check_parameters(self) -> "Policy":
        table_shape = (self.n_states, self.n_actions)
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta has non-finite entries")

        if self.variant == PolicyVariant.DIRECT:
            if self.theta.shape != table_shape:
                raise ValueError(f"direct theta has shape {self.theta.shape}, expected {table_shape}")
            if np.any(self.theta < 0):
                s, a = np.argwhere(self.theta < 0)[0]
                raise ValueError(f"direct theta is negative at (s={s}, a={a})")
            sums = self.theta.sum(axis=1)
            bad = np.flatnonzero(np.abs(sums - 1.0) > DISTRIBUTION_TOL)
            if bad.size:
                raise ValueError(f"direct theta row {bad[0]} sums to {sums[bad[0]]!r}")

        elif self.variant == PolicyVariant.SOFTMAX:
            if self.theta.shape != table_shape:
                raise ValueError(f"softmax theta has shape {self.theta.shape}, expected {table_shape}")

        else:
            if self.prob_fn is None or self.jacobian_fn is None:
                raise ValueError("custom policies need prob_fn and jacobian_fn")
            probs = np.asarray(self.prob_fn(self.theta), dtype=float)
            if probs.shape != table_shape:
                raise ValueError(f"custom prob_fn returned shape {probs.shape}, expected {table_shape}")
            if np.any(np.abs(probs.sum(axis=1) - 1.0) > DISTRIBUTION_TOL):
                raise ValueError("custom prob_fn rows do not sum to 1")
            self._verify_custom_jacobian()
        return self

    def _verify_custom_jacobian(self) -> None:
        analytic = np.asarray(self.jacobian_fn(self.theta), dtype=float)
        expected_shape = (self.n_states, self.n_actions, self.theta.size)
        if analytic.shape != expected_shape:
            raise ValueError(f"custom jacobian_fn returned shape {analytic.shape}, expected {expected_shape}")
        numeric = _central_jacobian(self.prob_fn, self.theta, JACOBIAN_CHECK_STEP)
        mismatch = float(np.max(np.abs(analytic - numeric))) / max(1.0, float(np.max(np.abs(numeric))))
        if mismatch > JACOBIAN_CHECK_RTOL:
            raise ValueError(
                f"custom jacobian disagrees with central differences (relative mismatch {mismatch:.3e})"
            )

    @property
    def n_params(self) -> int:
        return int(self.theta.size)

    def action_probs(self) -> np.ndarray:
        """Row-stochastic matrix pi(a|s) of shape (n_states, n_actions)."""
        if self.variant == PolicyVariant.DIRECT:
            return np.array(self.theta)
        if self.variant == PolicyVariant.SOFTMAX:
            return softmax(self.theta, axis=1)
        return np.asarray(self.prob_fn(self.theta), dtype=float)

    def jacobian(self) -> np.ndarray:
        """d pi(a|s) / d theta_k with shape (n_states, n_actions, n_params)."""
        S, A = self.n_states, self.n_actions
        if self.variant == PolicyVariant.DIRECT:
            return np.eye(S * A).reshape(S, A, S * A)
        if self.variant == PolicyVariant.SOFTMAX:
            probs = self.action_probs()
            jac = np.zeros((S, A, S, A))
            for s in range(S):
                row = probs[s]
                jac[s, :, s, :] = np.diag(row) - np.outer(row, row)
            return jac.reshape(S, A, S * A)
        return np.asarray(self.jacobian_fn(self.theta), dtype=float)

    def with_theta(self, theta: np.ndarray) -> "Policy":
        """Same parameterization at new parameters."""
        theta = np.asarray(theta, dtype=float).reshape(self.theta.shape)
        if self.variant == PolicyVariant.CUSTOM:
            return self.model_copy(update={"theta": _read_only(theta)})
        return Policy(
            variant=self.variant,
            theta=theta,
            n_states=self.n_states,
            n_actions=self.n_actions,
        )


def action_probs(policy: Policy) -> np.ndarray:
    """Row-stochastic action-probability matrix of a policy."""
    return policy.action_probs()


def policy_jacobian(policy: Policy) -> np.ndarray:
    """Jacobian of pi(a|s) with respect to the flattened parameters."""
    return policy.jacobian()


def project_simplex(row: np.ndarray) -> np.ndarray:
    """
    Euclidean projection of a vector onto the probability simplex.

    Uses the sort-and-threshold rule: with u sorted in decreasing order and
    rho the last index where u_rho > (sum_{j<=rho} u_j - 1)/(rho+1), the
    projection is max(x - tau, 0) with tau = (sum_{j<=rho} u_j - 1)/(rho+1).

    Args:
        row: Finite vector

    Returns:
        Closest point of the simplex
    """
    x = np.asarray(row, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot project a vector with non-finite entries")
    u = np.sort(x)[::-1]
    cumulative = np.cumsum(u) - 1.0
    ranks = np.arange(1, x.size + 1)
    rho = np.flatnonzero(u - cumulative / ranks > 0)[-1]
    tau = cumulative[rho] / (rho + 1)
    return np.maximum(x - tau, 0.0)


def project_rows(matrix: np.ndarray) -> np.ndarray:
    """Project every row of a matrix onto the simplex."""
    return np.vstack([project_simplex(row) for row in np.asarray(matrix, dtype=float)])


def uniform_direct(n_states: int, n_actions: int) -> Policy:
    """Direct policy choosing every action with equal probability."""
    return Policy(
        variant=PolicyVariant.DIRECT,
        theta=np.full((n_states, n_actions), 1.0 / n_actions),
        n_states=n_states,
        n_actions=n_actions,
    )


def uniform_softmax(n_states: int, n_actions: int) -> Policy:
    """Softmax policy with all logits at zero."""
    return Policy(
        variant=PolicyVariant.SOFTMAX,
        theta=np.zeros((n_states, n_actions)),
        n_states=n_states,
        n_actions=n_actions,
    )


def random_softmax(n_states: int, n_actions: int, seed: int, scale: float = 1.0) -> Policy:
    """Softmax policy with logits drawn from N(0, scale^2)."""
    rng = np.random.Generator(np.random.Philox(seed))
    return Policy(
        variant=PolicyVariant.SOFTMAX,
        theta=scale * rng.standard_normal((n_states, n_actions)),
        n_states=n_states,
        n_actions=n_actions,
    )


def direct_from_probs(probs: np.ndarray) -> Policy:
    """Direct policy whose parameters are the given action probabilities."""
    probs = np.asarray(probs, dtype=float)
    return Policy(variant=PolicyVariant.DIRECT, theta=probs, n_states=probs.shape[0], n_actions=probs.shape[1])


def to_direct(policy: Policy) -> Policy:
    """Direct policy with the same action probabilities."""
    if policy.variant == PolicyVariant.DIRECT:
        return policy
    return direct_from_probs(project_rows(policy.action_probs()))


def deterministic_direct(actions: Sequence[int], n_actions: int) -> Policy:
    """Direct policy taking actions[s] in state s."""
    actions = np.asarray(actions, dtype=int)
    theta = np.zeros((actions.size, n_actions))
    theta[np.arange(actions.size), actions] = 1.0
    return direct_from_probs(theta)


def _diagonal_wind_probs(n_states: int) -> ProbFn:
    def prob_fn(theta: np.ndarray) -> np.ndarray:
        high = 0.5 * expit(theta[0])
        low = 0.5 * expit(-theta[0])
        # (up, down, left, right)
        return np.tile([high, low, low, high], (n_states, 1))
    return prob_fn


def _diagonal_wind_jacobian(n_states: int) -> ProbFn:
    def jacobian_fn(theta: np.ndarray) -> np.ndarray:
        slope = 0.5 * expit(theta[0]) * expit(-theta[0])
        return np.tile([slope, -slope, -slope, slope], (n_states, 1))[:, :, None]
    return jacobian_fn


def diagonal_wind_policy(n_states: int, theta: float = 0.0) -> Policy:
    """
    One-parameter gridworld policy.

    pi(up|s) = pi(right|s) = e^theta / (2(1 + e^theta)) and
    pi(down|s) = pi(left|s) = 1 / (2(1 + e^theta)) in every state.
    """
    return Policy(
        variant=PolicyVariant.CUSTOM,
        theta=np.array([theta], dtype=float),
        n_states=n_states,
        n_actions=4,
        prob_fn=_diagonal_wind_probs(n_states),
        jacobian_fn=_diagonal_wind_jacobian(n_states),
        family="diagonal_wind",
    )


CUSTOM_FAMILIES: Dict[str, Callable[[int, float], Policy]] = {
    "diagonal_wind": lambda n_states, theta: diagonal_wind_policy(n_states, theta),
}


def initial_policy(variant: PolicyVariant, n_states: int, n_actions: int, custom_theta: float = 0.0) -> Policy:
    """Uniform starting point of the tabular parameterizations; custom_theta for the diagonal-wind family."""
    if variant == PolicyVariant.DIRECT:
        return uniform_direct(n_states, n_actions)
    if variant == PolicyVariant.SOFTMAX:
        return uniform_softmax(n_states, n_actions)
    if n_actions != 4:
        raise ValueError(f"the diagonal wind family needs 4 actions, got {n_actions}")
    return diagonal_wind_policy(n_states, custom_theta)


def policy_to_dict(policy: Policy) -> dict:
    """Checkpoint representation of a policy."""
    data = {
        "variant": policy.variant.value,
        "theta": policy.theta.tolist(),
        "n_states": policy.n_states,
        "n_actions": policy.n_actions,
    }
    if policy.family is not None:
        data["family"] = policy.family
    return data


def policy_from_dict(data: dict) -> Policy:
    """
    Rebuild a policy from its checkpoint representation.

    Raises:
        ValidationFailure: If the document is malformed or names an unknown custom family
    """
    try:
        variant = PolicyVariant(data["variant"])
        if variant == PolicyVariant.CUSTOM:
            family = data.get("family")
            if family not in CUSTOM_FAMILIES:
                raise ValueError(f"unknown custom policy family {family!r}")
            theta = np.asarray(data["theta"], dtype=float).ravel()
            policy = CUSTOM_FAMILIES[family](data["n_states"], float(theta[0]))
            if policy.n_actions != data["n_actions"]:
                raise ValueError(f"family {family!r} has {policy.n_actions} actions, document says {data['n_actions']}")
            return policy
        return Policy(variant=variant, theta=data["theta"], n_states=data["n_states"], n_actions=data["n_actions"])
    except (KeyError, ValueError, TypeError) as e:
        raise ValidationFailure(f"Policy document is malformed: {e}", [str(e)]) from e


def save_policy(policy: Policy, path: Union[str, Path]) -> Path:
    """Write a policy checkpoint as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(policy_to_dict(policy), handle)
    logger.debug(f"Wrote {policy.variant.value} policy checkpoint to {path}")
    return path


def load_policy(path: Union[str, Path]) -> Policy:
    """Read a policy checkpoint."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Policy file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as e:
        raise ValidationFailure(f"Policy file is not valid JSON: {e}", [str(e)]) from e
    return policy_from_dict(data)
