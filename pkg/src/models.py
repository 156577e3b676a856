"""
Domain Models for the Policy-Gradient Laboratory

This module defines the Pydantic models shared by every part of the laboratory:
finite MDPs, state distributions, value bundles, gradient and bound reports,
training traces, sample buffers, and the exception hierarchy used to signal
invalid inputs, violated assumptions and diverging runs.
"""

from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


DISTRIBUTION_TOL = 1e-10


class PglabError(Exception):
    """Base class for laboratory errors."""


class ValidationFailure(PglabError):
    """Raised when an MDP, policy or configuration fails validation."""

    def __init__(self, message: str, violations: Optional[List[str]] = None):
        super().__init__(message)
        self.violations = violations or []


class ConfigError(ValidationFailure):
    """Raised when an experiment configuration is malformed."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(message, [f"{pointer}: {message}"] if pointer else [message])
        self.pointer = pointer


class AssumptionViolation(PglabError):
    """Raised when a standing assumption (absorption, ergodicity, positiveness) fails."""

    def __init__(self, message: str, assumption: str = "unspecified"):
        super().__init__(message)
        self.assumption = assumption


class DivergenceError(PglabError):
    """Raised when a training run produces a non-finite objective or gradient."""

    def __init__(self, message: str, trace: Optional["Trace"] = None):
        super().__init__(message)
        self.trace = trace


class MdpKind(str, Enum):
    """Episodic MDPs carry a single absorbing state; continuing ones never terminate."""
    EPISODIC = "episodic"
    CONTINUING = "continuing"


class DistributionRole(str, Enum):
    """Which state distribution a probability vector represents."""
    DISCOUNTED = "discounted"        # d_{pi,gamma}
    UNDISCOUNTED = "undiscounted"    # d_pi
    EMPIRICAL = "empirical"          # buffer frequencies
    INITIAL = "initial"              # d0


class PolicyVariant(str, Enum):
    """Tabular policy parameterizations."""
    DIRECT = "direct"
    SOFTMAX = "softmax"
    CUSTOM = "custom"


class TrainVariant(str, Enum):
    """Update rule used by the optimizer."""
    DIRECT_PROJECTED = "direct_projected"
    SOFTMAX_ASCENT = "softmax_ascent"
    CUSTOM_ASCENT = "custom_ascent"


class TerminalStatus(str, Enum):
    """How a training run ended."""
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"


def _as_float_array(value: Any) -> np.ndarray:
    array = np.array(value, dtype=float)
    array.setflags(write=False)
    return array


class Mdp(BaseModel):
    """
    Finite Markov decision process with an explicit transition tensor.

    Construction only checks shapes; the probabilistic invariants are reported
    by ``src.mdp.validate`` so that corrupted models can still be loaded and
    diagnosed.
    """

    n_states: int = Field(..., ge=1, description="Number of states, absorbing state included")
    n_actions: int = Field(..., ge=1, description="Number of actions")
    transition: np.ndarray = Field(..., description="p(s'|s,a) stored as [s, a, s']")
    reward: np.ndarray = Field(..., description="Expected reward R(s,a) stored as [s, a]")
    gamma: float = Field(..., ge=0.0, lt=1.0, description="Discount factor")
    d0: np.ndarray = Field(..., description="Initial state distribution")
    kind: MdpKind = Field(MdpKind.CONTINUING, description="Episodic or continuing")
    absorbing_index: Optional[int] = Field(None, description="Index z of the absorbing state")
    r_max: float = Field(..., ge=0.0, description="max |R(s,a)| recorded at construction")
    name: str = Field("mdp", description="Human-readable label")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="before")
    @classmethod
    def fill_r_max(cls, data: Any) -> Any:
        """Record R_max from the reward table when it is not given explicitly."""
        if isinstance(data, dict) and data.get("r_max") is None and data.get("reward") is not None:
            data = dict(data)
            data["r_max"] = float(np.max(np.abs(np.asarray(data["reward"], dtype=float))))
        return data

    @field_validator("transition", "reward", "d0", mode="before")
    @classmethod
    def coerce_arrays(cls, v):
        """Store numeric tables as read-only float arrays."""
        return _as_float_array(v)

    @model_validator(mode="after")
    def check_shapes(self) -> "Mdp":
        """Reject tables whose shapes disagree with the declared sizes."""
        s, a = self.n_states, self.n_actions
        if self.transition.shape != (s, a, s):
            raise ValueError(f"transition has shape {self.transition.shape}, expected {(s, a, s)}")
        if self.reward.shape != (s, a):
            raise ValueError(f"reward has shape {self.reward.shape}, expected {(s, a)}")
        if self.d0.shape != (s,):
            raise ValueError(f"d0 has shape {self.d0.shape}, expected {(s,)}")
        if self.kind == MdpKind.EPISODIC:
            if self.absorbing_index is None or not 0 <= self.absorbing_index < s:
                raise ValueError(f"episodic MDP needs an absorbing index in [0, {s}), got {self.absorbing_index}")
        return self

    @property
    def is_episodic(self) -> bool:
        return self.kind == MdpKind.EPISODIC

    def transient_states(self) -> np.ndarray:
        """Indices of all states except the absorbing one."""
        states = np.arange(self.n_states)
        if self.is_episodic:
            return states[states != self.absorbing_index]
        return states

    def with_gamma(self, gamma: float) -> "Mdp":
        """Return the same model under a different discount factor."""
        return Mdp(
            n_states=self.n_states,
            n_actions=self.n_actions,
            transition=self.transition,
            reward=self.reward,
            gamma=gamma,
            d0=self.d0,
            kind=self.kind,
            absorbing_index=self.absorbing_index,
            r_max=self.r_max,
            name=self.name,
        )


class StateDistribution(BaseModel):
    """Probability vector over states tagged with the role it plays."""

    values: np.ndarray = Field(..., description="Probability of each state")
    role: DistributionRole = Field(..., description="Which distribution this is")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("values", mode="before")
    @classmethod
    def coerce_values(cls, v):
        return _as_float_array(v)

    @model_validator(mode="after")
    def check_simplex(self) -> "StateDistribution":
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValueError("distribution must be a non-empty vector")
        if np.any(self.values < 0):
            raise ValueError(f"distribution has negative entries (min {self.values.min():.3e})")
        total = float(self.values.sum())
        if abs(total - 1.0) > DISTRIBUTION_TOL:
            raise ValueError(f"distribution sums to {total!r}, expected 1")
        return self

    def __len__(self) -> int:
        return int(self.values.size)

    def to_frame(self) -> pd.DataFrame:
        """Rows of (state_index, value)."""
        return pd.DataFrame({"state_index": np.arange(self.values.size), "value": self.values})


class ValueBundle(BaseModel):
    """Exact evaluation of one policy on one MDP."""

    v: np.ndarray = Field(..., description="V(s)")
    q: np.ndarray = Field(..., description="Q(s,a)")
    adv: np.ndarray = Field(..., description="A(s,a) = Q(s,a) - V(s)")
    j: float = Field(..., description="J = sum_s d0(s) V(s)")
    kappa: float = Field(..., description="Scale linking expectation and true gradients")
    mu_z: float = Field(0.0, description="Discounted visitation of the absorbing state")
    mu: np.ndarray = Field(..., description="Unnormalized discounted visitation counts")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class GradientReport(BaseModel):
    """Unbiased, biased and true gradients at one (mdp, policy) pair."""

    unbiased: np.ndarray = Field(..., description="Expectation gradient under d_{pi,gamma}")
    biased: np.ndarray = Field(..., description="Expectation gradient under d_pi")
    true_grad: np.ndarray = Field(..., description="Gradient of J")
    true_grad_source: str = Field("finite_difference", description="finite_difference or exact")
    k_theta: float = Field(..., description="K_theta = kappa")
    inner_product: float = Field(..., description="<unbiased, biased>")
    cos_biased_unbiased: float = Field(..., description="Cosine between biased and unbiased gradients")
    norm_unbiased: float = Field(...)
    norm_biased: float = Field(...)
    norm_true: float = Field(...)
    scale_residual: float = Field(..., description="||true - K*unbiased|| / max(1, ||true||)")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def to_frame(self) -> pd.DataFrame:
        """Rows of (coordinate, unbiased, biased, true) over flattened parameters."""
        return pd.DataFrame({
            "coordinate": np.arange(self.unbiased.size),
            "unbiased": self.unbiased.ravel(),
            "biased": self.biased.ravel(),
            "true": self.true_grad.ravel(),
        })


class MismatchConstants(BaseModel):
    """Constants the distribution-mismatch bounds are built from."""

    kind: MdpKind
    m: Optional[int] = Field(None, ge=1, description="Absorption horizon")
    alpha: Optional[float] = Field(None, ge=0.0, lt=1.0, description="Survival probability after m steps")
    beta: Optional[float] = Field(None, gt=0.0, lt=1.0, description="Geometric mixing rate")
    d_const: Optional[float] = Field(None, ge=0.0, description="Mixing prefactor D")
    c_min: Optional[float] = Field(None, description="Smallest d_pi(s) over the probe set")
    c_min_gamma: Optional[float] = Field(None, description="Smallest d_{pi,gamma}(s) over the probe set")
    g_const: Optional[float] = Field(None, ge=0.0, description="Bound G on ||d pi(a|s)/d theta||")


class AbcConstants(BaseModel):
    """Constants of the biased-gradient conditions <u, g> >= b||u||^2 - c and ||g||^2 <= B||u||^2 + C."""

    sigma: float
    b: float
    c: float
    big_b: float
    big_c: float


class RegularityEstimate(BaseModel):
    """Empirical smoothness and positiveness constants over a policy sample."""

    g_empirical: float
    g_analytic: Optional[float] = None
    g_const: float
    l_estimate: float = Field(..., description="Largest observed gradient Lipschitz quotient (a lower bound on L)")
    c_min: float
    c_min_gamma: float


class BoundReport(BaseModel):
    """Estimated constants, measured mismatch ratios and bound margins for one (mdp, gamma)."""

    environment: str = Field("mdp", description="Environment label")
    gamma: float = Field(...)
    kind: MdpKind = Field(...)
    n_policies: int = Field(0, description="Size of the probe set")

    # Absorption (episodic)
    m: Optional[int] = Field(None)
    alpha: Optional[float] = Field(None)
    alpha_curve: List[float] = Field(default_factory=list)

    # Mixing and positiveness (continuing)
    beta: Optional[float] = Field(None)
    d_const: Optional[float] = Field(None)
    c_min: Optional[float] = Field(None)
    c_min_gamma: Optional[float] = Field(None)

    # Regularity
    g_const: Optional[float] = Field(None)
    g_empirical: Optional[float] = Field(None)
    g_analytic: Optional[float] = Field(None)
    l_estimate: Optional[float] = Field(None, description="Empirical lower bound on L")

    # ABC constants
    sigma: Optional[float] = Field(None)
    b: Optional[float] = Field(None)
    c: Optional[float] = Field(None)
    big_b: Optional[float] = Field(None)
    big_c: Optional[float] = Field(None)
    kappa: Optional[float] = Field(None, description="Largest kappa over the probe set")

    # Measured ratios (sup over the probe set)
    ratio_dgamma_over_dpi: Optional[float] = Field(None)
    ratio_dpi_over_dgamma: Optional[float] = Field(None)

    # Closed-form bounds
    bound_eq8: Optional[float] = Field(None)
    bound_eq9: Optional[float] = Field(None)
    bound_eq11: Optional[float] = Field(None)
    bound_eq12: Optional[float] = Field(None)

    margins: Dict[str, float] = Field(default_factory=dict, description="Slack per inequality")
    consistency: Dict[str, Any] = Field(
        default_factory=dict,
        description="Aggregate convergence consistency check; informative only, never a pass/fail margin"
    )
    violations: List[str] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)
    generated_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))

    @property
    def passed(self) -> bool:
        return not self.violations and all(v >= -1e-9 for v in self.margins.values())


class TraceRecord(BaseModel):
    """One logged iterate of a training run."""
    iter: int
    j: float
    grad_norm_biased: float
    grad_norm_unbiased: float
    inner_product: Optional[float] = Field(None, description="<unbiased, biased> expectation gradients")
    tv_mismatch: float
    eta: float


class Trace(BaseModel):
    """Iteration log of a training run."""

    variant: TrainVariant
    use_biased: bool
    records: List[TraceRecord] = Field(default_factory=list)
    checkpoints: Dict[int, List[float]] = Field(default_factory=dict, description="Flattened theta every k iterations")
    status: TerminalStatus = TerminalStatus.MAX_ITERS
    j_decreases: int = Field(0, description="Number of iterations where J went down")
    warnings: List[str] = Field(default_factory=list)
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @property
    def final_j(self) -> float:
        return self.records[-1].j if self.records else float("nan")

    @property
    def initial_j(self) -> float:
        return self.records[0].j if self.records else float("nan")

    def j_values(self) -> np.ndarray:
        return np.array([r.j for r in self.records])

    def to_frame(self) -> pd.DataFrame:
        """Columns iter, J, grad_norm_biased, grad_norm_unbiased, tv_mismatch, eta."""
        return pd.DataFrame(
            [r.model_dump() for r in self.records],
            columns=["iter", "j", "grad_norm_biased", "grad_norm_unbiased", "tv_mismatch", "eta"],
        ).rename(columns={"j": "J"})


class Buffer(BaseModel):
    """Transitions collected by trajectory sampling."""

    capacity: int = Field(..., ge=0)
    rng_seed: int = Field(...)
    states: np.ndarray = Field(...)
    actions: np.ndarray = Field(...)
    rewards: np.ndarray = Field(...)
    next_states: np.ndarray = Field(...)
    episode_ids: np.ndarray = Field(...)

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def __len__(self) -> int:
        return int(self.states.size)

    @property
    def n_episodes(self) -> int:
        return int(np.unique(self.episode_ids).size)

    def prefix(self, size: int) -> "Buffer":
        """The first ``size`` transitions, as sampled under the same seed."""
        return Buffer(
            capacity=size,
            rng_seed=self.rng_seed,
            states=self.states[:size],
            actions=self.actions[:size],
            rewards=self.rewards[:size],
            next_states=self.next_states[:size],
            episode_ids=self.episode_ids[:size],
        )

    def to_frame(self) -> pd.DataFrame:
        """Rows of (t, s, a, r, s_next, episode_id)."""
        return pd.DataFrame({
            "t": np.arange(len(self)),
            "s": self.states,
            "a": self.actions,
            "r": self.rewards,
            "s_next": self.next_states,
            "episode_id": self.episode_ids,
        })
