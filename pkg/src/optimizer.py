"""
Policy-Gradient Ascent and Value Iteration

Runs biased or unbiased gradient ascent on a policy, records the iteration
trace, and computes the optimal value by value iteration.
"""

import logging
from typing import Callable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from src.evaluation import (
    evaluate, policy_value, q_from_v, tv_distance, undiscounted_distribution, visitation_distribution,
)
from src.gradient import closed_form_gradient
from src.models import DivergenceError, Mdp, PolicyVariant, TerminalStatus, Trace, TraceRecord, TrainVariant
from src.policy import Policy, deterministic_direct, project_rows


logger = logging.getLogger(__name__)

MAX_HALVINGS = 50
DECREASE_TOL = 1e-12
TIE_TOL = 1e-12
DIRECT_STEP_SIZE = 1.0

_VARIANT_POLICIES = {
    TrainVariant.DIRECT_PROJECTED: PolicyVariant.DIRECT,
    TrainVariant.SOFTMAX_ASCENT: PolicyVariant.SOFTMAX,
    TrainVariant.CUSTOM_ASCENT: PolicyVariant.CUSTOM,
}


def train_variant_for(variant: PolicyVariant) -> TrainVariant:
    """Update rule matching a policy parameterization."""
    return {policy: train for train, policy in _VARIANT_POLICIES.items()}[variant]


def softmax_step_cap(gamma: float) -> float:
    """Largest softmax step size covered by the global convergence guarantee."""
    return (1.0 - gamma) ** 2 / 8.0


def default_step_size(variant: TrainVariant, gamma: float) -> float:
    """
    Step size used when a run does not set one.

    Projected direct ascent never lowers J whatever the step, so it takes a
    unit step; the other rules take the softmax cap (1-gamma)^2/8.
    """
    if variant == TrainVariant.DIRECT_PROJECTED:
        return DIRECT_STEP_SIZE
    return softmax_step_cap(gamma)


class TrainConfig(BaseModel):
    """Settings of one gradient-ascent run."""
    variant: TrainVariant
    use_biased: bool = Field(default=False, description="Weight the gradient by d_pi instead of d_{pi,gamma}")
    eta: Optional[float] = Field(default=None, gt=0.0, description="Step size; the variant default when unset")
    max_iters: int = Field(default=1_000, ge=1)
    stop_grad_norm: float = Field(default=1e-8, ge=0.0)
    gamma_override: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    checkpoint_every: int = Field(default=0, ge=0, description="0 disables theta checkpoints")
    backtracking: bool = Field(default=True, description="Halve eta whenever a projected step lowers J")


def _gradient_mapping(policy: Policy, direction: np.ndarray, eta: float) -> Tuple[np.ndarray, float]:
    # row shifts leave the projection unchanged
    centered = direction - direction.mean(axis=1, keepdims=True)
    candidate = project_rows(policy.theta + eta * centered)
    return candidate, float(np.linalg.norm(candidate - policy.theta)) / eta


def _decrease_tol(j: float) -> float:
    return DECREASE_TOL * max(1.0, abs(j))


def train(mdp: Mdp, policy0: Policy, cfg: TrainConfig,
          callback: Optional[Callable[[int, Policy], None]] = None) -> Tuple[Policy, Trace]:
    """
    Run policy-gradient ascent.

    Both runs scale their expectation gradient by kappa: the unbiased run
    ascends kappa times the d_{pi,gamma} gradient, which is the true gradient
    of J, and the biased run ascends kappa times the d_pi gradient, so the two
    differ only in the state distribution. Projected direct ascent projects
    every state row back onto the simplex and stops on the norm of the
    gradient mapping.

    Args:
        mdp: MDP
        policy0: Starting policy whose parameterization matches cfg.variant
        cfg: Run settings
        callback: Called with (iteration, policy) at every logged iterate

    Returns:
        (final policy, trace)

    Raises:
        ValueError: If the policy and the update rule do not match
        DivergenceError: If J or a gradient becomes non-finite
    """
    if _VARIANT_POLICIES[cfg.variant] != policy0.variant:
        raise ValueError(f"{cfg.variant.value} cannot train a {policy0.variant.value} policy")
    if cfg.gamma_override is not None:
        mdp = mdp.with_gamma(cfg.gamma_override)

    gamma = mdp.gamma
    eta = cfg.eta if cfg.eta is not None else default_step_size(cfg.variant, gamma)
    trace = Trace(variant=cfg.variant, use_biased=cfg.use_biased)
    trace.metadata.update({
        "environment": mdp.name,
        "gamma": gamma,
        "eta_initial": eta,
        "eta_source": "config" if cfg.eta is not None else "default",
        "max_iters": cfg.max_iters,
        "stop_grad_norm": cfg.stop_grad_norm,
    })
    if cfg.variant == TrainVariant.SOFTMAX_ASCENT and eta > softmax_step_cap(gamma):
        message = f"eta={eta!r} exceeds the softmax cap (1-gamma)^2/8={softmax_step_cap(gamma)!r}"
        trace.warnings.append(message)
        logger.warning(message)

    projected = cfg.variant == TrainVariant.DIRECT_PROJECTED
    label = "biased" if cfg.use_biased else "unbiased"
    logger.info(f"Training {cfg.variant.value} ({label}) on '{mdp.name}' gamma={gamma}, eta={eta:.3e}")

    policy = policy0
    for it in range(cfg.max_iters + 1):
        bundle = evaluate(mdp, policy)
        d_gamma = visitation_distribution(mdp, bundle)
        d_pi = undiscounted_distribution(mdp, policy)
        unbiased = closed_form_gradient(mdp, policy, d_gamma, bundle)
        biased = closed_form_gradient(mdp, policy, d_pi, bundle)

        if not (np.isfinite(bundle.j) and np.all(np.isfinite(unbiased)) and np.all(np.isfinite(biased))):
            trace.metadata["diverged_at"] = it
            logger.error(f"Non-finite objective or gradient at iteration {it} on '{mdp.name}'")
            raise DivergenceError(f"training diverged at iteration {it}", trace=trace)

        if trace.records and bundle.j < trace.records[-1].j - _decrease_tol(bundle.j):
            trace.j_decreases += 1
            logger.debug(f"J decreased at iteration {it}: {trace.records[-1].j!r} -> {bundle.j!r}")

        trace.records.append(TraceRecord(
            iter=it,
            j=bundle.j,
            grad_norm_biased=float(np.linalg.norm(biased)),
            grad_norm_unbiased=float(np.linalg.norm(unbiased)),
            inner_product=float(np.vdot(unbiased, biased)),
            tv_mismatch=tv_distance(d_pi, d_gamma),
            eta=eta,
        ))
        if cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            trace.checkpoints[it] = policy.theta.ravel().tolist()
        if callback is not None:
            callback(it, policy)

        direction = bundle.kappa * (biased if cfg.use_biased else unbiased)
        if projected:
            candidate, stationarity = _gradient_mapping(policy, direction, eta)
        else:
            stationarity = float(np.linalg.norm(direction))

        if stationarity <= cfg.stop_grad_norm:
            trace.status = TerminalStatus.CONVERGED
            logger.debug(f"Converged at iteration {it} (stationarity {stationarity:.3e})")
            break
        if it == cfg.max_iters:
            break

        if projected:
            if cfg.backtracking:
                for _ in range(MAX_HALVINGS):
                    if policy_value(mdp, candidate) >= bundle.j - _decrease_tol(bundle.j):
                        break
                    eta /= 2.0
                    candidate, _ = _gradient_mapping(policy, direction, eta)
            policy = policy.with_theta(candidate)
        else:
            policy = policy.with_theta(policy.theta + eta * direction)

    if cfg.checkpoint_every:
        trace.checkpoints[trace.records[-1].iter] = policy.theta.ravel().tolist()
    trace.metadata["eta_final"] = eta
    trace.metadata["iterations"] = trace.records[-1].iter
    if trace.j_decreases and not projected:
        trace.warnings.append(f"J decreased on {trace.j_decreases} iteration(s)")

    logger.info(
        f"Finished {cfg.variant.value} ({label}) on '{mdp.name}' gamma={gamma}: "
        f"J={trace.final_j:.10g} after {trace.records[-1].iter} iterations ({trace.status.value})"
    )
    return policy, trace


def value_iteration(mdp: Mdp, tol: float = 1e-10, max_iters: int = 1_000_000) -> Tuple[np.ndarray, float]:
    """
    Optimal values by Bellman-optimality iteration.

    Iterates until successive sweeps differ by at most tol*(1-gamma)/gamma,
    which bounds the distance to the fixed point by tol in sup norm.

    Returns:
        (v_star, j_star)
    """
    v = np.zeros(mdp.n_states)
    threshold = tol * (1.0 - mdp.gamma) / mdp.gamma if mdp.gamma > 0 else np.inf
    for sweep in range(1, max_iters + 1):
        v_new = q_from_v(mdp, v).max(axis=1)
        if mdp.is_episodic:
            v_new[mdp.absorbing_index] = 0.0
        delta = float(np.max(np.abs(v_new - v)))
        v = v_new
        if delta <= threshold:
            logger.debug(f"Value iteration on '{mdp.name}' converged after {sweep} sweeps")
            break
    else:
        logger.warning(f"Value iteration on '{mdp.name}' hit {max_iters} sweeps (last delta {delta:.3e})")
    return v, float(mdp.d0 @ v)


def greedy_policy(mdp: Mdp, v: np.ndarray) -> Policy:
    """Deterministic direct policy greedy in Q(v); ties go to the lowest action index."""
    q = q_from_v(mdp, v)
    best = q.max(axis=1, keepdims=True)
    actions = np.argmax(q >= best - TIE_TOL, axis=1)
    return deterministic_direct(actions, mdp.n_actions)


def optimal_policy(mdp: Mdp, tol: float = 1e-10) -> Tuple[Policy, np.ndarray, float]:
    """Value iteration followed by greedy extraction: (pi_star, v_star, j_star)."""
    v_star, j_star = value_iteration(mdp, tol)
    return greedy_policy(mdp, v_star), v_star, j_star
