"""
MDP Core Module

Validation, induced Markov chains, transient restrictions and the JSON
interchange format for finite MDPs.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
from scipy.sparse import csgraph

from src.models import Mdp, MdpKind, ValidationFailure


logger = logging.getLogger(__name__)

CONSTRUCTION_TOL = 1e-12


def validate(mdp: Mdp) -> List[str]:
    """
    Report every invariant violation of an MDP.

    The scan is row-major over (s, a) so the ordering is deterministic.

    Args:
        mdp: MDP to check

    Returns:
        List of violation descriptions, empty when the MDP is valid
    """
    violations: List[str] = []
    p = mdp.transition

    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            row = p[s, a]
            if np.any(row < 0):
                worst = int(np.argmin(row))
                violations.append(f"negative probability at (s={s}, a={a}, s'={worst}): {row[worst]!r}")
            total = float(row.sum())
            if abs(total - 1.0) > CONSTRUCTION_TOL:
                violations.append(f"row-sum violation at (s={s}, a={a}): sum={total!r}")
            if abs(mdp.reward[s, a]) > mdp.r_max + CONSTRUCTION_TOL:
                violations.append(f"reward bound violation at (s={s}, a={a}): |{mdp.reward[s, a]!r}| > R_max={mdp.r_max!r}")

    if np.any(mdp.d0 < 0):
        violations.append(f"d0 has negative entries at states {np.flatnonzero(mdp.d0 < 0).tolist()}")
    d0_total = float(mdp.d0.sum())
    if abs(d0_total - 1.0) > CONSTRUCTION_TOL:
        violations.append(f"d0 sums to {d0_total!r}")

    if mdp.kind == MdpKind.EPISODIC:
        z = mdp.absorbing_index
        if mdp.d0[z] != 0.0:
            violations.append(f"d0 puts mass {mdp.d0[z]!r} on absorbing state z={z}")
        for s in mdp.transient_states():
            if mdp.d0[s] <= 0.0:
                violations.append(f"d0 is not positive on transient state s={s}")
        for a in range(mdp.n_actions):
            if abs(p[z, a, z] - 1.0) > CONSTRUCTION_TOL:
                violations.append(f"absorbing state z={z} leaks under a={a}: p(z|z,a)={p[z, a, z]!r}")
            if mdp.reward[z, a] != 0.0:
                violations.append(f"absorbing state z={z} pays reward {mdp.reward[z, a]!r} under a={a}")
    elif mdp.absorbing_index is not None:
        violations.append(f"continuing MDP declares absorbing index {mdp.absorbing_index}")

    if violations:
        logger.debug(f"MDP '{mdp.name}' has {len(violations)} violation(s)")
    return violations


def ensure_valid(mdp: Mdp) -> Mdp:
    """Raise ValidationFailure unless the MDP passes validate()."""
    violations = validate(mdp)
    if violations:
        raise ValidationFailure(f"MDP '{mdp.name}' failed validation with {len(violations)} violation(s)", violations)
    return mdp


def chain_from_probs(mdp: Mdp, probs: np.ndarray) -> np.ndarray:
    """P(s'|s) = sum_a probs(a|s) p(s'|s,a) for a raw action-probability matrix."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy table has shape {probs.shape}, MDP expects {(mdp.n_states, mdp.n_actions)}")
    return np.einsum("sa,sat->st", probs, mdp.transition)


def induced_transition(mdp: Mdp, policy) -> np.ndarray:
    """
    Transition matrix of the Markov chain a policy induces on the MDP.

    Args:
        mdp: MDP
        policy: Policy whose dimensions match the MDP

    Returns:
        Row-stochastic matrix P^pi of shape (n_states, n_states)
    """
    if (policy.n_states, policy.n_actions) != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy is {policy.n_states}x{policy.n_actions}, MDP is {mdp.n_states}x{mdp.n_actions}"
        )
    return chain_from_probs(mdp, policy.action_probs())


def transient_restriction(mdp: Mdp, obj: np.ndarray) -> np.ndarray:
    """
    Drop the absorbing state from a vector or a square matrix.

    Args:
        mdp: Episodic MDP
        obj: Vector of length n_states or matrix of shape (n_states, n_states)

    Returns:
        The restriction to transient states

    Raises:
        ValueError: If the MDP is continuing or the object has the wrong shape
    """
    if mdp.kind != MdpKind.EPISODIC:
        raise ValueError("transient restriction is only defined for episodic MDPs")
    obj = np.asarray(obj, dtype=float)
    z = mdp.absorbing_index
    if obj.shape == (mdp.n_states,):
        return np.delete(obj, z)
    if obj.shape == (mdp.n_states, mdp.n_states):
        return np.delete(np.delete(obj, z, axis=0), z, axis=1)
    raise ValueError(f"cannot restrict object of shape {obj.shape} on a {mdp.n_states}-state MDP")


def embed_transient(mdp: Mdp, values: np.ndarray) -> np.ndarray:
    """Inverse of transient_restriction for vectors: reinsert z with value 0."""
    return np.insert(np.asarray(values, dtype=float), mdp.absorbing_index, 0.0)


def is_irreducible(chain: np.ndarray) -> bool:
    """True when the support graph of a transition matrix is strongly connected."""
    n_components, _ = csgraph.connected_components(chain > 0, directed=True, connection="strong")
    return n_components == 1


def reaches_absorbing(mdp: Mdp, chain: np.ndarray) -> np.ndarray:
    """Boolean mask of states from which z is reachable under the chain."""
    reverse = (np.asarray(chain) > 0).T.astype(int)
    order = csgraph.breadth_first_order(reverse, mdp.absorbing_index, directed=True, return_predecessors=False)
    mask = np.zeros(mdp.n_states, dtype=bool)
    mask[order] = True
    return mask


def mdp_to_dict(mdp: Mdp) -> Dict[str, Any]:
    """Interchange representation of an MDP."""
    return {
        "name": mdp.name,
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.gamma,
        "kind": mdp.kind.value,
        "absorbing_index": mdp.absorbing_index,
        "d0": mdp.d0.tolist(),
        "reward": mdp.reward.tolist(),
        "transition": mdp.transition.tolist(),
    }


def mdp_from_dict(data: Dict[str, Any]) -> Mdp:
    """Build an MDP from its interchange representation (R_max is recomputed)."""
    missing = [key for key in ("n_states", "n_actions", "gamma", "kind", "d0", "reward", "transition") if key not in data]
    if missing:
        raise ValidationFailure(f"MDP document is missing fields: {missing}", [f"/{key}: missing" for key in missing])
    try:
        return Mdp(
            n_states=data["n_states"],
            n_actions=data["n_actions"],
            gamma=data["gamma"],
            kind=MdpKind(data["kind"]),
            absorbing_index=data.get("absorbing_index"),
            d0=data["d0"],
            reward=data["reward"],
            transition=data["transition"],
            name=data.get("name", "mdp"),
        )
    except ValueError as e:
        raise ValidationFailure(f"MDP document is malformed: {e}", [str(e)]) from e


def save_mdp(mdp: Mdp, path: Union[str, Path]) -> Path:
    """Write an MDP as a single JSON document with round-trip float precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(mdp_to_dict(mdp), handle)
    logger.info(f"Wrote MDP '{mdp.name}' to {path}")
    return path


def load_mdp(path: Union[str, Path]) -> Mdp:
    """
    Read an MDP JSON document.

    Raises:
        FileNotFoundError: If the file does not exist
        ValidationFailure: If the document is not a well-formed MDP
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"MDP file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as e:
        raise ValidationFailure(f"MDP file is not valid JSON: {e}", [str(e)]) from e
    mdp = mdp_from_dict(data)
    logger.debug(f"Loaded MDP '{mdp.name}' ({mdp.n_states} states, {mdp.n_actions} actions) from {path}")
    return mdp
