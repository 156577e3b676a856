"""
Distribution-Mismatch Bounds

Estimates the absorption, mixing, positiveness and regularity constants over
an explicit probe set of policies, evaluates the closed-form bounds on the
ratio between the discounted and undiscounted state distributions, and checks
the biased-gradient inequalities and the gradient-domination inequality.

Constants quantified over "all policies" cannot be computed exactly; every
constant here is certified for the probe set it was estimated on.
"""

import logging
from itertools import combinations
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.evaluation import discounted_distribution, evaluate, undiscounted_distribution
from src.gradient import closed_form_gradient
from src.mdp import chain_from_probs, is_irreducible, transient_restriction
from src.models import (
    AbcConstants,
    AssumptionViolation,
    BoundReport,
    GradientReport,
    Mdp,
    MdpKind,
    MismatchConstants,
    PolicyVariant,
    RegularityEstimate,
    Trace,
)
from src.optimizer import optimal_policy
from src.policy import Policy, to_direct


logger = logging.getLogger(__name__)

ALPHA_TARGET = 0.9
BETA_FLOOR = 1e-12
TV_STOP = 1e-10
TV_ZERO = 1e-13
TV_MAX_STEPS = 500
RATIO_FLOOR = 1e-300
SLACK_TOL = 1e-9
ABC_TOL = 1e-10
DOMINATION_STRIDE = 10


def _require_policies(policies: Sequence[Policy]) -> None:
    if not policies:
        raise ValueError("the probe set of policies is empty")


def absorbing_curve(mdp: Mdp, policies: Sequence[Policy], cap: Optional[int] = None) -> List[float]:
    """
    alpha(m) = max over policies and transient states of P(s_m != z | s_0) for m = 1..cap.

    Args:
        mdp: Episodic MDP
        policies: Probe set
        cap: Largest horizon (4 * n_states when None)

    Returns:
        alpha(1), ..., alpha(cap)
    """
    if not mdp.is_episodic:
        raise ValueError("absorption constants are only defined for episodic MDPs")
    _require_policies(policies)
    cap = cap or 4 * mdp.n_states

    curve = np.zeros(cap)
    for policy in policies:
        sub = transient_restriction(mdp, chain_from_probs(mdp, policy.action_probs()))
        survival = np.ones(sub.shape[0])
        for m in range(cap):
            survival = sub @ survival
            curve[m] = max(curve[m], float(survival.max()))
    return curve.tolist()


def estimate_absorbing_constants(mdp: Mdp, policies: Sequence[Policy],
                                 target: float = ALPHA_TARGET) -> Tuple[int, float]:
    """
    Smallest horizon m whose survival probability alpha(m) reaches the target.

    When no horizon up to 4 * n_states reaches the target the best horizon
    found is returned.

    Returns:
        (m, alpha)

    Raises:
        AssumptionViolation: If alpha(m) stays at 1 for every probed horizon
    """
    curve = absorbing_curve(mdp, policies)
    for m, alpha in enumerate(curve, start=1):
        if alpha <= target:
            return m, alpha

    m = int(np.argmin(curve)) + 1
    alpha = curve[m - 1]
    if alpha >= 1.0:
        raise AssumptionViolation(
            f"no horizon up to {len(curve)} reaches the absorbing state of '{mdp.name}' with probability > 0",
            assumption="absorption",
        )
    logger.warning(f"alpha target {target} not reached on '{mdp.name}'; using m={m}, alpha={alpha:.6f}")
    return m, alpha


def second_largest_modulus(chain: np.ndarray) -> float:
    """Second-largest eigenvalue modulus of a transition matrix."""
    moduli = np.sort(np.abs(np.linalg.eigvals(chain)))[::-1]
    return float(moduli[1]) if moduli.size > 1 else 0.0


def tv_decay(chain: np.ndarray, stationary: np.ndarray, max_steps: int = TV_MAX_STEPS) -> np.ndarray:
    """TV(t) = max_s ||P^t(s, .) - d_pi||_TV for t = 0, 1, ... until below 1e-10 or max_steps."""
    power = np.eye(chain.shape[0])
    curve = []
    for _ in range(max_steps + 1):
        tv = 0.5 * float(np.abs(power - stationary[None, :]).sum(axis=1).max())
        curve.append(tv)
        if tv < TV_STOP:
            break
        power = power @ chain
    return np.array(curve)


def estimate_mixing_constants(mdp: Mdp, policies: Sequence[Policy]) -> Tuple[float, float]:
    """
    Geometric mixing constants (beta, D) with TV(t) <= D beta^t for every probed policy and t.

    beta is the largest second eigenvalue modulus over the probe set (floored
    at 1e-12); D is the largest TV(t) / beta^t over policies and t >= 0,
    ignoring TV values below 1e-13.

    Raises:
        AssumptionViolation: If a probed chain is reducible or periodic
    """
    if mdp.is_episodic:
        raise ValueError("mixing constants are only defined for continuing MDPs")
    _require_policies(policies)

    rates, curves = [], []
    for policy in policies:
        chain = chain_from_probs(mdp, policy.action_probs())
        if not is_irreducible(chain):
            raise AssumptionViolation(f"a probed policy induces a reducible chain on '{mdp.name}'",
                                      assumption="ergodicity")
        rate = second_largest_modulus(chain)
        if rate >= 1.0 - BETA_FLOOR:
            raise AssumptionViolation(f"a probed policy induces a periodic chain on '{mdp.name}'",
                                      assumption="ergodicity")
        rates.append(rate)
        curves.append(tv_decay(chain, undiscounted_distribution(mdp, policy).values))

    beta = max(max(rates), BETA_FLOOR)
    d_const = 0.0
    for curve in curves:
        steps = np.arange(curve.size)
        significant = curve >= TV_ZERO
        if significant.any():
            d_const = max(d_const, float(np.max(curve[significant] / beta ** steps[significant])))
    logger.debug(f"Mixing constants on '{mdp.name}': beta={beta:.6g}, D={d_const:.6g}")
    return beta, d_const


def mismatch_ratios(mdp: Mdp, policy: Policy) -> Tuple[float, float]:
    """
    Sup-norm of the pointwise ratios d_{pi,gamma}/d_pi and d_pi/d_{pi,gamma}.

    Ratios are taken over transient states; entries where both sides are
    below 1e-300 are skipped.

    Raises:
        AssumptionViolation: If a ratio has a zero denominator and a nonzero numerator
    """
    states = mdp.transient_states()
    d_gamma = discounted_distribution(mdp, policy).values[states]
    d_pi = undiscounted_distribution(mdp, policy).values[states]

    def sup_ratio(numerator: np.ndarray, denominator: np.ndarray) -> float:
        keep = (numerator >= RATIO_FLOOR) | (denominator >= RATIO_FLOOR)
        if np.any(keep & (denominator < RATIO_FLOOR)):
            raise AssumptionViolation(
                f"state distribution of a probed policy on '{mdp.name}' vanishes where the other does not",
                assumption="positiveness",
            )
        return float(np.max(numerator[keep] / denominator[keep]))

    return sup_ratio(d_gamma, d_pi), sup_ratio(d_pi, d_gamma)


def bound_values(constants: MismatchConstants, gamma: float,
                 min_d0: Optional[float] = None) -> Dict[str, Optional[float]]:
    """
    Closed-form upper bounds on the two mismatch ratios.

    Episodic (needs m, alpha):
        eq8 = (1 - alpha gamma^m) / (gamma^(m-1) (1 - alpha))
        eq9 = gamma + m (1 - gamma^m) / ((1 - alpha)(1 - alpha gamma^m) min_d0)
    Continuing (needs beta, D and the positiveness constants):
        eq11 = 1 + 2 (1 - gamma) D / ((1 - gamma beta) c_min)
        eq12 = 1 + 2 (1 - gamma) D / ((1 - gamma beta) c_min_gamma)

    Args:
        constants: Estimated constants
        gamma: Discount factor
        min_d0: Smallest initial probability over transient states (needed by eq9)

    Returns:
        Mapping eq8/eq9/eq11/eq12 to a value, None where the constants are missing
    """
    values: Dict[str, Optional[float]] = {"eq8": None, "eq9": None, "eq11": None, "eq12": None}
    if constants.m is not None and constants.alpha is not None:
        m, alpha = constants.m, constants.alpha
        values["eq8"] = (1.0 - alpha * gamma ** m) / (gamma ** (m - 1) * (1.0 - alpha))
        if min_d0 is not None:
            if min_d0 <= 0:
                raise ValueError(f"min_d0 must be positive, got {min_d0}")
            values["eq9"] = gamma + m * (1.0 - gamma ** m) / ((1.0 - alpha) * (1.0 - alpha * gamma ** m) * min_d0)
    if constants.beta is not None and constants.d_const is not None:
        spread = 2.0 * (1.0 - gamma) * constants.d_const
        contraction = 1.0 - gamma * constants.beta
        if constants.c_min:
            values["eq11"] = 1.0 + spread / (contraction * constants.c_min)
        if constants.c_min_gamma:
            values["eq12"] = 1.0 + spread / (contraction * constants.c_min_gamma)
    return values


def abc_constants(mdp: Mdp, constants: MismatchConstants, gamma: Optional[float] = None) -> AbcConstants:
    """
    Constants of the biased-gradient conditions.

    sigma = G R_max |A| / (1 - gamma); b is the reciprocal of the bound on
    d_{pi,gamma}/d_pi; c = (1 - b) sigma^2; B = b^2; C = c^2/sigma^2 + 2bc.
    """
    gamma = mdp.gamma if gamma is None else gamma
    if constants.g_const is None:
        raise ValueError("abc constants need the gradient bound G")
    sigma = constants.g_const * mdp.r_max * mdp.n_actions / (1.0 - gamma)

    if constants.kind == MdpKind.EPISODIC:
        if constants.m is None or constants.alpha is None:
            raise ValueError("episodic abc constants need m and alpha")
        m, alpha = constants.m, constants.alpha
        b = gamma ** (m - 1) * (1.0 - alpha) / (1.0 - alpha * gamma ** m)
    else:
        if constants.beta is None or constants.d_const is None or not constants.c_min:
            raise ValueError("continuing abc constants need beta, D and c_min")
        weighted = (1.0 - gamma * constants.beta) * constants.c_min
        b = weighted / (weighted + 2.0 * (1.0 - gamma) * constants.d_const)

    c = (1.0 - b) * sigma ** 2
    big_c = (c ** 2 / sigma ** 2 if sigma > 0 else 0.0) + 2.0 * b * c
    return AbcConstants(sigma=sigma, b=b, c=c, big_b=b ** 2, big_c=big_c)


def check_abc_inequalities(report: GradientReport, constants: AbcConstants) -> Dict[str, float]:
    """
    Slack of <u, g> >= b||u||^2 - c and ||g||^2 <= B||u||^2 + C.

    u is the unbiased and g the biased expectation gradient. Slack below
    -1e-10 is a violation.
    """
    u_sq = report.norm_unbiased ** 2
    return {
        "abc_inner": report.inner_product - (constants.b * u_sq - constants.c),
        "abc_norm": constants.big_b * u_sq + constants.big_c - report.norm_biased ** 2,
    }


def _abc_slack(mdp: Mdp, policy: Policy, constants: AbcConstants) -> Dict[str, float]:
    """ABC slack from the closed-form gradients, without finite differences."""
    bundle = evaluate(mdp, policy)
    unbiased = closed_form_gradient(mdp, policy, discounted_distribution(mdp, policy), bundle)
    biased = closed_form_gradient(mdp, policy, undiscounted_distribution(mdp, policy), bundle)
    u_sq = float(np.vdot(unbiased, unbiased))
    return {
        "abc_inner": float(np.vdot(unbiased, biased)) - (constants.b * u_sq - constants.c),
        "abc_norm": constants.big_b * u_sq + constants.big_c - float(np.vdot(biased, biased)),
    }


def abc_trace_slack(trace: Trace, constants: AbcConstants) -> Dict[str, float]:
    """
    Smallest ABC slack over every logged iterate of a training run.

    Uses the gradient norms and inner products stored in the trace records;
    records without an inner product only enter the norm inequality.

    Returns:
        {"abc_inner": ..., "abc_norm": ...}, +inf where no record applies
    """
    inner, norm = np.inf, np.inf
    for record in trace.records:
        u_sq = record.grad_norm_unbiased ** 2
        norm = min(norm, constants.big_b * u_sq + constants.big_c - record.grad_norm_biased ** 2)
        if record.inner_product is not None:
            inner = min(inner, record.inner_product - (constants.b * u_sq - constants.c))
    return {"abc_inner": float(inner), "abc_norm": float(norm)}


def gradient_domination_certificate(mdp: Mdp, policy: Policy, pi_star: Policy) -> Tuple[float, float]:
    """
    Both sides of J* - J(pi) <= kappa* ||d_{pi*,gamma}/d_pi||_inf max_pibar (pibar - pi)^T g.

    g is the biased direct gradient d_pi(s) Q(s,a); the maximum over pibar
    puts all mass on the best action of each state.

    Args:
        mdp: MDP
        policy: Direct policy
        pi_star: Optimal policy

    Returns:
        (lhs, rhs)
    """
    if policy.variant != PolicyVariant.DIRECT:
        raise ValueError(f"gradient domination is stated for direct policies, got {policy.variant.value}")
    star = evaluate(mdp, pi_star)
    bundle = evaluate(mdp, policy)
    d_pi = undiscounted_distribution(mdp, policy)
    d_star = discounted_distribution(mdp, pi_star).values

    states = mdp.transient_states()
    denominators = d_pi.values[states]
    numerators = d_star[states]
    if np.any((denominators <= 0) & (numerators > 0)):
        ratio = np.inf
    else:
        positive = denominators > 0
        ratio = float(np.max(numerators[positive] / denominators[positive]))

    g = closed_form_gradient(mdp, policy, d_pi, bundle)
    linear_gap = float(np.sum(g.max(axis=1) - np.einsum("sa,sa->s", policy.theta, g)))
    return star.j - bundle.j, star.kappa * ratio * max(linear_gap, 0.0)


class DominationAudit:
    """
    Training callback that checks gradient domination on every ``stride``-th iterate.

    Attributes:
        margins: rhs - lhs per audited iterate, keyed by iteration
    """

    def __init__(self, mdp: Mdp, pi_star: Policy, stride: int = DOMINATION_STRIDE):
        if stride < 1:
            raise ValueError(f"stride must be positive, got {stride}")
        self.mdp = mdp
        self.pi_star = pi_star
        self.stride = stride
        self.margins: Dict[int, float] = {}

    def __call__(self, iteration: int, policy: Policy) -> None:
        if iteration % self.stride:
            return
        lhs, rhs = gradient_domination_certificate(self.mdp, to_direct(policy), self.pi_star)
        self.margins[iteration] = rhs - lhs


def certify_iterates(report: BoundReport, traces: Dict[str, Trace],
                     audits: Optional[Dict[str, DominationAudit]] = None) -> BoundReport:
    """
    Extend a bound report with checks along training runs.

    ABC slack is evaluated at every logged iterate of each trace with the
    report's constants; gradient domination margins come from the audits
    attached to the runs.
    """
    if report.b is not None and report.c is not None and report.big_b is not None and report.big_c is not None:
        abc = AbcConstants(sigma=report.sigma or 0.0, b=report.b, c=report.c, big_b=report.big_b, big_c=report.big_c)
        n_records = 0
        for label, trace in traces.items():
            n_records += len(trace.records)
            for key, slack in abc_trace_slack(trace, abc).items():
                if not np.isfinite(slack):
                    continue
                report.margins[f"{key}_{label}_iterates"] = slack
                if slack < -ABC_TOL:
                    report.violations.append(f"{key} slack {slack!r} is negative along the {label} run")
        report.notes.append(f"ABC slack checked on {n_records} logged iterate(s)")

    entries = [(margin, label, it) for label, audit in (audits or {}).items() for it, margin in audit.margins.items()]
    if entries:
        margin, label, it = min(entries)
        report.margins["gradient_domination_iterates"] = margin
        report.notes.append(f"gradient domination checked on {len(entries)} training iterate(s)")
        if margin < -SLACK_TOL:
            report.violations.append(f"gradient domination fails at iterate {it} of the {label} run")
    return report


def analytic_gradient_bound(variant: PolicyVariant, n_actions: int) -> Optional[float]:
    """
    Uniform bound G on ||d pi(a|s) / d theta|| for the tabular parameterizations.

    Softmax: ||grad pi(a|s)||^2 = pi_a^2 ((1 - pi_a)^2 + sum_{b != a} pi_b^2)
    <= 2 pi_a^2 (1 - pi_a)^2, maximized at pi_a = 1/2 with the remaining mass
    on one action, giving sqrt(2)/4 for every |A| >= 2. Direct: 1.
    """
    if variant == PolicyVariant.DIRECT:
        return 1.0
    if variant == PolicyVariant.SOFTMAX:
        return np.sqrt(2.0) / 4.0 if n_actions >= 2 else 0.0
    return None


def probe_gradient_bound(mdp: Mdp, policies: Sequence[Policy]) -> float:
    """Largest G over every parameterization present in a probe set."""
    bound = 0.0
    for policy in policies:
        analytic = analytic_gradient_bound(policy.variant, mdp.n_actions)
        if analytic is None:
            analytic = float(np.linalg.norm(policy.jacobian(), axis=2).max())
        bound = max(bound, analytic)
    return bound


def estimate_regularity(mdp: Mdp, policy_samples: Sequence[Policy]) -> RegularityEstimate:
    """
    Empirical G, L, c_min and c_min_gamma over a sample of same-variant policies.

    L is the largest ||grad J(theta_1) - grad J(theta_2)|| / ||theta_1 - theta_2||
    over distinct pairs, which lower-bounds the true smoothness constant.
    c_min and c_min_gamma are the smallest transient-state probabilities under
    d_pi and d_{pi,gamma}.

    Raises:
        ValueError: With fewer than 2 samples or mixed parameterizations
    """
    if len(policy_samples) < 2:
        raise ValueError(f"regularity estimation needs at least 2 policies, got {len(policy_samples)}")
    variant = policy_samples[0].variant
    if any(p.variant != variant for p in policy_samples):
        raise ValueError("regularity estimation needs policies of one parameterization")

    states = mdp.transient_states()
    g_empirical = 0.0
    c_min = c_min_gamma = np.inf
    thetas, grads = [], []
    for policy in policy_samples:
        g_empirical = max(g_empirical, float(np.linalg.norm(policy.jacobian(), axis=2).max()))
        bundle = evaluate(mdp, policy)
        d_gamma = discounted_distribution(mdp, policy)
        c_min = min(c_min, float(undiscounted_distribution(mdp, policy).values[states].min()))
        c_min_gamma = min(c_min_gamma, float(d_gamma.values[states].min()))
        thetas.append(policy.theta.ravel())
        grads.append(bundle.kappa * closed_form_gradient(mdp, policy, d_gamma, bundle).ravel())

    l_estimate = 0.0
    for i, j in combinations(range(len(thetas)), 2):
        distance = float(np.linalg.norm(thetas[i] - thetas[j]))
        if distance > 0:
            l_estimate = max(l_estimate, float(np.linalg.norm(grads[i] - grads[j])) / distance)

    g_analytic = analytic_gradient_bound(variant, mdp.n_actions)
    return RegularityEstimate(
        g_empirical=g_empirical,
        g_analytic=g_analytic,
        g_const=g_analytic if g_analytic is not None else g_empirical,
        l_estimate=l_estimate,
        c_min=c_min,
        c_min_gamma=c_min_gamma,
    )


def convergence_bound_report(trace: Trace, abc: AbcConstants, l_estimate: float,
                             delta0: float, gamma: float) -> Dict[str, Any]:
    """
    Aggregate convergence consistency check for a biased ascent run.

    Compares the running mean of ||u_t||^2 over the T updates with
    2 delta0 / (b eta T) + 2c / ((1 - gamma) b) + L eta C / b. L is an
    empirical lower bound, so the result is a consistency report rather
    than a verified guarantee.
    """
    eta = float(trace.metadata.get("eta_initial", trace.records[0].eta if trace.records else 0.0))
    updates = max(len(trace.records) - 1, 1)
    squares = np.array([r.grad_norm_unbiased ** 2 for r in trace.records[:updates]])
    running_mean = float(squares.mean()) if squares.size else 0.0
    bound = (2.0 * delta0 / (abc.b * eta * updates)
             + 2.0 * abc.c / ((1.0 - gamma) * abc.b)
             + l_estimate * eta * abc.big_c / abc.b)
    return {
        "label": "consistency check; L is an empirical lower bound",
        "updates": updates,
        "eta": eta,
        "l_estimate": l_estimate,
        "step_condition_met": bool(l_estimate == 0 or eta <= abc.b / (l_estimate * abc.big_b)),
        "running_mean_sq_grad": running_mean,
        "bound": bound,
        "holds": bool(running_mean <= bound),
    }


def build_bound_report(mdp: Mdp, policies: Sequence[Policy], alpha_target: float = ALPHA_TARGET,
                       pi_star: Optional[Policy] = None) -> BoundReport:
    """
    Estimate every constant over a probe set and certify the bounds on it.

    Regularity constants are estimated over the probes sharing the first
    policy's parameterization; G is raised to cover every parameterization
    in the probe set. Gradient domination is checked on the direct version
    of every probe.

    Args:
        mdp: MDP
        policies: Probe set
        alpha_target: Survival target used to choose m
        pi_star: Optimal policy (computed by value iteration when None)

    Returns:
        BoundReport with margins (bound minus measured value) and violations

    Raises:
        AssumptionViolation: If a standing assumption fails on the probe set
    """
    _require_policies(policies)
    gamma = mdp.gamma
    report = BoundReport(environment=mdp.name, gamma=gamma, kind=mdp.kind, n_policies=len(policies))

    same_variant = [p for p in policies if p.variant == policies[0].variant]
    regularity = estimate_regularity(mdp, same_variant) if len(same_variant) >= 2 else None
    if regularity is None:
        report.notes.append("fewer than 2 same-variant probes; G and L not estimated")

    constants = MismatchConstants(kind=mdp.kind)
    if mdp.is_episodic:
        curve = absorbing_curve(mdp, policies)
        m, alpha = estimate_absorbing_constants(mdp, policies, alpha_target)
        constants.m, constants.alpha = m, alpha
        report.m, report.alpha, report.alpha_curve = m, alpha, curve
    else:
        beta, d_const = estimate_mixing_constants(mdp, policies)
        constants.beta, constants.d_const = beta, d_const
        report.beta, report.d_const = beta, d_const

    if regularity is not None:
        constants.g_const = max(regularity.g_const, probe_gradient_bound(mdp, policies))
        report.g_const = constants.g_const
        report.g_empirical = regularity.g_empirical
        report.g_analytic = regularity.g_analytic
        report.l_estimate = regularity.l_estimate

    states = mdp.transient_states()
    ratios_up, ratios_down, kappas = [], [], []
    c_min = c_min_gamma = np.inf
    for policy in policies:
        up, down = mismatch_ratios(mdp, policy)
        ratios_up.append(up)
        ratios_down.append(down)
        kappas.append(evaluate(mdp, policy).kappa)
        c_min = min(c_min, float(undiscounted_distribution(mdp, policy).values[states].min()))
        c_min_gamma = min(c_min_gamma, float(discounted_distribution(mdp, policy).values[states].min()))
    constants.c_min, constants.c_min_gamma = c_min, c_min_gamma
    report.c_min, report.c_min_gamma = c_min, c_min_gamma
    report.ratio_dgamma_over_dpi = max(ratios_up)
    report.ratio_dpi_over_dgamma = max(ratios_down)
    report.kappa = max(kappas)

    for name, ratio in (("dgamma_over_dpi", report.ratio_dgamma_over_dpi),
                        ("dpi_over_dgamma", report.ratio_dpi_over_dgamma)):
        if ratio < 1.0 - 1e-12:
            report.violations.append(f"sup ratio {name} = {ratio!r} is below 1")

    min_d0 = float(mdp.d0[states].min())
    bounds = bound_values(constants, gamma, min_d0 if min_d0 > 0 else None)
    report.bound_eq8, report.bound_eq9 = bounds["eq8"], bounds["eq9"]
    report.bound_eq11, report.bound_eq12 = bounds["eq11"], bounds["eq12"]
    up_bound, down_bound = ("eq8", "eq9") if mdp.is_episodic else ("eq11", "eq12")
    for key, ratio in ((up_bound, report.ratio_dgamma_over_dpi), (down_bound, report.ratio_dpi_over_dgamma)):
        if bounds[key] is None:
            report.notes.append(f"{key} unavailable")
            continue
        report.margins[key] = bounds[key] - ratio
        if report.margins[key] < -SLACK_TOL:
            report.violations.append(f"measured ratio {ratio!r} exceeds {key} = {bounds[key]!r}")

    if constants.g_const is not None:
        abc = abc_constants(mdp, constants, gamma)
        report.sigma, report.b, report.c = abc.sigma, abc.b, abc.c
        report.big_b, report.big_c = abc.big_b, abc.big_c
        slacks = [_abc_slack(mdp, policy, abc) for policy in policies]
        for key in ("abc_inner", "abc_norm"):
            report.margins[key] = min(s[key] for s in slacks)
            if report.margins[key] < -ABC_TOL:
                report.violations.append(f"{key} slack {report.margins[key]!r} is negative")

    if pi_star is None:
        pi_star, _, _ = optimal_policy(mdp)
    domination = [gradient_domination_certificate(mdp, to_direct(policy), pi_star) for policy in policies]
    report.margins["gradient_domination"] = min(rhs - lhs for lhs, rhs in domination)
    if report.margins["gradient_domination"] < -SLACK_TOL:
        report.violations.append("gradient domination fails on at least one probe")

    status = "passed" if report.passed else f"{len(report.violations)} violation(s)"
    logger.info(f"Bound report for '{mdp.name}' gamma={gamma} over {len(policies)} policies: {status}")
    return report
