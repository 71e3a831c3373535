"""
Soft-update (mixture) improvement checks and the Tightrope Walking counterexample.

Mixing the current policy with a kappa-greedy policy, (1 - alpha) pi + alpha pi', is guaranteed to
improve only for alpha in [kappa, 1]; for h-greedy policies only alpha = 1 is safe. The Tightrope
MDP below is the witness family for the failing direction.
"""

import logging
import math
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

import config
from greedy.kappa_greedy import h_greedy_policy, kappa_greedy_policy
from mdp_core.errors import InvalidArgumentError
from mdp_core.mdp import Mdp, Policy
from mdp_core.operators import evaluate_policy, mix_policies

logger = logging.getLogger(config.LOGGER_NAME)

# state indices of the Tightrope MDP
S_START, S_EDGE, S_GOAL, S_FALL = 0, 1, 2, 3
A_HESITATE, A_ADVANCE = 0, 1


def tightrope_mdp(c: float, gamma: float) -> Mdp:
    """
    Tightrope Walking MDP with fall penalty c.

    s0: a0 stays (r=0), a1 walks to s1 (r=0); s1: a0 falls to s3 (r=0), a1 reaches s2 (r=0);
    s2 absorbing with r=1; s3 absorbing with r=-c. Both actions of an absorbing state self-loop.

    Args:
        c (float): fall penalty, > 0
        gamma (float): discount in (0, 1)

    Returns:
        Mdp: 4 states, 2 actions
    """

    if not c > 0:
        raise InvalidArgumentError(f"c must be positive, got {c}")

    transitions = np.zeros((4, 2, 4))
    transitions[S_START, A_HESITATE, S_START] = 1.0
    transitions[S_START, A_ADVANCE, S_EDGE] = 1.0
    transitions[S_EDGE, A_HESITATE, S_FALL] = 1.0
    transitions[S_EDGE, A_ADVANCE, S_GOAL] = 1.0
    transitions[S_GOAL, :, S_GOAL] = 1.0
    transitions[S_FALL, :, S_FALL] = 1.0

    rewards = np.zeros((4, 2))
    rewards[S_GOAL, :] = 1.0
    rewards[S_FALL, :] = -c

    return Mdp(transitions=transitions, rewards=rewards, gamma=gamma)


def hesitant_policy() -> Policy:
    """pi_0 of the Tightrope MDP: a0 everywhere."""
    return Policy.from_actions([A_HESITATE] * 4, 2)


def tightrope_optimal_policy() -> Policy:
    return Policy.from_actions([A_ADVANCE, A_ADVANCE, A_HESITATE, A_HESITATE], 2)


def tightrope_bounds(alpha: float, kappa: float) -> Tuple[float, float]:
    """
    Penalty window in which the Tightrope MDP defeats the soft update.

    The kappa-greedy policy w.r.t. v^{pi_0} is optimal for c <= kappa / (1 - kappa), and the alpha-mixture
    does not improve on s0 for c > alpha / (1 - alpha). A witness exists iff c_low < c_high, i.e. alpha < kappa.

    Returns:
        Tuple[float, float]: (c_low, c_high), c_high = inf for kappa = 1
    """

    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0.0 < kappa <= 1.0:
        raise InvalidArgumentError(f"kappa must lie in (0, 1], got {kappa}")

    c_low = alpha / (1.0 - alpha)
    c_high = math.inf if kappa == 1.0 else kappa / (1.0 - kappa)
    return c_low, c_high


def witness_penalty(alpha: float, kappa: float) -> Optional[float]:
    """A penalty strictly inside the witness window, or None when the window is empty."""
    c_low, c_high = tightrope_bounds(alpha, kappa)
    if c_low >= c_high:
        return None
    return 0.5 * (c_low + min(c_high, 4.0 * c_low))


def closed_form_mixture_value(c: float, gamma: float, alpha: float) -> Tuple[float, float]:
    """
    Values at s0 and s1 of the mixture (1 - alpha) pi_0 + alpha pi* on the Tightrope MDP.

    Returns:
        Tuple[float, float]: (v_s0, v_s1)
    """

    v_s1 = gamma * (-c * (1.0 - alpha) + alpha) / (1.0 - gamma)
    v_s0 = gamma * alpha / (1.0 - gamma * (1.0 - alpha)) * v_s1
    return v_s0, v_s1


class ImprovementReport(BaseModel):
    """
    Outcome of one soft update pi -> (1 - alpha) pi + alpha pi_greedy
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    improved_everywhere: bool
    strict_somewhere: bool
    delta_vector: np.ndarray
    alpha: float
    mode: Literal["kappa", "h"]
    mode_value: float

    @model_validator(mode="after")
    def validate_consistency(self):
        if self.improved_everywhere != bool(np.min(self.delta_vector) >= -config.IMPROVEMENT_TOL):
            raise ValueError("improved_everywhere must agree with min(delta_vector)")
        return self

    @property
    def min_delta(self) -> float:
        return float(np.min(self.delta_vector))


def improvement_report(
        mdp: Mdp,
        pi: Policy,
        alpha: float,
        kappa: Optional[float] = None,
        h: Optional[int] = None,
        tol: float = config.SOLVER_TOL,
) -> ImprovementReport:
    """
    Greedy step in kappa- or h-mode, soft update with stepsize alpha, and entrywise comparison.

    Exactly one of kappa / h must be given.

    Args:
        mdp (Mdp): the MDP
        pi (Policy): current policy
        alpha (float): stepsize in (0, 1]
        kappa (Optional[float]): kappa-greedy mode
        h (Optional[int]): h-greedy mode
        tol (float): accuracy of the greedy solve

    Returns:
        ImprovementReport: v^{mix} - v^pi and its summary flags
    """

    if not 0.0 < alpha <= 1.0:
        raise InvalidArgumentError(f"alpha must lie in (0, 1], got {alpha}")
    if (kappa is None) == (h is None):
        raise InvalidArgumentError("exactly one of kappa or h must be given")

    v_pi = evaluate_policy(mdp, pi)
    if kappa is not None:
        greedy = kappa_greedy_policy(mdp, v_pi, kappa, tol)
        mode, mode_value = "kappa", float(kappa)
    else:
        greedy = h_greedy_policy(mdp, v_pi, h)
        mode, mode_value = "h", float(h)

    delta = evaluate_policy(mdp, mix_policies(pi, greedy, alpha)) - v_pi
    report = ImprovementReport(
        improved_everywhere=bool(np.min(delta) >= -config.IMPROVEMENT_TOL),
        strict_somewhere=bool(np.max(delta) > config.IMPROVEMENT_TOL),
        delta_vector=delta,
        alpha=alpha,
        mode=mode,
        mode_value=mode_value,
    )
    logger.debug(f"soft update {mode}={mode_value}, alpha={alpha}: min delta {report.min_delta:.3e}")
    return report
