"""
kappa- and h-greedy operators.

The kappa-greedy step w.r.t. v is the optimal control of a surrogate MDP with discount kappa*gamma
and reward shaped by (1 - kappa) gamma P v, so T_kappa and G_kappa are computed by solving that
surrogate. h-greedy is the 1-step greedy policy w.r.t. T^{h-1} v.
"""

import logging
from typing import Any, Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

import config
from mdp_core.errors import InvalidArgumentError
from mdp_core.mdp import Mdp, Policy, QFunction, ValueFunction
from mdp_core.operators import (
    apply_optimal_bellman,
    check_value,
    evaluate_policy,
    greedy_from_q,
    induced_kernel,
    induced_reward,
    solve_optimal,
)

logger = logging.getLogger(config.LOGGER_NAME)


def _check_kappa(kappa: float) -> None:
    if not 0.0 <= kappa <= 1.0:
        raise InvalidArgumentError(f"kappa must lie in [0, 1], got {kappa}")


def xi(gamma: float, kappa: float) -> float:
    """Contraction factor xi_kappa = gamma (1 - kappa) / (1 - gamma kappa) of T_kappa^pi and T_kappa."""
    if not 0.0 < gamma < 1.0:
        raise InvalidArgumentError(f"gamma must lie in (0, 1), got {gamma}")
    _check_kappa(kappa)
    return gamma * (1.0 - kappa) / (1.0 - gamma * kappa)


class KappaContext(BaseModel):
    """
    Pydantic class for a (kappa, gamma) pair and its derived contraction factor
    """

    kappa: float = Field(ge=0.0, le=1.0)
    gamma: float = Field(gt=0.0, lt=1.0)

    @property
    def xi(self) -> float:
        return xi(self.gamma, self.kappa)


class SurrogateMdp(Mdp):
    """
    kappa*gamma-discounted MDP with shaped reward r(s, a) + (1 - kappa) gamma sum_s' P(s'|s, a) v(s').

    Keeps a link to the base MDP, the shaping value and kappa. The discount may be 0 (kappa = 0),
    in which case the surrogate is a bandit.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    base: Mdp
    shaping_value: np.ndarray
    kappa: float = Field(ge=0.0, le=1.0)

    @field_validator("shaping_value", mode="before")
    @classmethod
    def as_value_array(cls, value: Any) -> np.ndarray:
        array = np.array(value, dtype=float)
        array.setflags(write=False)
        return array

    @classmethod
    def discount_is_valid(cls, gamma: float) -> bool:
        return 0.0 <= gamma < 1.0


def build_surrogate(mdp: Mdp, v, kappa: float) -> SurrogateMdp:
    """
    Build the surrogate MDP whose optimal policies are the kappa-greedy policies w.r.t. v.

    Args:
        mdp (Mdp): base MDP
        v (ValueFunction): value the greedy step is taken against
        kappa (float): in [0, 1]

    Returns:
        SurrogateMdp: transitions unchanged, discount kappa*gamma, shaped rewards
    """

    _check_kappa(kappa)
    v = check_value(mdp, v)
    shaped = mdp.rewards + (1.0 - kappa) * mdp.gamma * np.einsum("sat,t->sa", mdp.transitions, v)
    return SurrogateMdp(
        transitions=mdp.transitions,
        rewards=shaped,
        gamma=kappa * mdp.gamma,
        base=mdp,
        shaping_value=v,
        kappa=kappa,
    )


def apply_t_kappa_pi(mdp: Mdp, pi: Policy, kappa: float, v) -> ValueFunction:
    """T_kappa^pi v = (I - kappa gamma P^pi)^{-1} (r^pi + (1 - kappa) gamma P^pi v)."""
    _check_kappa(kappa)
    v = check_value(mdp, v)
    p_pi = induced_kernel(mdp, pi)
    rhs = induced_reward(mdp, pi) + (1.0 - kappa) * mdp.gamma * p_pi @ v
    return np.linalg.solve(np.eye(mdp.n_states) - kappa * mdp.gamma * p_pi, rhs)


def apply_t_kappa(mdp: Mdp, kappa: float, v, tol: float = config.SOLVER_TOL) -> Tuple[ValueFunction, Policy]:
    """
    T_kappa v and a deterministic member of G_kappa(v), by solving the surrogate to accuracy tol.

    Returns:
        Tuple[ValueFunction, Policy]: (T_kappa v, kappa-greedy policy)
    """

    if not tol > 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    return solve_optimal(build_surrogate(mdp, v, kappa), tol)


def kappa_greedy_policy(mdp: Mdp, v, kappa: float, tol: float = config.SOLVER_TOL) -> Policy:
    return apply_t_kappa(mdp, kappa, v, tol)[1]


def q_kappa_of_value(mdp: Mdp, v, kappa: float, tol: float = config.SOLVER_TOL) -> QFunction:
    """
    Optimal q-function of the surrogate built from v, by q-value iteration.

    Stops once ||q_{n+1} - q_n|| <= tol (1 - g) / g with g = kappa*gamma, so the result is tol-accurate.
    """

    if not tol > 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")

    surrogate = build_surrogate(mdp, v, kappa)
    g = surrogate.gamma
    if g == 0.0:
        return np.array(surrogate.rewards)

    threshold = tol * (1.0 - g) / g
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(config.VALUE_ITERATION_MAX_SWEEPS):
        q_next = surrogate.rewards + g * np.einsum("sat,t->sa", surrogate.transitions, q.max(axis=1))
        residual = np.max(np.abs(q_next - q))
        q = q_next
        if residual <= threshold:
            break
    else:
        logger.warning(f"q-value iteration hit {config.VALUE_ITERATION_MAX_SWEEPS} sweeps before tol={tol}")

    return q


def q_kappa(mdp: Mdp, pi: Policy, kappa: float, tol: float = config.SOLVER_TOL) -> QFunction:
    """q^pi_kappa: the surrogate optimal q-function for the shaping value v^pi."""
    return q_kappa_of_value(mdp, evaluate_policy(mdp, pi), kappa, tol)


def h_greedy_policy(mdp: Mdp, v, h: int) -> Policy:
    """
    First action of the optimal h-horizon control: the 1-step greedy policy w.r.t. T^{h-1} v.

    Args:
        mdp (Mdp): the MDP
        v (ValueFunction): terminal value
        h (int): horizon, >= 1

    Returns:
        Policy: canonical (lowest-index) member of G_h(v)
    """

    if h < 1:
        raise InvalidArgumentError(f"h must be >= 1, got {h}")

    w = check_value(mdp, v)
    for _ in range(h - 1):
        w, _ = apply_optimal_bellman(mdp, w)
    return apply_optimal_bellman(mdp, w)[1]


class IterationRecord(BaseModel):
    iteration: int
    value_change: float
    error_to_optimal: Optional[float] = None
    policy_actions: List[int]


class PolicyIterationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    policy: Policy
    history: List[IterationRecord]
    # max_iters ran out before the value stopped changing
    truncated: bool = False


def _multi_step_policy_iteration(
        mdp: Mdp,
        improve: Callable[[ValueFunction], Policy],
        tol: float,
        max_iters: int,
        pi0: Optional[Policy],
        v_star: Optional[ValueFunction],
) -> PolicyIterationResult:
    if not tol > 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")

    pi = pi0 if pi0 is not None else Policy.from_actions(np.zeros(mdp.n_states, dtype=int), mdp.n_actions)
    v = evaluate_policy(mdp, pi)
    history = []

    for k in range(1, max_iters + 1):
        pi_next = improve(v)
        v_next = evaluate_policy(mdp, pi_next)
        change = float(np.max(np.abs(v_next - v)))
        error = None if v_star is None else float(np.max(np.abs(v_star - v_next)))
        history.append(
            IterationRecord(
                iteration=k, value_change=change, error_to_optimal=error, policy_actions=pi_next.actions().tolist()
            )
        )
        logger.debug(f"iteration {k}: ||v_k - v_(k-1)|| = {change:.3e}, error = {error}")

        pi, v = pi_next, v_next
        if change <= tol:
            return PolicyIterationResult(policy=pi, history=history)

    logger.warning(f"policy iteration stopped at max_iters={max_iters} before converging")
    return PolicyIterationResult(policy=pi, history=history, truncated=True)


def exact_kappa_pi(
        mdp: Mdp,
        kappa: float,
        tol: float = config.SOLVER_TOL,
        max_iters: int = 1000,
        pi0: Optional[Policy] = None,
        v_star: Optional[ValueFunction] = None,
        greedy_tol: float = config.SOLVER_TOL,
) -> PolicyIterationResult:
    """
    Exact kappa-PI: pi_k <- G_kappa(v^{pi_(k-1)}), then exact evaluation, until the value stops moving.

    Args:
        mdp (Mdp): the MDP
        kappa (float): in [0, 1]; kappa = 0 is Howard's PI
        tol (float): stop once ||v^{pi_k} - v^{pi_(k-1)}|| <= tol
        max_iters (int): iteration cap; exceeding it returns the last policy with truncated=True
        pi0 (Optional[Policy]): starting policy, defaults to action 0 everywhere
        v_star (Optional[ValueFunction]): if given, each record carries ||v* - v^{pi_k}||
        greedy_tol (float): accuracy of each surrogate solve

    Returns:
        PolicyIterationResult: final policy, per-iteration records, truncation flag
    """

    _check_kappa(kappa)
    return _multi_step_policy_iteration(
        mdp, lambda v: kappa_greedy_policy(mdp, v, kappa, greedy_tol), tol, max_iters, pi0, v_star
    )


def exact_h_pi(
        mdp: Mdp,
        h: int,
        tol: float = config.SOLVER_TOL,
        max_iters: int = 1000,
        pi0: Optional[Policy] = None,
        v_star: Optional[ValueFunction] = None,
) -> PolicyIterationResult:
    """h-PI: the same loop with the h-greedy improvement step."""
    if h < 1:
        raise InvalidArgumentError(f"h must be >= 1, got {h}")
    return _multi_step_policy_iteration(mdp, lambda v: h_greedy_policy(mdp, v, h), tol, max_iters, pi0, v_star)
