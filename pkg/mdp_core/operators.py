"""
Exact policy evaluation, 1-step Bellman operators and the reference optimal solver.

All functions are pure: they read the (immutable) MDP and policy and return fresh arrays.
"""

import itertools
import logging
from typing import Iterator, Tuple

import numpy as np

import config
from mdp_core.errors import InvalidArgumentError
from mdp_core.mdp import Mdp, Policy, QFunction, ValueFunction

logger = logging.getLogger(config.LOGGER_NAME)


def check_policy(mdp: Mdp, pi: Policy) -> None:
    if (pi.n_states, pi.n_actions) != (mdp.n_states, mdp.n_actions):
        raise InvalidArgumentError(
            f"policy shape ({pi.n_states}, {pi.n_actions}) does not match MDP ({mdp.n_states}, {mdp.n_actions})"
        )


def check_value(mdp: Mdp, v) -> ValueFunction:
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise InvalidArgumentError(f"value shape {v.shape} does not match n_states={mdp.n_states}")
    return v


def check_q(mdp: Mdp, q) -> QFunction:
    q = np.asarray(q, dtype=float)
    if q.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidArgumentError(f"q shape {q.shape} does not match ({mdp.n_states}, {mdp.n_actions})")
    return q


def induced_kernel(mdp: Mdp, pi: Policy) -> np.ndarray:
    """P^pi[s, s'] = sum_a pi(a|s) P(s'|s, a)."""
    check_policy(mdp, pi)
    return np.einsum("sa,sat->st", pi.probs, mdp.transitions)


def induced_reward(mdp: Mdp, pi: Policy) -> np.ndarray:
    """r^pi[s] = sum_a pi(a|s) r(s, a)."""
    check_policy(mdp, pi)
    return np.einsum("sa,sa->s", pi.probs, mdp.rewards)


def evaluate_policy(mdp: Mdp, pi: Policy) -> ValueFunction:
    """
    Exact value of a stationary policy, v^pi = (I - gamma P^pi)^{-1} r^pi.

    Args:
        mdp (Mdp): the MDP
        pi (Policy): policy over the MDP's states and actions

    Returns:
        ValueFunction: v^pi
    """

    p_pi = induced_kernel(mdp, pi)
    r_pi = induced_reward(mdp, pi)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)


def q_from_value(mdp: Mdp, v) -> QFunction:
    """One-step lookahead q(s, a) = r(s, a) + gamma sum_s' P(s'|s, a) v(s')."""
    v = check_value(mdp, v)
    return mdp.rewards + mdp.gamma * np.einsum("sat,t->sa", mdp.transitions, v)


def q_of_policy(mdp: Mdp, pi: Policy) -> QFunction:
    return q_from_value(mdp, evaluate_policy(mdp, pi))


def apply_bellman(mdp: Mdp, pi: Policy, v) -> ValueFunction:
    """T^pi v = r^pi + gamma P^pi v."""
    v = check_value(mdp, v)
    return induced_reward(mdp, pi) + mdp.gamma * induced_kernel(mdp, pi) @ v


def greedy_from_q(q: QFunction) -> Policy:
    """Deterministic argmax policy; np.argmax breaks ties towards the lowest action index."""
    return Policy.from_actions(np.argmax(q, axis=1), q.shape[1])


def apply_optimal_bellman(mdp: Mdp, v) -> Tuple[ValueFunction, Policy]:
    """
    Optimal Bellman operator and its canonical greedy policy.

    Returns:
        Tuple[ValueFunction, Policy]: (T v, the lowest-index deterministic member of G(v))
    """

    q = q_from_value(mdp, v)
    return q.max(axis=1), greedy_from_q(q)


def solve_optimal(mdp: Mdp, tol: float = config.SOLVER_TOL) -> Tuple[ValueFunction, Policy]:
    """
    Reference solver: value iteration until ||T v - v|| <= tol (1 - gamma) / (2 gamma).

    At that point the returned value T v is within tol / 2 of v* and the greedy policy w.r.t. it is
    tol-optimal. A zero discount (surrogate bandits) is solved by a single backup.

    Args:
        mdp (Mdp): the MDP (gamma may be 0 for surrogate MDPs)
        tol (float): target accuracy, > 0

    Returns:
        Tuple[ValueFunction, Policy]: (v, greedy policy w.r.t. v)
    """

    if not tol > 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")

    if mdp.gamma == 0.0:
        return mdp.rewards.max(axis=1), greedy_from_q(mdp.rewards)

    v = np.zeros(mdp.n_states)
    threshold = tol * (1.0 - mdp.gamma) / (2.0 * mdp.gamma)
    for sweep in range(config.VALUE_ITERATION_MAX_SWEEPS):
        v_next, _ = apply_optimal_bellman(mdp, v)
        residual = np.max(np.abs(v_next - v))
        v = v_next
        if residual <= threshold:
            logger.debug(f"value iteration converged after {sweep + 1} sweeps (residual {residual:.3e})")
            break
    else:
        logger.warning(
            f"value iteration hit {config.VALUE_ITERATION_MAX_SWEEPS} sweeps before reaching tol={tol}"
        )

    q = q_from_value(mdp, v)
    return v, greedy_from_q(q)


def mix_policies(p1: Policy, p2: Policy, alpha: float) -> Policy:
    """Soft update (1 - alpha) p1 + alpha p2."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    if p1.probs.shape != p2.probs.shape:
        raise InvalidArgumentError(f"policy shapes differ: {p1.probs.shape} vs {p2.probs.shape}")
    if alpha == 0.0:
        return p1
    if alpha == 1.0:
        return p2
    return Policy(probs=(1.0 - alpha) * p1.probs + alpha * p2.probs)


def iter_deterministic_policies(mdp: Mdp) -> Iterator[Policy]:
    """All n_actions ** n_states deterministic policies; meant for brute-force checks on tiny MDPs."""
    for actions in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        yield Policy.from_actions(actions, mdp.n_actions)


def brute_force_optimal(mdp: Mdp) -> Tuple[ValueFunction, Policy]:
    """v* by exhaustive enumeration: the optimal policy dominates every other one entrywise."""
    best_v, best_pi = None, None
    for pi in iter_deterministic_policies(mdp):
        v = evaluate_policy(mdp, pi)
        if best_v is None or np.sum(v) > np.sum(best_v):
            best_v, best_pi = v, pi
    return best_v, best_pi
