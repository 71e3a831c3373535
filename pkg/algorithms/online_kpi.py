"""
Two-timescale online kappa-PI.

Fast timescale: q (the 1-step q of the current policy) and q_kappa (the surrogate optimal q) move with
stepsize mu_f(phi(s, a)). Slow timescale: the policy row at the visited state moves towards the
"cautious" action with stepsize mu_s(nu(s)). Samples come from a generative model G(nu, pi).

The per-step update is written against `x[s][a]` indexing so it runs unchanged on numpy arrays
(online_update) and on nested lists (the run_online hot loop, where scalar list access is much cheaper).
"""

import bisect
import logging
from typing import Any, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

import config
from mdp_core.errors import InvalidArgumentError
from mdp_core.mdp import Mdp, Policy, QFunction, StateDistribution
from mdp_core.operators import check_policy, check_q, q_from_value, solve_optimal

logger = logging.getLogger(config.LOGGER_NAME)


class StepSchedule(BaseModel):
    """
    Pydantic class for the stepsizes mu_f(n) = n^-fast_exponent and mu_s(n) = n^-slow_exponent
    """

    fast_exponent: float = Field(default=config.DEFAULT_FAST_EXPONENT)
    slow_exponent: float = Field(default=config.DEFAULT_SLOW_EXPONENT)

    @model_validator(mode="after")
    def validate_exponents(self):
        # sum mu = inf, sum mu^2 < inf, and mu_s / mu_f -> 0
        if not 0.5 < self.fast_exponent < self.slow_exponent <= 1.0:
            raise ValueError(
                f"need 0.5 < fast_exponent < slow_exponent <= 1, got {self.fast_exponent}, {self.slow_exponent}"
            )
        return self

    def fast(self, n: int) -> float:
        return n ** -self.fast_exponent

    def slow(self, n: int) -> float:
        return n ** -self.slow_exponent


class Transition(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int


class OnlineState(BaseModel):
    """
    (q_n, q_kappa_n, pi_n) plus the visitation counters nu_n(s), phi_n(s, a) and the step count n
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    q: np.ndarray
    q_kappa: np.ndarray
    pi: np.ndarray
    state_counts: np.ndarray
    sa_counts: np.ndarray
    step: int = Field(ge=0)

    @field_validator("q", "q_kappa", "pi", mode="before")
    @classmethod
    def as_float_array(cls, value: Any) -> np.ndarray:
        array = np.array(value, dtype=float)
        array.setflags(write=False)
        return array

    @field_validator("state_counts", "sa_counts", mode="before")
    @classmethod
    def as_int_array(cls, value: Any) -> np.ndarray:
        array = np.array(value, dtype=np.int64)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def validate_counters(self):
        if not self.state_counts.sum() == self.sa_counts.sum() == self.step:
            raise ValueError(
                f"counter mismatch: sum nu={self.state_counts.sum()}, sum phi={self.sa_counts.sum()}, step={self.step}"
            )
        if not np.allclose(self.pi.sum(axis=1), 1.0, rtol=0.0, atol=config.STOCHASTIC_ROW_TOL) or np.any(self.pi < 0.0):
            raise ValueError("policy rows left the simplex")
        return self

    @property
    def policy(self) -> Policy:
        return Policy(probs=self.pi)

    @classmethod
    def initial(cls, n_states: int, n_actions: int) -> "OnlineState":
        """q_0 = q_kappa_0 = 0, pi_0 uniform, counters at zero."""
        return cls(
            q=np.zeros((n_states, n_actions)),
            q_kappa=np.zeros((n_states, n_actions)),
            pi=np.full((n_states, n_actions), 1.0 / n_actions),
            state_counts=np.zeros(n_states, dtype=np.int64),
            sa_counts=np.zeros((n_states, n_actions), dtype=np.int64),
            step=0,
        )


class TraceSnapshot(BaseModel):
    step: int
    q_err_inf: float
    qk_err_inf: float
    policy_match_frac: float


class OnlineTrace(BaseModel):
    snapshots: List[TraceSnapshot] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_steps(self):
        steps = [snapshot.step for snapshot in self.snapshots]
        if any(later <= earlier for earlier, later in zip(steps, steps[1:])):
            raise ValueError("snapshot steps must be strictly increasing")
        return self

    def to_rows(self) -> List[dict]:
        return [snapshot.model_dump() for snapshot in self.snapshots]


def _cumulative(probs: Sequence[float]) -> List[float]:
    return np.cumsum(probs).tolist()


def _inverse_cdf(cumulative: Sequence[float], u: float) -> int:
    # clamp: rounding can leave cumulative[-1] a hair below 1
    return min(bisect.bisect_right(cumulative, u), len(cumulative) - 1)


class GenerativeModel:
    """
    Generative model G(nu, pi): s ~ nu, a ~ pi(s), s' ~ P(.|s, a), r = r(s, a).

    Args:
        mdp (Mdp): the MDP to sample from
        nu (StateDistribution): sampling measure, strictly positive on every state
    """

    def __init__(self, mdp: Mdp, nu: StateDistribution):
        if nu.n_states != mdp.n_states:
            raise InvalidArgumentError(f"nu has {nu.n_states} states, MDP has {mdp.n_states}")
        nu.require_strictly_positive()

        self.mdp = mdp
        self.state_cdf = _cumulative(nu.p)
        self.next_state_cdf = [[_cumulative(mdp.transitions[s, a]) for a in range(mdp.n_actions)]
                               for s in range(mdp.n_states)]
        self.rewards = mdp.rewards.tolist()

    def transition_from_uniforms(self, pi_rows, u_state: float, u_action: float, u_next: float) -> Transition:
        """Inverse-CDF draw of one transition; pi_rows is any pi[s][a] indexable (array or nested list)."""
        s = _inverse_cdf(self.state_cdf, u_state)

        row = pi_rows[s]
        a, acc = len(row) - 1, 0.0
        for index, prob in enumerate(row):
            acc += prob
            if u_action < acc:
                a = index
                break

        s_next = _inverse_cdf(self.next_state_cdf[s][a], u_next)
        return Transition(s, a, self.rewards[s][a], s_next)

    def sample(self, pi_rows, rng: np.random.Generator) -> Transition:
        u_state, u_action, u_next = rng.random(3).tolist()
        return self.transition_from_uniforms(pi_rows, u_state, u_action, u_next)


def sample_step(mdp: Mdp, nu: StateDistribution, pi: Policy, rng: np.random.Generator) -> Transition:
    """
    One draw from G(nu, pi).

    Args:
        mdp (Mdp): the MDP
        nu (StateDistribution): strictly positive sampling measure (InvalidMeasureError otherwise)
        pi (Policy): behaviour policy
        rng (np.random.Generator): seeded generator

    Returns:
        Transition: (s, a, r, s')
    """

    check_policy(mdp, pi)
    return GenerativeModel(mdp, nu).sample(pi.probs, rng)


def _argmax(row) -> int:
    # first maximiser, i.e. lowest index on ties
    best, best_value = 0, row[0]
    for index in range(1, len(row)):
        if row[index] > best_value:
            best, best_value = index, row[index]
    return best


def cautious_action(s: int, q, q_kappa, pi) -> int:
    """
    b_s: take the kappa-greedy action only when q certifies it does not degrade the current policy.

    a_kappa = argmax_a q_kappa(s, a) is returned if q(s, a_kappa) >= sum_a pi(a|s) q(s, a),
    otherwise argmax_a q(s, a). Ties go to the lowest index; equality picks a_kappa.

    Args:
        s (int): state
        q: q[s][a] table (array, nested list, or QFunction)
        q_kappa: q_kappa[s][a] table
        pi: pi[s][a] table, or a Policy

    Returns:
        int: the chosen action
    """

    if isinstance(pi, Policy):
        pi = pi.probs
    q_row = q[s]
    a_kappa = _argmax(q_kappa[s])
    v_pi = sum(p * value for p, value in zip(pi[s], q_row))
    if q_row[a_kappa] >= v_pi:
        return a_kappa
    return _argmax(q_row)


def td_errors(q, q_kappa, pi, t: Transition, kappa: float, gamma: float) -> Tuple[float, float]:
    """
    Fast-timescale errors delta_n and delta_kappa_n, with v^pi(s') = sum_a pi(a|s') q(s', a).
    """

    s, a, r, s_next = t
    v_next = sum(p * value for p, value in zip(pi[s_next], q[s_next]))
    delta = r + gamma * v_next - q[s][a]
    delta_kappa = r + gamma * (1.0 - kappa) * v_next + kappa * gamma * max(q_kappa[s_next]) - q_kappa[s][a]
    return delta, delta_kappa


def _update_in_place(q, q_kappa, pi, state_counts, sa_counts, t: Transition,
                     sched: StepSchedule, kappa: float, gamma: float) -> None:
    s, a = t.s, t.a

    # counters first: stepsizes are indexed by phi_{n+1}, nu_{n+1}
    state_counts[s] += 1
    sa_counts[s][a] += 1

    delta, delta_kappa = td_errors(q, q_kappa, pi, t, kappa, gamma)
    lr_fast = sched.fast(sa_counts[s][a])
    q[s][a] += lr_fast * delta
    q_kappa[s][a] += lr_fast * delta_kappa

    target = cautious_action(s, q, q_kappa, pi)
    lr_slow = sched.slow(state_counts[s])
    row = pi[s]
    for index in range(len(row)):
        row[index] = (1.0 - lr_slow) * row[index] + (lr_slow if index == target else 0.0)
    # rounding drift would otherwise build up over millions of visits
    total = sum(row)
    for index in range(len(row)):
        row[index] /= total


def online_update(state: OnlineState, t: Transition, sched: StepSchedule, kappa: float, gamma: float) -> OnlineState:
    """
    One iteration of the coupled fast/slow updates; returns a new state.

    Args:
        state (OnlineState): current iterate
        t (Transition): sampled transition
        sched (StepSchedule): stepsize schedule
        kappa (float): in [0, 1]
        gamma (float): discount of the MDP

    Returns:
        OnlineState: the next iterate
    """

    n_states, n_actions = state.q.shape
    if not (0 <= t.s < n_states and 0 <= t.s_next < n_states and 0 <= t.a < n_actions):
        raise InvalidArgumentError(f"transition {t} out of range for ({n_states}, {n_actions})")

    q, q_kappa, pi = state.q.tolist(), state.q_kappa.tolist(), state.pi.tolist()
    state_counts, sa_counts = state.state_counts.tolist(), state.sa_counts.tolist()
    _update_in_place(q, q_kappa, pi, state_counts, sa_counts, t, sched, kappa, gamma)

    return OnlineState(
        q=q, q_kappa=q_kappa, pi=pi, state_counts=state_counts, sa_counts=sa_counts, step=state.step + 1
    )


def apply_H(mdp: Mdp, pi: Policy, kappa: float, q, q_kappa) -> Tuple[QFunction, QFunction]:
    """
    The coupled operator H_kappa^pi(q, q_kappa).

    First component r + gamma E[q(s', a^pi)], second component
    r + gamma (1 - kappa) E[q(s', a^pi)] + kappa gamma E[max_a' q_kappa(s', a')].
    """

    check_policy(mdp, pi)
    q = check_q(mdp, q)
    q_kappa = check_q(mdp, q_kappa)

    expected_v_pi = np.einsum("sat,t->sa", mdp.transitions, np.sum(pi.probs * q, axis=1))
    expected_max = np.einsum("sat,t->sa", mdp.transitions, q_kappa.max(axis=1))

    first = mdp.rewards + mdp.gamma * expected_v_pi
    second = mdp.rewards + mdp.gamma * (1.0 - kappa) * expected_v_pi + kappa * mdp.gamma * expected_max
    return first, second


def _snapshot(step: int, q, q_kappa, pi, q_star: np.ndarray, optimal_actions: np.ndarray) -> TraceSnapshot:
    q, q_kappa, pi = np.asarray(q), np.asarray(q_kappa), np.asarray(pi)
    return TraceSnapshot(
        step=step,
        q_err_inf=float(np.max(np.abs(q - q_star))),
        qk_err_inf=float(np.max(np.abs(q_kappa - q_star))),
        policy_match_frac=float(np.mean(np.argmax(pi, axis=1) == optimal_actions)),
    )


def run_online(
        mdp: Mdp,
        nu: StateDistribution,
        kappa: float,
        sched: StepSchedule,
        n_steps: int,
        seed: int,
        snapshot_stride: int = config.DEFAULT_SNAPSHOT_STRIDE,
        q_star: Optional[np.ndarray] = None,
) -> Tuple[OnlineState, OnlineTrace]:
    """
    Run two-timescale online kappa-PI for n_steps samples.

    Deterministic given seed: uniforms are drawn in fixed-size chunks from np.random.default_rng(seed).

    Args:
        mdp (Mdp): the MDP
        nu (StateDistribution): strictly positive sampling measure
        kappa (float): in [0, 1]
        sched (StepSchedule): stepsizes
        n_steps (int): number of samples, >= 1
        seed (int): generator seed
        snapshot_stride (int): record a snapshot every this many steps (and at the last step)
        q_star (Optional[np.ndarray]): reference q*, computed with solve_optimal when omitted

    Returns:
        Tuple[OnlineState, OnlineTrace]: final iterate and the error trace
    """

    if n_steps < 1:
        raise InvalidArgumentError(f"n_steps must be >= 1, got {n_steps}")
    if snapshot_stride < 1:
        raise InvalidArgumentError(f"snapshot_stride must be >= 1, got {snapshot_stride}")
    if not 0.0 <= kappa <= 1.0:
        raise InvalidArgumentError(f"kappa must lie in [0, 1], got {kappa}")

    model = GenerativeModel(mdp, nu)
    if q_star is None:
        v_star, _ = solve_optimal(mdp)
        q_star = q_from_value(mdp, v_star)
    optimal_actions = np.argmax(q_star, axis=1)

    initial = OnlineState.initial(mdp.n_states, mdp.n_actions)
    q, q_kappa, pi = initial.q.tolist(), initial.q_kappa.tolist(), initial.pi.tolist()
    state_counts, sa_counts = initial.state_counts.tolist(), initial.sa_counts.tolist()
    gamma = mdp.gamma

    rng = np.random.default_rng(seed)
    snapshots = []
    step = 0
    logger.info(f"online kappa-PI: kappa={kappa}, n_steps={n_steps}, seed={seed}")

    while step < n_steps:
        chunk = min(config.RNG_CHUNK_SIZE, n_steps - step)
        for u_state, u_action, u_next in rng.random((chunk, 3)).tolist():
            t = model.transition_from_uniforms(pi, u_state, u_action, u_next)
            _update_in_place(q, q_kappa, pi, state_counts, sa_counts, t, sched, kappa, gamma)
            step += 1
            if step % snapshot_stride == 0 or step == n_steps:
                snapshots.append(_snapshot(step, q, q_kappa, pi, q_star, optimal_actions))

        logger.debug(f"online kappa-PI: {step}/{n_steps} steps, q error {snapshots[-1].q_err_inf if snapshots else 'n/a'}")

    final = OnlineState(q=q, q_kappa=q_kappa, pi=pi, state_counts=state_counts, sa_counts=sa_counts, step=step)
    return final, OnlineTrace(snapshots=snapshots)
