"""
Approximate kappa-PI with hard updates: kappa-API and kappa-PSDP driven by a controlled-error
kappa-greedy oracle, plus evaluation and Monte-Carlo rollout of the non-stationary policy sigma_{kappa,k}.
"""

import logging
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

import config
from greedy.kappa_greedy import apply_t_kappa_pi, q_kappa_of_value
from mdp_core.errors import InvalidArgumentError, OracleContractError
from mdp_core.mdp import Mdp, Policy, StateDistribution, ValueFunction
from mdp_core.operators import check_policy, check_value, evaluate_policy, greedy_from_q, solve_optimal

logger = logging.getLogger(config.LOGGER_NAME)


class CorruptionMode(str, Enum):
    NONE = "none"
    WORST_STATE_SWAP = "worst_state_swap"
    RANDOM_SWAP = "random_swap"


class GreedyOracleConfig(BaseModel):
    """
    Pydantic class for the approximate kappa-greedy oracle: error budget delta under measure nu
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    delta: float = Field(ge=0.0)
    nu: StateDistribution
    corruption_mode: CorruptionMode = CorruptionMode.NONE
    seed: int = 0


class NonStationaryPolicy(BaseModel):
    """
    sigma_{kappa,k}: stages Pi[1..k] run newest first for Geometric(1 - kappa) durations, then pi_0 forever
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    stages: List[Policy] = Field(default_factory=list)
    kappa: float = Field(ge=0.0, le=1.0)
    base_policy: Policy

    @model_validator(mode="after")
    def validate_stages(self):
        for index, stage in enumerate(self.stages, start=1):
            if not stage.is_deterministic:
                raise ValueError(f"stage Pi[{index}] must be deterministic")
            if stage.probs.shape != self.base_policy.probs.shape:
                raise ValueError(f"stage Pi[{index}] shape differs from the base policy")
        return self

    def extended(self, stage: Policy) -> "NonStationaryPolicy":
        """Append-only growth: a new sigma with `stage` as Pi[k+1]."""
        return NonStationaryPolicy(stages=[*self.stages, stage], kappa=self.kappa, base_policy=self.base_policy)

    @property
    def k(self) -> int:
        return len(self.stages)


class ApiIteration(BaseModel):
    iteration: int
    policy_actions: List[int]
    value: List[float]
    loss: float
    achieved_slack: float


class ApiTrace(BaseModel):
    iterations: List[ApiIteration] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_contiguous(self):
        for expected, record in enumerate(self.iterations, start=1):
            if record.iteration != expected:
                raise ValueError(f"iterations must be contiguous from 1, found {record.iteration} at {expected}")
        return self

    @property
    def losses(self) -> List[float]:
        return [record.loss for record in self.iterations]


def loss(mu: StateDistribution, v_star, v) -> float:
    """mu (v* - v)."""
    v_star = np.asarray(v_star, dtype=float)
    v = np.asarray(v, dtype=float)
    if not v_star.shape == v.shape == mu.p.shape:
        raise InvalidArgumentError(f"shape mismatch: mu {mu.p.shape}, v* {v_star.shape}, v {v.shape}")
    return float(mu.p @ (v_star - v))


def _nu_slack(nu: StateDistribution, t_kappa_v: np.ndarray, mdp: Mdp, pi: Policy, kappa: float, v) -> float:
    return float(nu.p @ (t_kappa_v - apply_t_kappa_pi(mdp, pi, kappa, v)))


def approx_kappa_greedy(
        mdp: Mdp,
        v,
        kappa: float,
        cfg: GreedyOracleConfig,
        rng: np.random.Generator,
        tol: float = config.SOLVER_TOL,
) -> Tuple[Policy, float]:
    """
    Approximate kappa-greedy oracle: a deterministic pi with nu T_kappa^pi v >= nu T_kappa v - delta.

    Starts from the exact kappa-greedy policy. Unless corruption is off, it then walks over candidate
    swaps (each state's runner-up action under the surrogate q) and keeps a swap whenever the exact
    nu-weighted slack stays within delta. worst_state_swap visits states by decreasing one-step cost
    nu(s) (q_kappa(s, a*) - q_kappa(s, b)); random_swap visits them in an rng-drawn order. Swaps with
    zero one-step cost are skipped.

    Args:
        mdp (Mdp): the MDP
        v (ValueFunction): value the greedy step is taken against
        kappa (float): in [0, 1]
        cfg (GreedyOracleConfig): error budget, measure and corruption mode
        rng (np.random.Generator): used by random_swap
        tol (float): accuracy of the surrogate solve

    Returns:
        Tuple[Policy, float]: (policy, achieved slack nu (T_kappa v - T_kappa^pi v) in [0, delta])
    """

    v = check_value(mdp, v)
    if cfg.nu.n_states != mdp.n_states:
        raise InvalidArgumentError(f"nu has {cfg.nu.n_states} states, MDP has {mdp.n_states}")

    q_surrogate = q_kappa_of_value(mdp, v, kappa, tol)
    exact = greedy_from_q(q_surrogate)
    t_kappa_v = apply_t_kappa_pi(mdp, exact, kappa, v)

    actions = exact.actions().copy()
    slack = 0.0

    if cfg.corruption_mode != CorruptionMode.NONE and cfg.delta > 0.0 and mdp.n_actions > 1:
        candidates = []
        for s in range(mdp.n_states):
            row = q_surrogate[s].copy()
            best = actions[s]
            row[best] = -np.inf
            runner_up = int(np.argmax(row))
            cost = cfg.nu.p[s] * (q_surrogate[s, best] - q_surrogate[s, runner_up])
            if cost > 0.0:
                candidates.append((s, runner_up, cost))

        if cfg.corruption_mode == CorruptionMode.WORST_STATE_SWAP:
            candidates.sort(key=lambda candidate: (-candidate[2], candidate[0]))
        else:
            candidates = [candidates[i] for i in rng.permutation(len(candidates))]

        for s, runner_up, _ in candidates:
            trial = actions.copy()
            trial[s] = runner_up
            trial_slack = _nu_slack(cfg.nu, t_kappa_v, mdp, Policy.from_actions(trial, mdp.n_actions), kappa, v)
            if trial_slack <= cfg.delta:
                actions, slack = trial, trial_slack
                logger.debug(f"oracle swapped state {s} to action {runner_up}, slack {slack:.3e}")

    policy = Policy.from_actions(actions, mdp.n_actions)
    achieved = _nu_slack(cfg.nu, t_kappa_v, mdp, policy, kappa, v)
    if achieved > cfg.delta + config.IMPROVEMENT_TOL:
        raise OracleContractError(f"achieved slack {achieved:.3e} exceeds delta={cfg.delta}")

    return policy, max(achieved, 0.0)


def _initial_policy(mdp: Mdp, pi0: Optional[Policy]) -> Policy:
    if pi0 is None:
        return Policy.from_actions(np.zeros(mdp.n_states, dtype=int), mdp.n_actions)
    check_policy(mdp, pi0)
    return pi0


def kappa_api(
        mdp: Mdp,
        kappa: float,
        cfg: GreedyOracleConfig,
        k: int,
        v0_policy: Optional[Policy] = None,
        mu: Optional[StateDistribution] = None,
        v_star: Optional[ValueFunction] = None,
) -> ApiTrace:
    """
    kappa-API: pi_k <- oracle(v^{pi_(k-1)}), v <- v^{pi_k} (exact evaluation).

    Args:
        mdp (Mdp): the MDP
        kappa (float): in [0, 1]
        cfg (GreedyOracleConfig): oracle configuration; cfg.seed seeds the oracle's generator
        k (int): number of iterations, >= 1
        v0_policy (Optional[Policy]): pi_0, defaults to action 0 everywhere
        mu (Optional[StateDistribution]): loss measure, defaults to cfg.nu
        v_star (Optional[ValueFunction]): optimal value, computed with solve_optimal when omitted

    Returns:
        ApiTrace: per-iteration policy, exact value, loss mu (v* - v^{pi_k}) and achieved slack
    """

    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")

    mu = mu if mu is not None else cfg.nu
    if v_star is None:
        v_star, _ = solve_optimal(mdp)
    rng = np.random.default_rng(cfg.seed)

    v = evaluate_policy(mdp, _initial_policy(mdp, v0_policy))
    iterations = []
    for iteration in range(1, k + 1):
        pi, slack = approx_kappa_greedy(mdp, v, kappa, cfg, rng)
        v = evaluate_policy(mdp, pi)
        iterations.append(
            ApiIteration(
                iteration=iteration,
                policy_actions=pi.actions().tolist(),
                value=v.tolist(),
                loss=loss(mu, v_star, v),
                achieved_slack=slack,
            )
        )
        logger.debug(f"kappa-API iteration {iteration}: loss {iterations[-1].loss:.6g}, slack {slack:.3e}")

    return ApiTrace(iterations=iterations)


def eval_sigma(mdp: Mdp, sigma: NonStationaryPolicy) -> ValueFunction:
    """v^{sigma_{kappa,k}} = T_kappa^{Pi[k]} ... T_kappa^{Pi[1]} v^{pi_0}."""
    v = evaluate_policy(mdp, sigma.base_policy)
    for stage in sigma.stages:
        v = apply_t_kappa_pi(mdp, stage, sigma.kappa, v)
    return v


def kappa_psdp(
        mdp: Mdp,
        kappa: float,
        cfg: GreedyOracleConfig,
        k: int,
        pi0: Optional[Policy] = None,
        mu: Optional[StateDistribution] = None,
        v_star: Optional[ValueFunction] = None,
) -> Tuple[NonStationaryPolicy, ApiTrace]:
    """
    kappa-PSDP: pi_k <- oracle(v), v <- T_kappa^{pi_k} v, Pi <- Pi + [pi_k].

    Args:
        mdp (Mdp): the MDP
        kappa (float): in [0, 1]
        cfg (GreedyOracleConfig): oracle configuration
        k (int): number of iterations, >= 1
        pi0 (Optional[Policy]): base policy, defaults to action 0 everywhere
        mu (Optional[StateDistribution]): loss measure, defaults to cfg.nu
        v_star (Optional[ValueFunction]): optimal value, computed with solve_optimal when omitted

    Returns:
        Tuple[NonStationaryPolicy, ApiTrace]: sigma_{kappa,k} and the per-iteration losses mu (v* - v^{sigma_{kappa,j}})
    """

    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")

    mu = mu if mu is not None else cfg.nu
    if v_star is None:
        v_star, _ = solve_optimal(mdp)
    rng = np.random.default_rng(cfg.seed)

    sigma = NonStationaryPolicy(kappa=kappa, base_policy=_initial_policy(mdp, pi0))
    v = evaluate_policy(mdp, sigma.base_policy)
    iterations = []
    for iteration in range(1, k + 1):
        pi, slack = approx_kappa_greedy(mdp, v, kappa, cfg, rng)
        v = apply_t_kappa_pi(mdp, pi, kappa, v)
        sigma = sigma.extended(pi)
        v_sigma = eval_sigma(mdp, sigma)
        iterations.append(
            ApiIteration(
                iteration=iteration,
                policy_actions=pi.actions().tolist(),
                value=v_sigma.tolist(),
                loss=loss(mu, v_star, v_sigma),
                achieved_slack=slack,
            )
        )
        logger.debug(f"kappa-PSDP iteration {iteration}: loss {iterations[-1].loss:.6g}, slack {slack:.3e}")

    return sigma, ApiTrace(iterations=iterations)


def _stage_durations(kappa: float, rng: np.random.Generator, size, horizon: int) -> np.ndarray:
    # P(N = n) = (1 - kappa) kappa^(n-1), n >= 1; kappa = 1 never switches within the horizon
    if kappa >= 1.0:
        return np.full(size, horizon + 1, dtype=np.int64)
    return rng.geometric(1.0 - kappa, size=size)


def rollout_sigma(mdp: Mdp, sigma: NonStationaryPolicy, s0: int, horizon: int, rng: np.random.Generator) -> float:
    """
    One truncated rollout of sigma_{kappa,k} from s0: Pi[k] for N_k steps, then Pi[k-1], ..., then pi_0.

    Returns:
        float: sum_{t < horizon} gamma^t r_t
    """

    return float(rollout_sigma_batch(mdp, sigma, s0, horizon, 1, rng)[0][0])


def rollout_sigma_batch(
        mdp: Mdp,
        sigma: NonStationaryPolicy,
        s0: int,
        horizon: int,
        n_rollouts: int,
        rng: np.random.Generator,
) -> Tuple[np.ndarray, float, float]:
    """
    Vectorised rollouts of sigma_{kappa,k}.

    Args:
        mdp (Mdp): the MDP
        sigma (NonStationaryPolicy): the non-stationary policy
        s0 (int): start state
        horizon (int): truncation horizon, >= 1
        n_rollouts (int): number of independent rollouts
        rng (np.random.Generator): seeded generator

    Returns:
        Tuple[np.ndarray, float, float]: (returns, mean, standard error)
    """

    if horizon < 1:
        raise InvalidArgumentError(f"horizon must be >= 1, got {horizon}")
    if not 0 <= s0 < mdp.n_states:
        raise InvalidArgumentError(f"start state {s0} out of range")

    # phase j in 1..k runs Pi[j]; phase 0 runs pi_0
    stage_actions = np.array([np.zeros(mdp.n_states, dtype=int)] + [stage.actions() for stage in sigma.stages])
    base_cdf = np.cumsum(sigma.base_policy.probs, axis=1)
    next_cdf = np.cumsum(mdp.transitions, axis=2)

    states = np.full(n_rollouts, s0, dtype=np.int64)
    phase = np.full(n_rollouts, sigma.k, dtype=np.int64)
    remaining = _stage_durations(sigma.kappa, rng, n_rollouts, horizon) if sigma.k > 0 \
        else np.zeros(n_rollouts, dtype=np.int64)
    returns = np.zeros(n_rollouts)
    discount = 1.0

    for _ in range(horizon):
        u_action = rng.random(n_rollouts)
        u_next = rng.random(n_rollouts)

        sampled_base = np.minimum((u_action[:, None] >= base_cdf[states]).sum(axis=1), mdp.n_actions - 1)
        actions = np.where(phase > 0, stage_actions[phase, states], sampled_base)

        returns += discount * mdp.rewards[states, actions]
        discount *= mdp.gamma
        states = np.minimum((u_next[:, None] >= next_cdf[states, actions]).sum(axis=1), mdp.n_states - 1)

        remaining -= 1
        switching = (phase > 0) & (remaining == 0)
        if np.any(switching):
            phase[switching] -= 1
            redraw = switching & (phase > 0)
            remaining[redraw] = _stage_durations(sigma.kappa, rng, int(redraw.sum()), horizon)

    standard_error = float(returns.std(ddof=1) / np.sqrt(n_rollouts)) if n_rollouts > 1 else float("nan")
    return returns, float(returns.mean()), standard_error


def compare_psdp_api(
        mdp: Mdp,
        kappa: float,
        cfg: GreedyOracleConfig,
        k: int,
        mu: Optional[StateDistribution] = None,
) -> Tuple[float, float]:
    """Final losses (kappa-PSDP, kappa-API) at equal budget and oracle seed; reported, not asserted."""
    v_star, _ = solve_optimal(mdp)
    _, psdp_trace = kappa_psdp(mdp, kappa, cfg, k, mu=mu, v_star=v_star)
    api_trace = kappa_api(mdp, kappa, cfg, k, mu=mu, v_star=v_star)
    return psdp_trace.losses[-1], api_trace.losses[-1]
