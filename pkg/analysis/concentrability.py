"""
Concentrability coefficients and the kappa-smoothed kernel objects they are built from.

c(i) bounds how much mass any length-i sequence of deterministic policies can push from mu onto a state,
relative to nu. The discounted series C1, C2, C^(2,k) and the pi*-based coefficients feed the performance
bounds in algorithms.bounds. math.inf is a legal coefficient value throughout.
"""

import itertools
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

import config
from greedy.kappa_greedy import _check_kappa, xi
from mdp_core.errors import InvalidArgumentError
from mdp_core.mdp import Mdp, Policy, StateDistribution
from mdp_core.operators import check_policy, induced_kernel, iter_deterministic_policies, solve_optimal

logger = logging.getLogger(config.LOGGER_NAME)

# computed ratios this close below 1 are rounding noise
CLAMP_TOL = 1e-12


def scaled(weight: float, value: float) -> float:
    """weight * value with 0 * inf = 0."""
    if weight == 0.0:
        return 0.0
    return weight * value


def sup_ratio(mass: np.ndarray, nu: StateDistribution) -> float:
    """max_s mass(s) / nu(s); inf if positive mass lands where nu is 0, states with 0 / 0 are ignored."""
    if np.any((nu.p == 0.0) & (mass > 0.0)):
        return math.inf
    support = nu.p > 0.0
    return float(np.max(mass[support] / nu.p[support]))


def _check_measures(mdp: Mdp, *measures: StateDistribution) -> None:
    for measure in measures:
        if measure.n_states != mdp.n_states:
            raise InvalidArgumentError(f"measure has {measure.n_states} states, MDP has {mdp.n_states}")


def _check_i_max(i_max: int) -> None:
    if i_max < 0:
        raise InvalidArgumentError(f"i_max must be >= 0, got {i_max}")


def _floor_at_one(raw: List[float]) -> Tuple[List[float], List[int]]:
    """Clamp rounding noise below 1 up to 1; anything lower is floored too, and its index reported."""
    values, floored = [], []
    for i, value in enumerate(raw):
        if value < 1.0 - CLAMP_TOL:
            floored.append(i)
        values.append(max(value, 1.0))
    if floored:
        logger.warning(f"concentrability values below 1 floored at indices {floored}")
    return values, floored


def max_delivered_mass(mdp: Mdp, i_max: int) -> List[np.ndarray]:
    """
    W_0 = I, W_(j+1)[s, u] = max_a sum_t P(t|s, a) W_j[t, u].

    W_i[s, u] is the largest mass a length-i deterministic policy sequence can carry from s to u. The
    maximization is per target u, so the action may differ between targets.
    """

    _check_i_max(i_max)
    w = np.eye(mdp.n_states)
    powers = [w]
    for _ in range(i_max):
        w = np.einsum("sat,tu->sau", mdp.transitions, w).max(axis=1)
        powers.append(w)
    return powers


def c_seq_raw(mdp: Mdp, mu: StateDistribution, nu: StateDistribution, i_max: int) -> List[float]:
    _check_measures(mdp, mu, nu)
    return [sup_ratio(mu.p @ w, nu) for w in max_delivered_mass(mdp, i_max)]


def c_seq(mdp: Mdp, mu: StateDistribution, nu: StateDistribution, i_max: int) -> List[float]:
    """
    c(0..i_max): max over targets of the largest mass any policy sequence delivers from mu, divided by nu.

    Args:
        mdp (Mdp): the MDP
        mu (StateDistribution): starting measure
        nu (StateDistribution): reference measure
        i_max (int): last index, >= 0

    Returns:
        List[float]: c(0), ..., c(i_max), each >= 1 or inf
    """

    return _floor_at_one(c_seq_raw(mdp, mu, nu, i_max))[0]


def c_seq_brute_force(mdp: Mdp, mu: StateDistribution, nu: StateDistribution, i_max: int) -> List[float]:
    """c(i) by enumerating every sequence of deterministic policies; exponential, tiny MDPs only."""
    _check_i_max(i_max)
    _check_measures(mdp, mu, nu)
    kernels = [induced_kernel(mdp, pi) for pi in iter_deterministic_policies(mdp)]

    values = [sup_ratio(mu.p, nu)]
    for i in range(1, i_max + 1):
        best = np.zeros(mdp.n_states)
        for sequence in itertools.product(kernels, repeat=i):
            mass = mu.p
            for kernel in sequence:
                mass = mass @ kernel
            best = np.maximum(best, mass)
        values.append(sup_ratio(best, nu))
    return _floor_at_one(values)[0]


def c_pi_star_seq(mdp: Mdp, pi_star: Policy, mu: StateDistribution, nu: StateDistribution, i_max: int) -> List[float]:
    """c^{pi*}(i) = max_s (mu (P^{pi*})^i)(s) / nu(s) for i = 0..i_max."""
    _check_i_max(i_max)
    _check_measures(mdp, mu, nu)
    p_pi = induced_kernel(mdp, pi_star)

    raw, mass = [], mu.p
    for _ in range(i_max + 1):
        raw.append(sup_ratio(mass, nu))
        mass = mass @ p_pi
    return _floor_at_one(raw)[0]


class SeriesCoefficients(BaseModel):
    """
    Truncated discounted series over c and c^{pi*}.

    Each value is the partial sum extended by the last observed term; truncation_bound caps the error of
    that extension for every coefficient. When no rigorous majorant of the tail is available the bound
    uses the largest observed c and truncation_heuristic is set.
    """

    c1: float
    c2: float
    c2k: Dict[int, float] = Field(default_factory=dict)
    c_pi_star_1: float
    truncation_index: int
    truncation_bound: float
    truncation_heuristic: bool


def _weights_first_order(gamma: float, n: int) -> Tuple[np.ndarray, float]:
    """(1 - gamma) gamma^i for i < n, and the tail mass gamma^n."""
    i = np.arange(n)
    return (1.0 - gamma) * gamma ** i, gamma ** n


def _weights_second_order(gamma: float, n: int) -> Tuple[np.ndarray, float]:
    """(1 - gamma)^2 (m + 1) gamma^m for m < n, and the tail mass gamma^n ((n + 1)(1 - gamma) + gamma)."""
    m = np.arange(n)
    return (1.0 - gamma) ** 2 * (m + 1) * gamma ** m, gamma ** n * ((n + 1) * (1.0 - gamma) + gamma)


def _extended_sum(values: Sequence[float], weights: np.ndarray, tail_weight: float) -> float:
    if any(math.isinf(value) for value in values):
        return math.inf
    return float(np.dot(weights, values)) + scaled(tail_weight, values[-1])


def _non_increasing_tail(values: Sequence[float]) -> bool:
    """Observed non-increasing over the second half of the sequence (the first half is burn-in)."""
    tail = values[len(values) // 2:]
    return all(later <= earlier + CLAMP_TOL for earlier, later in zip(tail, tail[1:]))


def series_coefficients(
        c_values: Sequence[float],
        c_pi_star_values: Sequence[float],
        gamma: float,
        k_list: Sequence[int] = (),
        tol: float = config.DEFAULT_SERIES_TOL,
        c_upper: Optional[float] = None,
) -> SeriesCoefficients:
    """
    C1 = (1-gamma) sum_i gamma^i c(i), C2 = C^(2,0), C^(2,k) = (1-gamma)^2 sum_m (m+1) gamma^m c(m+k),
    C^{pi*(1)} = (1-gamma) sum_i gamma^i c^{pi*}(i).

    Args:
        c_values (Sequence[float]): c(0..I-1)
        c_pi_star_values (Sequence[float]): c^{pi*}(0..I-1)
        gamma (float): discount in (0, 1)
        k_list (Sequence[int]): shifts k for C^(2,k); each must be < I
        tol (float): truncation error above which a warning is logged
        c_upper (Optional[float]): a known majorant of every c(i), e.g. 1 / min nu; makes the tail rigorous

    Returns:
        SeriesCoefficients: the coefficients and their truncation metadata
    """

    if not tol > 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    if len(c_values) == 0 or len(c_pi_star_values) == 0:
        raise InvalidArgumentError("coefficient sequences must be non-empty")
    if not 0.0 < gamma < 1.0:
        raise InvalidArgumentError(f"gamma must lie in (0, 1), got {gamma}")
    n = len(c_values)
    for k in k_list:
        if not 0 <= k < n:
            raise InvalidArgumentError(f"shift k={k} needs c values beyond index {n - 1}")

    w1, tail1 = _weights_first_order(gamma, n)
    w2, tail2 = _weights_second_order(gamma, n)

    c1 = _extended_sum(c_values, w1, tail1)
    c2 = _extended_sum(c_values, w2, tail2)
    c2k = {}
    for k in k_list:
        wk, tailk = _weights_second_order(gamma, n - k)
        c2k[k] = _extended_sum(c_values[k:], wk, tailk)
    c_pi_star_1 = _extended_sum(c_pi_star_values, *_weights_first_order(gamma, len(c_pi_star_values)))

    finite = [value for value in c_values if not math.isinf(value)]
    heuristic = False
    if c_upper is not None:
        majorant = c_upper
    elif _non_increasing_tail(c_values):
        majorant = c_values[-1]
    else:
        majorant = max(finite) if finite else math.inf
        heuristic = True

    # tail terms and the extension value both lie in [1, majorant]
    spread = majorant - 1.0 if not math.isinf(c_values[-1]) else 0.0
    shortest = n - max(k_list, default=0)
    worst_tail = max(tail1, _weights_second_order(gamma, shortest)[1])
    truncation_bound = scaled(worst_tail, spread)

    if heuristic:
        logger.warning("series tail bound is heuristic: c values are not observed non-increasing")
    if truncation_bound > tol:
        logger.warning(f"series truncation error bound {truncation_bound:.3e} exceeds tol={tol}")

    return SeriesCoefficients(
        c1=c1,
        c2=c2,
        c2k=c2k,
        c_pi_star_1=c_pi_star_1,
        truncation_index=n,
        truncation_bound=truncation_bound,
        truncation_heuristic=heuristic,
    )


def d_kappa_matrix(mdp: Mdp, pi: Policy, kappa: float) -> np.ndarray:
    """D_kappa^pi = (1 - kappa gamma)(I - kappa gamma P^pi)^{-1}, a stochastic matrix."""
    _check_kappa(kappa)
    check_policy(mdp, pi)
    g = kappa * mdp.gamma
    identity = np.eye(mdp.n_states)
    return (1.0 - g) * np.linalg.solve(identity - g * induced_kernel(mdp, pi), identity)


def discounted_occupancy(mdp: Mdp, pi: Policy, kappa: float, mu: StateDistribution) -> np.ndarray:
    """
    d^pi_{kappa,mu} = (1 - xi) mu (I - xi D_kappa^pi P^pi)^{-1}.

    Args:
        mdp (Mdp): the MDP
        pi (Policy): policy whose smoothed dynamics are followed
        kappa (float): in [0, 1]
        mu (StateDistribution): starting measure

    Returns:
        np.ndarray: a probability vector over states
    """

    _check_measures(mdp, mu)
    x = xi(mdp.gamma, kappa)
    smoothed = d_kappa_matrix(mdp, pi, kappa) @ induced_kernel(mdp, pi)
    d = (1.0 - x) * np.linalg.solve((np.eye(mdp.n_states) - x * smoothed).T, mu.p)

    if abs(d.sum() - 1.0) > config.MEASURE_SUM_TOL:
        raise ArithmeticError(f"discounted occupancy sums to {d.sum():.15g}, not 1")
    return d


def c_pi_star_kappa(mdp: Mdp, pi_star: Policy, kappa: float, mu: StateDistribution, nu: StateDistribution) -> float:
    """C^{pi*}_kappa(mu, nu) = max_s d^{pi*}_{kappa,mu}(s) / nu(s)."""
    _check_measures(mdp, nu)
    return _floor_at_one([sup_ratio(discounted_occupancy(mdp, pi_star, kappa, mu), nu)])[0][0]


def c_pi_star_1_kappa(c_pi_star_1: float, c0: float, kappa: float, gamma: float) -> float:
    """C^{pi*(1)}_kappa = (xi / gamma) C^{pi*(1)} + (1 - xi) kappa c(0)."""
    x = xi(gamma, kappa)
    return scaled(x / gamma, c_pi_star_1) + scaled((1.0 - x) * kappa, c0)


class Lemma3Report(BaseModel):
    """
    Outcome of moving from kappa to kappa' > kappa with the reference measure nu(alpha*) = (1 - alpha*) nu + alpha* mu
    """

    kappa: float
    kappa_prime: float
    c_kappa: float
    alpha_star: float
    c_kappa_prime_mixed: float
    holds: bool
    strict: bool
    # C^{pi*}_kappa(nu, nu) over the grid, only when mu == nu
    grid_values: Optional[Dict[float, float]] = None
    grid_monotone: Optional[bool] = None


def verify_lemma3(
        mdp: Mdp,
        pi_star: Policy,
        mu: StateDistribution,
        nu: StateDistribution,
        kappa: float,
        kappa_prime: float,
        grid: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
) -> Lemma3Report:
    """
    Larger kappa needs a smaller coefficient: C^{pi*}_{kappa'}(mu, nu(alpha*)) <= C^{pi*}_kappa(mu, nu).

    alpha* = (1 + (1 - kappa') C^{pi*}_kappa(mu, nu) / ((1 - xi_kappa)(kappa' - kappa)))^{-1}. When mu == nu the
    plain monotonicity of kappa -> C^{pi*}_kappa(nu, nu) over `grid` is recorded as well.
    """

    _check_kappa(kappa)
    _check_kappa(kappa_prime)
    if not kappa_prime > kappa:
        raise InvalidArgumentError(f"kappa_prime must exceed kappa, got {kappa_prime} <= {kappa}")

    c_kappa = c_pi_star_kappa(mdp, pi_star, kappa, mu, nu)
    x = xi(mdp.gamma, kappa)
    weight = scaled((1.0 - kappa_prime) / ((1.0 - x) * (kappa_prime - kappa)), c_kappa)
    alpha_star = 1.0 / (1.0 + weight)

    c_mixed = c_pi_star_kappa(mdp, pi_star, kappa_prime, mu, nu.mixed_with(mu, alpha_star))
    report = Lemma3Report(
        kappa=kappa,
        kappa_prime=kappa_prime,
        c_kappa=c_kappa,
        alpha_star=alpha_star,
        c_kappa_prime_mixed=c_mixed,
        holds=c_mixed <= c_kappa + config.IMPROVEMENT_TOL,
        strict=c_mixed < c_kappa - config.IMPROVEMENT_TOL,
    )

    if np.array_equal(mu.p, nu.p):
        values = {float(k): c_pi_star_kappa(mdp, pi_star, k, nu, nu) for k in grid}
        ordered = [values[k] for k in sorted(values)]
        monotone = all(b <= a + config.IMPROVEMENT_TOL for a, b in zip(ordered, ordered[1:]))
        report = report.model_copy(update={"grid_values": values, "grid_monotone": monotone})

    logger.debug(f"lemma3 kappa={kappa}->{kappa_prime}: {c_kappa:.6g} -> {c_mixed:.6g} (alpha*={alpha_star:.4g})")
    return report


def _inf_norm(matrix: np.ndarray) -> float:
    return float(np.abs(matrix).sum(axis=1).max())


def help1_identity_gap(mdp: Mdp, pi: Policy, kappa: float, kappa_prime: float) -> float:
    """
    ||(I - xi' D' P)^{-1} - [((kappa' - kappa)/(1 - kappa)) I + ((1 - kappa')/(1 - kappa)) (I - xi D P)^{-1}]||_inf.

    The two resolvents of the smoothed kernels at kappa and kappa' are related by an exact affine identity;
    the return value is its residual.
    """

    _check_kappa(kappa)
    _check_kappa(kappa_prime)
    if not kappa < 1.0:
        raise InvalidArgumentError("the identity needs kappa < 1")

    identity = np.eye(mdp.n_states)
    p_pi = induced_kernel(mdp, pi)

    def resolvent(k: float) -> np.ndarray:
        return np.linalg.inv(identity - xi(mdp.gamma, k) * d_kappa_matrix(mdp, pi, k) @ p_pi)

    combination = ((kappa_prime - kappa) * identity + (1.0 - kappa_prime) * resolvent(kappa)) / (1.0 - kappa)
    return _inf_norm(resolvent(kappa_prime) - combination)


def smoothed_kernel_power(mdp: Mdp, pi: Policy, kappa: float, i: int) -> np.ndarray:
    """(xi D_kappa^pi P^pi)^i."""
    if i < 0:
        raise InvalidArgumentError(f"power must be >= 0, got {i}")
    x = xi(mdp.gamma, kappa)
    return np.linalg.matrix_power(x * d_kappa_matrix(mdp, pi, kappa) @ induced_kernel(mdp, pi), i)


def smoothed_kernel_power_series(
        mdp: Mdp, pi: Policy, kappa: float, i: int, n_terms: int = config.DEFAULT_SERIES_LENGTH
) -> Tuple[np.ndarray, float]:
    """
    sum_{t=i-1}^{i-1+n_terms-1} binom(t, i-1) gamma^{t+1} (1-kappa)^i kappa^{t-i+1} (P^pi)^{t+1} and its exact tail.

    Every (P^pi)^{t+1} has unit inf-norm, so the tail of the series is bounded by xi^i minus the scalar
    partial sum of the coefficients.

    Args:
        mdp (Mdp): the MDP
        pi (Policy): policy
        kappa (float): in [0, 1]
        i (int): power, >= 1
        n_terms (int): number of series terms kept

    Returns:
        Tuple[np.ndarray, float]: (partial sum, tail bound in inf-norm)
    """

    _check_kappa(kappa)
    if i < 1:
        raise InvalidArgumentError(f"series form needs i >= 1, got {i}")
    if n_terms < 1:
        raise InvalidArgumentError(f"n_terms must be >= 1, got {n_terms}")

    gamma = mdp.gamma
    p_pi = induced_kernel(mdp, pi)
    power = np.linalg.matrix_power(p_pi, i)
    partial = np.zeros_like(power)
    scalar = 0.0

    for t in range(i - 1, i - 1 + n_terms):
        coefficient = math.comb(t, i - 1) * gamma ** (t + 1) * (1.0 - kappa) ** i * kappa ** (t - i + 1)
        partial += coefficient * power
        scalar += coefficient
        power = power @ p_pi

    return partial, max(0.0, xi(gamma, kappa) ** i - scalar)


class CoefficientReport(BaseModel):
    """
    Every coefficient of one (mdp, mu, nu) instance; the kappa-dependent ones are keyed by kappa
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    c_seq: List[float]
    c_seq_raw: List[float]
    floored_indices: List[int] = Field(default_factory=list)
    c_pi_star_seq: List[float]
    c1: float
    c2: float
    c2k: Dict[int, float] = Field(default_factory=dict)
    c_pi_star: float
    c_pi_star_1: float
    c_pi_star_kappa: Dict[float, float] = Field(default_factory=dict)
    c_pi_star_1_kappa: Dict[float, float] = Field(default_factory=dict)
    truncation_index: int
    truncation_bound: float
    truncation_heuristic: bool
    ordering_violations: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_floor(self):
        scalars = [self.c1, self.c2, self.c_pi_star, self.c_pi_star_1, *self.c2k.values(),
                   *self.c_pi_star_kappa.values(), *self.c_pi_star_1_kappa.values()]
        for value in [*self.c_seq, *self.c_pi_star_seq, *scalars]:
            if not math.isinf(value) and value < 1.0 - config.IMPROVEMENT_TOL:
                raise ValueError(f"coefficient {value} is below 1")
        return self

    @property
    def first_link_holds(self) -> bool:
        """C^{pi*} <= C^{pi*(1)}, which holds for every instance."""
        return self.c_pi_star <= self.c_pi_star_1 + config.IMPROVEMENT_TOL

    def to_rows(self) -> List[dict]:
        rows = [{"name": "C1", "kappa": None, "k": None, "value": self.c1},
                {"name": "C2", "kappa": None, "k": None, "value": self.c2},
                {"name": "C_pi_star", "kappa": None, "k": None, "value": self.c_pi_star},
                {"name": "C_pi_star_1", "kappa": None, "k": None, "value": self.c_pi_star_1}]
        rows += [{"name": "C2k", "kappa": None, "k": k, "value": v} for k, v in sorted(self.c2k.items())]
        rows += [{"name": "C_pi_star_kappa", "kappa": k, "k": None, "value": v}
                 for k, v in sorted(self.c_pi_star_kappa.items())]
        rows += [{"name": "C_pi_star_1_kappa", "kappa": k, "k": None, "value": v}
                 for k, v in sorted(self.c_pi_star_1_kappa.items())]
        for row in rows:
            row.update(truncation_index=self.truncation_index, truncation_bound=self.truncation_bound,
                       truncation_heuristic=self.truncation_heuristic)
        return rows


def _ordering_violations(c_pi_star: float, c_pi_star_1: float, c1: float, c2: float) -> List[str]:
    chain = [("C_pi_star", c_pi_star), ("C_pi_star_1", c_pi_star_1), ("C1", c1), ("C2", c2)]
    if any(math.isinf(value) for _, value in chain):
        return []
    return [f"{a} = {va:.6g} > {b} = {vb:.6g}"
            for (a, va), (b, vb) in zip(chain, chain[1:]) if va > vb + config.IMPROVEMENT_TOL]


def coefficient_report(
        mdp: Mdp,
        mu: StateDistribution,
        nu: StateDistribution,
        kappas: Sequence[float] = (0.0, 0.5, 1.0),
        i_max: int = config.DEFAULT_SERIES_LENGTH - 1,
        k_list: Sequence[int] = (),
        pi_star: Optional[Policy] = None,
        tol: float = config.DEFAULT_SERIES_TOL,
) -> CoefficientReport:
    """
    Assemble all coefficients of (mdp, mu, nu) and the per-instance ordering chain.

    Args:
        mdp (Mdp): the MDP
        mu (StateDistribution): loss measure
        nu (StateDistribution): sampling measure
        kappas (Sequence[float]): kappa values for the kappa-dependent coefficients
        i_max (int): last index of the c sequences
        k_list (Sequence[int]): shifts for C^(2,k)
        pi_star (Optional[Policy]): optimal policy; solved for when omitted
        tol (float): series truncation tolerance

    Returns:
        CoefficientReport: values, truncation metadata, ordering chain violations beyond the first link
    """

    if pi_star is None:
        pi_star = solve_optimal(mdp)[1]

    raw = c_seq_raw(mdp, mu, nu, i_max)
    c_values, floored = _floor_at_one(raw)
    c_star_values = c_pi_star_seq(mdp, pi_star, mu, nu, i_max)
    c_upper = 1.0 / float(nu.p.min()) if nu.strictly_positive else None
    series = series_coefficients(c_values, c_star_values, mdp.gamma, k_list, tol, c_upper)
    c_pi_star = c_pi_star_kappa(mdp, pi_star, 0.0, mu, nu)

    report = CoefficientReport(
        c_seq=c_values,
        c_seq_raw=raw,
        floored_indices=floored,
        c_pi_star_seq=c_star_values,
        c1=series.c1,
        c2=series.c2,
        c2k=series.c2k,
        c_pi_star=c_pi_star,
        c_pi_star_1=series.c_pi_star_1,
        c_pi_star_kappa={float(k): c_pi_star_kappa(mdp, pi_star, k, mu, nu) for k in kappas},
        c_pi_star_1_kappa={float(k): c_pi_star_1_kappa(series.c_pi_star_1, c_values[0], k, mdp.gamma) for k in kappas},
        truncation_index=series.truncation_index,
        truncation_bound=series.truncation_bound,
        truncation_heuristic=series.truncation_heuristic,
        ordering_violations=_ordering_violations(c_pi_star, series.c_pi_star_1, series.c1, series.c2),
    )
    for violation in report.ordering_violations:
        logger.info(f"coefficient ordering not met on this instance: {violation}")
    return report
