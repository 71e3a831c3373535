"""
Numerical property checks behind `main.py verify`.

Every check takes its instance counts and a master seed as arguments, so the unit tests run the same code
at reduced size and the verify gate runs it at full size. A check never raises on a failed property; it
returns a CheckResult with passed=False and the worst offending value.
"""

import logging
import math
import os
import tempfile
from typing import Callable, Dict, List, Sequence

import numpy as np
from pydantic import BaseModel, Field

import config
from algorithms.approx_pi import (
    CorruptionMode,
    GreedyOracleConfig,
    NonStationaryPolicy,
    eval_sigma,
    kappa_api,
    kappa_psdp,
    rollout_sigma_batch,
)
from algorithms.bounds import BoundKind, BoundParameters, theorem_bounds
from algorithms.online_kpi import StepSchedule, apply_H, run_online
from analysis.concentrability import (
    c_seq,
    c_seq_brute_force,
    coefficient_report,
    help1_identity_gap,
    smoothed_kernel_power,
    smoothed_kernel_power_series,
    verify_lemma3,
)
from analysis.mixture_lab import (
    closed_form_mixture_value,
    hesitant_policy,
    improvement_report,
    tightrope_mdp,
    witness_penalty,
)
from greedy.kappa_greedy import apply_t_kappa_pi, exact_kappa_pi, q_kappa, xi
from mdp_core.generators import garnet
from mdp_core.mdp import Mdp, Policy, StateDistribution
from mdp_core.operators import (
    apply_bellman,
    brute_force_optimal,
    induced_kernel,
    q_from_value,
    q_of_policy,
    solve_optimal,
)
from utils.parallel_utils import run_cells

logger = logging.getLogger(config.LOGGER_NAME)


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""
    metrics: Dict[str, float] = Field(default_factory=dict)



def _result(name: str, failures: List[str], metrics: Dict[str, float]) -> CheckResult:
    detail = "; ".join(failures[:5]) if failures else "ok"
    return CheckResult(name=name, passed=not failures, detail=detail, metrics=metrics)


# --- mdp-core / kappa-greedy -------------------------------------------------------------------------------------

def check_solver_against_enumeration(seed: int, n_mdps: int = 20) -> CheckResult:
    """solve_optimal agrees with exhaustive policy enumeration on small Garnets."""
    failures, worst = [], 0.0
    for i in range(n_mdps):
        mdp = garnet(4, 2, seed + i)
        v_solved, _ = solve_optimal(mdp, tol=1e-10)
        v_enum, _ = brute_force_optimal(mdp)
        gap = float(np.max(np.abs(v_solved - v_enum)))
        worst = max(worst, gap)
        if gap > 1e-8:
            failures.append(f"garnet seed {seed + i}: |v_solved - v_enum| = {gap:.3e}")
    return _result("solver_vs_enumeration", failures, {"max_gap": worst})


def check_value_difference(seed: int, n_draws: int = 500) -> CheckResult:
    """(T_kappa^pi v - v) = (I - kappa gamma P^pi)^{-1} (T^pi v - v) on random instances."""
    rng = np.random.default_rng(seed)
    failures, worst = [], 0.0
    for draw in range(n_draws):
        n_states, n_actions = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        mdp = garnet(n_states, n_actions, int(rng.integers(1 << 31)), gamma=float(rng.uniform(0.5, 0.99)))
        pi = Policy.random(rng, n_states, n_actions)
        v = rng.normal(scale=10.0, size=n_states)
        kappa = float(rng.uniform())

        lhs = apply_t_kappa_pi(mdp, pi, kappa, v) - v
        resolvent = np.eye(n_states) - kappa * mdp.gamma * induced_kernel(mdp, pi)
        rhs = np.linalg.solve(resolvent, apply_bellman(mdp, pi, v) - v)
        gap = float(np.max(np.abs(lhs - rhs)))
        worst = max(worst, gap)
        if gap > 1e-9:
            failures.append(f"draw {draw}: gap {gap:.3e}")
    return _result("value_difference", failures, {"max_gap": worst})


def check_kappa_pi_convergence(seed: int, n_mdps: int = 20, kappas: Sequence[float] = (0.0, 0.5, 1.0)) -> CheckResult:
    """Exact kappa-PI ends at v* with non-increasing error."""
    failures = []
    for i in range(n_mdps):
        mdp = garnet(6, 3, seed + i)
        v_star, _ = solve_optimal(mdp)
        for kappa in kappas:
            result = exact_kappa_pi(mdp, kappa, v_star=v_star)
            errors = [record.error_to_optimal for record in result.history]
            if errors[-1] > 1e-8:
                failures.append(f"seed {seed + i}, kappa={kappa}: final error {errors[-1]:.3e}")
            if any(later > earlier + 1e-9 for earlier, later in zip(errors, errors[1:])):
                failures.append(f"seed {seed + i}, kappa={kappa}: error increased")
    return _result("kappa_pi_convergence", failures, {})


# --- mixture-lab -------------------------------------------------------------------------------------------------

def check_tightrope_counterexample(seed: int) -> CheckResult:
    """tightrope(c=2, gamma=0.9), kappa=1, alpha=0.5: the soft update makes s0 worse, matching the closed form."""
    mdp = tightrope_mdp(2.0, 0.9)
    report = improvement_report(mdp, hesitant_policy(), 0.5, kappa=1.0)
    v_mix_s0 = float(report.delta_vector[0])
    expected, _ = closed_form_mixture_value(2.0, 0.9, 0.5)

    failures = []
    if abs(v_mix_s0 - expected) > 1e-9:
        failures.append(f"v_mix(s0) = {v_mix_s0:.12g}, closed form {expected:.12g}")
    if abs(expected - (0.45 / 0.55) * -4.5) > 1e-9:
        failures.append(f"closed form {expected:.12g} != -3.681818...")
    if not v_mix_s0 < 0.0:
        failures.append("soft update did not lose value at s0")
    return _result("tightrope_counterexample", failures, {"v_mix_s0": v_mix_s0})


def check_soft_update_sufficiency(
        seed: int,
        n_mdps: int = 200,
        kappas: Sequence[float] = (0.0, 0.3, 0.7, 1.0),
        draws: int = 3,
        threads: int = 1,
) -> CheckResult:
    """alpha in [kappa, 1] never loses value: Garnet(6, 3), random starting policy, random alpha draws."""

    def cell(mdp_seed: int) -> List[str]:
        rng = np.random.default_rng(mdp_seed)
        mdp = garnet(6, 3, mdp_seed)
        pi = Policy.random(rng, 6, 3)
        found = []
        for kappa in kappas:
            for _ in range(draws):
                alpha = float(rng.uniform(max(kappa, 1e-3), 1.0))
                report = improvement_report(mdp, pi, alpha, kappa=kappa)
                if not report.improved_everywhere:
                    found.append(f"seed {mdp_seed}, kappa={kappa}, alpha={alpha:.4f}: min delta {report.min_delta:.3e}")
        return found

    failures = [f for found in run_cells(range(seed, seed + n_mdps), cell, threads) for f in found]
    return _result("soft_update_sufficiency", failures, {"cells": n_mdps * len(kappas) * draws})


def check_soft_update_necessity(seed: int, kappas: Sequence[float] = (0.4, 0.7, 1.0)) -> CheckResult:
    """alpha = kappa / 2 fails on the Tightrope witness; h-greedy with h=2 needs alpha = 1."""
    failures = []
    for kappa in kappas:
        alpha = kappa / 2.0
        c = witness_penalty(alpha, kappa)
        if c is None:
            failures.append(f"kappa={kappa}: empty witness window")
            continue
        report = improvement_report(tightrope_mdp(c, 0.9), hesitant_policy(), alpha, kappa=kappa)
        if report.improved_everywhere:
            failures.append(f"kappa={kappa}, alpha={alpha}, c={c:.4f}: soft update improved everywhere")

    h_mdp = tightrope_mdp(5.0, 0.9)
    if improvement_report(h_mdp, hesitant_policy(), 0.5, h=2).improved_everywhere:
        failures.append("h=2, alpha=0.5 improved everywhere")
    if not improvement_report(h_mdp, hesitant_policy(), 1.0, h=2).improved_everywhere:
        failures.append("h=2, alpha=1 did not improve")
    return _result("soft_update_necessity", failures, {})


# --- online-kpi --------------------------------------------------------------------------------------------------

def check_h_contraction(seed: int, n_draws: int = 1000, kappas: Sequence[float] = (0.0, 0.5, 1.0)) -> CheckResult:
    """H_kappa^pi is a gamma-contraction and (q^pi, q^pi_kappa) is its fixed point."""
    rng = np.random.default_rng(seed)
    mdp = garnet(5, 3, seed)
    pi = Policy.random(rng, 5, 3)
    failures, worst_ratio, worst_residual = [], 0.0, 0.0

    for kappa in kappas:
        for _ in range(n_draws):
            q1, qk1, q2, qk2 = (rng.normal(scale=10.0, size=(5, 3)) for _ in range(4))
            h1, hk1 = apply_H(mdp, pi, kappa, q1, qk1)
            h2, hk2 = apply_H(mdp, pi, kappa, q2, qk2)
            out = max(np.max(np.abs(h1 - h2)), np.max(np.abs(hk1 - hk2)))
            inp = max(np.max(np.abs(q1 - q2)), np.max(np.abs(qk1 - qk2)))
            worst_ratio = max(worst_ratio, out / inp)
            if out > mdp.gamma * inp + 1e-12:
                failures.append(f"kappa={kappa}: ||H Q1 - H Q2|| = {out:.6g} > gamma * {inp:.6g}")

        q_pi, q_k = q_of_policy(mdp, pi), q_kappa(mdp, pi, kappa)
        f, fk = apply_H(mdp, pi, kappa, q_pi, q_k)
        residual = float(max(np.max(np.abs(f - q_pi)), np.max(np.abs(fk - q_k))))
        worst_residual = max(worst_residual, residual)
        if residual > 1e-8:
            failures.append(f"kappa={kappa}: fixed-point residual {residual:.3e}")

    return _result("h_contraction", failures, {"max_ratio": worst_ratio, "max_residual": worst_residual})


def check_online_convergence(seed: int, n_steps: int = 2_000_000, tolerance: float = 0.1) -> CheckResult:
    """Garnet(5, 2, seed=3), kappa=0.5, uniform nu: greedy(q_n) = pi* and relative q error within tolerance."""
    mdp = garnet(5, 2, 3, gamma=0.9)
    v_star, pi_star = solve_optimal(mdp)
    q_star = q_from_value(mdp, v_star)
    state, trace = run_online(
        mdp, StateDistribution.uniform(5), 0.5, StepSchedule(), n_steps, seed, snapshot_stride=max(1, n_steps // 20),
        q_star=q_star,
    )

    relative = float(np.max(np.abs(state.q - q_star)) / np.max(np.abs(q_star)))
    failures = []
    if not np.array_equal(np.argmax(state.q, axis=1), pi_star.actions()):
        failures.append("greedy(q_n) differs from pi*")
    if relative > tolerance:
        failures.append(f"relative q error {relative:.4f} > {tolerance}")
    return _result("online_convergence", failures, {"relative_q_error": relative,
                                                    "policy_match_frac": trace.snapshots[-1].policy_match_frac})


# --- approx-pi ---------------------------------------------------------------------------------------------------

def check_exact_oracle_decay(seed: int, n_mdps: int = 5, k: int = 15,
                             kappas: Sequence[float] = (0.0, 0.5, 1.0)) -> CheckResult:
    """delta = 0: loss_k <= xi^k R_max / (1 - gamma) for kappa-API and kappa-PSDP; kappa = 1 solves in one step."""
    failures = []
    for i in range(n_mdps):
        mdp = garnet(8, 3, seed + i)
        nu = StateDistribution.uniform(8)
        v_star, _ = solve_optimal(mdp)
        cfg = GreedyOracleConfig(delta=0.0, nu=nu, seed=seed + i)

        for kappa in kappas:
            x = xi(mdp.gamma, kappa)
            api_losses = kappa_api(mdp, kappa, cfg, k, v_star=v_star).losses
            psdp_losses = kappa_psdp(mdp, kappa, cfg, k, v_star=v_star)[1].losses
            for name, losses in (("api", api_losses), ("psdp", psdp_losses)):
                for j, value in enumerate(losses, start=1):
                    bound = x ** j * mdp.r_max / (1.0 - mdp.gamma)
                    if value > bound + 1e-9:
                        failures.append(f"{name} seed {seed + i} kappa={kappa} k={j}: {value:.3e} > {bound:.3e}")
                if kappa == 1.0 and losses[0] > 1e-8:
                    failures.append(f"{name} seed {seed + i}: kappa=1 loss after one iteration {losses[0]:.3e}")
    return _result("exact_oracle_decay", failures, {})


def check_bound_validity(
        seed: int,
        n_mdps: int = 50,
        deltas: Sequence[float] = (0.01, 0.1),
        kappas: Sequence[float] = (0.25, 0.75),
        k: int = 10,
        threads: int = 1,
) -> CheckResult:
    """
    delta > 0 on Garnet(6, 2) with mu = nu uniform: measured loss <= bound at every iteration, and every oracle
    call stays within its budget. Instances with an infinite bound are skipped and counted.
    """

    def cell(mdp_seed: int) -> Dict:
        mdp = garnet(6, 2, mdp_seed)
        nu = StateDistribution.uniform(6)
        v_star, pi_star = solve_optimal(mdp)
        report = coefficient_report(mdp, nu, nu, kappas=kappas, i_max=200, pi_star=pi_star)
        out = {"failures": [], "skipped": 0, "oracle_calls": 0, "psdp_beats_api": 0, "comparisons": 0}

        for delta in deltas:
            cfg = GreedyOracleConfig(delta=delta, nu=nu, corruption_mode=CorruptionMode.WORST_STATE_SWAP, seed=mdp_seed)
            for kappa in kappas:
                api = kappa_api(mdp, kappa, cfg, k, mu=nu, v_star=v_star)
                _, psdp = kappa_psdp(mdp, kappa, cfg, k, mu=nu, v_star=v_star)
                out["comparisons"] += 1
                out["psdp_beats_api"] += int(psdp.losses[-1] <= api.losses[-1] + 1e-6)

                for kind, trace in ((BoundKind.API_FIXED, api), (BoundKind.PSDP_FIXED, psdp)):
                    for step in trace.iterations:
                        out["oracle_calls"] += 1
                        if step.achieved_slack > delta + 1e-9:
                            out["failures"].append(f"seed {mdp_seed}: oracle slack {step.achieved_slack:.3e} > {delta}")
                        params = BoundParameters(
                            kappa=kappa, gamma=mdp.gamma, delta=delta, k=step.iteration, r_max=mdp.r_max,
                            c1=report.c1, c2=report.c2, c_pi_star_kappa=report.c_pi_star_kappa[kappa],
                            c_pi_star_1_kappa=report.c_pi_star_1_kappa[kappa],
                        )
                        bound = theorem_bounds(kind, params)
                        if math.isinf(bound):
                            out["skipped"] += 1
                        elif step.loss > bound + 1e-6:
                            out["failures"].append(
                                f"{kind.value} seed {mdp_seed} delta={delta} kappa={kappa} k={step.iteration}: "
                                f"loss {step.loss:.4e} > bound {bound:.4e}"
                            )
        return out

    outcomes = run_cells(range(seed, seed + n_mdps), cell, threads)
    failures = [f for o in outcomes for f in o["failures"]]
    comparisons = sum(o["comparisons"] for o in outcomes)
    metrics = {
        "skipped_infinite": float(sum(o["skipped"] for o in outcomes)),
        "oracle_calls": float(sum(o["oracle_calls"] for o in outcomes)),
        "psdp_le_api_fraction": sum(o["psdp_beats_api"] for o in outcomes) / comparisons if comparisons else math.nan,
    }
    logger.info(f"bound validity: g(kappa) = {config.DEFAULT_G_KAPPA} (heuristic), metrics {metrics}")
    return _result("bound_validity", failures, metrics)


def check_rollout_consistency(seed: int, n_rollouts: int = 100_000, horizon: int = 300) -> CheckResult:
    """Monte-Carlo mean of sigma rollouts within 3 standard errors of eval_sigma on Garnet(5, 2), kappa=0.5, k=3."""
    rng = np.random.default_rng(seed)
    mdp = garnet(5, 2, 3)
    stages = [Policy.from_actions(rng.integers(0, 2, size=5), 2) for _ in range(3)]
    sigma = NonStationaryPolicy(stages=stages, kappa=0.5, base_policy=Policy.uniform(5, 2))
    exact = eval_sigma(mdp, sigma)

    failures, worst = [], 0.0
    for s0 in range(mdp.n_states):
        _, mean, se = rollout_sigma_batch(mdp, sigma, s0, horizon, n_rollouts, rng)
        z = abs(mean - exact[s0]) / se if se > 0 else 0.0
        worst = max(worst, z)
        if abs(mean - exact[s0]) > 3.0 * se + mdp.gamma ** horizon * mdp.r_max / (1.0 - mdp.gamma):
            failures.append(f"s0={s0}: rollout mean {mean:.5f} vs exact {exact[s0]:.5f} (se {se:.2e})")
    return _result("rollout_consistency", failures, {"max_z": worst})


# --- concentrability ---------------------------------------------------------------------------------------------

def check_lemma3(seed: int, n_mdps: int = 50, kappa: float = 0.2, kappa_prime: float = 0.8) -> CheckResult:
    """C^{pi*}_kappa(nu, nu) non-increasing in kappa, and the alpha* inequality for mu != nu."""
    rng = np.random.default_rng(seed)
    failures, strict = [], 0
    for i in range(n_mdps):
        mdp = garnet(6, 2, seed + i)
        _, pi_star = solve_optimal(mdp)
        nu = StateDistribution.random(rng, 6)
        mu = StateDistribution.random(rng, 6)

        same = verify_lemma3(mdp, pi_star, nu, nu, kappa, kappa_prime)
        if not same.grid_monotone:
            failures.append(f"seed {seed + i}: C_kappa(nu, nu) not monotone {same.grid_values}")
        mixed = verify_lemma3(mdp, pi_star, mu, nu, kappa, kappa_prime)
        for report in (same, mixed):
            strict += int(report.strict)
            if not report.holds:
                failures.append(
                    f"seed {seed + i}: C_kappa'(mu, nu(alpha*)) = {report.c_kappa_prime_mixed:.6g} > {report.c_kappa:.6g}"
                )
    return _result("lemma3", failures, {"strict_decreases": float(strict)})


def check_operator_identities(seed: int, n_draws: int = 100) -> CheckResult:
    """The resolvent identity between kappa and kappa', and the series form of (xi D P)^i for i <= 4."""
    rng = np.random.default_rng(seed)
    failures, worst_help, worst_series = [], 0.0, 0.0
    for draw in range(n_draws):
        n_states = int(rng.integers(2, 7))
        mdp = garnet(n_states, 2, int(rng.integers(1 << 31)), gamma=float(rng.uniform(0.5, 0.95)))
        pi = Policy.random(rng, n_states, 2)
        kappa, kappa_prime = sorted(rng.uniform(0.0, 1.0, size=2).tolist())

        gap = help1_identity_gap(mdp, pi, kappa, kappa_prime)
        worst_help = max(worst_help, gap)
        if gap > 1e-9:
            failures.append(f"draw {draw}: resolvent identity gap {gap:.3e}")

        for i in range(1, 5):
            partial, tail = smoothed_kernel_power_series(mdp, pi, kappa, i)
            error = float(np.abs(smoothed_kernel_power(mdp, pi, kappa, i) - partial).sum(axis=1).max())
            worst_series = max(worst_series, error - tail)
            if error > tail + 1e-9:
                failures.append(f"draw {draw}, i={i}: series error {error:.3e} above tail {tail:.3e}")
    return _result("operator_identities", failures, {"max_help1_gap": worst_help, "max_series_excess": worst_series})


def check_c_dp_enumeration(seed: int, n_mdps: int = 20, i_max: int = 3) -> CheckResult:
    """c(i) by the backward program equals exhaustive enumeration on 3-state, 2-action MDPs."""
    rng = np.random.default_rng(seed)
    failures, worst = [], 0.0
    for i in range(n_mdps):
        mdp = garnet(3, 2, seed + i, branching=int(rng.integers(1, 4)))
        mu, nu = StateDistribution.random(rng, 3), StateDistribution.random(rng, 3)
        dp, brute = c_seq(mdp, mu, nu, i_max), c_seq_brute_force(mdp, mu, nu, i_max)
        gap = max(abs(a - b) for a, b in zip(dp, brute))
        worst = max(worst, gap)
        if gap > 1e-12:
            failures.append(f"seed {seed + i}: dp {dp} vs enumeration {brute}")
    return _result("c_dp_enumeration", failures, {"max_gap": worst})


# --- CLI ---------------------------------------------------------------------------------------------------------

def check_cli_determinism(seed: int) -> CheckResult:
    """Each command run twice with identical flags writes byte-identical output."""
    from main import run_command

    source = "garnet:n_states=5,n_actions=2,seed=3,gamma=0.9"
    commands = {
        "solve": ["solve", "--mdp", source],
        "kpi": ["kpi", "--mdp", source, "--kappa", "0.5"],
        "online": ["online", "--mdp", source, "--kappa", "0.5", "--steps", "2000", "--snapshot-stride", "500"],
        "api": ["api", "--mdp", source, "--kappa", "0.5", "--delta", "0.05", "--iters", "4"],
        "psdp": ["psdp", "--mdp", source, "--kappa", "0.5", "--delta", "0.05", "--iters", "4"],
        "coeffs": ["coeffs", "--mdp", source, "--kappa-grid", "0,0.5,1", "--imax", "50"],
        "tightrope": ["tightrope", "--c", "2", "--gamma", "0.9", "--alpha", "0.5", "--kappa", "1"],
        "theorem1-sweep": ["theorem1-sweep", "--n-mdps", "3", "--kappas", "0,1", "--draws", "2", "--threads", "2"],
        "garnet-gen": ["garnet-gen", "--n-states", "4", "--n-actions", "2"],
    }

    failures = []
    with tempfile.TemporaryDirectory() as tmp:
        for name, argv in commands.items():
            outputs = []
            for run in range(2):
                path = os.path.join(tmp, f"{name}_{run}.out")
                code = run_command([*argv, "--seed", str(seed), "--out", path])
                if code != 0:
                    failures.append(f"{name}: exit code {code}")
                    break
                with open(path, "rb") as f:
                    outputs.append(f.read())
            if len(outputs) == 2 and outputs[0] != outputs[1]:
                failures.append(f"{name}: outputs differ between runs")
    return _result("cli_determinism", failures, {"commands": float(len(commands))})


SUITES: Dict[str, List[Callable[[int, int], CheckResult]]] = {
    "core": [
        lambda seed, threads: check_solver_against_enumeration(seed),
    ],
    "kappa": [
        lambda seed, threads: check_value_difference(seed),
        lambda seed, threads: check_kappa_pi_convergence(seed),
    ],
    "mixture": [
        lambda seed, threads: check_tightrope_counterexample(seed),
        lambda seed, threads: check_soft_update_sufficiency(seed, threads=threads),
        lambda seed, threads: check_soft_update_necessity(seed),
    ],
    "online": [
        lambda seed, threads: check_h_contraction(seed),
        lambda seed, threads: check_online_convergence(seed),
    ],
    "approx": [
        lambda seed, threads: check_exact_oracle_decay(seed),
        lambda seed, threads: check_bound_validity(seed, threads=threads),
        lambda seed, threads: check_rollout_consistency(seed),
    ],
    "coeffs": [
        lambda seed, threads: check_lemma3(seed),
        lambda seed, threads: check_operator_identities(seed),
        lambda seed, threads: check_c_dp_enumeration(seed),
    ],
    "cli": [
        lambda seed, threads: check_cli_determinism(seed),
    ],
}


def run_suite(suite: str, seed: int, threads: int = 1) -> List[CheckResult]:
    """
    Run one named suite, or every suite for "all".

    Args:
        suite (str): core, kappa, mixture, online, approx, coeffs, cli or all
        seed (int): master seed
        threads (int): worker pool size for the sweep checks

    Returns:
        List[CheckResult]: one result per check, in suite order
    """

    if suite == "all":
        names = list(SUITES)
    elif suite in SUITES:
        names = [suite]
    else:
        raise ValueError(f"unknown suite {suite!r}; choose from {sorted(SUITES)} or 'all'")

    results = []
    for name in names:
        for check in SUITES[name]:
            result = check(seed, threads)
            logger.info(f"check {result.name}: {'pass' if result.passed else 'FAIL'} - {result.detail}")
            results.append(result)
    return results
