import argparse
import json
import sys
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, SkipValidation, ValidationError, model_validator

import config
from algorithms.approx_pi import CorruptionMode, GreedyOracleConfig, kappa_api, kappa_psdp
from algorithms.bounds import BoundKind, BoundParameters, optimal_iteration_count, theorem_bounds
from algorithms.online_kpi import StepSchedule, run_online
from analysis.concentrability import coefficient_report
from analysis.mixture_lab import hesitant_policy, improvement_report, tightrope_mdp
from checks.invariant_checks import run_suite
from greedy.kappa_greedy import exact_h_pi, exact_kappa_pi
from mdp_core.generators import GarnetSpec, garnet, generate_garnet
from mdp_core.mdp import Mdp, Policy
from mdp_core.operators import evaluate_policy, solve_optimal
from ui.user_interface_cli import UserInterface
from utils.general_utils import resolve_thread_count, setup_logger
from utils.io_utils import MdpSource, load_distribution, save_mdp
from utils.parallel_utils import run_cells

logger = setup_logger()

COMMANDS = ("solve", "kpi", "online", "api", "psdp", "coeffs", "tightrope", "theorem1-sweep", "garnet-gen", "verify")


class ExperimentConfig(BaseModel):
    """
    Pydantic class for one CLI invocation - MDP source, algorithm parameters, measures, output path, master seed

    Fields a command does not use keep their defaults.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    # hook for logging to user, as in the rest of the ui layer
    logging_function: SkipValidation[Callable] = print

    command: str
    mdp: str = "tightrope:c=2,gamma=0.9"
    seed: int = 0
    out: Optional[str] = None
    threads: Optional[int] = Field(default=None, ge=1)

    kappa: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    h: Optional[int] = Field(default=None, ge=1)
    alpha: float = Field(default=0.5, gt=0.0, le=1.0)
    delta: float = Field(default=0.0, ge=0.0)
    iters: Optional[int] = Field(default=None, ge=1)
    auto_kstar: bool = False
    corruption: CorruptionMode = CorruptionMode.WORST_STATE_SWAP
    tol: float = Field(default=config.SOLVER_TOL, gt=0.0)
    max_iters: int = Field(default=1000, ge=1)

    steps: int = Field(default=100_000, ge=1)
    fast_exp: float = config.DEFAULT_FAST_EXPONENT
    slow_exp: float = config.DEFAULT_SLOW_EXPONENT
    snapshot_stride: int = Field(default=config.DEFAULT_SNAPSHOT_STRIDE, ge=1)

    mu: str = "uniform"
    nu: str = "uniform"
    kappa_grid: List[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0])
    imax: int = Field(default=config.DEFAULT_SERIES_LENGTH - 1, ge=0)
    k_list: List[int] = Field(default_factory=list)

    c: float = Field(default=2.0, gt=0.0)
    gamma: float = Field(default=config.DEFAULT_GAMMA, gt=0.0, lt=1.0)

    n_states: int = Field(default=6, ge=1)
    n_actions: int = Field(default=3, ge=1)
    branching: Optional[int] = Field(default=None, ge=1)
    density: float = Field(default=config.DEFAULT_GARNET_REWARD_DENSITY, gt=0.0, le=1.0)
    n_mdps: int = Field(default=200, ge=1)
    kappas: List[float] = Field(default_factory=lambda: [0.0, 0.3, 0.7, 1.0])
    draws: int = Field(default=3, ge=1)

    suite: str = "all"

    @model_validator(mode="after")
    def validate_command(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command}")
        if self.kappa is not None and self.h is not None:
            raise ValueError("give either --kappa or --h, not both")
        if self.iters is not None and self.auto_kstar:
            raise ValueError("give either --iters or --auto-kstar, not both")
        for value in [*self.kappa_grid, *self.kappas]:
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"kappa values must lie in [0, 1], got {value}")
        return self

    def to_dict(self, exclude_none: bool = True) -> Dict:
        """
        Convert the config to a dictionary, without the logging hook.

        Args:
            exclude_none (bool): If True, exclude fields with None values.

        Returns:
            Dict: A dictionary representation of the model's fields.
        """

        data = self.model_dump(exclude_none=exclude_none)
        data.pop("logging_function", None)
        return data

    def modify_config(self, **kwargs):
        """
        Modify the config based on the provided keyword arguments; values of None are ignored.

        A copy is validated first, so a rejected change leaves the config untouched.

        Args:
            **kwargs: argument names and values to modify the config
        """

        new_data = self.model_dump()

        for key, value in kwargs.items():
            if key in type(self).model_fields:
                if value is not None:
                    new_data[key] = value
            else:
                self.logging_function(f"{self.__class__.__name__} has no parameter '{key}'.")

        try:
            validated = self.__class__.model_validate(new_data)
        except ValidationError as e:
            error_message = e.errors()[0]["msg"].replace("Value error, ", "")
            self.logging_function(f"The parameters you specified are invalid. {error_message}")
            raise

        for key in type(self).model_fields:
            setattr(self, key, getattr(validated, key))
        return self


class ExperimentRunner:
    """
    Experiment Runner Class

    Args:
        ui (UserInterface): User interface object - handles output shown to the user and CSV emission
        experiment_config (ExperimentConfig): validated parameters of this invocation
    """

    def __init__(self, ui: UserInterface, experiment_config: ExperimentConfig):
        self.ui = ui
        self.config = experiment_config
        self.threads = resolve_thread_count(experiment_config.threads)

    def handle_command(self) -> int:
        """
        Directs to the handler of the configured command.

        Returns:
            int: process exit code
        """

        command = self.config.command
        logger.info(f"{command} called with parameters {self.config.to_dict()}")

        if command == "solve":
            return self.handle_solve()
        elif command == "kpi":
            return self.handle_kpi()
        elif command == "online":
            return self.handle_online()
        elif command in ("api", "psdp"):
            return self.handle_approximate(command)
        elif command == "coeffs":
            return self.handle_coeffs()
        elif command == "tightrope":
            return self.handle_tightrope()
        elif command == "theorem1-sweep":
            return self.handle_theorem1_sweep()
        elif command == "garnet-gen":
            return self.handle_garnet_gen()
        else:
            return self.handle_verify()

    def load_mdp(self) -> Mdp:
        return MdpSource.parse(self.config.mdp).load()

    def handle_solve(self) -> int:
        mdp = self.load_mdp()
        v_star, pi_star = solve_optimal(mdp, self.config.tol)
        actions = pi_star.actions()

        self.ui.display_results({"v*": np.round(v_star, 10).tolist(), "pi*": actions.tolist()}, title="Optimal control")
        if self.config.out is not None:
            rows = [{"state": s, "v_star": float(v_star[s]), "action": int(actions[s])} for s in range(mdp.n_states)]
            self.ui.emit_rows(rows, self.config.out, self.config.seed)
        return 0

    def handle_kpi(self) -> int:
        """
        Exact kappa-PI (or h-PI with --h), one row per iteration.
        """

        mdp = self.load_mdp()
        v_star, _ = solve_optimal(mdp)
        if self.config.h is not None:
            result = exact_h_pi(mdp, self.config.h, self.config.tol, self.config.max_iters, v_star=v_star)
        else:
            kappa = self.config.kappa if self.config.kappa is not None else 0.0
            result = exact_kappa_pi(mdp, kappa, self.config.tol, self.config.max_iters, v_star=v_star)

        rows = [
            {
                "iter": record.iteration,
                "value_change": record.value_change,
                "error_to_optimal": record.error_to_optimal,
                "policy": " ".join(map(str, record.policy_actions)),
            }
            for record in result.history
        ]
        self.ui.emit_rows(rows, self.config.out, self.config.seed)
        if result.truncated:
            self.ui.log_to_user(f"stopped at max_iters={self.config.max_iters} before converging")
        return 0

    def handle_online(self) -> int:
        mdp = self.load_mdp()
        nu = load_distribution(self.config.nu, mdp.n_states)
        sched = StepSchedule(fast_exponent=self.config.fast_exp, slow_exponent=self.config.slow_exp)
        kappa = self.config.kappa if self.config.kappa is not None else 0.5

        _, trace = run_online(mdp, nu, kappa, sched, self.config.steps, self.config.seed, self.config.snapshot_stride)
        self.ui.emit_rows(trace.to_rows(), self.config.out, self.config.seed)
        return 0

    def handle_approximate(self, command: str) -> int:
        """
        kappa-API or kappa-PSDP with the controlled-error oracle; each row carries the fixed-k bound.

        With --auto-kstar the iteration count is k* and the k* bound is reported alongside.
        """

        mdp = self.load_mdp()
        mu = load_distribution(self.config.mu, mdp.n_states)
        nu = load_distribution(self.config.nu, mdp.n_states).require_strictly_positive()
        kappa = self.config.kappa if self.config.kappa is not None else 0.5
        delta = self.config.delta

        k_star = None
        if self.config.auto_kstar:
            k_star = optimal_iteration_count(mdp.r_max, delta, mdp.gamma, kappa)
            k = k_star
        else:
            k = self.config.iters if self.config.iters is not None else 10

        v_star, pi_star = solve_optimal(mdp)
        i_max = max(self.config.imax, (k_star or 0) + 1)
        report = coefficient_report(mdp, mu, nu, kappas=[kappa], i_max=i_max,
                                    k_list=[k_star] if k_star else [], pi_star=pi_star)
        cfg = GreedyOracleConfig(delta=delta, nu=nu, corruption_mode=self.config.corruption, seed=self.config.seed)

        if command == "api":
            trace, kind, kstar_kind = kappa_api(mdp, kappa, cfg, k, mu=mu, v_star=v_star), \
                BoundKind.API_FIXED, BoundKind.API_KSTAR
        else:
            trace, kind, kstar_kind = kappa_psdp(mdp, kappa, cfg, k, mu=mu, v_star=v_star)[1], \
                BoundKind.PSDP_FIXED, BoundKind.PSDP_KSTAR

        params = BoundParameters(
            kappa=kappa, gamma=mdp.gamma, delta=delta, r_max=mdp.r_max, c1=report.c1, c2=report.c2,
            c2k=report.c2k, c_pi_star_kappa=report.c_pi_star_kappa[kappa],
            c_pi_star_1_kappa=report.c_pi_star_1_kappa[kappa],
        )
        rows = [
            {
                "iter": step.iteration,
                "loss": step.loss,
                "bound_thm": theorem_bounds(kind, params.model_copy(update={"k": step.iteration})),
                "achieved_slack": step.achieved_slack,
            }
            for step in trace.iterations
        ]
        self.ui.emit_rows(rows, self.config.out, self.config.seed)

        if k_star is not None:
            self.ui.display_results(
                {"k*": k_star, f"{kstar_kind.value} bound": theorem_bounds(kstar_kind, params),
                 "g(kappa)": f"{params.g_kappa} (heuristic)"},
                title=f"kappa-{command.upper()} at k*",
            )
        return 0

    def handle_coeffs(self) -> int:
        mdp = self.load_mdp()
        mu = load_distribution(self.config.mu, mdp.n_states)
        nu = load_distribution(self.config.nu, mdp.n_states)
        report = coefficient_report(
            mdp, mu, nu, kappas=self.config.kappa_grid, i_max=self.config.imax, k_list=self.config.k_list
        )
        self.ui.emit_rows(report.to_rows(), self.config.out, self.config.seed)
        if report.ordering_violations:
            self.ui.log_to_user("ordering chain not met: " + "; ".join(report.ordering_violations))
        return 0

    def handle_tightrope(self) -> int:
        """
        One soft update of the hesitant policy on the Tightrope MDP.
        """

        mdp = tightrope_mdp(self.config.c, self.config.gamma)
        pi0 = hesitant_policy()
        if self.config.h is not None:
            report = improvement_report(mdp, pi0, self.config.alpha, h=self.config.h)
        else:
            kappa = self.config.kappa if self.config.kappa is not None else 1.0
            report = improvement_report(mdp, pi0, self.config.alpha, kappa=kappa)

        v_mix = evaluate_policy(mdp, pi0) + report.delta_vector
        rows = [{
            "c": self.config.c,
            "gamma": self.config.gamma,
            "alpha": report.alpha,
            "mode": report.mode,
            "mode_value": report.mode_value,
            "v_mix_s0": float(v_mix[0]),
            "v_mix_s1": float(v_mix[1]),
            "min_delta": report.min_delta,
            "improved": report.improved_everywhere,
        }]
        self.ui.emit_rows(rows, self.config.out, self.config.seed)
        return 0

    def handle_theorem1_sweep(self) -> int:
        """
        Soft updates on seeded Garnets: one row per (mdp seed, kappa, alpha draw).
        """

        n_states, n_actions, draws = self.config.n_states, self.config.n_actions, self.config.draws
        kappas = self.config.kappas

        def cell(mdp_seed: int) -> List[Dict]:
            rng = np.random.default_rng(mdp_seed)
            mdp = garnet(n_states, n_actions, mdp_seed, gamma=self.config.gamma)
            pi = Policy.random(rng, n_states, n_actions)
            rows = []
            for kappa in kappas:
                for _ in range(draws):
                    alpha = float(rng.uniform(max(kappa, 1e-3), 1.0))
                    report = improvement_report(mdp, pi, alpha, kappa=kappa)
                    rows.append({"mdp_seed": mdp_seed, "kappa": kappa, "alpha": alpha,
                                 "min_delta": report.min_delta, "improved": report.improved_everywhere})
            return rows

        seeds = range(self.config.seed, self.config.seed + self.config.n_mdps)
        rows = [row for rows in run_cells(seeds, cell, self.threads) for row in rows]
        rows.sort(key=lambda row: (row["mdp_seed"], row["kappa"], row["alpha"]))
        self.ui.emit_rows(rows, self.config.out, self.config.seed)
        return 0

    def handle_garnet_gen(self) -> int:
        branching = self.config.branching or min(config.DEFAULT_GARNET_BRANCHING, self.config.n_states)
        spec = GarnetSpec(
            n_states=self.config.n_states, n_actions=self.config.n_actions, branching=branching,
            reward_density=self.config.density, seed=self.config.seed, gamma=self.config.gamma,
        )
        mdp = generate_garnet(spec)
        if self.config.out is None:
            self.ui.log_to_user(json.dumps(mdp.to_dict()))
        else:
            save_mdp(mdp, self.config.out)
            self.ui.log_to_user(f"wrote Garnet({spec.n_states}, {spec.n_actions}, b={spec.branching}) to {self.config.out}")
        return 0

    def handle_verify(self) -> int:
        results = run_suite(self.config.suite, self.config.seed, self.threads)
        rows = [{"check": r.name, "passed": r.passed, "detail": r.detail} for r in results]
        self.ui.emit_rows(rows, self.config.out, self.config.seed)

        failed = [r.name for r in results if not r.passed]
        if failed:
            self.ui.log_to_user(f"verify FAILED: {', '.join(failed)}")
            return 1
        self.ui.log_to_user(f"verify passed: {len(results)} checks")
        return 0


def _float_list(text: str) -> List[float]:
    return [float(item) for item in text.split(",") if item.strip()]


def _int_list(text: str) -> List[int]:
    return [int(item) for item in text.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xpi", description="multiple-step greedy policy iteration experiments")
    commands = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, mdp: bool = True) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        if mdp:
            sub.add_argument("--mdp", help="JSON file, tightrope:c=..,gamma=.. or garnet:n_states=..,n_actions=..,seed=..")
        sub.add_argument("--seed", type=int)
        sub.add_argument("--out")
        sub.add_argument("--threads", type=int)
        return sub

    solve = add("solve", "optimal value and policy")
    solve.add_argument("--tol", type=float)

    kpi = add("kpi", "exact kappa-PI or h-PI")
    kpi.add_argument("--kappa", type=float)
    kpi.add_argument("--h", type=int)
    kpi.add_argument("--tol", type=float)
    kpi.add_argument("--max-iters", type=int)

    online = add("online", "two-timescale online kappa-PI")
    online.add_argument("--kappa", type=float)
    online.add_argument("--steps", type=int)
    online.add_argument("--fast-exp", type=float)
    online.add_argument("--slow-exp", type=float)
    online.add_argument("--snapshot-stride", type=int)
    online.add_argument("--nu")

    for name in ("api", "psdp"):
        sub = add(name, f"kappa-{name.upper()} with the controlled-error oracle")
        sub.add_argument("--kappa", type=float)
        sub.add_argument("--delta", type=float)
        sub.add_argument("--nu")
        sub.add_argument("--mu")
        sub.add_argument("--corruption", choices=[mode.value for mode in CorruptionMode])
        sub.add_argument("--imax", type=int)
        iterations = sub.add_mutually_exclusive_group()
        iterations.add_argument("--iters", type=int)
        iterations.add_argument("--auto-kstar", action="store_true", default=None)

    coeffs = add("coeffs", "concentrability coefficients")
    coeffs.add_argument("--mu")
    coeffs.add_argument("--nu")
    coeffs.add_argument("--kappa-grid", type=_float_list)
    coeffs.add_argument("--imax", type=int)
    coeffs.add_argument("--k-list", type=_int_list)

    tightrope = add("tightrope", "soft update on the Tightrope MDP", mdp=False)
    tightrope.add_argument("--c", type=float)
    tightrope.add_argument("--gamma", type=float)
    tightrope.add_argument("--alpha", type=float)
    tightrope.add_argument("--kappa", type=float)
    tightrope.add_argument("--h", type=int)

    sweep = add("theorem1-sweep", "soft-update improvement over seeded Garnets", mdp=False)
    sweep.add_argument("--n-states", type=int)
    sweep.add_argument("--n-actions", type=int)
    sweep.add_argument("--n-mdps", type=int)
    sweep.add_argument("--kappas", type=_float_list)
    sweep.add_argument("--draws", type=int)
    sweep.add_argument("--gamma", type=float)

    gen = add("garnet-gen", "write a Garnet MDP as JSON", mdp=False)
    gen.add_argument("--n-states", type=int)
    gen.add_argument("--n-actions", type=int)
    gen.add_argument("--branching", type=int)
    gen.add_argument("--density", type=float)
    gen.add_argument("--gamma", type=float)

    verify = add("verify", "run the numerical property suite", mdp=False)
    verify.add_argument("--suite", choices=["core", "kappa", "mixture", "online", "approx", "coeffs", "cli", "all"])

    return parser


def run_command(argv: List[str]) -> int:
    """
    Parses argv, runs the command and returns the exit code: 0 success, 1 invalid input or failed verify, 2 usage.

    Args:
        argv (List[str]): arguments without the program name

    Returns:
        int: exit code
    """

    ui = UserInterface()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0

    overrides = {key: value for key, value in vars(args).items() if key != "command"}
    try:
        experiment_config = ExperimentConfig(command=args.command, logging_function=ui.log_to_user)
        experiment_config.modify_config(**overrides)
        return ExperimentRunner(ui, experiment_config).handle_command()
    except ValidationError:
        # modify_config already reported the message
        return 1
    except ValueError as e:
        ui.log_to_user(f"Error: {e}")
        return 1


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
