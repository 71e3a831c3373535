"""
Performance bounds for kappa-API and kappa-PSDP, as functions of the concentrability coefficients.

Coefficients may be math.inf; every product uses 0 * inf = 0 so that a vanishing weight removes its term.
"""

import logging
import math
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

import config
from analysis.concentrability import scaled
from greedy.kappa_greedy import xi
from mdp_core.errors import InvalidArgumentError

logger = logging.getLogger(config.LOGGER_NAME)


class BoundKind(str, Enum):
    API_FIXED = "api_fixed"
    API_KSTAR = "api_kstar"
    PSDP_FIXED = "psdp_fixed"
    PSDP_KSTAR = "psdp_kstar"


class BoundParameters(BaseModel):
    """
    Pydantic class bundling everything a bound needs; coefficients come from the concentrability module
    """

    kappa: float = Field(ge=0.0, le=1.0)
    gamma: float = Field(gt=0.0, lt=1.0)
    delta: float = Field(ge=0.0)
    k: Optional[int] = Field(default=None, ge=0)
    r_max: float = Field(ge=0.0)

    c1: float = 1.0
    c2: float = 1.0
    c2k: Dict[int, float] = Field(default_factory=dict)
    c_pi_star_kappa: float = 1.0
    c_pi_star_1_kappa: float = 1.0

    # proof-internal bounded function of kappa; not computable, 1.0 is a heuristic default
    g_kappa: float = config.DEFAULT_G_KAPPA

    @property
    def g_kappa_is_heuristic(self) -> bool:
        return self.g_kappa == config.DEFAULT_G_KAPPA


def optimal_iteration_count(r_max: float, delta: float, gamma: float, kappa: float) -> int:
    """k* = ceil(log(R_max / (delta (1 - gamma))) / (1 - xi)), at least 1."""
    if not delta > 0:
        raise InvalidArgumentError(f"delta must be positive for k*, got {delta}")
    if r_max == 0.0:
        return 1
    k_star = math.ceil(math.log(r_max / (delta * (1.0 - gamma))) / (1.0 - xi(gamma, kappa)))
    return max(1, k_star)


def api_coefficient(p: BoundParameters) -> float:
    """C_{kappa-API} = (1-kappa)^2 C2 + (1-gamma) kappa ((1-kappa) C1 + (1-gamma kappa) C^{pi*(1)}_kappa)."""
    kappa, gamma = p.kappa, p.gamma
    inner = scaled(1.0 - kappa, p.c1) + scaled(1.0 - gamma * kappa, p.c_pi_star_1_kappa)
    return scaled((1.0 - kappa) ** 2, p.c2) + scaled((1.0 - gamma) * kappa, inner)


def api_kstar_coefficients(p: BoundParameters, k: int) -> tuple:
    """(C^{(k,1)}_{kappa-API}, C^{(k,2)}_{kappa-API}); needs C^{(2,k)} in p.c2k."""
    kappa, gamma = p.kappa, p.gamma
    if k not in p.c2k:
        raise InvalidArgumentError(f"C^(2,{k}) is required for the k* bound but was not supplied")

    c_k1 = scaled(1.0 - kappa * gamma,
                  scaled(kappa * (1.0 - kappa * gamma), p.c_pi_star_kappa) + scaled((1.0 - kappa) ** 2, p.c1))
    c_k2 = scaled((1.0 - kappa) * kappa,
                  scaled(1.0 - gamma, p.c1) + scaled(p.g_kappa * (1.0 - kappa) * gamma ** k, p.c2k[k]))
    return c_k1, c_k2


def theorem_bounds(kind: BoundKind, params: BoundParameters) -> float:
    """
    Right-hand side of the kappa-API / kappa-PSDP performance bounds.

    api_fixed:  C_{kappa-API} / (1-gamma)^2 delta + xi^k R_max / (1-gamma)
    api_kstar:  C^{(k,1)} / (1-gamma)^2 log(R_max / ((1-gamma) delta)) delta + C^{(k,2)} / (1-gamma)^2 delta + delta
    psdp_fixed: C^{pi*(1)}_kappa / (1-xi) delta + xi^k R_max / (1-gamma)
    psdp_kstar: C^{pi*}_kappa / (1-xi)^2 log(R_max / ((1-gamma) delta)) delta + delta

    The *_kstar variants are evaluated at k* (params.k is ignored there).

    Args:
        kind (BoundKind): which bound
        params (BoundParameters): kappa, gamma, delta, k, R_max and coefficients

    Returns:
        float: the bound value, possibly inf
    """

    kind = BoundKind(kind)
    gamma, delta = params.gamma, params.delta
    x = xi(gamma, params.kappa)
    horizon = 1.0 / (1.0 - gamma)

    if kind in (BoundKind.API_FIXED, BoundKind.PSDP_FIXED):
        if params.k is None:
            raise InvalidArgumentError(f"{kind.value} needs the iteration count k")
        decay = x ** params.k * params.r_max * horizon
        if kind == BoundKind.API_FIXED:
            return scaled(delta * horizon ** 2, api_coefficient(params)) + decay
        return scaled(delta / (1.0 - x), params.c_pi_star_1_kappa) + decay

    if not delta > 0:
        raise InvalidArgumentError(f"{kind.value} needs delta > 0, got {delta}")
    if params.g_kappa_is_heuristic:
        logger.debug("k* bound evaluated with the heuristic g(kappa) = 1")

    # a budget above R_max / (1 - gamma) is met at k* = 1; the log term never goes negative
    log_term = max(0.0, math.log(params.r_max / ((1.0 - gamma) * delta))) if params.r_max > 0 else 0.0
    k_star = optimal_iteration_count(params.r_max, delta, gamma, params.kappa)

    if kind == BoundKind.API_KSTAR:
        c_k1, c_k2 = api_kstar_coefficients(params, k_star)
        return scaled(horizon ** 2 * log_term * delta, c_k1) + scaled(horizon ** 2 * delta, c_k2) + delta
    return scaled(log_term * delta / (1.0 - x) ** 2, params.c_pi_star_kappa) + delta


def bound_profile(kind: BoundKind, params: BoundParameters, kappas: List[float],
                  coefficients_for) -> List[Dict[str, float]]:
    """
    Bound value across a kappa grid, the kappa tradeoff curve.

    Args:
        kind (BoundKind): which bound
        params (BoundParameters): template parameters; kappa and the coefficients are replaced per grid point
        kappas (List[float]): grid
        coefficients_for (Callable[[float], Dict]): kappa -> dict of coefficient fields for BoundParameters

    Returns:
        List[Dict[str, float]]: rows {kappa, xi, bound}
    """

    rows = []
    for kappa in kappas:
        point = params.model_copy(update={"kappa": kappa, **coefficients_for(kappa)})
        rows.append({"kappa": kappa, "xi": xi(params.gamma, kappa), "bound": theorem_bounds(kind, point)})
    return rows
