import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

import config
from mdp_core.mdp import Mdp

logger = logging.getLogger(config.LOGGER_NAME)


class GarnetSpec(BaseModel):
    """
    Pydantic class for a Garnet random MDP - n_states, n_actions, branching b successors per (s, a)
    """

    n_states: int = Field(ge=1)
    n_actions: int = Field(ge=1)
    branching: int = Field(default=config.DEFAULT_GARNET_BRANCHING, ge=1)
    # fraction of (s, a) pairs carrying a nonzero reward; at least one pair always does
    reward_density: float = Field(default=config.DEFAULT_GARNET_REWARD_DENSITY, gt=0.0, le=1.0)
    seed: int = 0
    gamma: float = Field(default=config.DEFAULT_GAMMA, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def validate_branching(self):
        if self.branching > self.n_states:
            raise ValueError(f"branching={self.branching} exceeds n_states={self.n_states}")
        return self


def generate_garnet(spec: GarnetSpec) -> Mdp:
    """
    Generate a Garnet MDP, fully determined by spec.seed.

    Each (s, a) gets `branching` distinct successors drawn without replacement, with probabilities
    given by the gaps between sorted uniform cuts of [0, 1]. Rewards are uniform in [0, 1] on a
    random subset of the (s, a) pairs and 0 elsewhere.

    Args:
        spec (GarnetSpec): generator parameters

    Returns:
        Mdp: the generated MDP
    """

    rng = np.random.default_rng(spec.seed)
    n_s, n_a, b = spec.n_states, spec.n_actions, spec.branching

    transitions = np.zeros((n_s, n_a, n_s))
    for s in range(n_s):
        for a in range(n_a):
            successors = rng.choice(n_s, size=b, replace=False)
            cuts = np.sort(rng.random(b - 1))
            probs = np.diff(np.concatenate(([0.0], cuts, [1.0])))
            transitions[s, a, successors] = probs / probs.sum()

    n_rewarded = max(1, int(round(spec.reward_density * n_s * n_a)))
    rewarded = rng.choice(n_s * n_a, size=n_rewarded, replace=False)
    rewards = np.zeros(n_s * n_a)
    rewards[rewarded] = rng.random(n_rewarded)

    logger.debug(f"generated Garnet({n_s}, {n_a}, b={b}, seed={spec.seed})")

    return Mdp(transitions=transitions, rewards=rewards.reshape(n_s, n_a), gamma=spec.gamma)


def garnet(
        n_states: int,
        n_actions: int,
        seed: int,
        gamma: float = config.DEFAULT_GAMMA,
        branching: Optional[int] = None,
) -> Mdp:
    """Shorthand Garnet(n_states, n_actions, seed) with the default branching capped at n_states."""
    if branching is None:
        branching = min(config.DEFAULT_GARNET_BRANCHING, n_states)
    return generate_garnet(
        GarnetSpec(n_states=n_states, n_actions=n_actions, branching=branching, seed=seed, gamma=gamma)
    )
