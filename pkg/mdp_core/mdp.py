from typing import Any, Dict

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, PrivateAttr, field_validator, model_validator

import config
from mdp_core.errors import InvalidMeasureError

# v[s] and q[s, a]; plain float arrays so numpy does the arithmetic
ValueFunction = NDArray[np.float64]
QFunction = NDArray[np.float64]


def _readonly_float_array(value: Any) -> np.ndarray:
    array = np.array(value, dtype=float)
    array.setflags(write=False)
    return array


class Mdp(BaseModel):
    """
    Finite discounted MDP, the 5-tuple (S, A, P, R, gamma).

    Args:
        transitions (np.ndarray): P[s, a, s'] transition probabilities, shape (n_states, n_actions, n_states)
        rewards (np.ndarray): r[s, a] deterministic reward table, shape (n_states, n_actions)
        gamma (float): discount factor, strictly inside (0, 1)

    R_max = max |r(s, a)| is recorded once at construction.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float

    _r_max: float = PrivateAttr(default=0.0)

    @field_validator("transitions", "rewards", mode="before")
    @classmethod
    def as_float_array(cls, value: Any) -> np.ndarray:
        return _readonly_float_array(value)

    @classmethod
    def discount_is_valid(cls, gamma: float) -> bool:
        return 0.0 < gamma < 1.0

    @model_validator(mode="after")
    def validate_model(self):
        if not type(self).discount_is_valid(self.gamma):
            raise ValueError(f"gamma={self.gamma} is outside the admissible discount range")

        if self.transitions.ndim != 3 or self.rewards.ndim != 2:
            raise ValueError("transitions must be 3-D [s][a][s'] and rewards 2-D [s][a]")

        n_states, n_actions, n_next = self.transitions.shape
        if n_states < 1 or n_actions < 1:
            raise ValueError("an MDP needs at least one state and one action")
        if n_next != n_states:
            raise ValueError(f"transitions has {n_next} successor states but {n_states} states")
        if self.rewards.shape != (n_states, n_actions):
            raise ValueError(f"rewards shape {self.rewards.shape} does not match ({n_states}, {n_actions})")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")

        for s in range(n_states):
            for a in range(n_actions):
                row = self.transitions[s, a]
                if not np.all(np.isfinite(row)) or np.any(row < 0.0):
                    raise ValueError(f"transition row P[{s}][{a}] has negative or non-finite entries")
                if abs(row.sum() - 1.0) > config.STOCHASTIC_ROW_TOL:
                    raise ValueError(f"transition row P[{s}][{a}] sums to {row.sum():.15g}, not 1")

        return self

    def model_post_init(self, __context: Any) -> None:
        self._r_max = float(np.max(np.abs(self.rewards)))

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def r_max(self) -> float:
        return self._r_max

    def to_dict(self) -> Dict:
        """
        Convert the MDP to the JSON file schema (gamma, n_states, n_actions, rewards, transitions).

        Returns:
            Dict: JSON-serialisable representation
        """

        return {
            "gamma": self.gamma,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "rewards": self.rewards.tolist(),
            "transitions": self.transitions.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Mdp":
        """
        Build an MDP from the JSON file schema, checking the declared dimensions.

        Args:
            data (Dict): parsed JSON document

        Returns:
            Mdp: the validated MDP
        """

        missing = {"gamma", "n_states", "n_actions", "rewards", "transitions"} - set(data)
        if missing:
            raise ValueError(f"MDP document is missing keys: {sorted(missing)}")

        mdp = cls(transitions=data["transitions"], rewards=data["rewards"], gamma=data["gamma"])
        if (mdp.n_states, mdp.n_actions) != (data["n_states"], data["n_actions"]):
            raise ValueError(
                f"declared n_states={data['n_states']}, n_actions={data['n_actions']} "
                f"but arrays describe ({mdp.n_states}, {mdp.n_actions})"
            )
        return mdp


class Policy(BaseModel):
    """
    Stationary, possibly stochastic policy pi[s, a]. Deterministic policies are one-hot rows.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    probs: np.ndarray

    @field_validator("probs", mode="before")
    @classmethod
    def as_float_array(cls, value: Any) -> np.ndarray:
        return _readonly_float_array(value)

    @model_validator(mode="after")
    def validate_rows(self):
        if self.probs.ndim != 2 or 0 in self.probs.shape:
            raise ValueError("policy must be a non-empty 2-D array pi[s][a]")

        for s, row in enumerate(self.probs):
            if not np.all(np.isfinite(row)) or np.any(row < 0.0):
                raise ValueError(f"policy row pi[{s}] has negative or non-finite entries")
            if abs(row.sum() - 1.0) > config.STOCHASTIC_ROW_TOL:
                raise ValueError(f"policy row pi[{s}] sums to {row.sum():.15g}, not 1")

        return self

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all(np.max(self.probs, axis=1) >= 1.0 - config.STOCHASTIC_ROW_TOL))

    def actions(self) -> np.ndarray:
        """Most likely action per state; the chosen action when the policy is deterministic."""
        return np.argmax(self.probs, axis=1)

    @classmethod
    def from_actions(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.shape[0], n_actions))
        probs[np.arange(actions.shape[0]), actions] = 1.0
        return cls(probs=probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(probs=np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def random(cls, rng: np.random.Generator, n_states: int, n_actions: int) -> "Policy":
        """Rows drawn from a flat Dirichlet."""
        return cls(probs=rng.dirichlet(np.ones(n_actions), size=n_states))


class StateDistribution(BaseModel):
    """
    Probability vector over states. Plays the sampling measure nu (must then be strictly positive)
    or the loss measure mu.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    p: np.ndarray

    @field_validator("p", mode="before")
    @classmethod
    def as_float_array(cls, value: Any) -> np.ndarray:
        return _readonly_float_array(value)

    @model_validator(mode="after")
    def validate_measure(self):
        if self.p.ndim != 1 or self.p.shape[0] == 0:
            raise ValueError("state distribution must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.p)) or np.any(self.p < 0.0):
            negative = int(np.argmin(self.p))
            raise ValueError(f"state distribution has a negative or non-finite entry at state {negative}")
        if abs(self.p.sum() - 1.0) > config.STOCHASTIC_ROW_TOL:
            raise ValueError(f"state distribution sums to {self.p.sum():.15g}, not 1")
        return self

    @property
    def n_states(self) -> int:
        return self.p.shape[0]

    @property
    def strictly_positive(self) -> bool:
        return bool(np.all(self.p > 0.0))

    def require_strictly_positive(self) -> "StateDistribution":
        if not self.strictly_positive:
            zeros = np.flatnonzero(self.p <= 0.0).tolist()
            raise InvalidMeasureError(f"sampling measure must be strictly positive; zero mass at states {zeros}")
        return self

    def mixed_with(self, other: "StateDistribution", alpha: float) -> "StateDistribution":
        """(1 - alpha) * self + alpha * other."""
        return StateDistribution(p=(1.0 - alpha) * self.p + alpha * other.p)

    @classmethod
    def uniform(cls, n_states: int) -> "StateDistribution":
        return cls(p=np.full(n_states, 1.0 / n_states))

    @classmethod
    def random(cls, rng: np.random.Generator, n_states: int) -> "StateDistribution":
        p = rng.dirichlet(np.ones(n_states))
        return cls(p=p / p.sum())

    @classmethod
    def point_mass(cls, n_states: int, state: int) -> "StateDistribution":
        p = np.zeros(n_states)
        p[state] = 1.0
        return cls(p=p)
