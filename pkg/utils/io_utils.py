import json
import os
from typing import Dict, List, Literal, Optional

import pandas as pd
from pydantic import BaseModel, Field

import config
from analysis.mixture_lab import tightrope_mdp
from mdp_core.generators import GarnetSpec, generate_garnet
from mdp_core.mdp import Mdp, StateDistribution

# short names accepted in garnet:... source strings
_GARNET_ALIASES = {"density": "reward_density"}


class MdpSource(BaseModel):
    """
    Where an MDP comes from: a JSON file, the Tightrope family, or a seeded Garnet

    Parsed from strings such as "t.json", "tightrope:c=2,gamma=0.9" or "garnet:n_states=5,n_actions=2,seed=3".
    """

    kind: Literal["file", "tightrope", "garnet"]
    path: Optional[str] = None
    params: Dict[str, float] = Field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> "MdpSource":
        prefix, _, rest = text.partition(":")
        if prefix not in ("tightrope", "garnet") or not rest:
            return cls(kind="file", path=text)

        params = {}
        for item in rest.split(","):
            key, sep, value = item.partition("=")
            if not sep:
                raise ValueError(f"malformed parameter {item!r} in MDP source {text!r}")
            try:
                params[_GARNET_ALIASES.get(key.strip(), key.strip())] = float(value)
            except ValueError:
                raise ValueError(f"parameter {key!r} in MDP source {text!r} is not a number")
        return cls(kind=prefix, params=params)

    def load(self) -> Mdp:
        """
        Materialize the MDP.

        Returns:
            Mdp: the validated MDP
        """

        if self.kind == "file":
            return load_mdp(self.path)

        if self.kind == "tightrope":
            unknown = set(self.params) - {"c", "gamma"}
            if unknown or "c" not in self.params:
                raise ValueError(f"tightrope source takes c and optional gamma, got {sorted(self.params)}")
            return tightrope_mdp(self.params["c"], self.params.get("gamma", config.DEFAULT_GAMMA))

        fields = dict(self.params)
        integer_fields = ("n_states", "n_actions", "branching", "seed")
        for name in integer_fields:
            if name in fields:
                if not float(fields[name]).is_integer():
                    raise ValueError(f"garnet parameter {name} must be an integer, got {fields[name]}")
                fields[name] = int(fields[name])
        if "branching" not in fields and "n_states" in fields:
            fields["branching"] = min(config.DEFAULT_GARNET_BRANCHING, fields["n_states"])
        return generate_garnet(GarnetSpec(**fields))


def load_mdp(path: str) -> Mdp:
    """
    Reads an MDP JSON document (gamma, n_states, n_actions, rewards, transitions) and validates it.

    Args:
        path (str): path to the JSON file

    Returns:
        Mdp: the validated MDP
    """

    if not os.path.exists(path):
        raise ValueError(f"MDP file {path} does not exist")
    with open(path) as f:
        return Mdp.from_dict(json.load(f))


def save_mdp(mdp: Mdp, path: str) -> None:
    with open(path, "w") as f:
        json.dump(mdp.to_dict(), f)


def load_distribution(text: str, n_states: int) -> StateDistribution:
    """
    "uniform", or a JSON file holding an array of n_states probabilities.

    Args:
        text (str): the flag value
        n_states (int): number of states the distribution must cover

    Returns:
        StateDistribution: the validated measure
    """

    if text == "uniform":
        return StateDistribution.uniform(n_states)

    if not os.path.exists(text):
        raise ValueError(f"distribution file {text} does not exist")
    with open(text) as f:
        probs = json.load(f)
    if not isinstance(probs, list) or len(probs) != n_states:
        raise ValueError(f"distribution file {text} must hold a JSON array of {n_states} probabilities")
    return StateDistribution(p=probs)


def rows_to_frame(rows: List[Dict], seed: Optional[int]) -> pd.DataFrame:
    """Result rows plus the seed and artifact version columns every output carries."""
    frame = pd.DataFrame(rows)
    frame["seed"] = seed
    frame["version"] = config.ARTIFACT_VERSION
    return frame


def write_csv(rows: List[Dict], path: str, seed: Optional[int]) -> pd.DataFrame:
    """
    Writes result rows to CSV with a header, fixed float format and no index, so re-runs are byte-identical.

    Args:
        rows (List[Dict]): one dict per output row, same keys in every row
        path (str): output CSV path
        seed (Optional[int]): master seed of the run

    Returns:
        pd.DataFrame: the written frame
    """

    frame = rows_to_frame(rows, seed)
    frame.to_csv(path, index=False, float_format=config.CSV_FLOAT_FORMAT)
    return frame
