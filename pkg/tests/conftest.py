import numpy as np
import pytest

from analysis.mixture_lab import hesitant_policy, tightrope_mdp
from mdp_core.generators import garnet
from mdp_core.mdp import Mdp, StateDistribution


@pytest.fixture
def tightrope():
    """Tightrope MDP with c=2, gamma=0.9; v^{pi0} = (0, -18, 10, -20), v* = (8.1, 9, 10, -20)."""
    return tightrope_mdp(2.0, 0.9)


@pytest.fixture
def pi0():
    return hesitant_policy()


@pytest.fixture
def small_garnet():
    return garnet(5, 2, 3, gamma=0.9)


@pytest.fixture
def garnet_8x3():
    return garnet(8, 3, 11, gamma=0.9)


@pytest.fixture
def single_state_mdp():
    """One state, one action, reward 1: v = 1 / (1 - gamma)."""
    return Mdp(transitions=np.ones((1, 1, 1)), rewards=np.ones((1, 1)), gamma=0.9)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def uniform5():
    return StateDistribution.uniform(5)
