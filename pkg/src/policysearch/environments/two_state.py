"""Two-state, two-parameter MDP used to trace policies during training."""

from typing import Tuple

import numpy as np

from ..mdp import TabularMdp
from ..policies import GibbsPolicy

STAY, SWITCH = 0, 1
SUCCESS = 0.9
GAMMA = 0.95


def two_state_factory(seed: int = 0) -> Tuple[TabularMdp, GibbsPolicy]:
    """
    Build the canonical two-state instance.

    States {0, 1}, actions {stay, switch}. "stay" keeps the state with probability 0.9,
    "switch" flips it with probability 0.9. Reward is 1 in state 1 and 0 in state 0,
    gamma = 0.95 and the start distribution is uniform. The Gibbs policy has one
    parameter per state: phi(a, s) = e_s * 1[a = stay].

    Args:
        seed: Accepted for a uniform factory signature; the instance is deterministic

    Returns:
        Tuple (mdp, policy)
    """
    del seed
    trans = np.zeros((2, 2, 2))
    for s in (0, 1):
        trans[s, STAY, s] = SUCCESS
        trans[s, STAY, 1 - s] = 1.0 - SUCCESS
        trans[s, SWITCH, 1 - s] = SUCCESS
        trans[s, SWITCH, s] = 1.0 - SUCCESS
    reward = np.array([[0.0, 0.0], [1.0, 1.0]])
    mdp = TabularMdp(p1=[0.5, 0.5], trans=trans, reward=reward, gamma=GAMMA).check()

    features = np.zeros((2, 2, 2))
    features[0, STAY, 0] = 1.0
    features[1, STAY, 1] = 1.0
    return mdp, GibbsPolicy.tabular(features)
