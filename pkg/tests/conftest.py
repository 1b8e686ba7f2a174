"""Shared fixtures: seeded tabular models and policies."""

import numpy as np
import pytest

from policysearch.environments import lattice_gaussian_factory, two_state_factory
from policysearch.exact import ExactEngine
from policysearch.mdp import TabularMdp, random_mdp
from policysearch.policies import GibbsPolicy


@pytest.fixture
def rng():
    """Seeded generator for test inputs."""
    return np.random.default_rng(12345)


@pytest.fixture
def small_mdp():
    """Seeded 3-state, 2-action random MDP."""
    return random_mdp(3, 2, gamma=0.9, seed=1).check()


@pytest.fixture
def gibbs_policy():
    """Tabular softmax matching small_mdp."""
    return GibbsPolicy.one_hot(3, 2)


@pytest.fixture
def feature_policy(rng):
    """Gibbs policy with random 3-dimensional features on small_mdp."""
    return GibbsPolicy.tabular(rng.normal(size=(3, 2, 3)))


@pytest.fixture
def engine(small_mdp, gibbs_policy):
    """Exact engine on small_mdp with a tabular softmax."""
    return ExactEngine(small_mdp, gibbs_policy)


@pytest.fixture
def two_state():
    """The two-state MDP and its two-parameter Gibbs policy."""
    return two_state_factory()


@pytest.fixture
def gaussian_tabular():
    """Tabular MDP with action values and a Gaussian-linear policy."""
    return lattice_gaussian_factory(n_states=3, n_actions=4, seed=2)


@pytest.fixture
def chain_mdp():
    """
    Four-state ergodic chain whose state 0 has a single effective action.

    Both actions in state 0 share one transition row and one reward, so the policy at
    the recurrent state does not matter.
    """
    trans = np.zeros((4, 2, 4))
    trans[0, :, :] = [0.0, 0.5, 0.3, 0.2]
    trans[1, 0] = [0.3, 0.0, 0.7, 0.0]
    trans[1, 1] = [0.6, 0.0, 0.0, 0.4]
    trans[2, 0] = [0.2, 0.3, 0.0, 0.5]
    trans[2, 1] = [0.7, 0.1, 0.1, 0.1]
    trans[3, 0] = [0.5, 0.5, 0.0, 0.0]
    trans[3, 1] = [0.1, 0.0, 0.6, 0.3]
    reward = np.array([[0.0, 0.0], [1.0, 0.2], [0.0, 0.8], [0.5, 0.0]])
    return TabularMdp(p1=[1.0, 0.0, 0.0, 0.0], trans=trans, reward=reward, gamma=0.9).check()
