"""Sampled-environment adapter for tabular MDPs."""

from typing import Optional, Tuple

import numpy as np

from ..exceptions import ValidationError
from ..mdp import TabularMdp, random_mdp
from ..policies import GaussianLinearPolicy

DEFAULT_EVAL_LENGTH = 200


class TabularEnv:
    """
    A TabularMdp exposed through the sampled-environment contract.

    The environment holds no mutable state: states are integers passed in and out.

    Args:
        mdp: Validated tabular model
        recurrent_state: State treated as the regeneration point, if any
        horizon: Episode length for forward sampling, if any
    """

    def __init__(
        self,
        mdp: TabularMdp,
        recurrent_state: Optional[int] = None,
        horizon: Optional[int] = None,
    ):
        self.mdp = mdp.check()
        if recurrent_state is not None and not 0 <= recurrent_state < mdp.n_states:
            raise ValidationError(f"recurrent_state {recurrent_state} is not a state")
        if horizon is not None and horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {horizon}")
        self._recurrent = recurrent_state
        self.horizon = horizon
        self._p1_cdf = np.cumsum(mdp.p1)
        self._trans_cdf = np.cumsum(mdp.trans, axis=2)

    @staticmethod
    def _draw(cdf: np.ndarray, rng: np.random.Generator) -> int:
        return int(min(np.searchsorted(cdf, rng.random(), side="right"), cdf.shape[0] - 1))

    def reset(self, rng: np.random.Generator) -> int:
        return self._draw(self._p1_cdf, rng)

    def step(self, state: int, action: int, rng: np.random.Generator) -> Tuple[int, float]:
        reward = float(self.mdp.reward[state, action])
        return self._draw(self._trans_cdf[state, action], rng), reward

    def recurrent_state(self) -> Optional[int]:
        return self._recurrent

    def is_recurrent(self, state: int) -> bool:
        return self._recurrent is not None and state == self._recurrent

    def episode_return(self, policy, w: np.ndarray, seed: int, length: int) -> float:
        """Discounted return of one episode of ``length`` steps."""
        rng = np.random.default_rng(seed)
        state = self.reset(rng)
        total, discount = 0.0, 1.0
        for _ in range(length):
            action = policy.sample(state, w, rng)
            state, reward = self.step(state, action, rng)
            total += discount * reward
            discount *= self.mdp.gamma
        return total

    def evaluate(self, policy, w: np.ndarray, n_episodes: int, seed: int) -> float:
        """
        Mean discounted return over n_episodes episodes seeded from ``seed``.

        Episodes last ``horizon`` steps, or DEFAULT_EVAL_LENGTH when no horizon is set.
        """
        length = self.horizon or DEFAULT_EVAL_LENGTH
        seeds = np.random.SeedSequence(seed).generate_state(n_episodes)
        return float(np.mean([self.episode_return(policy, w, int(s), length) for s in seeds]))


def lattice_gaussian_factory(
    n_states: int = 3,
    n_actions: int = 3,
    gamma: float = 0.9,
    seed: int = 0,
    noise_var: float = 1.0,
) -> Tuple[TabularMdp, GaussianLinearPolicy]:
    """
    Random tabular MDP whose actions are points on [-1, 1], with a Gaussian policy.

    The policy mean is w[s] in state s (one-hot state features, no offset), so log pi is
    quadratic in w and the closed-form EM update applies.

    Returns:
        Tuple (mdp with action_values, policy)
    """
    base = random_mdp(n_states, n_actions, gamma=gamma, seed=seed)
    mdp = TabularMdp(
        p1=base.p1,
        trans=base.trans,
        reward=base.reward,
        gamma=base.gamma,
        action_values=np.linspace(-1.0, 1.0, n_actions),
    ).check()
    eye = np.eye(n_states)
    policy = GaussianLinearPolicy(
        state_features=lambda s: eye[int(s)],
        n_features=n_states,
        noise_cov=noise_var,
        use_offset=False,
    )
    return mdp, policy
