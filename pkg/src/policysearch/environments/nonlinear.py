"""
Synthetic two-dimensional nonlinear system.

State s = (position, velocity), scalar control u:

    s1' = s1 + sigmoid(u) - 0.5 + kappa
    s2' = s2 - 0.1 * s1' + kappa'

with independent zero-mean Gaussian kappa, kappa'. The agent starts near (0, 1) and is
rewarded for being close to the origin.
"""

from typing import Tuple

import numpy as np
from scipy.special import expit

from ..exceptions import ValidationError
from ..policies import GaussianLinearPolicy

HORIZON = 80
SIGMA_KAPPA = 0.02
START = (0.0, 1.0)
START_NOISE = 0.001
REWARD_SIGMA = 0.1
SIGMA_EPSILON = 0.1
PARAM_LOW = (0.0, -8.0)
PARAM_HIGH = (60.0, 0.0)


class NonlinearSystem:
    """
    Episodic environment with horizon 80.

    Args:
        sigma_kappa: Transition noise standard deviation (0 makes the dynamics deterministic)
        horizon: Episode length
        start_noise: Standard deviation of the start-state noise
        reward_sigma: Width of the Gaussian reward bump around the origin
    """

    def __init__(
        self,
        sigma_kappa: float = SIGMA_KAPPA,
        horizon: int = HORIZON,
        start_noise: float = START_NOISE,
        reward_sigma: float = REWARD_SIGMA,
    ):
        if sigma_kappa < 0 or start_noise < 0 or reward_sigma <= 0:
            raise ValidationError("Noise levels must be >= 0 and reward_sigma > 0")
        if horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {horizon}")
        self.sigma_kappa = float(sigma_kappa)
        self.horizon = int(horizon)
        self.start_noise = float(start_noise)
        self.reward_sigma = float(reward_sigma)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        noise = rng.normal(0.0, self.start_noise, size=2) if self.start_noise > 0 else 0.0
        return np.asarray(START) + noise

    def reward(self, state: np.ndarray) -> float:
        return float(np.exp(-0.5 * float(state @ state) / self.reward_sigma ** 2))

    def step(self, state: np.ndarray, action, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
        """
        Advance one step. The reward is that of the current state.

        Returns:
            Tuple (next_state, reward)
        """
        u = float(np.asarray(action, dtype=float).ravel()[0])
        if self.sigma_kappa > 0:
            kappa = rng.normal(0.0, self.sigma_kappa, size=2)
        else:
            kappa = np.zeros(2)
        s1 = state[0] + expit(u) - 0.5 + kappa[0]
        s2 = state[1] - 0.1 * s1 + kappa[1]
        return np.array([s1, s2]), self.reward(state)

    def recurrent_state(self):
        return None

    def is_recurrent(self, state) -> bool:
        return False

    def episode_total(self, policy, w: np.ndarray, seed: int) -> float:
        """Undiscounted total reward of one episode."""
        rng = np.random.default_rng(seed)
        state = self.reset(rng)
        total = 0.0
        for _ in range(self.horizon):
            action = policy.sample(state, w, rng)
            state, reward = self.step(state, action, rng)
            total += reward
        return total

    def evaluate(self, policy, w: np.ndarray, n_episodes: int, seed: int) -> float:
        """Mean undiscounted total reward over n_episodes episodes seeded from ``seed``."""
        seeds = np.random.SeedSequence(seed).generate_state(n_episodes)
        return float(np.mean([self.episode_total(policy, w, int(s)) for s in seeds]))


def linear_controller(sigma_epsilon: float = SIGMA_EPSILON) -> GaussianLinearPolicy:
    """
    Controller a_t = (w + eps_t)^T s_t with eps_t ~ N(0, sigma_epsilon^2 I).

    Equivalently a_t ~ N(w^T s_t, sigma_epsilon^2 ||s_t||^2), a Gaussian-linear policy
    without offset whose noise scales with the squared state norm.
    """
    if sigma_epsilon <= 0:
        raise ValidationError(f"sigma_epsilon must be positive, got {sigma_epsilon}")
    return GaussianLinearPolicy(
        state_features=lambda s: np.asarray(s, dtype=float),
        n_features=2,
        noise_cov=sigma_epsilon ** 2,
        use_offset=False,
        noise_scale=lambda s: float(np.dot(s, s)),
    )


def initial_parameters(rng: np.random.Generator) -> np.ndarray:
    """Draw w_0 uniformly from [0, 60] x [-8, 0]."""
    return rng.uniform(PARAM_LOW, PARAM_HIGH)

