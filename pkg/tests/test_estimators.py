"""Tests for the sampling estimators."""

import numpy as np
import pytest

from policysearch.environments import TabularEnv
from policysearch.estimators import EstimatorAccumulators, forward_estimate, recurrent_estimate
from policysearch.exact import ExactEngine
from policysearch.exceptions import NoRecurrentState, ValidationError
from policysearch.mdp import TabularMdp, random_mdp
from policysearch.policies import GibbsPolicy


def _with_reward(mdp, reward):
    return TabularMdp(p1=mdp.p1, trans=mdp.trans, reward=reward, gamma=mdp.gamma).check()


def _cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def _cycle_engine(chain_mdp):
    """
    Chain with every return to state 0 redirected into an absorbing zero-reward state,
    so one episode of the new model is one cycle of the old.
    """
    trans = np.zeros((5, 2, 5))
    trans[:4, :, :4] = chain_mdp.trans
    trans[1:4, :, 4] = trans[1:4, :, 0]
    trans[1:4, :, 0] = 0.0
    trans[4, :, 4] = 1.0
    reward = np.vstack([chain_mdp.reward, np.zeros((1, 2))])
    cycle = TabularMdp(p1=np.eye(5)[0], trans=trans, reward=reward, gamma=0.99999)
    return ExactEngine(cycle, GibbsPolicy.one_hot(5, 2))


@pytest.fixture
def episodic_env():
    """Short-horizon tabular environment with a moderate discount."""
    return TabularEnv(random_mdp(3, 2, gamma=0.5, seed=4), horizon=12)


class TestEstimatorAccumulators:
    """Tests for the trace bookkeeping."""

    def test_reset_then_update_adds_nothing(self):
        """A reward right after a reset leaves the estimates unchanged."""
        acc = EstimatorAccumulators.zeros(2)
        acc.accumulate_traces(np.ones(2), -np.eye(2))
        acc.reset_traces()

        acc.update_estimates(5.0)

        np.testing.assert_array_equal(acc.delta1, np.zeros(2))
        np.testing.assert_array_equal(acc.delta2, np.zeros((2, 2)))
        assert acc.steps == 1

    def test_diagonal_shapes(self):
        acc = EstimatorAccumulators.zeros(3, hessian="diagonal")

        assert acc.phi2.shape == (3,)
        assert acc.delta2.shape == (3,)


class TestRecurrentEstimate:
    """Tests for the recurrent-state estimator."""

    def test_reward_only_at_recurrent_state(self, chain_mdp):
        """Steps from the recurrent state run on reset traces, so they add nothing."""
        reward = np.zeros((4, 2))
        reward[0] = 1.0
        env = TabularEnv(_with_reward(chain_mdp, reward), recurrent_state=0)

        report = recurrent_estimate(env, GibbsPolicy.one_hot(4, 2), np.zeros(8), n_steps=500)

        np.testing.assert_array_equal(report.grad_est, np.zeros(8))
        np.testing.assert_array_equal(report.h2_est, np.zeros((8, 8)))
        assert report.n_regenerations > 0

    def test_zero_reward(self, chain_mdp):
        """Zero reward gives zero estimates."""
        env = TabularEnv(_with_reward(chain_mdp, np.zeros((4, 2))), recurrent_state=0)

        report = recurrent_estimate(env, GibbsPolicy.one_hot(4, 2), np.ones(8), n_steps=200)

        assert not report.grad_est.any()
        assert report.mean_return == 0.0

    def test_deterministic_for_seed(self, chain_mdp):
        env = TabularEnv(chain_mdp, recurrent_state=0)
        policy = GibbsPolicy.one_hot(4, 2)

        a = recurrent_estimate(env, policy, np.zeros(8), n_steps=300, seed=9)
        b = recurrent_estimate(env, policy, np.zeros(8), n_steps=300, seed=9)

        np.testing.assert_array_equal(a.grad_est, b.grad_est)
        np.testing.assert_array_equal(a.h2_est, b.h2_est)

    def test_stops_after_n_games(self, chain_mdp):
        """n_games counts completed visits to the recurrent state."""
        env = TabularEnv(chain_mdp, recurrent_state=0)

        report = recurrent_estimate(env, GibbsPolicy.one_hot(4, 2), np.zeros(8), n_games=7)

        assert report.n_regenerations == 7
        assert len(report.episode_returns) == 7

    def test_diagonal_mode_matches_full(self, chain_mdp):
        """The diagonal estimate is the diagonal of the full estimate."""
        env = TabularEnv(chain_mdp, recurrent_state=0)
        policy = GibbsPolicy.one_hot(4, 2)
        w = np.linspace(-1, 1, 8)

        full = recurrent_estimate(env, policy, w, n_steps=400, seed=2)
        diag = recurrent_estimate(env, policy, w, n_steps=400, seed=2, hessian="diagonal")

        assert diag.h2_est is None
        np.testing.assert_allclose(diag.d2_est, np.diag(full.h2_est))
        np.testing.assert_allclose(diag.grad_est, full.grad_est)

    def test_needs_recurrent_state(self, small_mdp, gibbs_policy):
        with pytest.raises(NoRecurrentState):
            recurrent_estimate(TabularEnv(small_mdp), gibbs_policy, np.zeros(6), n_steps=10)

    def test_fisher_needs_full_hessian(self, chain_mdp):
        env = TabularEnv(chain_mdp, recurrent_state=0)

        with pytest.raises(ValidationError):
            recurrent_estimate(
                env, GibbsPolicy.one_hot(4, 2), np.zeros(8), n_steps=10, hessian="none", fisher=True
            )

    def test_needs_a_length(self, chain_mdp):
        env = TabularEnv(chain_mdp, recurrent_state=0)

        with pytest.raises(ValidationError):
            recurrent_estimate(env, GibbsPolicy.one_hot(4, 2), np.zeros(8))

    @pytest.mark.slow
    def test_direction_matches_cycle_reward_gradient(self, chain_mdp):
        """
        The estimate points along the gradient of the expected reward per cycle.
        """
        w = np.array([0.0, 0.0, 0.5, -0.5, -0.3, 0.3, 0.2, 0.1])
        exact = _cycle_engine(chain_mdp).gradient(np.append(w, [0.0, 0.0]))

        env = TabularEnv(chain_mdp, recurrent_state=0)
        report = recurrent_estimate(env, GibbsPolicy.one_hot(4, 2), w, n_steps=300_000, seed=1)

        assert _cosine(report.grad_est, exact[:8]) > 0.95

    @pytest.mark.slow
    def test_hessian_matches_cycle_reward_h2(self, chain_mdp):
        """
        Delta^2 points along the per-cycle H2 once the recurrent state's parameters
        are masked; steps from the recurrent state carry no trace.
        """
        w = np.array([0.0, 0.0, 0.5, -0.5, -0.3, 0.3, 0.2, 0.1])
        h2, _ = _cycle_engine(chain_mdp).approx_hessian(np.append(w, [0.0, 0.0]))
        h2 = h2[:8, :8]

        env = TabularEnv(chain_mdp, recurrent_state=0)
        report = recurrent_estimate(env, GibbsPolicy.one_hot(4, 2), w, n_steps=400_000, seed=2)

        np.testing.assert_array_equal(report.h2_est[:2], 0.0)
        np.testing.assert_array_equal(report.h2_est[:, :2], 0.0)
        assert _cosine(report.h2_est[2:, 2:].ravel(), h2[2:, 2:].ravel()) > 0.9


class TestForwardEstimate:
    """Tests for the forward-sampling estimator."""

    def test_deterministic_across_workers(self, episodic_env, gibbs_policy):
        """Per-trajectory seeds make the estimate independent of n_jobs."""
        w = np.linspace(-0.5, 0.5, 6)

        serial = forward_estimate(episodic_env, gibbs_policy, w, n_traj=16, gamma=0.5, seed=3)
        threaded = forward_estimate(
            episodic_env, gibbs_policy, w, n_traj=16, gamma=0.5, seed=3, n_jobs=2
        )

        np.testing.assert_array_equal(serial.grad_est, threaded.grad_est)
        np.testing.assert_array_equal(serial.h2_est, threaded.h2_est)
        assert serial.episode_returns == threaded.episode_returns

    def test_zero_reward(self, gibbs_policy):
        mdp = random_mdp(3, 2, seed=4)
        env = TabularEnv(_with_reward(mdp, np.zeros((3, 2))), horizon=5)

        report = forward_estimate(env, gibbs_policy, np.zeros(6), n_traj=4)

        assert not report.grad_est.any()
        assert not report.h2_est.any()

    def test_gradient_standard_error(self, episodic_env, gibbs_policy):
        """Per-component standard errors need at least two trajectories."""
        w = np.linspace(-0.5, 0.5, 6)

        many = forward_estimate(episodic_env, gibbs_policy, w, n_traj=32, seed=5)
        single = forward_estimate(episodic_env, gibbs_policy, w, n_traj=1, seed=5)

        assert many.grad_stderr.shape == (6,)
        assert np.all(many.grad_stderr >= 0) and many.grad_stderr.max() > 0
        assert single.grad_stderr is None

    def test_samples_and_fisher(self, episodic_env, gibbs_policy):
        """Kept samples hold one weighted triple per step."""
        report = forward_estimate(
            episodic_env, gibbs_policy, np.zeros(6), n_traj=3, keep_samples=True, fisher=True
        )

        assert len(report.samples) == 3 * episodic_env.horizon
        assert all(weight >= 0 for _, _, weight in report.samples)
        assert np.linalg.eigvalsh(report.fisher_est)[0] >= -1e-12
        assert report.bundle().provenance == "sampled"

    def test_hessian_none(self, episodic_env, gibbs_policy):
        report = forward_estimate(episodic_env, gibbs_policy, np.zeros(6), n_traj=2, hessian="none")

        assert report.h2_est is None
        assert report.d2_est is None

    def test_bad_arguments(self, episodic_env, gibbs_policy, small_mdp):
        """n_traj, the Hessian mode and the horizon are validated."""
        with pytest.raises(ValidationError):
            forward_estimate(episodic_env, gibbs_policy, np.zeros(6), n_traj=0)
        with pytest.raises(ValidationError):
            forward_estimate(episodic_env, gibbs_policy, np.zeros(6), n_traj=1, hessian="banded")
        with pytest.raises(ValidationError):
            forward_estimate(TabularEnv(small_mdp), gibbs_policy, np.zeros(6), n_traj=1)

    @pytest.mark.slow
    def test_matches_exact_engine(self, episodic_env, gibbs_policy):
        """With gamma 0.5 and 12 steps the truncation is negligible against the noise."""
        w = np.array([0.3, -0.3, 0.0, 0.4, -0.2, 0.1])
        engine = ExactEngine(episodic_env.mdp, gibbs_policy)

        report = forward_estimate(episodic_env, gibbs_policy, w, n_traj=20_000, gamma=0.5, seed=8)

        assert _cosine(report.grad_est, engine.gradient(w)) > 0.98
        np.testing.assert_allclose(report.h2_est, engine.approx_hessian(w)[0], atol=0.05)
