"""Tests for search directions, step sizes and whole-method behaviour."""

import logging
from unittest.mock import MagicMock, patch

import numpy as np
import pytest

from policysearch.environments import lattice_gaussian_factory
from policysearch.exact import ExactEngine
from policysearch.exceptions import MissingBundleField, NonAscent, NotClosedForm, ValidationError
from policysearch.mdp import SearchDirectionBundle, TabularMdp, random_mdp
from policysearch.optimizers import (
    ConstantStep,
    EmInterpStep,
    LineSearchStep,
    OptimizerState,
    RobbinsMonroStep,
    direction,
    em_step,
    line_search,
    make_schedule,
    solve_positive_definite,
)
from policysearch.policies import GaussianLinearPolicy, GibbsPolicy
from policysearch.training import ExactContext
from policysearch.verify import affine_gap


@pytest.fixture
def bundle(rng):
    """Bundle with a random gradient and well-conditioned curvature."""
    a = rng.normal(size=(4, 4))
    spd = a @ a.T + 4 * np.eye(4)
    h2 = -spd
    return SearchDirectionBundle(
        grad=rng.normal(size=4), h2=h2, d2=np.diag(h2).copy(), fisher=spd + np.eye(4)
    )


class _QuadraticEnv:
    """Line-search stub whose score peaks when w[0] = 2."""

    def __init__(self):
        self.seeds = []

    def evaluate(self, policy, w, n_games, seed):
        self.seeds.append(seed)
        return -((w[0] - 2.0) ** 2)


class TestDirection:
    """Tests for the per-method search directions."""

    @pytest.mark.parametrize("method", ["steepest", "natural", "apxn-full", "apxn-diag"])
    def test_zero_gradient_gives_zero_direction(self, bundle, method):
        zero = SearchDirectionBundle(
            grad=np.zeros(4), h2=bundle.h2, d2=bundle.d2, fisher=bundle.fisher
        )

        result = direction(method, zero)

        np.testing.assert_array_equal(result.direction, np.zeros(4))
        assert result.ridge == 0.0

    def test_identity_curvature_gives_gradient(self, rng):
        """With H2 = -I the approximate Newton step is the gradient."""
        grad = rng.normal(size=3)
        result = direction("apxn-full", SearchDirectionBundle(grad=grad, h2=-np.eye(3)))

        np.testing.assert_allclose(result.direction, grad)

    def test_matches_dense_solves(self, bundle):
        """Each method solves its own linear system."""
        g = bundle.grad

        np.testing.assert_allclose(direction("steepest", bundle).direction, g)
        np.testing.assert_allclose(
            direction("natural", bundle).direction, np.linalg.solve(bundle.fisher, g)
        )
        np.testing.assert_allclose(
            direction("apxn-full", bundle).direction, np.linalg.solve(-bundle.h2, g)
        )
        np.testing.assert_allclose(direction("apxn-diag", bundle).direction, g / -bundle.d2)

    @pytest.mark.parametrize("method", ["steepest", "natural", "apxn-full", "apxn-diag"])
    def test_ascent(self, bundle, method):
        assert direction(method, bundle).direction @ bundle.grad > 0

    def test_indefinite_curvature_gets_ridge(self, caplog):
        """An indefinite H2 is shifted by a doubling ridge until it is definite."""
        bundle = SearchDirectionBundle(grad=np.array([1.0, 1.0]), h2=np.diag([-1.0, 1.0]))

        with caplog.at_level(logging.WARNING, logger="policysearch.optimizers"):
            result = direction("apxn-full", bundle)

        assert result.doublings == 28
        assert result.ridge == pytest.approx(1e-8 * 2**27)
        assert result.direction @ bundle.grad > 0
        assert "ridge" in caplog.text

    def test_singular_diagonal_gets_ridge(self):
        bundle = SearchDirectionBundle(grad=np.array([1.0, 2.0]), d2=np.array([-2.0, 0.0]))

        result = direction("apxn-diag", bundle)

        assert result.ridge > 0
        assert np.all(np.isfinite(result.direction))

    def test_non_ascent_is_reported(self, bundle):
        """A solve that turns against the gradient raises NonAscent."""
        flipped = MagicMock(direction=-bundle.grad, ridge=0.0, doublings=0)

        with patch("policysearch.optimizers.solve_positive_definite", return_value=flipped):
            with pytest.raises(NonAscent):
                direction("natural", bundle)

    def test_missing_field(self):
        with pytest.raises(MissingBundleField):
            direction("natural", SearchDirectionBundle(grad=np.ones(2)))

    def test_em_is_not_a_direction(self, bundle):
        with pytest.raises(ValidationError):
            direction("em", bundle)

    def test_zero_matrix_solve(self):
        """A zero matrix still yields a finite regularised solution."""
        result = solve_positive_definite(np.zeros((2, 2)), np.ones(2))

        assert result.ridge == pytest.approx(1e-8)
        np.testing.assert_allclose(result.direction, np.full(2, 1e8))


class TestSchedules:
    """Tests for the step-size schedules."""

    def test_constant(self):
        assert ConstantStep(0.3).alpha(17) == 0.3

    def test_robbins_monro(self):
        schedule = RobbinsMonroStep(2.0)

        assert schedule.alpha(1) == 2.0
        assert schedule.alpha(4) == 1.0
        with pytest.raises(ValidationError):
            schedule.alpha(0)

    def test_em_interp_endpoints(self):
        """The interpolation runs from alpha to one."""
        schedule = EmInterpStep(18.0, 100)

        assert schedule.alpha(0) == 18.0
        assert schedule.alpha(50) == pytest.approx(9.5)
        assert schedule.alpha(100) == 1.0
        with pytest.raises(ValidationError):
            schedule.alpha(101)

    def test_rejects_non_positive(self):
        with pytest.raises(ValidationError):
            ConstantStep(0.0)
        with pytest.raises(ValidationError):
            LineSearchStep(candidates=())

    def test_make_schedule(self):
        assert isinstance(make_schedule("em-interp", 6.0, 10), EmInterpStep)
        assert make_schedule("line-search").candidates[0] == 0.1
        with pytest.raises(ValidationError):
            make_schedule("cosine")


class TestLineSearch:
    """Tests for the simulated line search."""

    def test_picks_best_candidate(self):
        """Candidates are scored in ascending order with one shared seed."""
        env = _QuadraticEnv()

        alpha, scores = line_search(
            env, None, np.zeros(2), np.array([1.0, 0.0]), (4.0, 1.0, 2.0, 8.0), 10, iter_seed=77
        )

        assert alpha == 2.0
        assert scores == [-1.0, 0.0, -4.0, -36.0]
        assert env.seeds == [77, 77, 77, 77]

    def test_ties_go_to_smaller_step(self):
        env = MagicMock()
        env.evaluate.return_value = 5.0

        alpha, _ = line_search(env, None, np.zeros(1), np.ones(1), (0.5, 0.25, 1.0), 3)

        assert alpha == 0.25

    def test_single_candidate(self):
        alpha, scores = line_search(_QuadraticEnv(), None, np.zeros(1), np.ones(1), (3.0,), 1)

        assert alpha == 3.0
        assert scores == [-1.0]

    def test_direction_must_be_unit(self):
        with pytest.raises(ValidationError):
            line_search(_QuadraticEnv(), None, np.zeros(2), np.array([2.0, 0.0]), (1.0,), 1)


class TestEmStep:
    """Tests for the EM iteration."""

    def test_gibbs_policy_has_no_closed_form(self, engine):
        with pytest.raises(NotClosedForm):
            em_step(OptimizerState(w=np.zeros(6)), ExactContext(engine))

    def test_context_without_update(self):
        with pytest.raises(NotClosedForm):
            em_step(OptimizerState(w=np.zeros(2)), object())

    def test_fixed_point(self):
        """Iterated EM converges to a point it maps to itself."""
        mdp, policy = lattice_gaussian_factory(n_states=3, n_actions=4, seed=2, noise_var=4.0)
        context = ExactContext(ExactEngine(mdp, policy))
        state = OptimizerState(w=np.zeros(policy.n_params), method="em")

        for _ in range(300):
            state = em_step(state, context)

        np.testing.assert_allclose(em_step(state, context).w, state.w, atol=1e-8)
        assert state.iteration == 300

    def test_non_finite_update_is_rejected(self, caplog):
        """A NaN update keeps the previous parameters."""
        context = MagicMock()
        context.em_update.return_value = np.array([np.nan, 1.0])
        state = OptimizerState(w=np.array([0.5, 0.5]))

        with caplog.at_level(logging.WARNING):
            new = em_step(state, context, seed=4)

        np.testing.assert_array_equal(new.w, state.w)
        assert new.seed_log == (4,)
        assert "non-finite" in caplog.text


class TestMethodProperties:
    """Whole-method properties on exact tabular problems."""

    @pytest.mark.parametrize("method", ["apxn-full", "apxn-diag", "natural"])
    def test_reward_scaling_invariance(self, small_mdp, gibbs_policy, rng, method):
        """Scaling rewards leaves second-order directions unchanged (natural scales)."""
        w = rng.normal(size=6)
        base = direction(method, ExactEngine(small_mdp, gibbs_policy).bundle(w)).direction
        scaled = direction(
            method, ExactEngine(small_mdp.scaled(7.0), gibbs_policy).bundle(w)
        ).direction

        factor = 7.0 if method == "natural" else 1.0
        np.testing.assert_allclose(scaled, factor * base, rtol=1e-6, atol=1e-6)

    def test_affine_invariance(self):
        """Approximate Newton iterates follow a linear reparametrisation."""
        transform = np.array([[2.0, 1.0], [-0.5, 1.5]])
        w0 = np.array([0.5, -0.5])

        assert affine_gap("apxn-full", transform, w0, alpha=0.2, n=20) < 1e-8
        assert affine_gap("steepest", transform, w0, alpha=0.2, n=20) > 1e-2

    def test_natural_gradient_invariance(self):
        transform = np.array([[2.0, 1.0], [-0.5, 1.5]])

        assert affine_gap("natural", transform, np.array([0.5, -0.5]), alpha=0.2, n=20) < 1e-8

    def test_diagonal_newton_follows_axis_scaling(self):
        """The diagonal method is invariant when T only rescales coordinates."""
        transform = np.diag([2.0, 0.5])

        assert affine_gap("apxn-diag", transform, np.array([0.5, -0.5]), alpha=0.2, n=20) < 1e-8

    @pytest.mark.parametrize("method", ["steepest", "natural", "apxn-full", "apxn-diag"])
    def test_monotone_ascent(self, method):
        """Small constant steps never decrease U."""
        mdp = random_mdp(4, 3, gamma=0.8, seed=3)
        engine = ExactEngine(mdp, GibbsPolicy.one_hot(4, 3))
        w = np.zeros(12)
        alpha = 0.2 if method == "steepest" else 0.05
        values = [engine.value(w)]

        for _ in range(50):
            w = w + alpha * direction(method, engine.bundle(w)).direction
            values.append(engine.value(w))

        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
        assert values[-1] > values[0]

    def test_em_monotone_ascent(self):
        """
        Exact EM never decreases U. The lattice is fine and wide enough that it carries
        the Gaussian density up to rounding.
        """
        n_states, n_actions = 3, 81
        actions = np.linspace(-1.0, 1.0, n_actions)
        centres = np.array([-0.3, 0.1, 0.4])
        trans = np.broadcast_to(
            np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3], [0.3, 0.3, 0.4]])[:, None, :],
            (n_states, n_actions, n_states),
        ).copy()
        reward = np.exp(-((actions[None, :] - centres[:, None]) ** 2) / 0.5)
        mdp = TabularMdp(
            p1=np.full(n_states, 1 / 3),
            trans=trans,
            reward=reward,
            gamma=0.8,
            action_values=actions,
        ).check()
        eye = np.eye(n_states)
        policy = GaussianLinearPolicy(
            state_features=lambda s: eye[int(s)],
            n_features=n_states,
            noise_cov=0.0025,
            use_offset=False,
        )
        engine = ExactEngine(mdp, policy)
        context = ExactContext(engine)
        state = OptimizerState(w=np.zeros(n_states), method="em")
        values = [engine.value(state.w)]

        for _ in range(30):
            state = em_step(state, context)
            values.append(engine.value(state.w))

        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
        assert values[-1] > values[0]
