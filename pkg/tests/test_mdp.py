"""Unit tests for tabular models, validation and search-direction bundles."""

import json

import numpy as np
import pytest

from policysearch.exceptions import (
    BadDiscount,
    DimensionMismatch,
    MissingBundleField,
    NegativeReward,
    RowNotStochastic,
    ValidationError,
)
from policysearch.mdp import (
    SearchDirectionBundle,
    TabularMdp,
    Trajectory,
    check_finite,
    load_mdp,
    random_mdp,
    validate,
)


def _mdp(**overrides):
    doc = dict(
        p1=[1.0, 0.0],
        trans=np.full((2, 1, 2), 0.5),
        reward=[[1.0], [0.0]],
        gamma=0.5,
    )
    doc.update(overrides)
    return TabularMdp(**doc)


class TestValidate:
    """Tests for model validation."""

    def test_valid_model_has_no_problems(self, small_mdp):
        """A well-formed model validates cleanly."""
        assert validate(small_mdp) == []

    def test_negative_reward_reports_index(self):
        """A negative reward is reported with its (state, action)."""
        problems = validate(_mdp(reward=[[1.0], [-0.5]]))

        assert len(problems) == 1
        assert isinstance(problems[0], NegativeReward)
        assert (problems[0].state, problems[0].action) == (1, 0)

    def test_row_not_stochastic(self):
        """A transition row summing to 1.1 is rejected."""
        trans = np.full((2, 1, 2), 0.5)
        trans[1, 0] = [0.6, 0.5]

        problems = validate(_mdp(trans=trans))

        assert any(isinstance(p, RowNotStochastic) and p.state == 1 for p in problems)

    def test_bad_discount(self):
        """gamma must be strictly below one."""
        with pytest.raises(BadDiscount):
            _mdp(gamma=1.0).check()

    def test_collects_every_problem(self):
        """validate returns all violations, check raises the first."""
        problems = validate(_mdp(reward=[[-1.0], [-1.0]], gamma=1.5))

        assert sum(isinstance(p, NegativeReward) for p in problems) == 2
        assert any(isinstance(p, BadDiscount) for p in problems)

    def test_shape_mismatch(self):
        """Reward shape must match the kernel."""
        with pytest.raises(DimensionMismatch):
            _mdp(reward=[[1.0, 0.0], [0.0, 0.0]])


class TestTabularMdp:
    """Tests for the model type and its helpers."""

    def test_arrays_are_frozen(self, small_mdp):
        """Model arrays cannot be written."""
        with pytest.raises(ValueError):
            small_mdp.trans[0, 0, 0] = 1.0

    def test_scaled_rewards(self, small_mdp):
        """scaled multiplies every reward."""
        scaled = small_mdp.scaled(3.0)

        np.testing.assert_allclose(scaled.reward, 3.0 * small_mdp.reward)
        assert scaled.gamma == small_mdp.gamma

    def test_random_mdp_is_seeded(self):
        """The same seed gives the same model."""
        a = random_mdp(4, 3, seed=9)
        b = random_mdp(4, 3, seed=9)

        np.testing.assert_array_equal(a.trans, b.trans)
        np.testing.assert_array_equal(a.reward, b.reward)
        assert validate(a) == []

    def test_load_round_trip(self, tmp_path, small_mdp):
        """A model written with to_dict loads back identically."""
        path = tmp_path / "mdp.json"
        path.write_text(json.dumps(small_mdp.to_dict()))

        loaded = load_mdp(path)

        np.testing.assert_array_equal(loaded.trans, small_mdp.trans)
        assert loaded.gamma == small_mdp.gamma

    def test_load_rejects_invalid(self, tmp_path, small_mdp):
        """Validation runs on load."""
        doc = small_mdp.to_dict()
        doc["reward"][0][0] = -1.0
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))

        with pytest.raises(NegativeReward):
            load_mdp(path)

    def test_load_unreadable(self, tmp_path):
        """Malformed JSON is a ValidationError."""
        path = tmp_path / "broken.json"
        path.write_text("{not json")

        with pytest.raises(ValidationError):
            load_mdp(path)


class TestHelpers:
    """Tests for small shared helpers."""

    def test_check_finite_rejects_nan(self):
        with pytest.raises(ValidationError):
            check_finite(np.array([1.0, np.nan]))

    def test_trajectory_lengths(self):
        """Trajectories keep states, actions and rewards aligned."""
        traj = Trajectory()
        traj.append(0, 1, 0.5)
        traj.append(1, 0, 1.5)

        assert len(traj) == 2
        assert traj.total_reward() == 2.0
        traj.check()

    def test_bundle_require(self):
        """A bundle without h2 cannot serve the full Newton method."""
        bundle = SearchDirectionBundle(grad=np.ones(2))

        bundle.require("grad")
        with pytest.raises(MissingBundleField):
            bundle.require("grad", "h2")
