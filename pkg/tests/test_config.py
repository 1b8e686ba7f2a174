"""Tests for experiment configuration and seed matrices."""

from pathlib import Path

import numpy as np
import pytest

from policysearch.config import ExperimentConfig, load_config, parse_config, seed_matrix
from policysearch.exceptions import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def _doc(**sections):
    doc = {"experiment": {"environment": "two_state", "method": "apxn-full"}}
    for name, values in sections.items():
        doc.setdefault(name, {}).update(values)
    return doc


class TestParseConfig:
    """Tests for config validation."""

    def test_defaults(self):
        config = parse_config(_doc())

        assert isinstance(config, ExperimentConfig)
        assert config.iterations == 30
        assert config.schedule.kind == "constant"
        assert config.estimator.kind == "exact"
        assert config.policy.init == "zeros"

    def test_nonlinear_defaults(self):
        """The nonlinear system defaults to uniform init and forward sampling."""
        config = parse_config(_doc(experiment={"environment": "nonlinear"}))

        assert config.policy.init == "uniform"
        assert config.estimator.kind == "forward"

    @pytest.mark.parametrize(
        "sections, field",
        [
            ({"experiment": {"method": "newton"}}, "experiment.method"),
            ({"experiment": {"iterations": -1}}, "experiment.iterations"),
            ({"experiment": {"repetitions": 0}}, "experiment.repetitions"),
            ({"experiment": {"trace": "yes"}}, "experiment.trace"),
            ({"schedule": {"alpha": 0}}, "schedule.alpha"),
            ({"schedule": {"kind": "adam"}}, "schedule.kind"),
            ({"schedule": {"candidates": [1.0, -2.0]}}, "schedule.candidates"),
            ({"environment": {"width": 10}}, "environment.width"),
            ({"policy": {"init": "values"}}, "policy.w0"),
            ({"policy": {"reparametrize": [[1.0, 0.0]]}}, "policy.reparametrize"),
            ({"estimator": {"kind": "recurrent"}}, "estimator.n_steps"),
            ({"estimator": {"gamma": 1.5}}, "estimator.gamma"),
        ],
    )
    def test_errors_name_the_field(self, sections, field):
        """Every validation error starts with the offending field."""
        with pytest.raises(ConfigError) as exc_info:
            parse_config(_doc(**sections))

        assert str(exc_info.value).startswith(field)

    def test_unknown_section(self):
        doc = _doc()
        doc["optimizer"] = {}

        with pytest.raises(ConfigError, match="optimizer: unknown section"):
            parse_config(doc)

    def test_estimator_must_fit_environment(self):
        """Tetris has no exact model."""
        with pytest.raises(ConfigError, match="estimator.kind"):
            parse_config(_doc(experiment={"environment": "tetris"}, estimator={"kind": "exact"}))

    def test_em_needs_log_quadratic_policy(self):
        with pytest.raises(ConfigError, match="experiment.method"):
            parse_config(_doc(experiment={"method": "em"}))

    def test_em_takes_unit_steps(self):
        doc = _doc(experiment={"environment": "nonlinear", "method": "em"})
        doc["schedule"] = {"kind": "robbins-monro"}

        with pytest.raises(ConfigError, match="schedule.kind"):
            parse_config(doc)

    def test_to_dict(self):
        """The sidecar echo renames the environment parameters and drops base_dir."""
        config = parse_config(
            _doc(experiment={"environment": "tabular"}, environment={"n_states": 4})
        )

        doc = config.to_dict()

        assert doc["environment_params"] == {"n_states": 4}
        assert "base_dir" not in doc

    def test_with_seed(self):
        config = parse_config(_doc())

        assert config.with_seed(42).seed == 42
        assert config.seed == 0


class TestLoadConfig:
    """Tests for reading TOML files."""

    @pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.stem)
    def test_shipped_configs_parse(self, path):
        config = load_config(path)

        assert config.base_dir == str(path.parent)

    def test_error_names_file(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('[experiment]\nenvironment = "pong"\nmethod = "steepest"\n')

        with pytest.raises(ConfigError) as exc_info:
            load_config(path)

        assert str(path) in str(exc_info.value)
        assert "experiment.environment" in str(exc_info.value)

    def test_invalid_toml(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[experiment\n")

        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml")


class TestSeedMatrix:
    """Tests for seed derivation."""

    def test_shape_and_determinism(self):
        a = seed_matrix(7, 3, 5)
        b = seed_matrix(7, 3, 5)

        assert a.shape == (3, 5)
        assert a.initial.shape == (3,)
        np.testing.assert_array_equal(a.direction, b.direction)
        np.testing.assert_array_equal(a.line_search, b.line_search)

    def test_streams_differ(self):
        """Direction and line-search seeds come from separate streams."""
        seeds = seed_matrix(7, 2, 4)

        assert not np.array_equal(seeds.direction, seeds.line_search)
        assert not np.array_equal(seed_matrix(8, 2, 4).direction, seeds.direction)

    def test_zero_iterations(self):
        seeds = seed_matrix(1, 2, 0)

        assert seeds.shape == (2, 0)
