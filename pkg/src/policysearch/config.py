"""
Experiment configuration.

Configs are TOML documents with the tables ``[experiment]``, ``[schedule]``,
``[environment]``, ``[policy]`` and ``[estimator]``. Every problem is reported as a
:class:`ConfigError` naming the offending field, e.g.
``schedule.alpha: expected a positive number``.
"""

import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .exceptions import ConfigError
from .optimizers import DEFAULT_CANDIDATES, METHODS

ENVIRONMENTS = ("two_state", "tabular", "tetris", "nonlinear")
SCHEDULES = ("constant", "robbins-monro", "em-interp", "line-search")
ESTIMATORS = ("exact", "recurrent", "forward")
INITS = ("zeros", "uniform", "values")

# Estimators each environment supports; the first is the default.
ENVIRONMENT_ESTIMATORS = {
    "two_state": ("exact", "recurrent", "forward"),
    "tabular": ("exact", "recurrent", "forward"),
    "tetris": ("recurrent",),
    "nonlinear": ("forward",),
}
ENVIRONMENT_KEYS = {
    "two_state": {"recurrent_state", "horizon"},
    "tabular": {
        "mdp_file",
        "n_states",
        "n_actions",
        "gamma",
        "mdp_seed",
        "recurrent_state",
        "horizon",
    },
    "tetris": {"width", "height", "max_placements"},
    "nonlinear": {"sigma_kappa", "horizon", "start_noise", "reward_sigma"},
}
LOG_QUADRATIC_ENVIRONMENTS = ("nonlinear",)

SECTIONS = ("experiment", "schedule", "environment", "policy", "estimator")


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "constant"
    alpha: float = 1.0
    candidates: Tuple[float, ...] = DEFAULT_CANDIDATES
    games_per_candidate: int = 200


@dataclass(frozen=True)
class PolicySpec:
    """
    Initial parameters and policy options.

    Attributes:
        init: "zeros", "uniform" (between low and high) or "values" (w0)
        low: Lower bounds for uniform initialisation
        high: Upper bounds for uniform initialisation
        w0: Explicit initial parameters
        sigma_epsilon: Exploration noise of the nonlinear-system controller
        reparametrize: Square matrix T; the policy is run as pi(.; T v)
    """

    init: str = "zeros"
    low: Optional[Tuple[float, ...]] = None
    high: Optional[Tuple[float, ...]] = None
    w0: Optional[Tuple[float, ...]] = None
    sigma_epsilon: float = 0.1
    reparametrize: Optional[Tuple[Tuple[float, ...], ...]] = None


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str = "exact"
    n_steps: Optional[int] = None
    n_games: Optional[int] = None
    n_traj: int = 50
    gamma: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    """
    A complete experiment: environment, policy, method, schedule and seeds.

    Attributes:
        environment: Environment id
        method: Search-direction method
        iterations: Iterations per repetition
        repetitions: Independent repetitions (rows of the seed matrix)
        seed: Master seed the seed matrix is derived from
        trace: Record w at every iteration
        timing: Record wall-clock milliseconds (off keeps outputs byte-identical)
        schedule: Step-size schedule
        estimator: Search-direction estimator
        policy: Policy options and initial parameters
        env_params: Environment-specific keys
        base_dir: Directory relative paths (mdp_file) are resolved against
    """

    environment: str
    method: str
    iterations: int = 30
    repetitions: int = 1
    seed: int = 0
    trace: bool = False
    timing: bool = False
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
    policy: PolicySpec = field(default_factory=PolicySpec)
    env_params: Tuple[Tuple[str, Any], ...] = ()
    base_dir: str = "."

    @property
    def params(self) -> Dict[str, Any]:
        return dict(self.env_params)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> Dict[str, Any]:
        """Plain mapping of the config, for the JSON sidecar."""
        doc = asdict(self)
        doc.pop("base_dir")
        doc["environment_params"] = dict(doc.pop("env_params"))
        return doc


@dataclass(frozen=True)
class SeedMatrix:
    """n_experiments x n_iterations simulator seeds, shared by every compared method."""

    master_seed: int
    direction: np.ndarray
    line_search: np.ndarray
    initial: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.direction.shape


def seed_matrix(master_seed: int, n_experiments: int, n_iterations: int) -> SeedMatrix:
    """
    Derive the seed matrices from a master seed.

    Direction-estimation seeds, line-search seeds and per-repetition initialisation
    seeds come from separate children of ``SeedSequence(master_seed)``.
    """
    direction_seq, search_seq, init_seq = np.random.SeedSequence(master_seed).spawn(3)
    size = n_experiments * n_iterations

    def draw(seq: np.random.SeedSequence, n: int) -> np.ndarray:
        if n == 0:
            return np.zeros(0, dtype=np.uint32)
        return seq.generate_state(n, dtype=np.uint32)

    return SeedMatrix(
        master_seed=int(master_seed),
        direction=draw(direction_seq, size).reshape(n_experiments, n_iterations),
        line_search=draw(search_seq, size).reshape(n_experiments, n_iterations),
        initial=draw(init_seq, n_experiments),
    )


class _Table:
    """Typed access to one TOML table with field-named errors."""

    def __init__(self, name: str, values: Mapping[str, Any], allowed: Optional[set] = None):
        if not isinstance(values, Mapping):
            raise ConfigError(f"{name}: expected a table")
        if allowed is not None:
            unknown = sorted(set(values) - allowed)
            if unknown:
                raise ConfigError(f"{name}.{unknown[0]}: unknown key")
        self.name = name
        self.values = values

    def field(self, key: str) -> str:
        return f"{self.name}.{key}"

    def choice(self, key: str, options: Tuple[str, ...], default: Optional[str] = None) -> str:
        value = self.values.get(key, default)
        if value is None:
            raise ConfigError(f"{self.field(key)}: required")
        if value not in options:
            raise ConfigError(f"{self.field(key)}: expected one of {list(options)}, got {value!r}")
        return value

    def integer(self, key: str, default: Optional[int], minimum: int = 0) -> Optional[int]:
        value = self.values.get(key, default)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
            raise ConfigError(f"{self.field(key)}: expected an integer >= {minimum}")
        return value

    def number(self, key: str, default: Optional[float], positive: bool = False) -> Optional[float]:
        value = self.values.get(key, default)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{self.field(key)}: expected a number")
        value = float(value)
        if not math.isfinite(value) or (positive and value <= 0):
            kind = "a positive number" if positive else "a finite number"
            raise ConfigError(f"{self.field(key)}: expected {kind}")
        return value

    def boolean(self, key: str, default: bool) -> bool:
        value = self.values.get(key, default)
        if not isinstance(value, bool):
            raise ConfigError(f"{self.field(key)}: expected true or false")
        return value

    def vector(self, key: str) -> Optional[Tuple[float, ...]]:
        value = self.values.get(key)
        if value is None:
            return None
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{self.field(key)}: expected a non-empty list of numbers")
        for item in value:
            if isinstance(item, bool) or not isinstance(item, (int, float)):
                raise ConfigError(f"{self.field(key)}: expected a non-empty list of numbers")
        return tuple(float(v) for v in value)

    def matrix(self, key: str) -> Optional[Tuple[Tuple[float, ...], ...]]:
        value = self.values.get(key)
        if value is None:
            return None
        if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
            raise ConfigError(f"{self.field(key)}: expected a square matrix (list of rows)")
        n = len(value)
        rows = []
        for row in value:
            numeric = all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row)
            if len(row) != n or not numeric:
                raise ConfigError(f"{self.field(key)}: expected a square matrix (list of rows)")
            rows.append(tuple(float(v) for v in row))
        return tuple(rows)


def parse_config(doc: Mapping[str, Any], base_dir: Union[str, Path] = ".") -> ExperimentConfig:
    """
    Build and validate an ExperimentConfig from a parsed TOML mapping.

    Args:
        doc: Mapping with the config tables
        base_dir: Directory relative file paths are resolved against

    Returns:
        Validated config

    Raises:
        ConfigError: Naming the first offending field
    """
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown section")
    if "experiment" not in doc:
        raise ConfigError("experiment: required section")

    exp = _Table(
        "experiment",
        doc["experiment"],
        {"environment", "method", "iterations", "repetitions", "seed", "trace", "timing"},
    )
    environment = exp.choice("environment", ENVIRONMENTS)
    method = exp.choice("method", METHODS)
    iterations = exp.integer("iterations", 30)
    repetitions = exp.integer("repetitions", 1, minimum=1)
    seed = exp.integer("seed", 0)

    sched = _Table(
        "schedule", doc.get("schedule", {}), {"kind", "alpha", "candidates", "games_per_candidate"}
    )
    schedule = ScheduleSpec(
        kind=sched.choice("kind", SCHEDULES, "constant"),
        alpha=sched.number("alpha", 1.0, positive=True),
        candidates=sched.vector("candidates") or DEFAULT_CANDIDATES,
        games_per_candidate=sched.integer("games_per_candidate", 200, minimum=1),
    )
    if any(c <= 0 for c in schedule.candidates):
        raise ConfigError("schedule.candidates: expected positive step sizes")

    env_table = _Table("environment", doc.get("environment", {}), ENVIRONMENT_KEYS[environment])
    env_params = tuple(sorted(env_table.values.items()))

    pol = _Table(
        "policy",
        doc.get("policy", {}),
        {"init", "low", "high", "w0", "sigma_epsilon", "reparametrize"},
    )
    policy = PolicySpec(
        init=pol.choice("init", INITS, "uniform" if environment == "nonlinear" else "zeros"),
        low=pol.vector("low"),
        high=pol.vector("high"),
        w0=pol.vector("w0"),
        sigma_epsilon=pol.number("sigma_epsilon", 0.1, positive=True),
        reparametrize=pol.matrix("reparametrize"),
    )
    if policy.init == "values" and policy.w0 is None:
        raise ConfigError("policy.w0: required when policy.init = 'values'")

    supported = ENVIRONMENT_ESTIMATORS[environment]
    est = _Table(
        "estimator", doc.get("estimator", {}), {"kind", "n_steps", "n_games", "n_traj", "gamma"}
    )
    estimator = EstimatorSpec(
        kind=est.choice("kind", supported, supported[0]),
        n_steps=est.integer("n_steps", None, minimum=1),
        n_games=est.integer("n_games", None, minimum=1),
        n_traj=est.integer("n_traj", 50, minimum=1),
        gamma=est.number("gamma", 1.0),
    )
    if not 0.0 < estimator.gamma <= 1.0:
        raise ConfigError("estimator.gamma: expected a number in (0, 1]")
    if estimator.kind == "recurrent" and estimator.n_steps is None and estimator.n_games is None:
        raise ConfigError("estimator.n_steps: the recurrent estimator needs n_steps or n_games")

    if method == "em" and environment not in LOG_QUADRATIC_ENVIRONMENTS:
        raise ConfigError(
            f"experiment.method: 'em' needs a log-quadratic policy; environment "
            f"{environment!r} uses a Gibbs policy"
        )
    if method == "em" and schedule.kind != "constant":
        raise ConfigError("schedule.kind: 'em' takes unit steps; use kind = 'constant'")

    return ExperimentConfig(
        environment=environment,
        method=method,
        iterations=iterations,
        repetitions=repetitions,
        seed=seed,
        trace=exp.boolean("trace", False),
        timing=exp.boolean("timing", False),
        schedule=schedule,
        estimator=estimator,
        policy=policy,
        env_params=env_params,
        base_dir=str(base_dir),
    )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read a TOML experiment config.

    Raises:
        ConfigError: If the file cannot be read, is not valid TOML or fails validation
    """
    path = Path(path)
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    try:
        return parse_config(doc, base_dir=path.parent)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from e
