"""Core model: tabular MDPs, trajectories, environment contracts and search-direction bundles."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Protocol, Tuple, Union, runtime_checkable

import numpy as np

from .exceptions import (
    BadDiscount,
    DimensionMismatch,
    MissingBundleField,
    NegativeReward,
    RowNotStochastic,
    ValidationError,
)

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-12
REQUIRED_KEYS = ("n_states", "n_actions", "gamma", "p1", "trans", "reward")


def _frozen(values: Any, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TabularMdp:
    """
    Finite state/action MDP with discounted rewards.

    Arrays are copied and frozen on construction. Shapes are checked here; the
    stochastic/reward/discount invariants are checked by :func:`validate`.

    Args:
        p1: Initial state distribution, shape (n_states,)
        trans: Transition kernel indexed [s, a, s'], shape (n_states, n_actions, n_states)
        reward: Reward indexed [s, a], shape (n_states, n_actions)
        gamma: Discount factor in [0, 1)
        action_values: Optional real embedding of each action, shape (n_actions, action_dim),
            used by continuous-action policies acting on the action lattice
    """

    p1: np.ndarray
    trans: np.ndarray
    reward: np.ndarray
    gamma: float
    action_values: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "p1", _frozen(self.p1, 1, "p1"))
        object.__setattr__(self, "trans", _frozen(self.trans, 3, "trans"))
        object.__setattr__(self, "reward", _frozen(self.reward, 2, "reward"))
        object.__setattr__(self, "gamma", float(self.gamma))

        n_s = self.p1.shape[0]
        if self.trans.shape[0] != n_s or self.trans.shape[2] != n_s:
            raise DimensionMismatch(
                f"trans has shape {self.trans.shape}, expected ({n_s}, n_actions, {n_s})"
            )
        if self.reward.shape != self.trans.shape[:2]:
            raise DimensionMismatch(
                f"reward has shape {self.reward.shape}, expected {self.trans.shape[:2]}"
            )
        if self.action_values is not None:
            values = np.array(self.action_values, dtype=float)
            if values.ndim == 1:
                values = values[:, None]
            if values.shape[0] != self.n_actions:
                raise DimensionMismatch(
                    f"action_values has {values.shape[0]} rows, expected {self.n_actions}"
                )
            values.setflags(write=False)
            object.__setattr__(self, "action_values", values)

    @property
    def n_states(self) -> int:
        return self.p1.shape[0]

    @property
    def n_actions(self) -> int:
        return self.trans.shape[1]

    @property
    def n_pairs(self) -> int:
        """Number of state-action pairs z = (s, a), flattened as s * n_actions + a."""
        return self.n_states * self.n_actions

    @property
    def r_max(self) -> float:
        return float(self.reward.max()) if self.reward.size else 0.0

    def check(self) -> "TabularMdp":
        """
        Raise the first invariant violation, if any.

        Returns:
            The MDP itself, so calls can be chained

        Raises:
            NegativeReward, RowNotStochastic, BadDiscount: On the first violation found
        """
        problems = validate(self)
        if problems:
            raise problems[0]
        return self

    def scaled(self, factor: float) -> "TabularMdp":
        """Return a copy with every reward multiplied by a positive factor."""
        if factor <= 0:
            raise ValidationError(f"Reward scale must be positive, got {factor}")
        return TabularMdp(
            p1=self.p1,
            trans=self.trans,
            reward=self.reward * factor,
            gamma=self.gamma,
            action_values=self.action_values,
        )

    def with_gamma(self, gamma: float) -> "TabularMdp":
        """Return a copy with a different discount factor."""
        return TabularMdp(
            p1=self.p1,
            trans=self.trans,
            reward=self.reward,
            gamma=gamma,
            action_values=self.action_values,
        )

    def to_dict(self) -> Dict[str, Any]:
        doc = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "p1": self.p1.tolist(),
            "trans": self.trans.tolist(),
            "reward": self.reward.tolist(),
        }
        if self.action_values is not None:
            doc["action_values"] = self.action_values.tolist()
        return doc


def validate(mdp: TabularMdp) -> List[ValidationError]:
    """
    Check every TabularMdp invariant.

    Args:
        mdp: The model to check

    Returns:
        List of violations (empty when the model is well formed). Each violation is an
        exception instance naming the offending index.
    """
    problems: List[ValidationError] = []

    if not (0.0 <= mdp.gamma < 1.0) or not np.isfinite(mdp.gamma):
        problems.append(BadDiscount(f"gamma must lie in [0, 1), got {mdp.gamma}"))

    if np.any(mdp.p1 < 0) or abs(mdp.p1.sum() - 1.0) > STOCHASTIC_TOL:
        problems.append(RowNotStochastic(f"p1 sums to {mdp.p1.sum()!r} or has negative mass"))

    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            row = mdp.trans[s, a]
            if np.any(row < 0) or abs(row.sum() - 1.0) > STOCHASTIC_TOL:
                problems.append(
                    RowNotStochastic(
                        f"trans[{s}, {a}] sums to {row.sum()!r} or has negative mass",
                        state=s,
                        action=a,
                    )
                )
            if mdp.reward[s, a] < 0 or not np.isfinite(mdp.reward[s, a]):
                problems.append(
                    NegativeReward(
                        f"reward[{s}, {a}] = {mdp.reward[s, a]!r} is negative",
                        state=s,
                        action=a,
                    )
                )
    return problems


def mdp_from_dict(doc: Mapping[str, Any]) -> TabularMdp:
    """
    Build and validate a TabularMdp from its JSON document form.

    Args:
        doc: Mapping with keys n_states, n_actions, gamma, p1, trans, reward
            and optionally action_values

    Returns:
        Validated TabularMdp

    Raises:
        ValidationError: If keys are missing, dimensions disagree or an invariant fails
    """
    missing = [k for k in REQUIRED_KEYS if k not in doc]
    if missing:
        raise ValidationError(f"MDP document is missing keys: {', '.join(missing)}")

    mdp = TabularMdp(
        p1=doc["p1"],
        trans=doc["trans"],
        reward=doc["reward"],
        gamma=doc["gamma"],
        action_values=doc.get("action_values"),
    )
    if mdp.n_states != int(doc["n_states"]) or mdp.n_actions != int(doc["n_actions"]):
        raise DimensionMismatch(
            f"Declared size ({doc['n_states']}, {doc['n_actions']}) does not match "
            f"arrays ({mdp.n_states}, {mdp.n_actions})"
        )
    return mdp.check()


def load_mdp(path: Union[str, Path]) -> TabularMdp:
    """
    Load a TabularMdp from a JSON file. Validation runs on load.

    Raises:
        ValidationError: If the file cannot be parsed or the model is invalid
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(f"Failed to read MDP file '{path}': {e}") from e
    return mdp_from_dict(doc)


def random_mdp(
    n_states: int,
    n_actions: int,
    gamma: float = 0.9,
    seed: int = 0,
    reward_scale: float = 1.0,
) -> TabularMdp:
    """Seeded random MDP with dense Dirichlet rows and uniform rewards in [0, reward_scale]."""
    rng = np.random.default_rng(seed)
    trans = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    p1 = rng.dirichlet(np.ones(n_states))
    reward = rng.uniform(0.0, reward_scale, size=(n_states, n_actions))
    # renormalise so rows sum to one within the validation tolerance
    trans = trans / trans.sum(axis=2, keepdims=True)
    p1 = p1 / p1.sum()
    return TabularMdp(p1=p1, trans=trans, reward=reward, gamma=gamma)


def check_finite(w: np.ndarray, name: str = "w") -> np.ndarray:
    """
    Return w as a float vector, rejecting NaN/Inf entries.

    Raises:
        ValidationError: If any entry is not finite
    """
    arr = np.asarray(w, dtype=float)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries: {arr}")
    return arr


@dataclass
class Trajectory:
    """A sampled state/action/reward sequence."""

    states: List[Any] = field(default_factory=list)
    actions: List[Any] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    terminal: bool = False

    def append(self, state: Any, action: Any, reward: float) -> None:
        self.states.append(state)
        self.actions.append(action)
        self.rewards.append(float(reward))

    def __len__(self) -> int:
        return len(self.rewards)

    def total_reward(self) -> float:
        return float(sum(self.rewards))

    def check(self, nonnegative: bool = True) -> None:
        if not (len(self.states) == len(self.actions) == len(self.rewards)):
            raise DimensionMismatch(
                f"Trajectory lengths differ: {len(self.states)}, {len(self.actions)}, "
                f"{len(self.rewards)}"
            )
        if nonnegative and any(r < 0 for r in self.rewards):
            raise NegativeReward("Trajectory contains a negative reward")


@runtime_checkable
class SampledEnv(Protocol):
    """
    Environment contract used by the sampling estimators.

    Environments are single-owner state machines over explicit states; all randomness
    is drawn from the generator passed in by the caller. Average-reward environments
    expose ``recurrent_state()``/``is_recurrent(state)``; episodic ones set ``horizon``.
    """

    horizon: Optional[int]

    def reset(self, rng: np.random.Generator) -> Any:
        ...

    def step(self, state: Any, action: Any, rng: np.random.Generator) -> Tuple[Any, float]:
        ...


def has_recurrent_state(env: Any) -> bool:
    """True when env declares a recurrent state (recurrent_state() is not None)."""
    getter = getattr(env, "recurrent_state", None)
    if not callable(getter) or not callable(getattr(env, "is_recurrent", None)):
        return False
    return getter() is not None


BUNDLE_FIELDS = ("value", "grad", "h2", "d2", "fisher")


@dataclass(frozen=True)
class SearchDirectionBundle:
    """
    Everything an optimizer needs at one parameter point.

    Attributes:
        value: Objective value U(w) or a score estimate (None when unknown)
        grad: Gradient of U (or a positively scaled estimate)
        h2: Reward-weighted expected Hessian of the log-policy
        d2: Diagonal of h2
        fisher: Fisher information matrix
        provenance: "exact" or "sampled"
    """

    grad: np.ndarray
    value: Optional[float] = None
    h2: Optional[np.ndarray] = None
    d2: Optional[np.ndarray] = None
    fisher: Optional[np.ndarray] = None
    provenance: str = "exact"

    def require(self, *names: str) -> None:
        """
        Raises:
            MissingBundleField: If any named field is None
        """
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise MissingBundleField(f"Bundle ({self.provenance}) lacks: {', '.join(missing)}")


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)
