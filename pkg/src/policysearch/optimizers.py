"""
Search directions and step sizes.

Every method updates w_new = w + alpha * M(w) grad U(w):

- steepest:  M = I
- natural:   M = G^-1 (Fisher matrix)
- apxn-full: M = -H2^-1
- apxn-diag: M = -D2^-1
- em:        closed-form M-step, equivalent to apxn-full with alpha = 1 for
             log-quadratic policies
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg

from .exceptions import NonAscent, NotClosedForm, ValidationError
from .mdp import SearchDirectionBundle

logger = logging.getLogger(__name__)

METHODS = ("steepest", "natural", "em", "apxn-full", "apxn-diag")
REQUIRED_FIELDS = {
    "steepest": ("grad",),
    "natural": ("grad", "fisher"),
    "apxn-full": ("grad", "h2"),
    "apxn-diag": ("grad", "d2"),
}

DEFINITENESS_FRACTION = 1e-10
RIDGE_START_FRACTION = 1e-8
MAX_RIDGE_DOUBLINGS = 60

DEFAULT_CANDIDATES = (0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0)
# step sizes tried by Workbench.sweep, per schedule kind
STEP_SIZE_GRIDS = {
    "constant": (1e-4, 1e-3, 1e-2, 0.1, 1.0, 2.0, 4.0),
    "robbins-monro": (1e-4, 1e-3, 1e-2, 0.1, 1.0, 2.0, 4.0),
    "em-interp": (1.0, 6.0, 12.0, 18.0, 24.0),
}


class StepSchedule:
    """Step-size sequence alpha_k for iterations k = 1, 2, ..."""

    kind = "base"

    def alpha(self, k: int) -> float:
        raise NotImplementedError

    @staticmethod
    def _positive(value: float, name: str) -> float:
        value = float(value)
        if not value > 0 or not math.isfinite(value):
            raise ValidationError(f"{name} must be a positive number, got {value}")
        return value


class ConstantStep(StepSchedule):
    kind = "constant"

    def __init__(self, alpha: float):
        self.base = self._positive(alpha, "alpha")

    def alpha(self, k: int) -> float:
        return self.base


class RobbinsMonroStep(StepSchedule):
    """alpha_k = alpha / sqrt(k)."""

    kind = "robbins-monro"

    def __init__(self, alpha: float):
        self.base = self._positive(alpha, "alpha")

    def alpha(self, k: int) -> float:
        if k < 1:
            raise ValidationError(f"Iteration index must be >= 1, got {k}")
        return self.base / math.sqrt(k)


class EmInterpStep(StepSchedule):
    """
    alpha_k = (1 - k/N) alpha + k/N: starts near alpha and reaches the natural
    Newton/EM step size of one at the last iteration.
    """

    kind = "em-interp"

    def __init__(self, alpha: float, n_iterations: int):
        self.base = self._positive(alpha, "alpha")
        if n_iterations < 1:
            raise ValidationError(f"EmInterp needs n_iterations >= 1, got {n_iterations}")
        self.n_iterations = int(n_iterations)

    def alpha(self, k: int) -> float:
        if not 0 <= k <= self.n_iterations:
            raise ValidationError(f"Iteration {k} is outside [0, {self.n_iterations}]")
        frac = k / self.n_iterations
        return (1.0 - frac) * self.base + frac


class LineSearchStep(StepSchedule):
    """Pick alpha from a finite candidate set by simulated score (see :func:`line_search`)."""

    kind = "line-search"

    def __init__(
        self,
        candidates: Sequence[float] = DEFAULT_CANDIDATES,
        games_per_candidate: int = 1000,
    ):
        if not candidates:
            raise ValidationError("Line search needs at least one candidate step size")
        self.candidates = tuple(self._positive(c, "candidate") for c in candidates)
        if games_per_candidate < 1:
            raise ValidationError("games_per_candidate must be >= 1")
        self.games_per_candidate = int(games_per_candidate)

    def alpha(self, k: int) -> float:
        raise ValidationError("Line-search step sizes come from line_search(), not alpha()")


@dataclass(frozen=True)
class DirectionResult:
    """A search direction and the regularisation applied to obtain it."""

    direction: np.ndarray
    ridge: float = 0.0
    doublings: int = 0


@dataclass(frozen=True)
class OptimizerState:
    """
    Parameters and bookkeeping of one optimisation run.

    Attributes:
        w: Current parameters
        iteration: Completed iterations
        method: Method tag
        ridge_log: Ridge values applied, one per iteration
        seed_log: Seeds used, one per iteration
    """

    w: np.ndarray
    iteration: int = 0
    method: str = "steepest"
    ridge_log: Tuple[float, ...] = field(default_factory=tuple)
    seed_log: Tuple[int, ...] = field(default_factory=tuple)

    def advance(self, w_new: np.ndarray, ridge: float = 0.0, seed: int = 0) -> "OptimizerState":
        """
        Move to w_new; a non-finite w_new is rejected and w is kept.
        """
        if not np.all(np.isfinite(w_new)):
            logger.warning("Rejected non-finite step at iteration %d", self.iteration + 1)
            w_new = self.w
        return replace(
            self,
            w=np.array(w_new, dtype=float),
            iteration=self.iteration + 1,
            ridge_log=self.ridge_log + (float(ridge),),
            seed_log=self.seed_log + (int(seed),),
        )


def _spectral_norm(m: np.ndarray) -> float:
    return float(np.max(np.abs(linalg.eigvalsh(m)))) if m.size else 0.0


def solve_positive_definite(matrix: np.ndarray, rhs: np.ndarray) -> DirectionResult:
    """
    Solve matrix @ d = rhs for a matrix expected to be positive definite.

    When the smallest eigenvalue is below 1e-10 * ||matrix||, a ridge lambda * I is added,
    starting from 1e-8 * ||matrix|| and doubling until the shifted matrix is safely
    positive definite.

    Raises:
        NonAscent: If 60 doublings do not produce a positive-definite matrix
    """
    matrix = 0.5 * (matrix + matrix.T)
    norm = _spectral_norm(matrix)
    scale = norm if norm > 0 else 1.0
    eps = DEFINITENESS_FRACTION * norm

    ridge, doublings = 0.0, 0
    shifted = matrix
    while True:
        if float(linalg.eigvalsh(shifted)[0]) >= eps and (ridge > 0 or norm > 0):
            try:
                chol = linalg.cho_factor(shifted, lower=True)
                break
            except linalg.LinAlgError:
                pass
        if doublings >= MAX_RIDGE_DOUBLINGS:
            raise NonAscent(f"No positive-definite shift found after {doublings} ridge doublings")
        ridge = RIDGE_START_FRACTION * scale if ridge == 0.0 else 2.0 * ridge
        doublings += 1
        shifted = matrix + ridge * np.eye(matrix.shape[0])

    if ridge > 0:
        logger.warning("Applied ridge %.3g after %d doublings", ridge, doublings)
    return DirectionResult(linalg.cho_solve(chol, rhs), ridge, doublings)


def solve_diagonal(diag: np.ndarray, rhs: np.ndarray) -> DirectionResult:
    """Diagonal counterpart of :func:`solve_positive_definite`."""
    norm = float(np.max(np.abs(diag))) if diag.size else 0.0
    scale = norm if norm > 0 else 1.0
    eps = DEFINITENESS_FRACTION * norm

    ridge, doublings = 0.0, 0
    shifted = diag
    while not (np.min(shifted) > 0 and np.min(shifted) >= eps):
        if doublings >= MAX_RIDGE_DOUBLINGS:
            raise NonAscent(f"No positive diagonal shift found after {doublings} ridge doublings")
        ridge = RIDGE_START_FRACTION * scale if ridge == 0.0 else 2.0 * ridge
        doublings += 1
        shifted = diag + ridge
    if ridge > 0:
        logger.warning("Applied diagonal ridge %.3g after %d doublings", ridge, doublings)
    return DirectionResult(rhs / shifted, ridge, doublings)


def direction(method: str, bundle: SearchDirectionBundle) -> DirectionResult:
    """
    Search direction of a method from a bundle.

    Args:
        method: "steepest", "natural", "apxn-full" or "apxn-diag"
        bundle: Search-direction ingredients at the current point

    Returns:
        DirectionResult with d^T grad >= 0

    Raises:
        ValidationError: For an unknown method (EM goes through :func:`em_step`)
        MissingBundleField: If the bundle lacks what the method needs
        NonAscent: If no ascent direction is found
    """
    if method not in REQUIRED_FIELDS:
        raise ValidationError(
            f"Unknown direction method {method!r}; expected {list(REQUIRED_FIELDS)}"
        )
    bundle.require(*REQUIRED_FIELDS[method])
    grad = np.asarray(bundle.grad, dtype=float)

    if not np.any(grad):
        return DirectionResult(np.zeros_like(grad))
    if method == "steepest":
        result = DirectionResult(grad.copy())
    elif method == "natural":
        result = solve_positive_definite(np.asarray(bundle.fisher), grad)
    elif method == "apxn-full":
        result = solve_positive_definite(-np.asarray(bundle.h2), grad)
    else:
        result = solve_diagonal(-np.asarray(bundle.d2), grad)

    if float(result.direction @ grad) < 0:
        raise NonAscent(f"{method} direction is not an ascent direction")
    return result


def em_step(
    state: OptimizerState, context: Any, seed: int = 0, report: Any = None
) -> OptimizerState:
    """
    One EM iteration: w_{k+1} = argmax_w energy(w, w_k).

    Args:
        state: Current optimizer state
        context: Object with ``em_update(w, seed, report)`` (see :mod:`policysearch.training`)
        seed: Seed forwarded to sampled contexts
        report: Sampled estimate at state.w to reuse instead of resampling

    Raises:
        NotClosedForm: If the context's policy is not log-quadratic
    """
    update = getattr(context, "em_update", None)
    if update is None:
        raise NotClosedForm(f"{type(context).__name__} cannot perform a closed-form EM step")
    return state.advance(update(state.w, seed, report), seed=seed)


def line_search(
    env: Any,
    policy: Any,
    w: np.ndarray,
    unit_direction: np.ndarray,
    candidates: Sequence[float] = DEFAULT_CANDIDATES,
    games_per_candidate: int = 1000,
    iter_seed: int = 0,
    n_jobs: int = 1,
) -> Tuple[float, List[float]]:
    """
    Choose the step size with the best simulated score.

    Every candidate alpha is scored by ``env.evaluate(policy, w + alpha * d, games, seed)``
    with the same seed, so candidates see the same simulator randomness. Ties go to the
    smaller alpha.

    Args:
        env: Environment with an ``evaluate`` method
        policy: Policy to evaluate
        w: Current parameters
        unit_direction: Search direction with unit Euclidean norm
        candidates: Finite set of positive step sizes
        games_per_candidate: Games (episodes) scored per candidate
        iter_seed: Simulator seed for this iteration
        n_jobs: joblib workers for candidate evaluation

    Returns:
        Tuple (chosen alpha, scores in ascending-alpha order)

    Raises:
        ValidationError: If candidates is empty or the direction is not unit length
    """
    if not candidates:
        raise ValidationError("Line search needs at least one candidate step size")
    d = np.asarray(unit_direction, dtype=float)
    if abs(float(np.linalg.norm(d)) - 1.0) > 1e-8:
        raise ValidationError(f"Line-search direction must be normalised, norm={np.linalg.norm(d)}")

    ordered = sorted(float(c) for c in candidates)
    scores = Parallel(n_jobs=n_jobs)(
        delayed(env.evaluate)(policy, w + alpha * d, games_per_candidate, iter_seed)
        for alpha in ordered
    )
    best = int(np.argmax(scores))
    logger.debug("Line search picked alpha=%g (score %.4g)", ordered[best], scores[best])
    return ordered[best], [float(s) for s in scores]


def make_schedule(
    kind: str,
    alpha: float = 1.0,
    n_iterations: int = 1,
    candidates: Optional[Sequence[float]] = None,
    games_per_candidate: int = 1000,
) -> StepSchedule:
    """Build a schedule from its kind name."""
    if kind == "constant":
        return ConstantStep(alpha)
    if kind == "robbins-monro":
        return RobbinsMonroStep(alpha)
    if kind == "em-interp":
        return EmInterpStep(alpha, n_iterations)
    if kind == "line-search":
        return LineSearchStep(candidates or DEFAULT_CANDIDATES, games_per_candidate)
    raise ValidationError(f"Unknown schedule kind {kind!r}")

