"""
Monte Carlo search-direction estimators.

``recurrent_estimate`` is the regenerative eligibility-trace estimator for the
average-reward setting: traces of the score and of the log-policy Hessian are reset
whenever the recurrent state is visited. ``forward_estimate`` samples independent
episodes and weights each step by its discounted reward-to-go.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from .exceptions import NoRecurrentState, NonFiniteAccumulator, ValidationError
from .mdp import (
    SampledEnv,
    SearchDirectionBundle,
    Trajectory,
    check_finite,
    has_recurrent_state,
    symmetrize,
)
from .policies import PolicyModel

logger = logging.getLogger(__name__)

HESSIAN_MODES = ("full", "diagonal", "none")


@dataclass
class EstimatorAccumulators:
    """
    Eligibility traces and running sums of the recurrent-state estimator.

    In diagonal mode phi2/delta2 hold only the diagonal.

    Attributes:
        phi1: Score trace since the last visit to the recurrent state
        phi2: Log-policy Hessian trace
        delta1: Running gradient estimate
        delta2: Running approximate-Hessian estimate
        steps: Number of steps processed
    """

    phi1: np.ndarray
    phi2: Optional[np.ndarray]
    delta1: np.ndarray
    delta2: Optional[np.ndarray]
    steps: int = 0

    @classmethod
    def zeros(cls, n_params: int, hessian: str = "full") -> "EstimatorAccumulators":
        shape = {"full": (n_params, n_params), "diagonal": (n_params,), "none": None}[hessian]
        return cls(
            phi1=np.zeros(n_params),
            phi2=None if shape is None else np.zeros(shape),
            delta1=np.zeros(n_params),
            delta2=None if shape is None else np.zeros(shape),
        )

    def reset_traces(self) -> None:
        self.phi1[:] = 0.0
        if self.phi2 is not None:
            self.phi2[...] = 0.0

    def accumulate_traces(self, grad: np.ndarray, hess: Optional[np.ndarray]) -> None:
        self.phi1 += grad
        if self.phi2 is not None:
            self.phi2 += hess

    def update_estimates(self, reward: float) -> None:
        if reward != 0.0:
            self.delta1 += reward * self.phi1
            if self.delta2 is not None:
                self.delta2 += reward * self.phi2
        self.steps += 1

    def is_finite(self) -> bool:
        arrays = [self.phi1, self.delta1] + [a for a in (self.phi2, self.delta2) if a is not None]
        return all(np.all(np.isfinite(a)) for a in arrays)


@dataclass
class EstimateReport:
    """
    Result of a sampling estimator.

    Recurrent-state estimates are unnormalised sums (correct up to a positive scale);
    forward estimates are per-trajectory means.

    Attributes:
        grad_est: Gradient estimate
        h2_est: Approximate Hessian estimate (None in diagonal/none mode)
        d2_est: Diagonal of the approximate Hessian estimate
        fisher_est: Fisher matrix estimate, when requested
        n_samples: Steps (recurrent) or trajectories (forward) used
        n_regenerations: Visits to the recurrent state
        seed: Seed the estimate was drawn with
        episode_returns: Undiscounted reward of each completed game/episode
        grad_stderr: Per-component standard error (forward estimator only)
        samples: (state, action, weight) triples kept for a sampled EM step
    """

    grad_est: np.ndarray
    h2_est: Optional[np.ndarray]
    d2_est: Optional[np.ndarray]
    fisher_est: Optional[np.ndarray]
    n_samples: int
    n_regenerations: int
    seed: int
    episode_returns: List[float] = field(default_factory=list)
    grad_stderr: Optional[np.ndarray] = None
    samples: Optional[List[Tuple[Any, Any, float]]] = None

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.episode_returns)) if self.episode_returns else 0.0

    def bundle(self) -> SearchDirectionBundle:
        return SearchDirectionBundle(
            value=self.mean_return,
            grad=self.grad_est,
            h2=self.h2_est,
            d2=self.d2_est,
            fisher=self.fisher_est,
            provenance="sampled",
        )


def _check_mode(hessian: str) -> None:
    if hessian not in HESSIAN_MODES:
        raise ValidationError(f"hessian must be one of {HESSIAN_MODES}, got {hessian!r}")


def _diagonal(h: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if h is None:
        return None
    return np.diag(h).copy() if h.ndim == 2 else h.copy()


def recurrent_estimate(
    env: Any,
    policy: PolicyModel,
    w: np.ndarray,
    n_steps: Optional[int] = None,
    seed: int = 0,
    n_games: Optional[int] = None,
    hessian: str = "full",
    fisher: bool = False,
) -> EstimateReport:
    """
    Recurrent-state estimate of the gradient and approximate Hessian.

    Each step samples a_t ~ pi(.|s_t); if s_t is not the recurrent state the traces
    accumulate grad log pi and hess log pi, otherwise they are reset; then the
    estimates grow by R_t times the traces, and the environment steps. Because the
    reset precedes the estimate update, steps taken from the recurrent state
    contribute nothing.

    Args:
        env: Environment exposing recurrent_state()/is_recurrent(state)
        policy: Policy to evaluate
        w: Policy parameters
        n_steps: Number of steps N (acts as a cap when n_games is given)
        seed: Seed for the run
        n_games: Stop before the (n_games + 1)-th visit to the recurrent state
        hessian: "full", "diagonal" or "none"
        fisher: Also accumulate the per-step average of -hess log pi

    Returns:
        EstimateReport with unnormalised Delta^1 and Delta^2

    Raises:
        NoRecurrentState: If env has no recurrent state
        NonFiniteAccumulator: If the accumulators pick up NaN/Inf
        ValidationError: If neither n_steps nor n_games is positive
    """
    _check_mode(hessian)
    if not has_recurrent_state(env):
        raise NoRecurrentState(f"{type(env).__name__} does not declare a recurrent state")
    if (n_steps is None or n_steps < 1) and (n_games is None or n_games < 1):
        raise ValidationError("recurrent_estimate needs n_steps >= 1 or n_games >= 1")
    if fisher and hessian != "full":
        raise ValidationError("A Fisher estimate needs hessian='full'")

    w = check_finite(w)
    rng = np.random.default_rng(seed)
    acc = EstimatorAccumulators.zeros(policy.n_params, hessian)
    fisher_sum = np.zeros((policy.n_params, policy.n_params)) if fisher else None
    regenerations = 0
    returns: List[float] = []
    current = 0.0
    started = False

    s = env.reset(rng)
    while n_steps is None or acc.steps < n_steps:
        recurrent = env.is_recurrent(s)
        if recurrent:
            if started:
                returns.append(current)
            if n_games is not None and regenerations == n_games:
                break
            regenerations += 1
            current, started = 0.0, True

        a, g, h = policy.sample_with_terms(s, w, rng, hessian=hessian)
        if not recurrent:
            acc.accumulate_traces(g, h)
        else:
            acc.reset_traces()
        if fisher_sum is not None:
            fisher_sum -= h

        s, r = env.step(s, a, rng)
        acc.update_estimates(r)
        current += r

    if not acc.is_finite():
        raise NonFiniteAccumulator(f"Accumulators became non-finite after {acc.steps} steps")
    logger.debug("Recurrent estimate: %d steps, %d regenerations", acc.steps, regenerations)

    delta2 = acc.delta2
    return EstimateReport(
        grad_est=acc.delta1.copy(),
        h2_est=symmetrize(delta2) if hessian == "full" else None,
        d2_est=_diagonal(delta2),
        fisher_est=None if fisher_sum is None else symmetrize(fisher_sum) / max(acc.steps, 1),
        n_samples=acc.steps,
        n_regenerations=regenerations,
        seed=seed,
        episode_returns=returns,
    )


@dataclass
class _TrajectoryResult:
    grad: np.ndarray
    h2: Optional[np.ndarray]
    fisher: Optional[np.ndarray]
    total_reward: float
    samples: Optional[List[Tuple[Any, Any, float]]]


def _sample_trajectory(
    env: SampledEnv,
    policy: PolicyModel,
    w: np.ndarray,
    gamma: float,
    seed_seq: np.random.SeedSequence,
    hessian: str,
    fisher: bool,
    keep_samples: bool,
) -> _TrajectoryResult:
    rng = np.random.default_rng(seed_seq)
    n_w = policy.n_params
    mode = "full" if fisher else hessian

    traj = Trajectory()
    grads, hessians = [], []
    s = env.reset(rng)
    for _ in range(env.horizon):
        a, g, h = policy.sample_with_terms(s, w, rng, hessian=mode)
        grads.append(g)
        hessians.append(h)
        s_next, r = env.step(s, a, rng)
        traj.append(s, a, r)
        s = s_next
    traj.check()

    rewards_arr = np.asarray(traj.rewards, dtype=float)
    to_go = np.zeros_like(rewards_arr)
    running = 0.0
    for t in range(len(rewards_arr) - 1, -1, -1):
        running = rewards_arr[t] + gamma * running
        to_go[t] = running
    discounts = gamma ** np.arange(len(rewards_arr))
    weights = discounts * to_go

    grad = np.asarray(weights @ np.array(grads).reshape(-1, n_w))
    h2 = None
    fisher_sum = None
    if mode != "none":
        stacked = np.array(hessians)
        h2 = np.tensordot(weights, stacked, axes=1)
        if hessian == "diagonal" and h2.ndim == 2:
            h2 = np.diag(h2).copy()
        if fisher:
            fisher_sum = -np.tensordot(discounts, stacked, axes=1)
    if hessian == "none":
        h2 = None

    samples = list(zip(traj.states, traj.actions, weights.tolist())) if keep_samples else None
    return _TrajectoryResult(grad, h2, fisher_sum, traj.total_reward(), samples)


def forward_estimate(
    env: SampledEnv,
    policy: PolicyModel,
    w: np.ndarray,
    n_traj: int,
    gamma: float = 1.0,
    seed: int = 0,
    hessian: str = "full",
    fisher: bool = False,
    keep_samples: bool = False,
    n_jobs: int = 1,
) -> EstimateReport:
    """
    Forward-sampling estimate for episodic environments.

    Every step t of every trajectory is weighted by gamma^(t-1) times its discounted
    reward-to-go; the gradient, H2 and (optionally) Fisher sums are averaged over
    trajectories. Trajectory t uses the t-th child of SeedSequence(seed) and results are
    reduced in trajectory order, so the report does not depend on n_jobs.

    Args:
        env: Episodic environment with a finite ``horizon``
        policy: Policy to evaluate
        w: Policy parameters
        n_traj: Number of trajectories (>= 1)
        gamma: Discount used for the weights (1.0 for plain finite-horizon totals)
        seed: Master seed
        hessian: "full", "diagonal" or "none"
        fisher: Also estimate the Fisher matrix from the same trajectories
        keep_samples: Keep (state, action, weight) triples for a sampled EM step
        n_jobs: joblib workers for trajectory sampling

    Returns:
        EstimateReport with per-trajectory means

    Raises:
        ValidationError: If n_traj < 1 or the environment has no horizon
        NegativeReward: If a trajectory collects a negative reward
    """
    _check_mode(hessian)
    if n_traj < 1:
        raise ValidationError(f"n_traj must be >= 1, got {n_traj}")
    if getattr(env, "horizon", None) is None:
        raise ValidationError(f"{type(env).__name__} has no finite horizon")

    w = check_finite(w)
    children = np.random.SeedSequence(seed).spawn(n_traj)
    results = Parallel(n_jobs=n_jobs, backend="threading")(
        delayed(_sample_trajectory)(env, policy, w, gamma, child, hessian, fisher, keep_samples)
        for child in children
    )

    grads = np.array([r.grad for r in results])
    grad_est = grads.sum(axis=0) / n_traj
    stderr = grads.std(axis=0, ddof=1) / np.sqrt(n_traj) if n_traj > 1 else None

    h2_est = d2_est = fisher_est = None
    if hessian != "none":
        h2_sum = results[0].h2.copy()
        for r in results[1:]:
            h2_sum += r.h2
        if hessian == "full":
            h2_est = symmetrize(h2_sum / n_traj)
            d2_est = np.diag(h2_est).copy()
        else:
            d2_est = h2_sum / n_traj
    if fisher:
        f_sum = results[0].fisher.copy()
        for r in results[1:]:
            f_sum += r.fisher
        fisher_est = symmetrize(f_sum / n_traj)

    samples = None
    if keep_samples:
        samples = [sample for r in results for sample in r.samples]

    report = EstimateReport(
        grad_est=grad_est,
        h2_est=h2_est,
        d2_est=d2_est,
        fisher_est=fisher_est,
        n_samples=n_traj,
        n_regenerations=0,
        seed=seed,
        episode_returns=[r.total_reward for r in results],
        grad_stderr=stderr,
        samples=samples,
    )
    if not all(
        np.all(np.isfinite(x)) for x in (grad_est, h2_est, d2_est, fisher_est) if x is not None
    ):
        raise NonFiniteAccumulator("Forward estimate produced non-finite values")
    return report
