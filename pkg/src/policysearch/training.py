"""
Training loop: assemble an experiment from its config and run seeded repetitions.

A *context* turns parameters and a seed into a :class:`SearchDirectionBundle`:

- :class:`ExactContext` solves the tabular model exactly
- :class:`RecurrentContext` runs the recurrent-state estimator (Tetris, tabular chains)
- :class:`ForwardContext` samples independent episodes (nonlinear system, tabular episodes)

Contexts hold no per-run state, so an experiment can be shipped to worker processes and
run one repetition per worker.
"""

import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from .config import ExperimentConfig, SeedMatrix, seed_matrix
from .environments import (
    NonlinearSystem,
    TabularEnv,
    Tetris,
    linear_controller,
    two_state_factory,
)
from .environments.nonlinear import PARAM_HIGH, PARAM_LOW, initial_parameters
from .estimators import EstimateReport, forward_estimate, recurrent_estimate
from .exact import ExactEngine
from .exceptions import ConfigError, NotClosedForm, PolicySearchError, ValidationError
from .mdp import SearchDirectionBundle, TabularMdp, load_mdp, random_mdp
from .optimizers import (
    LineSearchStep,
    OptimizerState,
    StepSchedule,
    direction,
    em_step,
    line_search,
    make_schedule,
)
from .policies import GibbsPolicy, PolicyModel, reparametrize
from .records import RunRecord

logger = logging.getLogger(__name__)

# Estimator Hessian mode each method needs
HESSIAN_FOR_METHOD = {
    "steepest": "none",
    "natural": "full",
    "apxn-full": "full",
    "apxn-diag": "diagonal",
    "em": "none",
}

Estimate = Tuple[SearchDirectionBundle, Optional[EstimateReport]]


class ExactContext:
    """Exact search directions from the tabular engine."""

    def __init__(self, engine: ExactEngine):
        self.engine = engine
        self.policy = engine.policy

    def estimate(self, w: np.ndarray, seed: int, method: str) -> Estimate:
        return self.engine.bundle(w), None

    def em_update(self, w: np.ndarray, seed: int = 0, report: Any = None) -> np.ndarray:
        return self.engine.em_update(w)


class RecurrentContext:
    """Recurrent-state estimates with a step or game budget per iteration."""

    def __init__(
        self,
        env: Any,
        policy: PolicyModel,
        n_steps: Optional[int] = None,
        n_games: Optional[int] = None,
    ):
        self.env = env
        self.policy = policy
        self.n_steps = n_steps
        self.n_games = n_games

    def estimate(self, w: np.ndarray, seed: int, method: str) -> Estimate:
        report = recurrent_estimate(
            self.env,
            self.policy,
            w,
            n_steps=self.n_steps,
            seed=seed,
            n_games=self.n_games,
            hessian=HESSIAN_FOR_METHOD[method],
            fisher=method == "natural",
        )
        return report.bundle(), report


class ForwardContext:
    """Forward-sampled estimates from independent episodes."""

    def __init__(
        self,
        env: Any,
        policy: PolicyModel,
        n_traj: int,
        gamma: float = 1.0,
        n_jobs: int = 1,
    ):
        self.env = env
        self.policy = policy
        self.n_traj = n_traj
        self.gamma = gamma
        self.n_jobs = n_jobs

    def _sample(self, w: np.ndarray, seed: int, method: str) -> EstimateReport:
        return forward_estimate(
            self.env,
            self.policy,
            w,
            n_traj=self.n_traj,
            gamma=self.gamma,
            seed=seed,
            hessian=HESSIAN_FOR_METHOD[method],
            fisher=method == "natural",
            keep_samples=method == "em",
            n_jobs=self.n_jobs,
        )

    def estimate(self, w: np.ndarray, seed: int, method: str) -> Estimate:
        report = self._sample(w, seed, method)
        if report.grad_stderr is not None:
            logger.debug(
                "Forward gradient norm %.4g, largest component stderr %.3g",
                np.linalg.norm(report.grad_est),
                report.grad_stderr.max(),
            )
        return report.bundle(), report

    def em_update(
        self, w: np.ndarray, seed: int = 0, report: Optional[EstimateReport] = None
    ) -> np.ndarray:
        """
        Sampled M-step: weighted least squares over the visited (state, action) pairs,
        weighted by discounted reward-to-go.

        Raises:
            NotClosedForm: If the policy has no closed-form M-step
        """
        mstep = getattr(self.policy, "weighted_mstep", None)
        if not self.policy.is_log_quadratic or mstep is None:
            raise NotClosedForm(f"{type(self.policy).__name__} has no closed-form M-step")
        if report is None or report.samples is None:
            report = self._sample(w, seed, "em")
        states, actions, weights = zip(*report.samples)
        return mstep(list(actions), list(states), np.asarray(weights, dtype=float))


@dataclass
class Experiment:
    """
    Everything one run needs, assembled from an ExperimentConfig.

    Attributes:
        env: Environment (also used for line-search evaluation)
        policy: Policy, possibly reparametrised
        context: Search-direction context
        method: Method tag
        schedule: Step-size schedule
        iterations: Iterations per repetition
        repetitions: Number of repetitions
        seeds: Shared seed matrices
        initial_w: Initial parameters of a repetition
        trace: Record w at each iteration
        timing: Record wall-clock milliseconds
        mdp: Tabular model, when there is one
        candidate_jobs: Workers for line-search candidates
    """

    env: Any
    policy: PolicyModel
    context: Any
    method: str
    schedule: StepSchedule
    iterations: int
    repetitions: int
    seeds: SeedMatrix
    initial_w: Callable[[int], np.ndarray]
    trace: bool = False
    timing: bool = False
    mdp: Optional[TabularMdp] = None
    candidate_jobs: int = 1


def _param(params: dict, key: str, default: Any, kind: type) -> Any:
    value = params.get(key, default)
    if value is None:
        return None
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ConfigError(f"environment.{key}: expected {kind.__name__}, got {value!r}")
    return value


def build_environment(config: ExperimentConfig) -> Tuple[Any, PolicyModel, Optional[TabularMdp]]:
    """
    Environment, base policy and (for tabular environments) the model of a config.

    Raises:
        ConfigError: If an environment parameter is invalid
    """
    params = config.params
    try:
        if config.environment in ("two_state", "tabular"):
            if config.environment == "two_state":
                mdp, policy = two_state_factory()
            else:
                gamma = _param(params, "gamma", None, float)
                mdp_file = _param(params, "mdp_file", None, str)
                if mdp_file is not None:
                    mdp = load_mdp(Path(config.base_dir) / mdp_file)
                    if gamma is not None:
                        mdp = mdp.with_gamma(gamma).check()
                else:
                    mdp = random_mdp(
                        _param(params, "n_states", 3, int),
                        _param(params, "n_actions", 2, int),
                        gamma=0.9 if gamma is None else gamma,
                        seed=_param(params, "mdp_seed", 0, int),
                    ).check()
                policy = GibbsPolicy.one_hot(mdp.n_states, mdp.n_actions)
            env = TabularEnv(
                mdp,
                recurrent_state=_param(params, "recurrent_state", None, int),
                horizon=_param(params, "horizon", None, int),
            )
            return env, policy, mdp
        if config.environment == "tetris":
            env = Tetris(
                width=_param(params, "width", 10, int),
                height=_param(params, "height", 10, int),
                max_placements=_param(params, "max_placements", 10_000, int),
            )
            return env, env.policy(), None
        env = NonlinearSystem(
            sigma_kappa=_param(params, "sigma_kappa", 0.02, float),
            horizon=_param(params, "horizon", 80, int),
            start_noise=_param(params, "start_noise", 0.001, float),
            reward_sigma=_param(params, "reward_sigma", 0.1, float),
        )
        return env, linear_controller(config.policy.sigma_epsilon), None
    except ConfigError:
        raise
    except ValidationError as e:
        raise ConfigError(f"environment: {e}") from e


def _initializer(config: ExperimentConfig, n_params: int, seeds: SeedMatrix):
    policy_cfg = config.policy
    if policy_cfg.init == "values":
        if len(policy_cfg.w0) != n_params:
            raise ConfigError(f"policy.w0: expected {n_params} values, got {len(policy_cfg.w0)}")
        w0 = np.asarray(policy_cfg.w0, dtype=float)
        return lambda rep: w0.copy()
    if policy_cfg.init == "zeros":
        return lambda rep: np.zeros(n_params)

    if config.environment == "nonlinear":
        if policy_cfg.low is None and policy_cfg.high is None:
            return lambda rep: initial_parameters(np.random.default_rng(int(seeds.initial[rep])))
        default_low, default_high = PARAM_LOW, PARAM_HIGH
    else:
        default_low, default_high = (-1.0,) * n_params, (1.0,) * n_params
    low = np.asarray(policy_cfg.low or default_low, dtype=float)
    high = np.asarray(policy_cfg.high or default_high, dtype=float)
    if low.shape != (n_params,) or high.shape != (n_params,):
        raise ConfigError(f"policy.low: bounds must have {n_params} entries")
    if np.any(high < low):
        raise ConfigError("policy.high: must not be below policy.low")

    def draw(rep: int) -> np.ndarray:
        return np.random.default_rng(int(seeds.initial[rep])).uniform(low, high)

    return draw


def build_context(
    config: ExperimentConfig,
    env: Any,
    policy: PolicyModel,
    mdp: Optional[TabularMdp],
    n_jobs: int = 1,
) -> Any:
    """Search-direction context for the configured estimator."""
    est = config.estimator
    if est.kind == "exact":
        return ExactContext(ExactEngine(mdp, policy))
    if est.kind == "recurrent":
        if env.recurrent_state() is None:
            raise ConfigError("environment.recurrent_state: required by the recurrent estimator")
        return RecurrentContext(env, policy, n_steps=est.n_steps, n_games=est.n_games)
    if getattr(env, "horizon", None) is None:
        raise ConfigError("environment.horizon: required by the forward estimator")
    return ForwardContext(env, policy, n_traj=est.n_traj, gamma=est.gamma, n_jobs=n_jobs)


def build_experiment(config: ExperimentConfig, n_jobs: int = 1) -> Experiment:
    """
    Assemble environment, policy, context, schedule and seeds from a config.

    Raises:
        ConfigError: If the pieces are incompatible
    """
    env, policy, mdp = build_environment(config)
    if config.policy.reparametrize is not None:
        try:
            policy = reparametrize(policy, np.array(config.policy.reparametrize))
        except PolicySearchError as e:
            raise ConfigError(f"policy.reparametrize: {e}") from e
    if config.method == "em" and not policy.is_log_quadratic:
        raise ConfigError("experiment.method: 'em' needs a log-quadratic policy")

    s = config.schedule
    schedule = make_schedule(
        s.kind,
        alpha=s.alpha,
        n_iterations=max(config.iterations, 1),
        candidates=s.candidates,
        games_per_candidate=s.games_per_candidate,
    )
    seeds = seed_matrix(config.seed, config.repetitions, config.iterations)
    return Experiment(
        env=env,
        policy=policy,
        context=build_context(config, env, policy, mdp, n_jobs=n_jobs),
        method=config.method,
        schedule=schedule,
        iterations=config.iterations,
        repetitions=config.repetitions,
        seeds=seeds,
        initial_w=_initializer(config, policy.n_params, seeds),
        trace=config.trace,
        timing=config.timing,
        mdp=mdp,
    )


def run_repetition(
    experiment: Experiment,
    repetition: int,
    progress: Optional[Callable[[int], None]] = None,
) -> List[RunRecord]:
    """
    Run one repetition and return its records in iteration order.

    The score of iteration k is that of the parameters before the k-th step.
    """
    ex = experiment
    state = OptimizerState(w=np.asarray(ex.initial_w(repetition), dtype=float), method=ex.method)
    logger.info("Repetition %d started, initial w = %s", repetition, np.array2string(state.w))
    records: List[RunRecord] = []

    for k in range(1, ex.iterations + 1):
        started = time.perf_counter()
        seed = int(ex.seeds.direction[repetition, k - 1])
        bundle, report = ex.context.estimate(state.w, seed, ex.method)

        if ex.method == "em":
            next_state = em_step(state, ex.context, seed, report)
            alpha, ridge = 1.0, 0.0
            dir_norm = float(np.linalg.norm(next_state.w - state.w))
        else:
            result = direction(ex.method, bundle)
            d, ridge = result.direction, result.ridge
            dir_norm = float(np.linalg.norm(d))
            if isinstance(ex.schedule, LineSearchStep):
                if dir_norm > 0:
                    unit = d / dir_norm
                    alpha, _ = line_search(
                        ex.env,
                        ex.policy,
                        state.w,
                        unit,
                        ex.schedule.candidates,
                        ex.schedule.games_per_candidate,
                        int(ex.seeds.line_search[repetition, k - 1]),
                        n_jobs=ex.candidate_jobs,
                    )
                    step = alpha * unit
                else:
                    alpha, step = 0.0, d
            else:
                alpha = ex.schedule.alpha(k)
                step = alpha * d
            next_state = state.advance(state.w + step, ridge=ridge, seed=seed)

        ms = (time.perf_counter() - started) * 1000.0 if ex.timing else 0.0
        records.append(
            RunRecord(
                repetition=repetition,
                iteration=k,
                score=float(bundle.value),
                alpha=float(alpha),
                dir_norm=dir_norm,
                ridge=float(ridge),
                ms=round(ms, 3),
                seed=seed,
                w=tuple(float(x) for x in state.w) if ex.trace else None,
            )
        )
        logger.debug(
            "rep %d iter %d: score=%.6g alpha=%g |d|=%.3g",
            repetition,
            k,
            bundle.value,
            alpha,
            dir_norm,
        )
        state = next_state
        if progress is not None:
            progress(1)

    logger.info(
        "Repetition %d finished, final w = %s, ridge needed on %d of %d iterations",
        repetition,
        np.array2string(state.w),
        sum(ridge > 0 for ridge in state.ridge_log),
        state.iteration,
    )
    return records


def run_experiment(
    experiment: Experiment,
    n_jobs: int = 1,
    progress: Optional[Callable[[int], None]] = None,
) -> List[RunRecord]:
    """
    Run every repetition; records are sorted by repetition.

    With n_jobs > 1 repetitions run in joblib's process pool and progress is reported
    from this process as each repetition finishes. A single repetition instead spreads
    its line-search candidates over the workers.
    """
    reps = range(experiment.repetitions)
    if n_jobs == 1 or experiment.repetitions == 1:
        if n_jobs > 1:
            experiment = replace(experiment, candidate_jobs=n_jobs)
        per_rep = [run_repetition(experiment, rep, progress) for rep in reps]
    else:
        per_rep = []
        for records in Parallel(n_jobs=n_jobs, return_as="generator")(
            delayed(run_repetition)(experiment, rep) for rep in reps
        ):
            per_rep.append(records)
            if progress is not None:
                progress(len(records))
    return [record for records in per_rep for record in records]


def run(
    config: ExperimentConfig,
    n_jobs: int = 1,
    progress: Optional[Callable[[int], None]] = None,
) -> List[RunRecord]:
    """
    Run a configured experiment.

    Args:
        config: Validated experiment config
        n_jobs: joblib workers for repetitions (or line-search candidates)
        progress: Called with the number of iterations just completed

    Returns:
        One RunRecord per (repetition, iteration), sorted

    Raises:
        ConfigError: If the config cannot be assembled
    """
    return run_experiment(build_experiment(config, n_jobs=1), n_jobs=n_jobs, progress=progress)
