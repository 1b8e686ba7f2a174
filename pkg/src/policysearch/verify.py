"""
Oracle suite: cross-checks of the exact engine against independent computations.

Every check runs on seeded instances, so the report text is identical from run to run.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .environments import lattice_gaussian_factory, two_state_factory
from .exact import ExactEngine
from .mdp import TabularMdp, random_mdp
from .optimizers import direction
from .oracles import (
    cut_for_tolerance,
    enumerate_return,
    fd_gradient,
    fd_jacobian,
    trajectory_sums,
    truncation_bound,
)
from .policies import GibbsPolicy, PolicyModel, reparametrize, tabulate_policy

logger = logging.getLogger(__name__)

GRADIENT_TOL = 1e-6
HESSIAN_TOL = 1e-5
H2_SUM_TOL = 1e-7
DEFINITENESS_TOL = 1e-10
EM_TOL = 1e-8
AFFINE_TOL = 1e-8
AFFINE_CONTRAST = 1e-2
RETURN_TOL = 1e-12
FISHER_TOL = 1e-10
FD_EPS = 1e-5


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one oracle check: worst error over its cases against a threshold."""

    name: str
    cases: int
    worst: float
    threshold: float
    passed: bool
    detail: str = ""


class _CorruptedEngine(ExactEngine):
    """Engine whose gradient is shifted in its first component (mutation test hook)."""

    def __init__(self, mdp: TabularMdp, policy: PolicyModel, offset: float):
        super().__init__(mdp, policy)
        self.offset = offset

    def gradient(self, w: np.ndarray) -> np.ndarray:
        grad = super().gradient(w)
        grad[0] += self.offset
        return grad


def gibbs_suite(n_cases: int, seed: int) -> List[Tuple[TabularMdp, GibbsPolicy, np.ndarray]]:
    """
    Seeded (mdp, Gibbs policy, w) triples with at most 5 states and 3 actions.

    Even cases use one-hot features, odd cases random 3-dimensional features.
    """
    rng = np.random.default_rng(seed)
    suite = []
    for i in range(n_cases):
        n_states = int(rng.integers(2, 6))
        n_actions = int(rng.integers(2, 4))
        gamma = float(rng.uniform(0.5, 0.9))
        mdp = random_mdp(n_states, n_actions, gamma=gamma, seed=int(rng.integers(2**31))).check()
        if i % 2 == 0:
            policy = GibbsPolicy.one_hot(n_states, n_actions)
        else:
            policy = GibbsPolicy.tabular(rng.normal(size=(n_states, n_actions, 3)))
        w = rng.normal(size=policy.n_params)
        suite.append((mdp, policy, w))
    return suite


def _relative(a: np.ndarray, b: np.ndarray, floor: float) -> float:
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), floor))


def check_gradient(seed: int = 0, corrupt_gradient: float = 0.0) -> CheckResult:
    """Analytic gradient against central differences of the exact objective."""
    worst = 0.0
    suite = gibbs_suite(25, seed)
    for mdp, policy, w in suite:
        engine = _CorruptedEngine(mdp, policy, corrupt_gradient)
        fd = fd_gradient(engine.value, w, FD_EPS)
        worst = max(worst, _relative(engine.gradient(w), fd, 1e-6))
    return CheckResult("gradient-fd", len(suite), worst, GRADIENT_TOL, worst < GRADIENT_TOL)


def check_hessian(seed: int = 0) -> List[CheckResult]:
    """
    Trajectory-sum H1 + H2 against differences of the analytic gradient, and the
    occupancy form of H2 against its trajectory-sum form.
    """
    worst_full, worst_h2 = 0.0, 0.0
    suite = gibbs_suite(25, seed)
    for mdp, policy, w in suite:
        engine = ExactEngine(mdp, policy)
        sums = trajectory_sums(mdp, policy, w, cut_for_tolerance(mdp, 1e-13))
        step = FD_EPS * max(1.0, float(np.max(np.abs(w))))
        fd_hess = fd_jacobian(engine.gradient, w, step)
        fd_hess = 0.5 * (fd_hess + fd_hess.T)
        scale = max(1.0, float(np.max(np.abs(fd_hess))))
        worst_full = max(worst_full, float(np.max(np.abs(sums.h1 + sums.h2 - fd_hess))) / scale)
        h2, _ = engine.approx_hessian(w)
        worst_h2 = max(worst_h2, float(np.max(np.abs(h2 - sums.h2))))
    return [
        CheckResult(
            "hessian-decomposition", len(suite), worst_full, HESSIAN_TOL, worst_full < HESSIAN_TOL
        ),
        CheckResult("h2-trajectory-sum", len(suite), worst_h2, H2_SUM_TOL, worst_h2 < H2_SUM_TOL),
    ]


def check_definiteness(seed: int = 0) -> List[CheckResult]:
    """H2 negative semidefinite and G positive semidefinite for log-concave policies."""
    worst_h2, worst_g = -np.inf, np.inf
    suite = gibbs_suite(100, seed + 1)
    for mdp, policy, w in suite:
        engine = ExactEngine(mdp, policy)
        h2, _ = engine.approx_hessian(2.0 * w)
        worst_h2 = max(worst_h2, float(np.linalg.eigvalsh(h2)[-1]))
        worst_g = min(worst_g, float(np.linalg.eigvalsh(engine.fisher(2.0 * w))[0]))
    return [
        CheckResult(
            "h2-negative-definite",
            len(suite),
            worst_h2,
            DEFINITENESS_TOL,
            worst_h2 <= DEFINITENESS_TOL,
            "largest eigenvalue",
        ),
        CheckResult(
            "fisher-positive-definite",
            len(suite),
            worst_g,
            -DEFINITENESS_TOL,
            worst_g >= -DEFINITENESS_TOL,
            "smallest eigenvalue",
        ),
    ]


def check_fisher_outer_product(seed: int = 0) -> CheckResult:
    """G from log-policy Hessians against the occupancy-weighted score outer products."""
    worst = 0.0
    suite = gibbs_suite(25, seed + 2)
    for mdp, policy, w in suite:
        engine = ExactEngine(mdp, policy)
        table = tabulate_policy(mdp, policy, w)
        p_gamma = engine.occupancy_and_value(w).p_gamma
        outer = np.einsum("sa,sai,saj->ij", p_gamma, table.grads, table.grads)
        worst = max(worst, float(np.max(np.abs(engine.fisher(w) - outer))))
    return CheckResult("fisher-outer-product", len(suite), worst, FISHER_TOL, worst < FISHER_TOL)


def check_em_newton(seed: int = 0) -> CheckResult:
    """Closed-form EM update equals the full approximate Newton step for a Gaussian policy."""
    rng = np.random.default_rng(seed + 3)
    mdp, policy = lattice_gaussian_factory(n_states=4, n_actions=5, seed=seed)
    engine = ExactEngine(mdp, policy)
    worst = 0.0
    n_cases = 20
    for _ in range(n_cases):
        w_k = rng.normal(scale=0.5, size=policy.n_params)
        h2, _ = engine.approx_hessian(w_k)
        newton = -np.linalg.solve(h2, engine.gradient(w_k))
        worst = max(worst, float(np.max(np.abs((engine.em_update(w_k) - w_k) - newton))))
    return CheckResult("em-equals-newton", n_cases, worst, EM_TOL, worst < EM_TOL)


def _iterate(engine: ExactEngine, method: str, w0: np.ndarray, alpha: float, n: int):
    iterates = [np.asarray(w0, dtype=float)]
    for _ in range(n):
        w = iterates[-1]
        iterates.append(w + alpha * direction(method, engine.bundle(w)).direction)
    return iterates


def affine_gap(method: str, transform: np.ndarray, w0: np.ndarray, alpha: float, n: int) -> float:
    """
    Largest relative gap between w_k and T v_k over n iterations on the two-state MDP,
    where v runs the same method on the policy reparametrised by T from v_0 = T^-1 w_0.
    """
    mdp, policy = two_state_factory()
    original = _iterate(ExactEngine(mdp, policy), method, w0, alpha, n)
    mapped = _iterate(
        ExactEngine(mdp, reparametrize(policy, transform)),
        method,
        np.linalg.solve(transform, w0),
        alpha,
        n,
    )
    return max(
        float(np.linalg.norm(transform @ v - w) / max(np.linalg.norm(w), 1.0))
        for w, v in zip(original, mapped)
    )


def check_affine_invariance(seed: int = 0) -> List[CheckResult]:
    """Approximate Newton iterates follow a reparametrisation exactly; steepest ascent does not."""
    rng = np.random.default_rng(seed + 4)
    signs = np.array([[1.0, 1.0], [-1.0, 1.0]])
    transform = np.eye(2) + rng.uniform(0.5, 1.5, size=(2, 2)) * signs
    w0 = np.array([0.5, -0.5])
    newton_gap = affine_gap("apxn-full", transform, w0, alpha=0.2, n=30)
    steepest_gap = affine_gap("steepest", transform, w0, alpha=0.2, n=30)
    return [
        CheckResult("apxn-affine-invariance", 30, newton_gap, AFFINE_TOL, newton_gap < AFFINE_TOL),
        CheckResult(
            "steepest-not-invariant",
            30,
            steepest_gap,
            AFFINE_CONTRAST,
            steepest_gap >= AFFINE_CONTRAST,
            "gap must exceed threshold",
        ),
    ]


def check_returns(seed: int = 0) -> List[CheckResult]:
    """Path enumeration, trajectory sums and the linear solve agree on the return."""
    mdp = random_mdp(2, 2, gamma=0.1, seed=seed + 5).check()
    policy = GibbsPolicy.one_hot(2, 2)
    w = np.random.default_rng(seed + 5).normal(size=policy.n_params)
    cut = 9
    enumerated = enumerate_return(mdp, policy, w, cut)
    summed = trajectory_sums(mdp, policy, w, cut).value
    short_gap = abs(enumerated - summed)

    worst_long = 0.0
    suite = gibbs_suite(10, seed + 6)
    for mdp_i, policy_i, w_i in suite:
        long_cut = cut_for_tolerance(mdp_i, 1e-12)
        u = ExactEngine(mdp_i, policy_i).value(w_i)
        gap = abs(trajectory_sums(mdp_i, policy_i, w_i, long_cut).value - u)
        worst_long = max(worst_long, gap - truncation_bound(mdp_i, long_cut))
    return [
        CheckResult("enumerate-vs-sums", 1, short_gap, RETURN_TOL, short_gap < RETURN_TOL),
        CheckResult(
            "sums-vs-linear-solve",
            len(suite),
            max(worst_long, 0.0),
            RETURN_TOL,
            worst_long < RETURN_TOL,
            "excess over truncation bound",
        ),
    ]


def run_checks(seed: int = 0, corrupt_gradient: float = 0.0) -> List[CheckResult]:
    """
    Run the full oracle suite.

    Args:
        seed: Seed for every generated instance
        corrupt_gradient: Offset injected into the first gradient component (test hook)
    """
    results = [check_gradient(seed, corrupt_gradient)]
    results += check_hessian(seed)
    results += check_definiteness(seed)
    results.append(check_fisher_outer_product(seed))
    results.append(check_em_newton(seed))
    results += check_affine_invariance(seed)
    results += check_returns(seed)
    for result in results:
        logger.info(
            "%s: %s (worst %.3e)", result.name, "PASS" if result.passed else "FAIL", result.worst
        )
    return results


def render_report(results: List[CheckResult]) -> str:
    """Fixed-width pass/fail table."""
    lines = [f"{'check':<28}{'cases':>6}  {'worst':>11}  {'threshold':>10}  status"]
    for r in results:
        lines.append(
            f"{r.name:<28}{r.cases:>6}  {r.worst:>11.3e}  {r.threshold:>10.1e}  "
            f"{'PASS' if r.passed else 'FAIL'}"
        )
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines) + "\n"
