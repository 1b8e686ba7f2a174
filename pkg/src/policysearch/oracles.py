"""
Brute-force verification oracles.

These compute the objective and its derivatives the slow way (over trajectories, or by
finite differences) so that the closed-form engine can be checked against them.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import ExplosionGuard, ValidationError
from .mdp import TabularMdp, symmetrize
from .policies import PolicyModel, PolicyTable, tabulate_policy

logger = logging.getLogger(__name__)

DEFAULT_MAX_PATHS = 2_000_000


def pair_transition_matrix(mdp: TabularMdp, table: PolicyTable) -> np.ndarray:
    """M[z, z'] = p(s'|s, a) * pi(a'|s') over flattened pairs z = s * n_actions + a."""
    m = mdp.trans[:, :, :, None] * table.pi[None, None, :, :]
    return m.reshape(mdp.n_pairs, mdp.n_pairs)


def truncation_bound(mdp: TabularMdp, horizon_cut: int) -> float:
    """Upper bound gamma^cut * R_max / (1 - gamma) on the truncated tail of the return."""
    return mdp.gamma ** horizon_cut * mdp.r_max / (1.0 - mdp.gamma)


def enumerate_return(
    mdp: TabularMdp,
    policy: PolicyModel,
    w: np.ndarray,
    horizon_cut: int,
    max_paths: int = DEFAULT_MAX_PATHS,
) -> float:
    """
    Truncated discounted return by explicit enumeration of every trajectory.

    Sums gamma^(t-1) R(z_t) p(z_1:t) over all paths of length t <= horizon_cut.
    Zero-probability branches are pruned.

    Args:
        mdp: Tabular model
        policy: Policy to evaluate
        w: Policy parameters
        horizon_cut: Longest trajectory length (>= 1)
        max_paths: Largest number of live paths allowed at any depth

    Returns:
        Truncated return; the tail is at most ``truncation_bound(mdp, horizon_cut)``

    Raises:
        ValidationError: If horizon_cut < 1
        ExplosionGuard: If the number of paths exceeds max_paths
    """
    if horizon_cut < 1:
        raise ValidationError(f"horizon_cut must be >= 1, got {horizon_cut}")
    table = tabulate_policy(mdp, policy, w)
    trans = pair_transition_matrix(mdp, table)
    reward = mdp.reward.ravel()

    probs = (mdp.p1[:, None] * table.pi).ravel()
    last = np.arange(mdp.n_pairs)
    keep = probs > 0
    probs, last = probs[keep], last[keep]

    total = float(probs @ reward[last])
    discount = 1.0
    for t in range(2, horizon_cut + 1):
        discount *= mdp.gamma
        branch = probs[:, None] * trans[last]
        live = branch > 0
        n_live = int(live.sum())
        if n_live > max_paths:
            raise ExplosionGuard(
                f"{n_live} paths at depth {t} exceed the limit of {max_paths}"
            )
        probs = branch[live]
        last = np.broadcast_to(np.arange(mdp.n_pairs), branch.shape)[live]
        total += discount * float(probs @ reward[last])
    return total


@dataclass
class TrajectorySums:
    """
    Truncated trajectory-sum forms of U, its gradient and the Hessian terms.

    Attributes:
        value: sum_t gamma^(t-1) E[R(z_t)]
        grad: sum_t gamma^(t-1) E[R(z_t) grad log p(z_1:t)]
        h1: sum_t gamma^(t-1) E[R(z_t) grad log p grad^T log p]
        h2: sum_t gamma^(t-1) E[R(z_t) hess log p(z_1:t)]
        horizon_cut: Number of time steps summed
    """

    value: float
    grad: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    horizon_cut: int


def trajectory_sums(
    mdp: TabularMdp, policy: PolicyModel, w: np.ndarray, horizon_cut: int
) -> TrajectorySums:
    """
    Exact sums over all trajectories up to horizon_cut, by forward recursion.

    Paths are grouped by their final pair, so for each z the recursion carries
    sum p, sum p*grad log p, sum p*hess log p and sum p*grad log p grad^T log p.
    By distributivity this equals explicit enumeration, at polynomial cost.

    Raises:
        ValidationError: If horizon_cut < 1
    """
    if horizon_cut < 1:
        raise ValidationError(f"horizon_cut must be >= 1, got {horizon_cut}")
    table = tabulate_policy(mdp, policy, w)
    trans = pair_transition_matrix(mdp, table)
    n_w = table.n_params
    g = table.grads.reshape(mdp.n_pairs, n_w)
    h = table.hess.reshape(mdp.n_pairs, n_w, n_w)
    gg = g[:, :, None] * g[:, None, :]
    reward = mdp.reward.ravel()

    mass = (mdp.p1[:, None] * table.pi).ravel()
    score = mass[:, None] * g
    curv = mass[:, None, None] * h
    outer = mass[:, None, None] * gg

    value, grad = 0.0, np.zeros(n_w)
    h1, h2 = np.zeros((n_w, n_w)), np.zeros((n_w, n_w))
    discount = 1.0
    for t in range(1, horizon_cut + 1):
        value += discount * float(reward @ mass)
        grad += discount * (reward @ score)
        h1 += discount * np.einsum("z,zij->ij", reward, outer)
        h2 += discount * np.einsum("z,zij->ij", reward, curv)
        if t == horizon_cut:
            break
        discount *= mdp.gamma

        mass_next = trans.T @ mass
        score_prop = trans.T @ score
        outer_prop = np.einsum("zy,zij->yij", trans, outer)
        curv_prop = np.einsum("zy,zij->yij", trans, curv)

        outer = (
            outer_prop
            + score_prop[:, :, None] * g[:, None, :]
            + g[:, :, None] * score_prop[:, None, :]
            + mass_next[:, None, None] * gg
        )
        curv = curv_prop + mass_next[:, None, None] * h
        score = score_prop + mass_next[:, None] * g
        mass = mass_next

    return TrajectorySums(value, grad, symmetrize(h1), symmetrize(h2), horizon_cut)


def cut_for_tolerance(mdp: TabularMdp, tol: float, max_cut: int = 100_000) -> int:
    """Smallest horizon_cut whose truncation bound is below tol."""
    if mdp.r_max == 0.0:
        return 1
    cut = 1
    while truncation_bound(mdp, cut) >= tol:
        cut += 1
        if cut > max_cut:
            raise ValidationError(f"No cut below {max_cut} reaches tolerance {tol:g}")
    return cut


def fd_gradient(func: Callable[[np.ndarray], float], x0: np.ndarray, eps: float) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x0 = np.asarray(x0, dtype=float)
    grad = np.zeros(x0.shape[0])
    for j in range(x0.shape[0]):
        x = x0.copy()
        x[j] = x0[j] + eps
        fplus = func(x)
        x[j] = x0[j] - eps
        fminus = func(x)
        grad[j] = (fplus - fminus) / (2 * eps)
    return grad


def fd_jacobian(
    func: Callable[[np.ndarray], np.ndarray], x0: np.ndarray, eps: float
) -> np.ndarray:
    """Central finite-difference Jacobian; column j is d func / d x_j."""
    x0 = np.asarray(x0, dtype=float)
    columns = []
    for j in range(x0.shape[0]):
        x = x0.copy()
        x[j] = x0[j] + eps
        fplus = np.asarray(func(x), dtype=float)
        x[j] = x0[j] - eps
        fminus = np.asarray(func(x), dtype=float)
        columns.append((fplus - fminus) / (2 * eps))
    return np.stack(columns, axis=-1)
