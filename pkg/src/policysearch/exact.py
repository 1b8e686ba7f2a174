"""
Exact tabular engine.

For a TabularMdp and a policy, computes the discounted occupancy p_gamma, the
state-action values Q, the objective U, the gradient, the approximate Hessian H2 and
its diagonal D2, the Fisher matrix, the full Hessian (by finite differences of the
analytic gradient), the EM energy and the closed-form EM update.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from .exceptions import NotClosedForm, SingularSystem
from .mdp import SearchDirectionBundle, TabularMdp, check_finite, symmetrize
from .oracles import fd_jacobian, pair_transition_matrix
from .policies import PolicyModel, PolicyTable, tabulate_policy

logger = logging.getLogger(__name__)

FD_STEP = 1e-5


@dataclass(frozen=True)
class OccupancyAndValue:
    """
    Attributes:
        p_gamma: Discounted occupancy over pairs z = (s, a), shape (n_states, n_actions)
        q: State-action values, shape (n_states, n_actions)
        u: Objective value
    """

    p_gamma: np.ndarray
    q: np.ndarray
    u: float


class ExactEngine:
    """
    Closed-form evaluation of every search-direction ingredient on a tabular MDP.

    Evaluations are pure functions of w. The most recent evaluation is cached, so
    building a full bundle solves the linear systems once.

    Args:
        mdp: Validated tabular model
        policy: Policy acting on the model's states and actions

    Example:
        >>> engine = ExactEngine(mdp, GibbsPolicy.one_hot(3, 2))
        >>> bundle = engine.bundle(np.zeros(6))
        >>> bundle.grad, bundle.h2
    """

    def __init__(self, mdp: TabularMdp, policy: PolicyModel):
        self.mdp = mdp.check()
        self.policy = policy
        self._cached: Optional[Tuple[bytes, PolicyTable, OccupancyAndValue]] = None

    def _evaluate(self, w: np.ndarray) -> Tuple[PolicyTable, OccupancyAndValue]:
        w = check_finite(w)
        key = w.tobytes()
        cached = self._cached
        if cached is not None and cached[0] == key:
            return cached[1], cached[2]

        mdp = self.mdp
        table = tabulate_policy(mdp, self.policy, w)
        trans = pair_transition_matrix(mdp, table)
        system = np.eye(mdp.n_pairs) - mdp.gamma * trans
        start = (mdp.p1[:, None] * table.pi).ravel()
        try:
            lu = linalg.lu_factor(system, check_finite=True)
            q = linalg.lu_solve(lu, mdp.reward.ravel())
            p_gamma = linalg.lu_solve(lu, start, trans=1)
        except (linalg.LinAlgError, ValueError) as e:
            raise SingularSystem(f"Bellman system could not be solved: {e}") from e
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p_gamma))):
            raise SingularSystem("Bellman system produced non-finite values")

        occ = OccupancyAndValue(
            p_gamma=p_gamma.reshape(mdp.n_states, mdp.n_actions),
            q=q.reshape(mdp.n_states, mdp.n_actions),
            u=float(p_gamma @ mdp.reward.ravel()),
        )
        self._cached = (key, table, occ)
        return table, occ

    def occupancy_and_value(self, w: np.ndarray) -> OccupancyAndValue:
        """
        Solve for p_gamma, Q and U at w.

        Q solves the Bellman system (I - gamma M) q = R and p_gamma the transposed flow
        system seeded by p1 * pi, both by one LU factorisation.

        Raises:
            SingularSystem: If the linear system cannot be solved
        """
        return self._evaluate(w)[1]

    def value(self, w: np.ndarray) -> float:
        return self.occupancy_and_value(w).u

    def _weights(self, w: np.ndarray) -> Tuple[PolicyTable, np.ndarray]:
        table, occ = self._evaluate(w)
        return table, occ.p_gamma * occ.q

    def gradient(self, w: np.ndarray) -> np.ndarray:
        """Gradient sum_z p_gamma(z) Q(z) grad log pi(a|s;w)."""
        table, weights = self._weights(w)
        return np.einsum("sa,sai->i", weights, table.grads)

    def approx_hessian(self, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Approximate Hessian H2 = sum_z p_gamma(z) Q(z) hess log pi(a|s;w).

        Returns:
            Tuple (H2, D2) with D2 the diagonal of H2 as a vector
        """
        table, weights = self._weights(w)
        h2 = symmetrize(np.einsum("sa,saij->ij", weights, table.hess))
        return h2, np.diag(h2).copy()

    def fisher(self, w: np.ndarray) -> np.ndarray:
        """Fisher matrix G = -sum_z p_gamma(z) hess log pi(a|s;w)."""
        table, occ = self._evaluate(w)
        return symmetrize(-np.einsum("sa,saij->ij", occ.p_gamma, table.hess))

    def full_hessian(self, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Full Hessian of U by central differences of the analytic gradient.

        The step is 1e-5 * max(1, ||w||_inf) and the result is symmetrised.

        Returns:
            Tuple (H, H1) with H1 = H - H2
        """
        w = check_finite(w)
        step = FD_STEP * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
        hess = symmetrize(fd_jacobian(self.gradient, w, step))
        h2, _ = self.approx_hessian(w)
        return hess, hess - h2

    def em_energy(self, w: np.ndarray, w_k: np.ndarray) -> float:
        """EM energy sum_z p_gamma(z; w_k) Q(z; w_k) log pi(a|s; w)."""
        _, weights = self._weights(w_k)
        table = tabulate_policy(self.mdp, self.policy, check_finite(w))
        return float(np.sum(weights * table.logp))

    def energy_gradient(self, w: np.ndarray, w_k: np.ndarray) -> np.ndarray:
        """Gradient of em_energy in its first argument; equals gradient(w_k) at w = w_k."""
        _, weights = self._weights(w_k)
        table = tabulate_policy(self.mdp, self.policy, check_finite(w))
        return np.einsum("sa,sai->i", weights, table.grads)

    def em_update(self, w_k: np.ndarray) -> np.ndarray:
        """
        Closed-form EM update argmax_w em_energy(w, w_k).

        The M-step is a weighted least-squares problem with weights p_gamma * Q at w_k.

        Raises:
            NotClosedForm: If the policy is not log-quadratic
        """
        policy = self.policy
        if not policy.is_log_quadratic or not hasattr(policy, "weighted_mstep"):
            raise NotClosedForm(
                f"{type(policy).__name__} has no closed-form M-step; use an approximate "
                "Newton step instead"
            )
        if self.mdp.action_values is None:
            raise NotClosedForm("Closed-form EM on a tabular MDP needs action_values")
        _, weights = self._weights(w_k)
        states, actions, coeffs = [], [], []
        for s in range(self.mdp.n_states):
            for a in range(self.mdp.n_actions):
                states.append(s)
                actions.append(self.mdp.action_values[a])
                coeffs.append(weights[s, a])
        return policy.weighted_mstep(actions, states, np.array(coeffs))

    def bundle(self, w: np.ndarray) -> SearchDirectionBundle:
        """All search-direction ingredients at w."""
        h2, d2 = self.approx_hessian(w)
        return SearchDirectionBundle(
            value=self.value(w),
            grad=self.gradient(w),
            h2=h2,
            d2=d2,
            fisher=self.fisher(w),
            provenance="exact",
        )
