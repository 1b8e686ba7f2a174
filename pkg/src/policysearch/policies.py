"""
Differentiable parametric policies.

Every policy exposes log pi(a|s;w), its gradient and its Hessian with respect to w.
Gibbs policies are log-concave; Gaussian-linear policies (mean parameters only) are
log-quadratic, which is what makes the closed-form EM step available.
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .exceptions import (
    ActionNotLegal,
    DimensionMismatch,
    NotClosedForm,
    SingularTransform,
    ValidationError,
)

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
RIDGE_FRACTION = 1e-10

# (actions, log-probabilities, gradients (n_a, n_w), Hessians (n_a, n_w, n_w))
DerivativeTerms = Tuple[List[Any], np.ndarray, np.ndarray, np.ndarray]


class PolicyModel(ABC):
    """
    Contract shared by all parametric policies.

    Attributes:
        n_params: Dimension of the parameter vector w
        is_log_concave: log pi is concave in w for every (a, s)
        is_log_quadratic: log pi is quadratic in w, so the EM M-step has a closed form
        discrete: Actions come from a finite per-state action set
    """

    n_params: int
    is_log_concave: bool = False
    is_log_quadratic: bool = False
    discrete: bool = True

    @abstractmethod
    def log_prob(self, a: Any, s: Any, w: np.ndarray) -> float:
        """Log-probability (or log-density) of action a in state s."""

    @abstractmethod
    def grad_log(self, a: Any, s: Any, w: np.ndarray) -> np.ndarray:
        """Gradient of log pi(a|s;w) with respect to w."""

    @abstractmethod
    def hess_log(self, a: Any, s: Any, w: np.ndarray) -> np.ndarray:
        """Hessian of log pi(a|s;w) with respect to w (symmetric)."""

    @abstractmethod
    def sample(self, s: Any, w: np.ndarray, rng: np.random.Generator) -> Any:
        """Draw an action from pi(.|s;w)."""

    def action_set(self, s: Any) -> List[Any]:
        raise NotImplementedError(f"{type(self).__name__} has no finite action set")

    def derivative_terms(
        self, s: Any, w: np.ndarray, actions: Optional[Sequence[Any]] = None
    ) -> DerivativeTerms:
        """
        Log-probabilities, gradients and Hessians for a list of actions in one state.

        Args:
            s: State
            w: Parameters
            actions: Actions to evaluate (defaults to the legal action set)

        Returns:
            Tuple (actions, log_probs, grads, hessians)
        """
        acts = list(self.action_set(s) if actions is None else actions)
        logp = np.array([self.log_prob(a, s, w) for a in acts])
        grads = np.array([self.grad_log(a, s, w) for a in acts]).reshape(len(acts), self.n_params)
        hess = np.array([self.hess_log(a, s, w) for a in acts]).reshape(
            len(acts), self.n_params, self.n_params
        )
        return acts, logp, grads, hess

    def sample_with_terms(
        self,
        s: Any,
        w: np.ndarray,
        rng: np.random.Generator,
        hessian: str = "full",
    ) -> Tuple[Any, np.ndarray, Optional[np.ndarray]]:
        """
        Sample an action together with its score and (optionally) Hessian.

        Args:
            hessian: "full", "diagonal" or "none"

        Returns:
            Tuple (action, grad_log, hess_log or its diagonal or None)
        """
        a = self.sample(s, w, rng)
        g = self.grad_log(a, s, w)
        if hessian == "none":
            return a, g, None
        h = self.hess_log(a, s, w)
        return a, g, (np.diag(h).copy() if hessian == "diagonal" else h)

    def _check_w(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.n_params,):
            raise DimensionMismatch(f"Expected {self.n_params} parameters, got shape {w.shape}")
        return w


class GibbsPolicy(PolicyModel):
    """
    Softmax policy pi(a|s;w) proportional to exp(w^T phi(a, s)).

    Features are supplied either pointwise (``feature_map`` and ``action_set``) or as a
    table per state (``feature_table(s) -> (actions, Phi)``), which lets environments
    such as Tetris compute all after-state features in one pass.

    Args:
        n_params: Feature dimension
        feature_map: Callable (a, s) -> feature vector
        action_set: Callable s -> list of legal actions
        feature_table: Callable s -> (actions, matrix with one feature row per action)
    """

    is_log_concave = True
    is_log_quadratic = False
    discrete = True

    def __init__(
        self,
        n_params: int,
        feature_map: Optional[Callable[[Any, Any], np.ndarray]] = None,
        action_set: Optional[Callable[[Any], Sequence[Any]]] = None,
        feature_table: Optional[Callable[[Any], Tuple[Sequence[Any], np.ndarray]]] = None,
    ):
        if feature_table is None and (feature_map is None or action_set is None):
            raise ValidationError("GibbsPolicy needs feature_table or feature_map + action_set")
        self.n_params = int(n_params)
        self._feature_map = feature_map
        self._action_set = action_set
        self._feature_table = feature_table

    @classmethod
    def tabular(
        cls,
        features: np.ndarray,
        legal: Optional[np.ndarray] = None,
    ) -> "GibbsPolicy":
        """
        Gibbs policy on integer states/actions from a feature tensor.

        Args:
            features: Array indexed [s, a, :]
            legal: Optional boolean mask [s, a]; defaults to every action legal
        """
        phi = np.array(features, dtype=float)
        if phi.ndim != 3:
            raise DimensionMismatch(f"features must be indexed [s, a, k], got shape {phi.shape}")
        mask = np.ones(phi.shape[:2], dtype=bool) if legal is None else np.asarray(legal, bool)
        if mask.shape != phi.shape[:2] or not mask.any(axis=1).all():
            raise ValidationError("legal mask must match features and allow one action per state")
        phi.setflags(write=False)
        actions = [[int(a) for a in np.flatnonzero(mask[s])] for s in range(phi.shape[0])]

        def table(s):
            acts = actions[int(s)]
            return acts, phi[int(s), acts]

        return cls(phi.shape[2], feature_table=table)

    @classmethod
    def one_hot(cls, n_states: int, n_actions: int) -> "GibbsPolicy":
        """Tabular softmax with one parameter per (s, a) pair."""
        phi = np.eye(n_states * n_actions).reshape(n_states, n_actions, n_states * n_actions)
        return cls.tabular(phi)

    def features(self, s: Any) -> Tuple[List[Any], np.ndarray]:
        """Legal actions of s and the matching feature matrix (one row per action)."""
        if self._feature_table is not None:
            acts, phi = self._feature_table(s)
            acts = list(acts)
        else:
            acts = list(self._action_set(s))
            phi = np.array([self._feature_map(a, s) for a in acts], dtype=float)
        phi = np.asarray(phi, dtype=float).reshape(len(acts), -1)
        if phi.shape[1] != self.n_params:
            raise DimensionMismatch(
                f"Features have dimension {phi.shape[1]}, policy expects {self.n_params}"
            )
        return acts, phi

    def action_set(self, s: Any) -> List[Any]:
        return self.features(s)[0]

    def probabilities(self, s: Any, w: np.ndarray) -> Tuple[List[Any], np.ndarray, np.ndarray]:
        """Return (actions, pi(.|s;w), feature matrix)."""
        w = self._check_w(w)
        acts, phi = self.features(s)
        logits = phi @ w
        # logsumexp subtracts the max before exponentiating
        logp = logits - logsumexp(logits)
        return acts, np.exp(logp), phi

    @staticmethod
    def _index(acts: List[Any], a: Any) -> int:
        for i, b in enumerate(acts):
            if b == a:
                return i
        raise ActionNotLegal(f"Action {a!r} is not legal here; legal actions: {acts}")

    def log_prob(self, a, s, w):
        w = self._check_w(w)
        acts, phi = self.features(s)
        logits = phi @ w
        return float(logits[self._index(acts, a)] - logsumexp(logits))

    def grad_log(self, a, s, w):
        acts, probs, phi = self.probabilities(s, w)
        return phi[self._index(acts, a)] - probs @ phi

    def hess_log(self, a, s, w):
        acts, probs, phi = self.probabilities(s, w)
        self._index(acts, a)
        return -self._covariance(probs, phi)

    @staticmethod
    def _covariance(probs: np.ndarray, phi: np.ndarray) -> np.ndarray:
        centred = phi - probs @ phi
        cov = (centred * probs[:, None]).T @ centred
        return 0.5 * (cov + cov.T)

    def sample(self, s, w, rng):
        acts, probs, _ = self.probabilities(s, w)
        return acts[int(rng.choice(len(acts), p=probs))]

    def derivative_terms(self, s, w, actions=None):
        w = self._check_w(w)
        acts, phi = self.features(s)
        logits = phi @ w
        logp = logits - logsumexp(logits)
        probs = np.exp(logp)
        grads = phi - probs @ phi
        hess = np.broadcast_to(-self._covariance(probs, phi), (len(acts),) + (self.n_params,) * 2)
        if actions is not None:
            idx = [self._index(acts, a) for a in actions]
            return list(actions), logp[idx], grads[idx], np.array(hess[idx])
        return acts, logp, grads, np.array(hess)

    def sample_with_terms(self, s, w, rng, hessian="full"):
        acts, probs, phi = self.probabilities(s, w)
        i = int(rng.choice(len(acts), p=probs))
        mean_phi = probs @ phi
        g = phi[i] - mean_phi
        if hessian == "none":
            return acts[i], g, None
        if hessian == "diagonal":
            return acts[i], g, -(probs @ (phi - mean_phi) ** 2)
        return acts[i], g, -self._covariance(probs, phi)


class GaussianLinearPolicy(PolicyModel):
    """
    Gaussian policy with mean linear in the state features and fixed noise.

    pi(a|s; w) = N(a | K phi(s) + m, c(s) Sigma), with w = (K flattened row-major, m).
    Only the mean parameters are optimised, so log pi is quadratic in w and its Hessian
    does not depend on w.

    Args:
        state_features: Callable s -> feature vector phi(s) of length n_features
        n_features: Length of phi(s)
        noise_cov: Action noise covariance Sigma (scalar or action_dim x action_dim)
        use_offset: Include the offset m in the parameters
        noise_scale: Optional callable s -> c(s) > 0 scaling Sigma per state
    """

    is_log_concave = True
    is_log_quadratic = True
    discrete = False

    def __init__(
        self,
        state_features: Callable[[Any], np.ndarray],
        n_features: int,
        noise_cov: Any,
        use_offset: bool = True,
        noise_scale: Optional[Callable[[Any], float]] = None,
    ):
        cov = np.atleast_2d(np.asarray(noise_cov, dtype=float))
        if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
            raise ValidationError("noise_cov must be a symmetric square matrix")
        try:
            linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError as e:
            raise ValidationError(f"noise_cov must be positive definite: {e}") from e
        self.state_features = state_features
        self.n_features = int(n_features)
        self.noise_cov = cov
        self.action_dim = cov.shape[0]
        self.use_offset = use_offset
        self.noise_scale = noise_scale
        self.n_params = self.action_dim * self.n_features + (self.action_dim if use_offset else 0)

    def design(self, s: Any) -> np.ndarray:
        """Matrix A(s) with mean = A(s) w."""
        phi = np.asarray(self.state_features(s), dtype=float).ravel()
        if phi.shape[0] != self.n_features:
            raise DimensionMismatch(f"phi(s) has length {phi.shape[0]}, expected {self.n_features}")
        blocks = [np.kron(np.eye(self.action_dim), phi[None, :])]
        if self.use_offset:
            blocks.append(np.eye(self.action_dim))
        return np.hstack(blocks)

    def covariance(self, s: Any) -> np.ndarray:
        if self.noise_scale is None:
            return self.noise_cov
        return max(float(self.noise_scale(s)), 1e-12) * self.noise_cov

    def mean(self, s: Any, w: np.ndarray) -> np.ndarray:
        return self.design(s) @ self._check_w(w)

    def _action(self, a: Any) -> np.ndarray:
        a = np.atleast_1d(np.asarray(a, dtype=float))
        if a.shape != (self.action_dim,):
            raise DimensionMismatch(f"Action has shape {a.shape}, expected ({self.action_dim},)")
        return a

    def log_prob(self, a, s, w):
        a = self._action(a)
        cov = self.covariance(s)
        resid = a - self.mean(s, w)
        chol = linalg.cho_factor(cov, lower=True)
        maha = float(resid @ linalg.cho_solve(chol, resid))
        logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
        return -0.5 * (maha + logdet + self.action_dim * np.log(2.0 * np.pi))

    def grad_log(self, a, s, w):
        a = self._action(a)
        design = self.design(s)
        resid = a - design @ self._check_w(w)
        return design.T @ linalg.solve(self.covariance(s), resid, assume_a="pos")

    def hess_log(self, a, s, w):
        self._action(a)
        self._check_w(w)
        design = self.design(s)
        h = -design.T @ linalg.solve(self.covariance(s), design, assume_a="pos")
        return 0.5 * (h + h.T)

    def sample(self, s, w, rng):
        chol = linalg.cholesky(self.covariance(s), lower=True)
        return self.mean(s, w) + chol @ rng.standard_normal(self.action_dim)

    def weighted_mstep(
        self,
        actions: Sequence[Any],
        states: Sequence[Any],
        weights: np.ndarray,
    ) -> np.ndarray:
        """
        Closed-form maximiser of sum_i weights_i * log pi(actions_i | states_i; w).

        This is a weighted least-squares problem with normal matrix
        sum_i c_i A_i^T P_i A_i. A singular normal matrix gets a ridge of 1e-10 * trace
        and the minimum-norm solution.

        Returns:
            Maximising parameter vector
        """
        normal = np.zeros((self.n_params, self.n_params))
        rhs = np.zeros(self.n_params)
        for a, s, c in zip(actions, states, weights):
            if c == 0.0:
                continue
            design = self.design(s)
            prec_design = linalg.solve(self.covariance(s), design, assume_a="pos")
            normal += c * design.T @ prec_design
            rhs += c * prec_design.T @ self._action(a)
        normal = 0.5 * (normal + normal.T)
        return _solve_normal_equations(normal, rhs)


def _solve_normal_equations(normal: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        chol = linalg.cho_factor(normal, lower=True)
        return linalg.cho_solve(chol, rhs)
    except linalg.LinAlgError:
        ridge = RIDGE_FRACTION * max(np.trace(normal), 1.0)
        logger.warning("Singular M-step normal matrix; applying ridge %.3g", ridge)
        sol, *_ = linalg.lstsq(normal + ridge * np.eye(normal.shape[0]), rhs)
        return sol


class ReparametrizedPolicy(PolicyModel):
    """Policy pi~(a|s; v) = pi(a|s; T v) for a nonsingular square T."""

    def __init__(self, base: PolicyModel, transform: np.ndarray):
        self.base = base
        self.transform = transform
        self.n_params = transform.shape[1]
        self.is_log_concave = base.is_log_concave
        self.is_log_quadratic = base.is_log_quadratic
        self.discrete = base.discrete

    def _inner(self, w):
        return self.transform @ self._check_w(w)

    def log_prob(self, a, s, w):
        return self.base.log_prob(a, s, self._inner(w))

    def grad_log(self, a, s, w):
        return self.transform.T @ self.base.grad_log(a, s, self._inner(w))

    def hess_log(self, a, s, w):
        h = self.transform.T @ self.base.hess_log(a, s, self._inner(w)) @ self.transform
        return 0.5 * (h + h.T)

    def sample(self, s, w, rng):
        return self.base.sample(s, self._inner(w), rng)

    def action_set(self, s):
        return self.base.action_set(s)

    def derivative_terms(self, s, w, actions=None):
        acts, logp, grads, hess = self.base.derivative_terms(s, self._inner(w), actions)
        t = self.transform
        hess = np.einsum("ji,ajk,kl->ail", t, hess, t)
        return acts, logp, grads @ t, 0.5 * (hess + hess.transpose(0, 2, 1))

    def sample_with_terms(self, s, w, rng, hessian="full"):
        a, g, _ = self.base.sample_with_terms(s, self._inner(w), rng, hessian="none")
        if hessian == "none":
            return a, self.transform.T @ g, None
        h = self.hess_log(a, s, w)
        return a, self.transform.T @ g, (np.diag(h).copy() if hessian == "diagonal" else h)

    def weighted_mstep(self, actions, states, weights):
        if not self.is_log_quadratic:
            raise NotClosedForm("Reparametrised policy is not log-quadratic")
        return linalg.solve(self.transform, self.base.weighted_mstep(actions, states, weights))


def reparametrize(policy: PolicyModel, transform: np.ndarray) -> PolicyModel:
    """
    Reparametrise a policy linearly: pi~(a|s; w) = pi(a|s; T w).

    Gradients transform as T^T g and Hessians as T^T H T.

    Args:
        policy: Base policy
        transform: Nonsingular square matrix T of size n_params

    Returns:
        The reparametrised policy (the base policy itself when T is the identity)

    Raises:
        DimensionMismatch: If T is not n_params x n_params
        SingularTransform: If T is singular or its condition number exceeds 1e12
    """
    t = np.array(transform, dtype=float)
    if t.shape != (policy.n_params, policy.n_params):
        raise DimensionMismatch(
            f"Transform has shape {t.shape}, expected ({policy.n_params}, {policy.n_params})"
        )
    if np.array_equal(t, np.eye(policy.n_params)):
        return policy
    cond = np.linalg.cond(t)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularTransform(f"Transform condition number {cond:.3g} exceeds {MAX_CONDITION:g}")
    t.setflags(write=False)
    return ReparametrizedPolicy(policy, t)


class PolicyTable:
    """
    Policy quantities tabulated over every (s, a) pair of a TabularMdp.

    Attributes:
        pi: Action probabilities [s, a] (zero for illegal actions)
        logp: Log-policy values [s, a] (zero where the action is illegal)
        grads: Score vectors [s, a, :]
        hess: Log-policy Hessians [s, a, :, :]
    """

    def __init__(self, pi: np.ndarray, logp: np.ndarray, grads: np.ndarray, hess: np.ndarray):
        self.pi = pi
        self.logp = logp
        self.grads = grads
        self.hess = hess

    @property
    def n_params(self) -> int:
        return self.grads.shape[2]


def tabulate_policy(mdp, policy: PolicyModel, w: np.ndarray) -> PolicyTable:
    """
    Tabulate pi, grad log pi and Hessian log pi on a TabularMdp.

    Discrete policies are evaluated on their legal action sets (integer actions).
    Continuous policies need ``mdp.action_values``; the dynamics then use the lattice
    distribution pi(a|s) proportional to the density at each action value, while the
    derivatives are those of the continuous log-density.

    Raises:
        ActionNotLegal: If a discrete policy proposes an action outside range(n_actions)
        ValidationError: If a continuous policy is used without action_values
    """
    n_s, n_a, n_w = mdp.n_states, mdp.n_actions, policy.n_params
    pi = np.zeros((n_s, n_a))
    logps = np.zeros((n_s, n_a))
    grads = np.zeros((n_s, n_a, n_w))
    hess = np.zeros((n_s, n_a, n_w, n_w))

    if not policy.discrete and mdp.action_values is None:
        raise ValidationError("Continuous policies need an MDP with action_values")

    for s in range(n_s):
        if policy.discrete:
            acts, logp, g, h = policy.derivative_terms(s, w)
            idx = [int(a) for a in acts]
            if any(a < 0 or a >= n_a for a in idx):
                raise ActionNotLegal(f"State {s} proposes actions {idx} outside range({n_a})")
            pi[s, idx] = np.exp(logp)
        else:
            _, logp, g, h = policy.derivative_terms(s, w, list(mdp.action_values))
            idx = list(range(n_a))
            pi[s] = np.exp(logp - logsumexp(logp))
        logps[s, idx] = logp
        grads[s, idx] = g
        hess[s, idx] = h
    return PolicyTable(pi, logps, grads, hess)
