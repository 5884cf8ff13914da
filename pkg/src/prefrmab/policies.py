"""DOPL and the baseline policies (oracle index, random, MLE + LP).

Learning policies only ever receive a :class:`LearnerView` (sizes and budget)
plus the observed states, actions and comparison bits. They never see the
latent rewards or the true kernels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .planner import LPError, build_elp, build_exact_lp, direct_indices, select_top_b, solve_lp, solve_or_raise
from .preference import ComparisonLedger, PreferenceEstimate, build_reference_column, prior_estimate, schedule_duels
from .transitions import TransitionEstimate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LearnerView:
    """Everything a learning policy may know about the world up front."""

    n_arms: int
    n_states: int
    budget: int


class Policy:
    name = "policy"
    uses_preferences = False
    step_noise = False

    def __init__(self, view: LearnerView):
        self.view = view
        self.indices = np.zeros((view.n_arms, view.n_states))

    def plan_episode(self, k: int) -> np.ndarray:
        return self.indices

    def act(self, states) -> np.ndarray:
        """Arms activated at ``states`` under the current index table."""
        states = np.asarray(states)
        return select_top_b(self.indices[np.arange(self.view.n_arms), states], self.view.budget)

    def observe(self, states: np.ndarray, actions: np.ndarray, duels: np.ndarray) -> None:
        """Consume one episode: states ``(H+1, N)``, actions ``(H, N)``, duels ``(H, B-1, 3)``."""

    def estimates(self) -> dict:
        return {"indices": self.indices}


class _Learner(Policy):
    uses_preferences = True

    def __init__(self, view: LearnerView, horizon: int, eps: float, reference: tuple[int, int] = (0, 0)):
        if not isinstance(view, LearnerView):
            raise TypeError(f"learners take a LearnerView, not {type(view).__name__}")
        super().__init__(view)
        if not (0 <= reference[0] < view.n_arms and 0 <= reference[1] < view.n_states):
            raise ValueError(f"reference {reference} out of range")
        self.horizon = horizon
        self.eps = eps
        self.reference = tuple(reference)
        self.ledger = ComparisonLedger(view.n_arms, view.n_states)
        self.transitions = TransitionEstimate(view.n_arms, view.n_states, horizon, eps)
        self.fallbacks = 0

    def observe(self, states, actions, duels):
        self.transitions.record_batch(states[:-1], actions, states[1:])
        if duels.size:
            flat = duels.reshape(-1, 3)
            self.ledger.record_batch(flat[:, 0], flat[:, 1], flat[:, 2])

    def record_step(self, states, active, next_states, results) -> None:
        """Per-step form of :meth:`observe`; ``results`` holds ((arm, state), (arm, state), bit)."""
        actions = np.zeros(self.view.n_arms, dtype=np.int64)
        actions[list(active)] = 1
        self.transitions.record_batch(np.asarray(states)[None], actions[None], np.asarray(next_states)[None])
        for i, j, won in results:
            self.ledger.record_duel(i, j, won)

    def step(self, states, rng: np.random.Generator):
        """Activation set and the star of duels to request at ``states``."""
        active = self.act(states)
        members = [(int(n), int(states[n])) for n in active]
        return active, schedule_duels(rng, members)

    def _adopt(self, sol, k: int) -> None:
        try:
            self.indices = direct_indices(sol)
        except LPError:
            self.fallbacks += 1
            log.warning("%s: LP %s in episode %d, keeping previous indices", self.name, sol.status, k)


class DOPLPolicy(_Learner):
    """Direct online preference learning with optimistic extended-LP planning."""

    name = "dopl"

    def __init__(self, view, horizon, eps, reference=(0, 0)):
        super().__init__(view, horizon, eps, reference)
        self.preference: PreferenceEstimate = prior_estimate(view.n_arms, view.n_states, self.reference)
        self.solution = None

    def plan_episode(self, k: int) -> np.ndarray:
        self.transitions.episode = k
        self.preference = build_reference_column(self.ledger, self.reference, k, self.horizon, self.eps)
        lp = build_elp(self.transitions.empirical_kernel(), self.transitions.width(k),
                       self.preference.q_tilde, self.view.budget)
        self.solution = solve_lp(lp)
        self._adopt(self.solution, k)
        return self.indices

    def estimates(self) -> dict:
        return {
            "indices": self.indices,
            "f_hat": self.preference.f_hat,
            "q": self.preference.q_tilde,
            "p_hat": self.transitions.empirical_kernel(),
        }


@dataclass
class MleRewardFit:
    r_hat: np.ndarray
    log_likelihood: float
    objective: float
    iterations: int
    grad_norm: float
    converged: bool


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _upper_pairs(duels: np.ndarray, wins: np.ndarray):
    i, j = np.nonzero(np.triu(duels, 1))
    return i, j, duels[i, j].astype(np.float64), wins[i, j].astype(np.float64)


def bt_log_likelihood(r: np.ndarray, duels: np.ndarray, wins: np.ndarray, reg: float = 0.0) -> float:
    """Sum over duels of y ln s(r_i - r_j) + (1 - y) ln s(r_j - r_i), minus reg ||r||^2.

    ``duels``/``wins`` are upper-triangular count matrices over flat scores ``r``.
    """
    r = np.ravel(r)
    i, j, c, w = _upper_pairs(duels, wins)
    d = r[i] - r[j]
    return float(np.sum(w * _log_sigmoid(d) + (c - w) * _log_sigmoid(-d)) - reg * np.dot(r, r))


def bt_gradient(r: np.ndarray, duels: np.ndarray, wins: np.ndarray, reg: float = 0.0) -> np.ndarray:
    r = np.ravel(r)
    i, j, c, w = _upper_pairs(duels, wins)
    g = w - c / (1.0 + np.exp(-(r[i] - r[j])))
    grad = -2.0 * reg * r
    np.add.at(grad, i, g)
    np.add.at(grad, j, -g)
    return grad


def _bt_hessian(r, duels, wins, reg):
    i, j, c, _ = _upper_pairs(duels, wins)
    p = 1.0 / (1.0 + np.exp(-(r[i] - r[j])))
    curv = c * p * (1.0 - p)
    hess = np.zeros((r.size, r.size))
    np.add.at(hess, (i, j), curv)
    np.add.at(hess, (j, i), curv)
    hess[np.diag_indices(r.size)] = -hess.sum(axis=1)
    return hess - 2.0 * reg * np.eye(r.size)


def mle_fit_rewards(ledger: ComparisonLedger, reg: float = 1e-3, tol: float = 1e-8, max_iter: int = 100,
                    reference: tuple[int, int] = (0, 0), init: np.ndarray | None = None) -> MleRewardFit:
    """Regularised BT maximum likelihood with the reference score pinned at 0.

    Damped Newton ascent with backtracking; every accepted step increases the
    (concave) objective. Stops when the free-coordinate gradient norm is below
    ``tol`` or when no step can raise the objective in floating point; after
    ``max_iter`` steps the last iterate comes back with ``converged=False``.
    """
    if reg <= 0:
        raise ValueError("reg must be positive")
    ref = ledger.index(reference)
    free = np.ones(ledger.size, dtype=bool)
    free[ref] = False
    r = np.zeros(ledger.size) if init is None else np.array(init, dtype=np.float64).ravel()
    r[ref] = 0.0
    C, W = ledger.duels, ledger.wins

    obj = bt_log_likelihood(r, C, W, reg)
    grad = bt_gradient(r, C, W, reg)[free]
    it = 0
    stalled = False
    while np.linalg.norm(grad) > tol and it < max_iter:
        it += 1
        hess = _bt_hessian(r, C, W, reg)[np.ix_(free, free)]
        direction = np.linalg.solve(-hess, grad)
        decrement = grad @ direction
        # the remaining ascent is below what the objective can resolve in floating point
        if decrement <= 1e-13 * max(1.0, abs(obj)):
            stalled = True
            break
        step = 1.0
        while True:
            trial = r.copy()
            trial[free] += step * direction
            trial_obj = bt_log_likelihood(trial, C, W, reg)
            if trial_obj >= obj + 1e-4 * step * decrement or step < 1e-10:
                break
            step *= 0.5
        if trial_obj <= obj:
            stalled = True
            break
        r, obj = trial, trial_obj
        grad = bt_gradient(r, C, W, reg)[free]
    gnorm = float(np.linalg.norm(grad))
    converged = gnorm <= tol or stalled
    if not converged:
        log.warning("MLE fit stopped after %d iterations with gradient norm %.3g", it, gnorm)
    shape = (ledger.n_arms, ledger.n_states)
    return MleRewardFit(r.reshape(shape), bt_log_likelihood(r, C, W), obj, it, gnorm, converged)


class MLELPPolicy(_Learner):
    """BT maximum-likelihood rewards plugged into the exact LP with empirical kernels."""

    name = "mle_lp"

    def __init__(self, view, horizon, eps, reference=(0, 0), reg: float = 1e-3):
        super().__init__(view, horizon, eps, reference)
        self.reg = reg
        self.fit: MleRewardFit | None = None

    def plan_episode(self, k: int) -> np.ndarray:
        self.transitions.episode = k
        init = None if self.fit is None else self.fit.r_hat
        self.fit = mle_fit_rewards(self.ledger, self.reg, reference=self.reference, init=init)
        sol = solve_lp(mle_lp(self.fit, self.transitions, self.view.budget))
        self._adopt(sol, k)
        return self.indices

    def estimates(self) -> dict:
        r = self.fit.r_hat if self.fit is not None else np.zeros_like(self.indices)
        return {
            "indices": self.indices,
            "f_hat": 1.0 / (1.0 + np.exp(-r)),
            "q": r,
            "p_hat": self.transitions.empirical_kernel(),
        }


def mle_lp(fit: MleRewardFit, trans: TransitionEstimate, budget: int):
    kernels = trans.empirical_kernel().transpose(0, 2, 1, 3)
    return build_exact_lp(kernels, fit.r_hat, budget)


def mle_lp_policy(fit: MleRewardFit, trans: TransitionEstimate, budget: int) -> np.ndarray:
    return direct_indices(solve_or_raise(mle_lp(fit, trans, budget)))


class RandomPolicy(Policy):
    """Uniform random B-subset every step (realised as random per-step priorities)."""

    name = "random"
    step_noise = True


def random_policy(rng: np.random.Generator, N: int, B: int) -> np.ndarray:
    if not 1 <= B <= N:
        raise ValueError(f"budget {B} must be in [1, {N}]")
    return np.sort(rng.choice(N, size=B, replace=False))


def oracle_indices(kernels: np.ndarray, rewards: np.ndarray, budget: int, active_only: bool = False):
    """(indices, LP optimum) from the exact LP with true kernels and rewards."""
    sol = solve_or_raise(build_exact_lp(kernels, rewards, budget, active_only=active_only))
    return direct_indices(sol), sol.objective_value


class OraclePolicy(Policy):
    """Index policy from the exact LP; built with full access to the world."""

    name = "oracle"

    def __init__(self, world, active_only: bool = False):
        super().__init__(LearnerView(world.n_arms, world.n_states, world.budget))
        self.indices, self.value = oracle_indices(world.kernels(), world.reward_table(), world.budget, active_only)


def oracle_policy(world) -> np.ndarray:
    return OraclePolicy(world).indices


POLICIES = ("dopl", "oracle", "random", "mle_lp")


def make_policy(kind: str, world, horizon: int, eps: float, reference=(0, 0), active_only: bool = False,
                mle_reg: float = 1e-3) -> Policy:
    view = LearnerView(world.n_arms, world.n_states, world.budget)
    if kind == "dopl":
        return DOPLPolicy(view, horizon, eps, reference)
    if kind == "mle_lp":
        return MLELPPolicy(view, horizon, eps, reference, reg=mle_reg)
    if kind == "random":
        return RandomPolicy(view)
    if kind == "oracle":
        return OraclePolicy(world, active_only)
    raise ValueError(f"unknown policy {kind!r}; choose from {POLICIES}")
