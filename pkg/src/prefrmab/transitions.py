"""Visit counts, empirical kernels and Hoeffding confidence widths per arm."""

from __future__ import annotations

import math

import numpy as np

from .world import ConfigurationError

N_ACTIONS = 2


def log_confidence_term(n_states: int, n_actions: int, n_arms: int, k: int, horizon: int, eps: float) -> float:
    """ln(4 |S| |A| N max{(k-1)H, 1} / eps), shared by transition and preference widths."""
    if k < 1:
        raise ValueError(f"episode index must be >= 1, got {k}")
    elapsed = max((k - 1) * horizon, 1)
    return math.log(4.0 * n_states * n_actions * n_arms * elapsed / eps)


def confidence_width(Z_sa, k: int, H: int, N: int, S_card: int, A_card: int, eps: float):
    """Hoeffding width min{1, sqrt(log_term / max{2Z, 1})}; vectorises over ``Z_sa``."""
    log_term = log_confidence_term(S_card, A_card, N, k, H, eps)
    z = np.maximum(2.0 * np.asarray(Z_sa, dtype=np.float64), 1.0)
    width = np.minimum(1.0, np.sqrt(log_term / z))
    return float(width) if np.ndim(width) == 0 else width


class TransitionEstimate:
    """Counts Z(s,a), Z(s,a,s') for every arm.

    ``episode`` is the index k of the episode the current counts feed into;
    widths are a pure function of the counts and that index.
    """

    def __init__(self, n_arms: int, n_states: int, horizon: int, eps: float):
        self.n_arms = n_arms
        self.n_states = n_states
        self.horizon = horizon
        self.eps = eps
        self.episode = 1
        self.transitions = np.zeros((n_arms, n_states, N_ACTIONS, n_states), dtype=np.int64)

    @property
    def visits(self) -> np.ndarray:
        return self.transitions.sum(axis=-1)

    def record_transition(self, n: int, s: int, a: int, s_next: int) -> None:
        self.transitions[n, s, a, s_next] += 1

    def record_batch(self, states: np.ndarray, actions: np.ndarray, next_states: np.ndarray) -> None:
        """Record a block of steps; arrays are shaped (steps, arms)."""
        arms = np.broadcast_to(np.arange(self.n_arms), states.shape)
        np.add.at(self.transitions, (arms.ravel(), states.ravel(), actions.ravel(), next_states.ravel()), 1)

    def empirical_kernel(self, n: int | None = None) -> np.ndarray:
        """P_hat(s'|s,a) = Z(s,a,s') / Z(s,a); unvisited rows stay uniform."""
        counts = self.transitions if n is None else self.transitions[n]
        visits = counts.sum(axis=-1, keepdims=True)
        kernel = np.where(visits > 0, counts / np.maximum(visits, 1), 1.0 / self.n_states)
        return kernel

    def width(self, k: int | None = None) -> np.ndarray:
        k = self.episode if k is None else k
        return confidence_width(self.visits, k, self.horizon, self.n_arms, self.n_states, N_ACTIONS, self.eps)

    def snapshot(self) -> dict:
        return {
            "n_arms": self.n_arms,
            "n_states": self.n_states,
            "horizon": self.horizon,
            "eps": self.eps,
            "episode": self.episode,
            "transitions": self.transitions.tolist(),
        }

    @classmethod
    def from_snapshot(cls, data: dict) -> "TransitionEstimate":
        est = cls(data["n_arms"], data["n_states"], data["horizon"], data["eps"])
        est.episode = int(data["episode"])
        est.transitions = np.array(data["transitions"], dtype=np.int64).reshape(est.transitions.shape)
        return est


def in_confidence_set(est: TransitionEstimate, candidate: np.ndarray, k: int | None = None) -> bool:
    """True iff every entry of ``candidate`` is within the width of P_hat.

    ``candidate`` is either a single arm's kernel ``(S, A, S)`` (only valid for
    one-arm estimates) or the full ``(N, S, A, S)`` stack.
    """
    candidate = np.asarray(candidate, dtype=np.float64)
    if candidate.shape == est.transitions.shape[1:] and est.n_arms == 1:
        candidate = candidate[None]
    if candidate.shape != est.transitions.shape:
        raise ConfigurationError(f"candidate shape {candidate.shape} does not match {est.transitions.shape}")
    deviation = np.abs(candidate - est.empirical_kernel())
    return bool(np.all(deviation <= est.width(k)[..., None]))
