"""Online preference learning against a fixed reference (arm, state).

Duels are stored once per unordered pair under the smaller global index
``arm * |S| + state``; the win count belongs to that smaller index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transitions import N_ACTIONS, confidence_width
from .world import BT_HIGH, BT_LOW, bt_preference

LIPSCHITZ = 1.3


class ComparisonLedger:
    """Duel counts C and win counts W over global (arm, state) indices."""

    def __init__(self, n_arms: int, n_states: int):
        self.n_arms = n_arms
        self.n_states = n_states
        size = n_arms * n_states
        self.duels = np.zeros((size, size), dtype=np.int64)
        self.wins = np.zeros((size, size), dtype=np.int64)

    @property
    def size(self) -> int:
        return self.n_arms * self.n_states

    def index(self, item) -> int:
        if isinstance(item, (tuple, list)):
            n, s = item
            if not (0 <= n < self.n_arms and 0 <= s < self.n_states):
                raise IndexError(f"(arm, state) {item} out of range")
            return int(n) * self.n_states + int(s)
        return int(item)

    def record_duel(self, i, j, i_won: int) -> None:
        gi, gj = self.index(i), self.index(j)
        if gi == gj:
            raise ValueError(f"self-duel on global index {gi}")
        if gi > gj:
            gi, gj, i_won = gj, gi, 1 - int(i_won)
        self.duels[gi, gj] += 1
        self.wins[gi, gj] += int(i_won)

    def record_batch(self, gi: np.ndarray, gj: np.ndarray, i_won: np.ndarray) -> None:
        gi, gj, i_won = (np.asarray(x, dtype=np.int64).ravel() for x in (gi, gj, i_won))
        if np.any(gi == gj):
            raise ValueError("self-duel in batch")
        swap = gi > gj
        lo = np.where(swap, gj, gi)
        hi = np.where(swap, gi, gj)
        won = np.where(swap, 1 - i_won, i_won)
        np.add.at(self.duels, (lo, hi), 1)
        np.add.at(self.wins, (lo, hi), won)

    def counts(self, i, j) -> tuple[int, int]:
        """(C, W) seen from ``i``: W counts wins of ``i`` over ``j``."""
        gi, gj = self.index(i), self.index(j)
        if gi <= gj:
            return int(self.duels[gi, gj]), int(self.wins[gi, gj])
        c = int(self.duels[gj, gi])
        return c, c - int(self.wins[gj, gi])

    def oriented(self) -> tuple[np.ndarray, np.ndarray]:
        """Full (C, W) matrices with W[i, j] = wins of i over j, for all i != j."""
        upper_c = np.triu(self.duels, 1)
        upper_w = np.triu(self.wins, 1)
        c = upper_c + upper_c.T
        w = upper_w + (upper_c - upper_w).T
        return c, w

    def total_duels(self) -> int:
        return int(self.duels.sum())

    def snapshot(self) -> dict:
        iu = np.nonzero(self.duels)
        return {
            "n_arms": self.n_arms,
            "n_states": self.n_states,
            "cells": [[int(a), int(b), int(self.duels[a, b]), int(self.wins[a, b])] for a, b in zip(*iu)],
        }

    @classmethod
    def from_snapshot(cls, data: dict) -> "ComparisonLedger":
        ledger = cls(data["n_arms"], data["n_states"])
        for a, b, c, w in data["cells"]:
            ledger.duels[a, b] = c
            ledger.wins[a, b] = w
        return ledger


def schedule_duels(rng: np.random.Generator, active: list) -> list[tuple]:
    """Star of B-1 duels: a uniformly chosen pivot against every other member."""
    if len(active) < 2:
        return []
    pivot = int(rng.integers(len(active)))
    return [(active[pivot], other) for k, other in enumerate(active) if k != pivot]


def empirical_preference(ledger: ComparisonLedger, i, j, k: int, H: int, eps: float) -> tuple[float, float]:
    """(F_hat(i, j), width); the prior (0.5, 1) when the pair never dueled."""
    c, w = ledger.counts(i, j)
    if c == 0:
        return 0.5, 1.0
    width = confidence_width(c, k, H, ledger.n_arms, ledger.n_states, N_ACTIONS, eps)
    return w / c, width


def infer_preference(f_j_j1, f_j_j2, d1, d2):
    """Infer F(j1, j2) from a shared pivot row j, with error L * (d1 + d2).

    Works elementwise on arrays. Inputs must lie strictly inside (0, 1).
    """
    x = np.asarray(f_j_j1, dtype=np.float64)
    y = np.asarray(f_j_j2, dtype=np.float64)
    if np.any((x <= 0) | (x >= 1) | (y <= 0) | (y >= 1)):
        raise ValueError("inference inputs must be clamped into (0, 1)")
    num = (1.0 - x) * y
    f_inf = num / (num + (1.0 - y) * x)
    d_inf = LIPSCHITZ * (np.asarray(d1, dtype=np.float64) + np.asarray(d2, dtype=np.float64))
    if f_inf.ndim == 0:
        return float(f_inf), float(d_inf)
    return f_inf, d_inf


def q_value(f):
    """ln(f / (1 - f)) on the clamped BT range [1/(1+e), e/(1+e)]."""
    arr = np.asarray(f, dtype=np.float64)
    if np.any(arr < BT_LOW - 1e-12) or np.any(arr > BT_HIGH + 1e-12):
        raise ValueError(f"preference outside the BT range: {arr}")
    q = np.log(arr / (1.0 - arr))
    return float(q) if q.ndim == 0 else q


@dataclass
class PreferenceEstimate:
    """Reference-column estimates, one entry per (arm, state)."""

    f_hat: np.ndarray
    f_tilde: np.ndarray
    width: np.ndarray
    q_tilde: np.ndarray
    inferred: np.ndarray
    pivot: np.ndarray

    def dump(self) -> dict:
        return {
            "f_hat": self.f_hat.tolist(),
            "f_tilde": self.f_tilde.tolist(),
            "width": self.width.tolist(),
            "q_tilde": self.q_tilde.tolist(),
            "inferred": self.inferred.tolist(),
            "pivot": self.pivot.tolist(),
        }


def prior_estimate(n_arms: int, n_states: int, reference: tuple[int, int]) -> PreferenceEstimate:
    ledger = ComparisonLedger(n_arms, n_states)
    return build_reference_column(ledger, reference, 1, 1, 0.5)


def build_reference_column(ledger: ComparisonLedger, reference: tuple[int, int], k: int, H: int,
                           eps: float) -> PreferenceEstimate:
    """Optimistic preference of every (arm, state) over the reference.

    Each entry takes the direct duel estimate or, when smaller in width, the
    value inferred through the pivot row with the most accurate reference
    estimate among rows that also dueled the entry. A bonus equal to the
    chosen width is added and the result clamped to the BT range.
    """
    size = ledger.size
    ref = ledger.index(reference)
    c, w = ledger.oriented()
    with np.errstate(invalid="ignore", divide="ignore"):
        f_emp = np.where(c > 0, w / np.maximum(c, 1), 0.5)
    delta = confidence_width(c, k, H, ledger.n_arms, ledger.n_states, N_ACTIONS, eps)
    delta = np.where(c > 0, delta, 1.0)
    # the true value lies in the BT range, so clamping only moves estimates toward it
    f_emp = np.clip(f_emp, BT_LOW, BT_HIGH)

    f_dir = f_emp[:, ref].copy()
    d_dir = delta[:, ref].copy()

    f_hat = f_dir.copy()
    width = d_dir.copy()
    inferred = np.zeros(size, dtype=bool)
    pivot = np.full(size, -1, dtype=np.int64)

    ref_err = delta[:, ref]
    for t in range(size):
        if t == ref:
            continue
        cand = np.flatnonzero((c[:, t] > 0) & (c[:, ref] > 0))
        cand = cand[(cand != t) & (cand != ref)]
        if cand.size == 0:
            continue
        # smallest reference-column error, then smallest error against t, then lowest index
        j = cand[np.lexsort((cand, delta[cand, t], ref_err[cand]))[0]]
        f_inf, d_inf = infer_preference(f_emp[j, t], f_emp[j, ref], delta[j, t], delta[j, ref])
        if d_inf < d_dir[t]:
            f_hat[t], width[t], inferred[t], pivot[t] = f_inf, d_inf, True, j

    # the reference against itself is exactly 0.5
    f_hat[ref], width[ref] = 0.5, 0.0
    f_tilde = np.clip(f_hat + width, BT_LOW, BT_HIGH)
    q_tilde = q_value(f_tilde)
    shape = (ledger.n_arms, ledger.n_states)
    return PreferenceEstimate(
        f_hat=f_hat.reshape(shape),
        f_tilde=f_tilde.reshape(shape),
        width=width.reshape(shape),
        q_tilde=np.asarray(q_tilde).reshape(shape),
        inferred=inferred.reshape(shape),
        pivot=pivot.reshape(shape),
    )


def true_reference_column(rewards: np.ndarray, reference: tuple[int, int]) -> np.ndarray:
    """Exact BT preferences of every (arm, state) over the reference (diagnostics only)."""
    r_ref = rewards[reference]
    return np.vectorize(lambda r: bt_preference(r, r_ref))(rewards)
