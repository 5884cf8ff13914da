"""Pure-Python episode rollout; the reference the compiled kernel must match bit for bit."""

import math

import numpy as np


def _bt(r_m, r_n):
    if r_m >= r_n:
        em = math.exp(r_m)
        return em / (em + math.exp(r_n))
    return 1.0 - _bt(r_n, r_m)


def rollout_episode(index_table, step_noise, cum_kernels, rewards, states0, budget,
                    duel, active_only, u_pivot, u_duel, u_trans):
    H = u_trans.shape[0]
    N, S = index_table.shape
    n_duels = budget - 1 if duel and budget >= 2 else 0

    states = np.empty((H + 1, N), dtype=np.int64)
    actions = np.zeros((H, N), dtype=np.int64)
    duels = np.zeros((H, n_duels, 3), dtype=np.int64)
    step_reward = np.empty(H, dtype=np.float64)
    states[0] = states0
    has_noise = step_noise is not None and step_noise.size > 0

    for h in range(H):
        s = states[h]
        score = index_table[np.arange(N), s]
        if has_noise:
            score = score + step_noise[h]
        order = np.argsort(-score, kind="stable")
        actions[h, order[:budget]] = 1
        active = np.flatnonzero(actions[h])

        total = 0.0
        for n in range(N):
            if actions[h, n] or not active_only:
                total += rewards[n, s[n]]
        step_reward[h] = total

        if n_duels:
            p = min(int(u_pivot[h] * budget), budget - 1)
            pivot = active[p]
            gi = pivot * S + s[pivot]
            k = 0
            for m in active:
                if m == pivot:
                    continue
                gj = m * S + s[m]
                won = u_duel[h, k] < _bt(rewards[pivot, s[pivot]], rewards[m, s[m]])
                duels[h, k] = (gi, gj, 1 if won else 0)
                k += 1

        for n in range(N):
            row = cum_kernels[n, actions[h, n], s[n]]
            nxt = int(np.searchsorted(row, u_trans[h, n], side="right"))
            states[h + 1, n] = nxt if nxt < S else S - 1
    return states, actions, duels, step_reward
