# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled episode rollout: index-policy activation, star duels, transitions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


cdef inline double _bt(double r_m, double r_n) noexcept nogil:
    cdef double em
    if r_m >= r_n:
        em = exp(r_m)
        return em / (em + exp(r_n))
    em = exp(r_n)
    return 1.0 - em / (em + exp(r_m))


def rollout_episode(const double[:, ::1] index_table, step_noise,
                    const double[:, :, :, ::1] cum_kernels, const double[:, ::1] rewards,
                    const cnp.int64_t[::1] states0, int budget, bint duel, bint active_only,
                    const double[::1] u_pivot, const double[:, ::1] u_duel,
                    const double[:, ::1] u_trans):
    cdef Py_ssize_t H = u_trans.shape[0]
    cdef Py_ssize_t N = index_table.shape[0]
    cdef Py_ssize_t S = index_table.shape[1]
    cdef int n_duels = budget - 1 if (duel and budget >= 2) else 0
    cdef bint has_noise = step_noise is not None and step_noise.size > 0
    cdef const double[:, ::1] noise
    if has_noise:
        noise = step_noise
    else:
        noise = np.zeros((1, 1), dtype=np.float64)

    states_arr = np.empty((H + 1, N), dtype=np.int64)
    actions_arr = np.zeros((H, N), dtype=np.int64)
    duels_arr = np.zeros((H, n_duels, 3), dtype=np.int64)
    reward_arr = np.empty(H, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] states = states_arr
    cdef cnp.int64_t[:, ::1] actions = actions_arr
    cdef cnp.int64_t[:, :, ::1] duels = duels_arr
    cdef double[::1] step_reward = reward_arr

    cdef double[::1] score = np.empty(N, dtype=np.float64)
    cdef Py_ssize_t[::1] order = np.empty(N, dtype=np.intp)
    cdef Py_ssize_t[::1] active = np.empty(N, dtype=np.intp)

    cdef Py_ssize_t h, n, i, j, m, key, pivot, n_active, k, nxt
    cdef double total, u, keyscore
    cdef cnp.int64_t gi, gj, s_n

    with nogil:
        for n in range(N):
            states[0, n] = states0[n]
        for h in range(H):
            for n in range(N):
                score[n] = index_table[n, states[h, n]]
                if has_noise:
                    score[n] = score[n] + noise[h, n]
                order[n] = n
            # stable insertion sort, descending score, ascending id on ties
            for i in range(1, N):
                key = order[i]
                keyscore = score[key]
                j = i - 1
                while j >= 0 and score[order[j]] < keyscore:
                    order[j + 1] = order[j]
                    j -= 1
                order[j + 1] = key
            for i in range(budget):
                actions[h, order[i]] = 1
            n_active = 0
            for n in range(N):
                if actions[h, n]:
                    active[n_active] = n
                    n_active += 1

            total = 0.0
            for n in range(N):
                if actions[h, n] or not active_only:
                    total = total + rewards[n, states[h, n]]
            step_reward[h] = total

            if n_duels > 0:
                k = <Py_ssize_t>(u_pivot[h] * budget)
                if k > budget - 1:
                    k = budget - 1
                pivot = active[k]
                gi = pivot * S + states[h, pivot]
                k = 0
                for i in range(n_active):
                    m = active[i]
                    if m == pivot:
                        continue
                    gj = m * S + states[h, m]
                    duels[h, k, 0] = gi
                    duels[h, k, 1] = gj
                    duels[h, k, 2] = 1 if u_duel[h, k] < _bt(rewards[pivot, states[h, pivot]],
                                                            rewards[m, states[h, m]]) else 0
                    k += 1

            for n in range(N):
                s_n = states[h, n]
                u = u_trans[h, n]
                nxt = 0
                while nxt < S and not (u < cum_kernels[n, actions[h, n], s_n, nxt]):
                    nxt += 1
                if nxt > S - 1:
                    nxt = S - 1
                states[h + 1, n] = nxt
    return states_arr, actions_arr, duels_arr, reward_arr
