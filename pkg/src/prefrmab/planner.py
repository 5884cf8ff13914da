"""Occupancy-measure linear programs and the direct index policy.

Two programs are built here:

* the exact LP over state-action occupancies ``mu[n, s, a]`` with known kernels;
* the extended LP over state-action-state occupancies ``omega[n, s, a, s']``
  whose implied kernels are confined to the transition confidence ball.

Both are solved with HiGHS through :func:`scipy.optimize.linprog`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

ZERO_DENOMINATOR = 1e-12


class LPError(RuntimeError):
    """The program could not be solved to optimality."""


@dataclass
class LinearProgram:
    """max c @ x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0."""

    c: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    kind: str
    shape: tuple
    kernels: np.ndarray | None = None
    row_names: list = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return self.c.size


@dataclass
class OccupancySolution:
    omega: np.ndarray | None
    objective_value: float
    status: str
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def mu(self) -> np.ndarray:
        return self.omega.sum(axis=-1)


def _budget_row(n_arms: int, n_states: int, width: int) -> sp.csr_matrix:
    # width = variables per (n, s, a) block
    a = np.zeros((n_arms, n_states, 2, width))
    a[:, :, 1, :] = 1.0
    return sp.csr_matrix(a.reshape(1, -1))


def _normalisation_rows(n_arms: int, per_arm: int) -> sp.csr_matrix:
    return sp.kron(sp.identity(n_arms, format="csr"), np.ones((1, per_arm)), format="csr")


def build_exact_lp(kernels: np.ndarray, values: np.ndarray, budget: float,
                   active_only: bool = False) -> LinearProgram:
    """Occupancy LP with exact kernels ``[n, a, s, s']`` and per-(arm, state) values.

    ``values`` are collected in both actions; with ``active_only`` only the
    active occupancy earns them.
    """
    kernels = np.asarray(kernels, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    n_arms, _, n_states, _ = kernels.shape
    if values.shape != (n_arms, n_states):
        raise ValueError(f"values shape {values.shape} != {(n_arms, n_states)}")

    c = np.repeat(values[:, :, None], 2, axis=2)
    if active_only:
        c[:, :, 0] = 0.0

    # flow: sum_a mu(s, a) - sum_{s', a'} mu(s', a') P(s | s', a') = 0
    blocks = []
    for n in range(n_arms):
        inflow = kernels[n].transpose(2, 1, 0).reshape(n_states, n_states * 2)  # [s, (s', a')]
        outflow = np.kron(np.eye(n_states), np.ones((1, 2)))
        blocks.append(sp.csr_matrix(outflow - inflow))
    flow = sp.block_diag(blocks, format="csr")
    A_eq = sp.vstack([flow, _normalisation_rows(n_arms, n_states * 2)], format="csr")
    b_eq = np.concatenate([np.zeros(n_arms * n_states), np.ones(n_arms)])
    A_ub = _budget_row(n_arms, n_states, 1)
    return LinearProgram(c.ravel(), A_ub, np.array([float(budget)]), A_eq, b_eq,
                         kind="exact", shape=(n_arms, n_states, 2), kernels=kernels)


def build_elp(p_hat: np.ndarray, width: np.ndarray, q_tilde: np.ndarray, budget: float) -> LinearProgram:
    """Extended LP over omega[n, s, a, s'] with the confidence-ball constraints.

    ``p_hat`` is ``[n, s, a, s']`` and ``width`` is ``[n, s, a]``. Ratio bounds
    omega / sum_y omega in [P_hat - width, P_hat + width] are multiplied
    through by the (nonnegative) denominator. Cells whose bound is vacuous
    after clamping to [0, 1] are skipped.
    """
    p_hat = np.asarray(p_hat, dtype=np.float64)
    width = np.asarray(width, dtype=np.float64)
    q_tilde = np.asarray(q_tilde, dtype=np.float64)
    n_arms, n_states = q_tilde.shape
    S = n_states
    n_groups = n_arms * n_states * 2
    n_vars = n_groups * S

    c = np.broadcast_to(q_tilde[:, :, None, None], (n_arms, S, 2, S)).ravel().copy()

    # flow: sum_{a, s'} omega(s, a, s') = sum_{s', a'} omega(s', a', s)
    idx = np.arange(n_vars).reshape(n_arms, S, 2, S)
    rows, cols, vals = [], [], []
    for n in range(n_arms):
        for s in range(S):
            r = n * S + s
            out_vars = idx[n, s].ravel()
            in_vars = idx[n, :, :, s].ravel()
            rows += [r] * (out_vars.size + in_vars.size)
            cols += list(out_vars) + list(in_vars)
            vals += [1.0] * out_vars.size + [-1.0] * in_vars.size
    flow = sp.csr_matrix((vals, (rows, cols)), shape=(n_arms * S, n_vars))
    A_eq = sp.vstack([flow, _normalisation_rows(n_arms, S * 2 * S)], format="csr")
    b_eq = np.concatenate([np.zeros(n_arms * S), np.ones(n_arms)])

    upper = np.minimum(1.0, p_hat + width[..., None]).reshape(n_groups, S)
    lower = np.maximum(0.0, p_hat - width[..., None]).reshape(n_groups, S)
    ball = [_ball_rows(upper, S, sign=1.0, skip=upper >= 1.0),
            _ball_rows(lower, S, sign=-1.0, skip=lower <= 0.0)]
    A_ub = sp.vstack([_budget_row(n_arms, S, S)] + ball, format="csr")
    b_ub = np.zeros(A_ub.shape[0])
    b_ub[0] = float(budget)
    return LinearProgram(c, A_ub, b_ub, A_eq, b_eq, kind="elp", shape=(n_arms, S, 2, S))


def _ball_rows(bound: np.ndarray, S: int, sign: float, skip: np.ndarray) -> sp.csr_matrix:
    """sign * (omega(g, s') - bound(g, s') * sum_y omega(g, y)) <= 0 for kept cells."""
    n_groups = bound.shape[0]
    g, sp_ = np.nonzero(~skip)
    n_rows = g.size
    row_ids = np.arange(n_rows)
    # -bound on every variable of the group, +1 on the cell itself
    r_all = np.repeat(row_ids, S)
    c_all = (g[:, None] * S + np.arange(S)[None, :]).ravel()
    v_all = np.repeat(-bound[g, sp_], S)
    v_all = v_all + (np.arange(S)[None, :] == sp_[:, None]).ravel()
    return sp.csr_matrix((sign * v_all, (r_all, c_all)), shape=(n_rows, n_groups * S))


def solve_lp(lp: LinearProgram) -> OccupancySolution:
    res = linprog(-lp.c, A_ub=lp.A_ub, b_ub=lp.b_ub, A_eq=lp.A_eq, b_eq=lp.b_eq,
                  bounds=(0, None), method="highs")
    if res.status == 0:
        x = np.maximum(res.x, 0.0)
        if lp.kind == "exact":
            mu = x.reshape(lp.shape)
            omega = mu[..., None] * lp.kernels.transpose(0, 2, 1, 3)
        else:
            omega = x.reshape(lp.shape)
        return OccupancySolution(omega, float(lp.c @ x), "optimal", res.message)
    status = "infeasible" if res.status == 2 else "numerical_failure"
    return OccupancySolution(None, float("nan"), status, res.message)


def solve_or_raise(lp: LinearProgram) -> OccupancySolution:
    sol = solve_lp(lp)
    if not sol.optimal:
        raise LPError(f"LP {sol.status}: {sol.message}")
    return sol


def direct_indices(sol: OccupancySolution) -> np.ndarray:
    """Active share of each (arm, state) occupancy; 0 where the state carries no mass."""
    if not sol.optimal:
        raise LPError(f"no indices from a {sol.status} solution")
    mass = sol.omega.sum(axis=-1)  # [n, s, a]
    total = mass.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        idx = np.where(total > ZERO_DENOMINATOR, mass[..., 1] / total, 0.0)
    return np.clip(idx, 0.0, 1.0)


def direct_index(sol: OccupancySolution, n: int, s: int) -> float:
    return float(direct_indices(sol)[n, s])


def select_top_b(indices, B: int) -> np.ndarray:
    """Ids of the B largest indices, ties going to the smaller arm id (sorted)."""
    indices = np.asarray(indices, dtype=np.float64)
    order = np.argsort(-indices, kind="stable")
    return np.sort(order[:B])


def write_lp_format(lp: LinearProgram, path: str | Path) -> None:
    """Dump the program in CPLEX LP text format."""
    names = [f"x{i}" for i in range(lp.n_vars)]

    def expr(row) -> str:
        row = sp.csr_matrix(row)
        terms = [f"{v:+.17g} {names[j]}" for j, v in zip(row.indices, row.data) if v != 0.0]
        return " ".join(terms) if terms else "0 x0"

    lines = ["\\ " + f"{lp.kind} occupancy program, variable shape {lp.shape}", "Maximize",
             " obj: " + expr(lp.c[None, :]), "Subject To"]
    for i in range(lp.A_ub.shape[0]):
        lines.append(f" ub{i}: {expr(lp.A_ub[i])} <= {lp.b_ub[i]:.17g}")
    for i in range(lp.A_eq.shape[0]):
        lines.append(f" eq{i}: {expr(lp.A_eq[i])} = {lp.b_eq[i]:.17g}")
    lines += ["Bounds"] + [f" {nm} >= 0" for nm in names] + ["End", ""]
    Path(path).write_text("\n".join(lines))
