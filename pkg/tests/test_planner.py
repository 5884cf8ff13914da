import numpy as np
import pytest
import scipy.sparse as sp

from prefrmab.planner import (LinearProgram, LPError, OccupancySolution, build_elp, build_exact_lp, direct_index,
                              direct_indices, select_top_b, solve_lp, solve_or_raise, write_lp_format)
from prefrmab.policies import oracle_indices
from prefrmab.world import build_cpap

from conftest import random_world


def stationary(P):
    """Stationary distribution of a row-stochastic matrix (least squares)."""
    S = P.shape[0]
    A = np.vstack([P.T - np.eye(S), np.ones(S)])
    b = np.zeros(S + 1)
    b[-1] = 1
    return np.linalg.lstsq(A, b, rcond=None)[0]


def random_feasible_mu(rng, kernels, budget):
    """Mixture of a random stationary randomized policy and always-passive, within budget."""
    N, _, S, _ = kernels.shape
    mus, passive = [], []
    for n in range(N):
        pi = rng.random(S)
        P = (1 - pi)[:, None] * kernels[n, 0] + pi[:, None] * kernels[n, 1]
        d = np.clip(stationary(P), 0, None)
        d /= d.sum()
        mus.append(np.stack([d * (1 - pi), d * pi], axis=1))
        d0 = np.clip(stationary(kernels[n, 0]), 0, None)
        d0 /= d0.sum()
        passive.append(np.stack([d0, np.zeros(S)], axis=1))
    mu, mu0 = np.array(mus), np.array(passive)
    active = mu[..., 1].sum()
    lam = min(1.0, budget / active) * rng.random()
    return lam * mu + (1 - lam) * mu0


def test_toy_exact_lp(toy_world):
    sol = solve_or_raise(build_exact_lp(toy_world.kernels(), toy_world.reward_table(), 1))
    assert sol.objective_value == pytest.approx(1.0, abs=1e-9)
    assert sol.mu[0, 1, 1] == pytest.approx(1.0, abs=1e-9)
    assert direct_index(sol, 0, 1) == pytest.approx(1.0)


def test_zero_values_zero_optimum():
    w = random_world(np.random.default_rng(0))
    sol = solve_or_raise(build_exact_lp(w.kernels(), np.zeros((3, 3)), 1))
    assert sol.objective_value == pytest.approx(0.0, abs=1e-12)


def test_one_variable_program():
    lp = LinearProgram(np.array([1.0]), sp.csr_matrix([[1.0]]), np.array([0.3]),
                       sp.csr_matrix((0, 1)), np.zeros(0), kind="elp", shape=(1,))
    assert solve_lp(lp).objective_value == pytest.approx(0.3)


def test_infeasible_reported():
    lp = LinearProgram(np.array([1.0]), sp.csr_matrix([[1.0]]), np.array([-1.0]),
                       sp.csr_matrix((0, 1)), np.zeros(0), kind="elp", shape=(1,))
    sol = solve_lp(lp)
    assert sol.status == "infeasible" and sol.omega is None
    with pytest.raises(LPError):
        direct_indices(sol)
    with pytest.raises(LPError):
        solve_or_raise(lp)


def test_exact_lp_dominates_random_points():
    rng = np.random.default_rng(1)
    w = random_world(rng, n_arms=4, budget=2)
    K, R = w.kernels(), w.reward_table()
    opt = solve_or_raise(build_exact_lp(K, R, 2)).objective_value
    for _ in range(200):
        mu = random_feasible_mu(rng, K, 2)
        assert mu[..., 1].sum() <= 2 + 1e-9
        assert opt >= float(np.sum(mu * R[..., None])) - 1e-6


def check_solution(sol, budget, p_hat=None, width=None):
    om = sol.omega
    np.testing.assert_allclose(om.sum(axis=(1, 2, 3)), 1.0, atol=1e-6)
    outflow = om.sum(axis=(2, 3))
    inflow = om.sum(axis=(1, 2))
    np.testing.assert_allclose(outflow, inflow, atol=1e-6)
    assert om[:, :, 1].sum() <= budget + 1e-6
    if p_hat is not None:
        denom = om.sum(axis=-1, keepdims=True)
        mask = np.broadcast_to(denom > 1e-9, om.shape)
        implied = np.divide(om, denom, out=np.zeros_like(om), where=denom > 1e-9)
        lo = np.maximum(0, p_hat - width[..., None])
        hi = np.minimum(1, p_hat + width[..., None])
        assert np.all(implied[mask] >= lo[mask] - 1e-6) and np.all(implied[mask] <= hi[mask] + 1e-6)


def test_elp_degenerate_ball_matches_exact():
    w = build_cpap()
    K, R = w.kernels(), w.reward_table()
    exact = solve_or_raise(build_exact_lp(K, R, 8))
    p = K.transpose(0, 2, 1, 3)
    elp = solve_or_raise(build_elp(p, np.zeros((20, 3, 2)), R, 8))
    assert elp.objective_value == pytest.approx(exact.objective_value, abs=1e-6)
    check_solution(elp, 8, p, np.zeros((20, 3, 2)))
    check_solution(exact, 8)


def test_elp_vacuous_ball_relaxes():
    w = random_world(np.random.default_rng(3), n_arms=3, budget=1)
    K, R = w.kernels(), w.reward_table()
    exact = solve_or_raise(build_exact_lp(K, R, 1)).objective_value
    elp = solve_or_raise(build_elp(K.transpose(0, 2, 1, 3), np.ones((3, 3, 2)), R, 1)).objective_value
    assert elp >= exact - 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_elp_optimism_when_truth_inside(seed):
    rng = np.random.default_rng(seed)
    w = random_world(rng, n_arms=3, budget=1)
    K, R = w.kernels(), w.reward_table()
    truth = K.transpose(0, 2, 1, 3)
    p_hat = np.clip(truth + rng.normal(0, 0.05, truth.shape), 0.01, None)
    p_hat /= p_hat.sum(axis=-1, keepdims=True)
    width = np.abs(p_hat - truth).max(axis=-1) + 1e-3
    sol = solve_or_raise(build_elp(p_hat, width, R, 1))
    check_solution(sol, 1, p_hat, width)
    assert sol.objective_value >= solve_or_raise(build_exact_lp(K, R, 1)).objective_value - 1e-6


def test_constant_shift_invariance():
    w = build_cpap()
    K, R = w.kernels(), w.reward_table()
    a = solve_or_raise(build_exact_lp(K, R, 8))
    b = solve_or_raise(build_exact_lp(K, R + 0.7, 8))
    assert b.objective_value - a.objective_value == pytest.approx(20 * 0.7, abs=1e-6)
    np.testing.assert_allclose(direct_indices(a), direct_indices(b), atol=1e-6)


def test_direct_index_examples():
    omega = np.zeros((1, 2, 2, 1))
    omega[0, 0, 1, 0], omega[0, 0, 0, 0] = 0.2, 0.3
    sol = OccupancySolution(omega, 0.0, "optimal")
    idx = direct_indices(sol)
    assert idx[0, 0] == pytest.approx(0.4)
    assert idx[0, 1] == 0.0
    omega2 = omega.copy()
    omega2[0, 0, 1, 0] = 0.0
    assert direct_indices(OccupancySolution(omega2, 0.0, "optimal"))[0, 0] == 0.0


def test_select_top_b():
    np.testing.assert_array_equal(select_top_b([0.9, 0.1, 0.5, 0.5], 2), [0, 2])
    np.testing.assert_array_equal(select_top_b([0.3] * 5, 3), [0, 1, 2])
    np.testing.assert_array_equal(select_top_b(np.random.default_rng(0).random(6), 6), np.arange(6))


def test_solver_deterministic():
    w = build_cpap()
    lp = build_elp(w.kernels().transpose(0, 2, 1, 3), np.full((20, 3, 2), 0.2), np.ones((20, 3)), 8)
    np.testing.assert_array_equal(solve_lp(lp).omega, solve_lp(lp).omega)


def test_oracle_budget_cpap():
    w = build_cpap()
    sol = solve_or_raise(build_exact_lp(w.kernels(), w.reward_table(), 8))
    assert sol.mu[..., 1].sum() <= 8 + 1e-6


def test_lp_text_dump(tmp_path, toy_world):
    lp = build_exact_lp(toy_world.kernels(), toy_world.reward_table(), 1)
    path = tmp_path / "toy.lp"
    write_lp_format(lp, path)
    text = path.read_text()
    assert text.splitlines()[1] == "Maximize" and "Subject To" in text and text.rstrip().endswith("End")
    assert text.count(" eq") == lp.A_eq.shape[0]


def test_oracle_indices_helper(toy_world):
    idx, value = oracle_indices(toy_world.kernels(), toy_world.reward_table(), 1)
    assert value == pytest.approx(1.0) and idx[0, 1] == pytest.approx(1.0)
