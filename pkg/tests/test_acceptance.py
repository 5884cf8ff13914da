"""Acceptance criteria, one test each; every test records a PASS/FAIL line in the summary."""

import time

import numpy as np
import pytest

from prefrmab.harness import ExperimentConfig, compute_regret, emit_outputs, make_world, run_experiment
from prefrmab.planner import build_elp, build_exact_lp, solve_or_raise
from prefrmab.policies import DOPLPolicy, bt_gradient, bt_log_likelihood, mle_fit_rewards
from prefrmab.preference import LIPSCHITZ, ComparisonLedger, infer_preference, q_value
from prefrmab.transitions import TransitionEstimate, in_confidence_set
from prefrmab.world import BT_HIGH, BT_LOW, ArmModel, build_cpap, bt_preference

from test_planner import random_feasible_mu

pytestmark = pytest.mark.acceptance

TOY_F = np.array([
    [0.50, 0.30, 0.33, 0.24],
    [0.70, 0.50, 0.54, 0.43],
    [0.67, 0.46, 0.50, 0.39],
    [0.76, 0.57, 0.61, 0.50],
])


def test_01_toy_matrix(criterion):
    t0 = time.perf_counter()
    f, _ = infer_preference(TOY_F[0, 1], TOY_F[0, 2], 0.0, 0.0)
    complementary = bool(np.all(TOY_F + TOY_F.T == 1.0))
    diagonal = bool(np.all(np.diag(TOY_F) == 0.5))
    elapsed = time.perf_counter() - t0
    ok = abs(f - 0.5347) <= 0.005 and complementary and diagonal and elapsed < 1
    assert criterion(1, "toy-matrix inference and complementarity", ok,
                     f"F(2,3) inferred {f:.6f}, printed {TOY_F[1, 2]} (off by {abs(f - TOY_F[1, 2]):.4f} "
                     f"from two-decimal inputs), {elapsed:.3f}s")


def test_02_lipschitz_grid(criterion):
    t0 = time.perf_counter()
    grid = np.linspace(BT_LOW, BT_HIGH, 1000)
    h = 1e-7
    x, y = np.meshgrid(grid, grid, indexing="ij")
    f = lambda a, b: infer_preference(a, b, 0, 0)[0]
    dfdx = (f(x + h, y) - f(x - h, y)) / (2 * h)
    dfdy = (f(x, y + h) - f(x, y - h)) / (2 * h)
    peak = float(max(np.abs(dfdx).max(), np.abs(dfdy).max()))
    elapsed = time.perf_counter() - t0
    ok = peak <= LIPSCHITZ + 1e-3 and elapsed < 10
    assert criterion(2, "Lipschitz bound of the inference map", ok, f"max partial {peak:.5f}, {elapsed:.2f}s")


def test_03_inference_error_bound(criterion):
    """Perturbed estimates go through the same clamp to the BT range as the learner's estimates."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    r = rng.random((1000, 3))
    d = rng.uniform(0, 0.1, (1000, 2))
    sign = rng.choice([-1.0, 1.0], (1000, 2))
    truth_x = np.array([bt_preference(a, b) for a, b in r[:, [0, 1]]])
    truth_y = np.array([bt_preference(a, b) for a, b in r[:, [0, 2]]])
    target = np.array([bt_preference(a, b) for a, b in r[:, [1, 2]]])
    x = np.clip(truth_x + sign[:, 0] * d[:, 0], BT_LOW, BT_HIGH)
    y = np.clip(truth_y + sign[:, 1] * d[:, 1], BT_LOW, BT_HIGH)
    f_inf, d_inf = infer_preference(x, y, d[:, 0], d[:, 1])
    inside = np.abs(f_inf - target) <= d_inf
    elapsed = time.perf_counter() - t0
    ok = bool(inside.all()) and elapsed < 10
    worst = float(np.max(np.abs(f_inf - target) / d_inf))
    assert criterion(3, "inference error within 1.3 (d1 + d2)", ok,
                     f"{inside.mean():.1%} of 1000, worst ratio {worst:.3f}, {elapsed:.2f}s")


def test_04_q_range(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    pairs = rng.random((10_000, 2))
    f = np.array([bt_preference(a, b) for a, b in pairs])
    q = q_value(f)
    order = np.argsort(f, kind="stable")
    monotone = bool(np.all(np.diff(q[order]) >= 0))
    elapsed = time.perf_counter() - t0
    ok = bool(np.all((q >= -1) & (q <= 1))) and monotone and elapsed < 5
    assert criterion(4, "Q range and monotonicity", ok, f"q in [{q.min():.4f}, {q.max():.4f}], {elapsed:.2f}s")


def test_05_confidence_coverage(criterion):
    t0 = time.perf_counter()
    eps, trials, steps = 0.05, 200, 10_000
    passive = np.array([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.2, 0.7]])
    active = np.array([[0.1, 0.3, 0.6], [0.3, 0.3, 0.4], [0.5, 0.25, 0.25]])
    arm = ArmModel(passive, active, [0.0, 0.5, 1.0])
    truth = np.stack([arm.kernel_passive, arm.kernel_active], axis=1)  # [s, a, s']
    cum = np.cumsum(np.stack([passive, active]), axis=-1)
    rng = np.random.default_rng(5)
    covered = 0
    for _ in range(trials):
        est = TransitionEstimate(1, 3, steps, eps)
        actions = rng.integers(0, 2, steps)
        u = rng.random(steps)
        s = 0
        for h in range(steps):
            nxt = min(int(np.searchsorted(cum[actions[h], s], u[h], side="right")), 2)
            est.transitions[0, s, actions[h], nxt] += 1
            s = nxt
        # the counts collected over one episode of length H feed episode k = 2
        covered += in_confidence_set(est, truth, k=2)
    rate = covered / trials
    elapsed = time.perf_counter() - t0
    ok = rate >= 1 - 2 * eps and elapsed < 60
    assert criterion(5, "transition confidence coverage", ok, f"coverage {rate:.3f} over {trials}, {elapsed:.1f}s")


def test_06_lp_dominance_and_degenerate_ball(criterion):
    t0 = time.perf_counter()
    w = build_cpap()
    K, R = w.kernels(), w.reward_table()
    exact = solve_or_raise(build_exact_lp(K, R, w.budget)).objective_value
    rng = np.random.default_rng(6)
    worst_gap = min(exact - float(np.sum(random_feasible_mu(rng, K, w.budget) * R[..., None]))
                    for _ in range(1000))
    elp = solve_or_raise(build_elp(K.transpose(0, 2, 1, 3), np.zeros((20, 3, 2)), R, w.budget)).objective_value
    elapsed = time.perf_counter() - t0
    ok = worst_gap >= -1e-6 and abs(elp - exact) <= 1e-6 and elapsed < 60
    assert criterion(6, "LP dominance and degenerate-ball equivalence", ok,
                     f"min gap {worst_gap:.3g}, |ELP - LP| {abs(elp - exact):.2g}, {elapsed:.1f}s")


def test_07_protocol_invariants(criterion, monkeypatch):
    cfg = ExperimentConfig.preset("cpap", "desk", diagnostics=False)
    problems, steps = [], 0
    original = DOPLPolicy.observe

    def checked(self, states, actions, duels):
        nonlocal steps
        H = actions.shape[0]
        steps += H
        if not np.all(actions.sum(axis=1) == 8):
            problems.append("activation count")
        if duels.shape != (H, 7, 3):
            problems.append("duel count")
        before_t, before_d = self.transitions.visits.sum(), self.ledger.total_duels()
        original(self, states, actions, duels)
        if self.transitions.visits.sum() - before_t != 20 * H:
            problems.append("transition count")
        if self.ledger.total_duels() - before_d != 7 * H:
            problems.append("ledger count")

    monkeypatch.setattr(DOPLPolicy, "observe", checked)
    logs = run_experiment("cpap", "dopl", cfg)
    ok = not problems and steps == cfg.total_steps and all(lg.duels == cfg.horizon * 7 for lg in logs)
    assert criterion(7, "protocol invariants on a CPAP desk run", ok,
                     f"{steps} steps checked" + (f", problems: {sorted(set(problems))}" if problems else ""))


def _final_quartile(logs):
    rewards = np.array([lg.episodic_reward for lg in logs])
    return rewards[-(len(rewards) // 4):].mean()


def test_08_desk_regret(criterion):
    t0 = time.perf_counter()
    seeds = range(5)
    slopes, dopl_q, rand_q = [], [], []
    bench = None
    for seed in seeds:
        cfg = ExperimentConfig(n_episodes=150, horizon=300, epsilon=1e-5, seed=seed, diagnostics=False)
        w = make_world("cpap", cfg)
        logs = run_experiment("cpap", "dopl", cfg, world=w)
        report = compute_regret(logs, w, cfg)
        slopes.append(report.slope)
        bench = cfg.horizon * report.benchmark_value
        dopl_q.append(_final_quartile(logs))
        rand_q.append(_final_quartile(run_experiment("cpap", "random", cfg, world=w)))
    slope = float(np.mean(slopes))
    dopl, rand = float(np.mean(dopl_q)), float(np.mean(rand_q))
    elapsed = time.perf_counter() - t0
    checks = {"slope<=0.85": slope <= 0.85, "vs RANDOM>=1.05": dopl >= 1.05 * rand,
              "vs H*J*>=0.85": dopl >= 0.85 * bench, "time<=15min": elapsed <= 900}
    detail = (f"slope {slope:.3f}, DOPL {dopl:.1f}, RANDOM {rand:.1f} (x{dopl / rand:.3f}), "
              f"H*J* {bench:.1f} ({dopl / bench:.1%}); failed: {[k for k, v in checks.items() if not v] or 'none'}"
              f", {elapsed:.0f}s")
    assert criterion(8, "desk-scale CPAP regret behaviour", all(checks.values()), detail)


def test_09_mle_correctness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        size = int(rng.integers(3, 12))
        C = np.triu(rng.integers(0, 20, (size, size)), 1)
        W = np.minimum(C, rng.integers(0, 20, (size, size))) * (C > 0)
        r = rng.normal(0, 1, size)
        g = bt_gradient(r, C, W, 1e-3)
        h = 1e-5
        fd = np.array([(bt_log_likelihood(r + h * e, C, W, 1e-3) - bt_log_likelihood(r - h * e, C, W, 1e-3)) / (2 * h)
                       for e in np.eye(size)])
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0))))
    led = ComparisonLedger(3, 2)
    for i in range(6):
        for j in range(i + 1, 6):
            for y in (1, 0, 0, 1):
                led.record_duel(i, j, y)
    fit = mle_fit_rewards(led)
    zero = float(np.abs(fit.r_hat).max())
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and zero <= 1e-9 and elapsed < 30
    assert criterion(9, "MLE gradient and symmetric fit", ok,
                     f"max relative gradient error {worst:.2e}, max |r| on symmetric data {zero:.1e}, {elapsed:.1f}s")


def test_10_reproducibility(criterion, tmp_path):
    outputs = []
    for run in ("a", "b"):
        cfg = ExperimentConfig(n_episodes=8, horizon=50, epsilon=1e-5, seed=123)
        w = make_world("armman", cfg)
        logs = run_experiment("armman", "dopl", cfg, world=w)
        csv_path, _ = emit_outputs(logs, compute_regret(logs, w, cfg), tmp_path / run, env="armman", policy="dopl",
                                   cfg=cfg, world=w)
        outputs.append(csv_path.read_bytes())
    ok = outputs[0] == outputs[1] and len(outputs[0]) > 0
    assert criterion(10, "byte-identical CSV on replay", ok, f"{len(outputs[0])} bytes")
