"""Experiment loop, regret accounting and CSV/JSON output."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rollout
from .policies import POLICIES, OraclePolicy, make_policy, oracle_indices
from .preference import true_reference_column
from .world import (ConfigurationError, WorldModel, build_app_marketing, build_armman, build_cpap, load_world,
                    world_to_dict)

log = logging.getLogger(__name__)

ENVIRONMENTS = ("app_marketing", "cpap", "armman", "custom")
ACCOUNTING = ("all_arms", "active_only")
BENCHMARKS = ("lp", "oracle_rollout")
CSV_COLUMNS = ["episode", "episodic_reward", "cumulative_regret", "index_error", "F_error", "P_error", "R_error"]
OUTPUT_ENV_VAR = "PREFRMAB_OUTPUT_DIR"

# (K, H, epsilon); "desk" keeps H and runs about a quarter of the episodes.
PRESETS = {
    "app_marketing": {"paper": (4000, 100, 1e-5), "desk": (1000, 100, 1e-5)},
    "cpap": {"paper": (300, 1000, 1e-5), "desk": (75, 1000, 1e-5)},
    "armman": {"paper": (20000, 5, 1e-5), "desk": (5000, 5, 1e-5)},
    "custom": {"paper": (300, 100, 1e-5), "desk": (75, 100, 1e-5)},
}


@dataclass
class ExperimentConfig:
    n_episodes: int
    horizon: int
    epsilon: float = 1e-5
    seed: int = 0
    reference_arm: int = 0
    reference_state: int = 0
    reward_accounting: str = "all_arms"
    budget: int | None = None
    benchmark: str = "lp"
    diagnostics: bool = True
    mle_reg: float = 1e-3
    world_config: str | None = None

    @classmethod
    def preset(cls, env: str, name: str = "paper", **overrides) -> "ExperimentConfig":
        try:
            K, H, eps = PRESETS[env][name]
        except KeyError:
            raise ConfigurationError(f"no preset {name!r} for environment {env!r}") from None
        return cls(n_episodes=K, horizon=H, epsilon=eps, **overrides)

    @property
    def total_steps(self) -> int:
        return self.n_episodes * self.horizon

    @property
    def reference(self) -> tuple[int, int]:
        return (self.reference_arm, self.reference_state)

    @property
    def active_only(self) -> bool:
        return self.reward_accounting == "active_only"

    def validate(self, world: WorldModel | None = None) -> None:
        if self.n_episodes < 1 or self.horizon < 1:
            raise ConfigurationError("n_episodes and horizon must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigurationError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.reward_accounting not in ACCOUNTING:
            raise ConfigurationError(f"reward_accounting must be one of {ACCOUNTING}")
        if self.benchmark not in BENCHMARKS:
            raise ConfigurationError(f"benchmark must be one of {BENCHMARKS}")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if world is not None:
            if not (0 <= self.reference_arm < world.n_arms and 0 <= self.reference_state < world.n_states):
                raise ConfigurationError(f"reference {self.reference} outside the world")
            if self.budget is not None and not 1 <= self.budget <= world.n_arms:
                raise ConfigurationError(f"budget {self.budget} outside [1, {world.n_arms}]")


@dataclass
class EpisodeLog:
    episode: int
    episodic_reward: float
    activations: list[int]
    duels: int
    diagnostics: dict = field(default_factory=dict)


@dataclass
class RegretReport:
    benchmark_value: float
    per_episode: np.ndarray
    cumulative: np.ndarray
    slope: float | None


def _streams(seed: int):
    world_ss, sim_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(world_ss), np.random.default_rng(sim_ss)


def make_world(env: str, cfg: ExperimentConfig) -> WorldModel:
    """Deterministic world for ``env``; ARMMAN kernels come from the seed's world stream."""
    world_rng, _ = _streams(cfg.seed)
    if env == "app_marketing":
        world = build_app_marketing()
    elif env == "cpap":
        world = build_cpap()
    elif env == "armman":
        world = build_armman(world_rng)
    elif env == "custom":
        if not cfg.world_config:
            raise ConfigurationError("custom environment needs world_config")
        world = load_world(cfg.world_config)
    else:
        raise ConfigurationError(f"unknown environment {env!r}; choose from {ENVIRONMENTS}")
    if cfg.budget is not None:
        world = WorldModel(world.arms, cfg.budget, world.states, world.name, world.arm_types)
    return world


class _Oracle:
    """Privileged quantities the harness uses for diagnostics and regret."""

    def __init__(self, world: WorldModel, cfg: ExperimentConfig):
        self.kernels = world.kernels()
        rewards = world.reward_table()
        self.indices, self.value = oracle_indices(self.kernels, rewards, world.budget, cfg.active_only)
        self.f_column = true_reference_column(rewards, cfg.reference)
        self.q = rewards - rewards[cfg.reference]
        self.p = self.kernels.transpose(0, 2, 1, 3)

    def diagnostics(self, estimates: dict) -> dict:
        rms = lambda a, b: float(np.sqrt(np.mean((np.asarray(a) - b) ** 2)))
        out = {"index_error": rms(estimates["indices"], self.indices)}
        if "f_hat" in estimates:
            out["F_error"] = rms(estimates["f_hat"], self.f_column)
            out["P_error"] = rms(estimates["p_hat"], self.p)
            out["R_error"] = rms(estimates["q"], self.q)
        return out


def run_experiment(env: str, policy: str, cfg: ExperimentConfig, world: WorldModel | None = None,
                   reference_dump: str | Path | None = None) -> list[EpisodeLog]:
    """Run K episodes of H steps of ``policy`` on ``env``.

    Each episode: plan, then roll out H steps (activate top-B, duel, transition),
    then hand states, actions and comparison bits back to the policy.
    Latent rewards are read here only for logging.
    """
    cfg.validate()
    world = world if world is not None else make_world(env, cfg)
    cfg.validate(world)
    if policy not in POLICIES:
        raise ConfigurationError(f"unknown policy {policy!r}; choose from {POLICIES}")
    _, sim_rng = _streams(cfg.seed)

    agent = make_policy(policy, world, cfg.horizon, cfg.epsilon, cfg.reference, cfg.active_only, cfg.mle_reg)
    oracle = _Oracle(world, cfg) if cfg.diagnostics else None

    N, B, H = world.n_arms, world.budget, cfg.horizon
    cum_kernels = np.ascontiguousarray(np.cumsum(world.kernels(), axis=-1))
    rewards = np.ascontiguousarray(world.reward_table())
    states = world.states.copy()
    n_duel_cols = max(B - 1, 0)
    dump = open(reference_dump, "w") if reference_dump else None

    logs = []
    try:
        for k in range(1, cfg.n_episodes + 1):
            table = np.ascontiguousarray(agent.plan_episode(k), dtype=np.float64)
            u_pivot = sim_rng.random(H)
            u_duel = sim_rng.random((H, n_duel_cols))
            u_trans = sim_rng.random((H, N))
            noise = sim_rng.random((H, N)) if agent.step_noise else None
            path, actions, duels, step_reward = rollout.rollout_episode(
                table, noise, cum_kernels, rewards, states, B, agent.uses_preferences, cfg.active_only,
                u_pivot, u_duel, u_trans)
            diag = oracle.diagnostics(agent.estimates()) if oracle else {}
            agent.observe(path, actions, duels)
            states = np.ascontiguousarray(path[-1])
            logs.append(EpisodeLog(k, float(step_reward.sum()), actions.sum(axis=0).tolist(),
                                   int(duels.shape[0] * duels.shape[1]), diag))
            if dump is not None and hasattr(agent, "preference"):
                dump.write(json.dumps({"episode": k, **agent.preference.dump()}) + "\n")
    finally:
        if dump is not None:
            dump.close()
    if getattr(agent, "fallbacks", 0):
        log.warning("%s used previous indices in %d episodes after LP failures", policy, agent.fallbacks)
    return logs


def fit_loglog_slope(cumulative) -> float | None:
    """Least-squares slope of ln max(R_k, 1) on ln k over the second half of episodes."""
    cumulative = np.asarray(cumulative, dtype=np.float64)
    K = cumulative.size
    if K < 2:
        return None
    t = np.arange(1, K + 1)[K // 2:]
    y = np.log(np.maximum(cumulative[K // 2:], 1.0))
    if np.ptp(y) == 0.0:
        return None
    return float(np.polyfit(np.log(t), y, 1)[0])


def compute_regret(logs: list[EpisodeLog], world: WorldModel, cfg: ExperimentConfig,
                   env: str | None = None) -> RegretReport:
    """Per-episode regret H J* - reward against the exact LP optimum J*.

    With ``cfg.benchmark == "oracle_rollout"`` the benchmark is instead the
    oracle index policy rolled out on the same random stream.
    """
    _, value = oracle_indices(world.kernels(), world.reward_table(), world.budget, cfg.active_only)
    rewards = np.array([lg.episodic_reward for lg in logs])
    if cfg.benchmark == "oracle_rollout":
        bench_cfg = ExperimentConfig(**{**asdict(cfg), "diagnostics": False, "n_episodes": len(logs)})
        bench = run_experiment(env or world.name, "oracle", bench_cfg, world=world)
        target = np.array([lg.episodic_reward for lg in bench])
    else:
        target = np.full(rewards.size, cfg.horizon * value)
    per_episode = target - rewards
    cumulative = np.cumsum(per_episode)
    slope = None if np.allclose(per_episode, 0.0, atol=1e-9) else fit_loglog_slope(cumulative)
    return RegretReport(value, per_episode, cumulative, slope)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".17g")


def logs_to_csv(logs: list[EpisodeLog], report: RegretReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for lg, cum in zip(logs, report.cumulative):
        d = lg.diagnostics
        writer.writerow([lg.episode, _fmt(lg.episodic_reward), _fmt(cum)] +
                        [_fmt(d.get(c)) for c in CSV_COLUMNS[3:]])
    return buf.getvalue()


def output_dir(path: str | Path | None) -> Path:
    override = os.environ.get(OUTPUT_ENV_VAR)
    return Path(override) if override else Path(path or "results")


def emit_outputs(logs: list[EpisodeLog], report: RegretReport, path: str | Path, *, env: str, policy: str,
                 cfg: ExperimentConfig, world: WorldModel, wall_clock: float | None = None) -> tuple[Path, Path]:
    """Write ``<env>_<policy>_seed<seed>.csv`` and its JSON manifest under ``path``."""
    out = Path(path)
    stem = f"{env}_{policy}_seed{cfg.seed}"
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        csv_path.write_text(logs_to_csv(logs, report))
        manifest = {
            "environment": env,
            "policy": policy,
            "seed": cfg.seed,
            "config": asdict(cfg),
            "environment_fingerprint": world.fingerprint(),
            "world": world_to_dict(world),
            "benchmark_value_per_step": report.benchmark_value,
            "loglog_slope": report.slope,
            "total_duels": int(sum(lg.duels for lg in logs)),
            "rollout_backend": rollout.BACKEND,
            "wall_clock_seconds": wall_clock,
            "python": platform.python_version(),
        }
        manifest_path = out / f"{stem}_manifest.json"
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"could not write outputs under {out}: {exc}") from exc
    return csv_path, manifest_path


def run_and_emit(env: str, policy: str, cfg: ExperimentConfig, path: str | Path,
                 reference_dump: str | Path | None = None):
    world = make_world(env, cfg)
    start = time.perf_counter()
    logs = run_experiment(env, policy, cfg, world=world, reference_dump=reference_dump)
    report = compute_regret(logs, world, cfg, env=env)
    elapsed = time.perf_counter() - start
    paths = emit_outputs(logs, report, path, env=env, policy=policy, cfg=cfg, world=world, wall_clock=elapsed)
    return logs, report, paths


def aggregate_csv(reports: list[RegretReport], logs_by_seed: list[list[EpisodeLog]]) -> str:
    rewards = np.array([[lg.episodic_reward for lg in logs] for logs in logs_by_seed])
    cums = np.array([r.cumulative for r in reports])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["episode", "episodic_reward_mean", "episodic_reward_std",
                     "cumulative_regret_mean", "cumulative_regret_std", "n_seeds"])
    for k in range(rewards.shape[1]):
        writer.writerow([k + 1, _fmt(rewards[:, k].mean()), _fmt(rewards[:, k].std()),
                         _fmt(cums[:, k].mean()), _fmt(cums[:, k].std()), rewards.shape[0]])
    return buf.getvalue()


def sweep(env: str, policy: str, cfg: ExperimentConfig, seeds: list[int], path: str | Path,
          jobs: int = 1) -> Path:
    """One run per seed (optionally in parallel processes) plus an aggregate CSV."""
    cfgs = [ExperimentConfig(**{**asdict(cfg), "seed": s}) for s in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_and_emit, [env] * len(cfgs), [policy] * len(cfgs), cfgs,
                                    [path] * len(cfgs)))
    else:
        results = [run_and_emit(env, policy, c, path) for c in cfgs]
    agg = Path(path) / f"{env}_{policy}_aggregate.csv"
    agg.write_text(aggregate_csv([r[1] for r in results], [r[0] for r in results]))
    return agg


def oracle_rollout(world: WorldModel, cfg: ExperimentConfig) -> list[EpisodeLog]:
    return run_experiment(world.name, "oracle", cfg, world=world)


__all__ = [
    "ExperimentConfig", "EpisodeLog", "RegretReport", "OraclePolicy", "PRESETS", "CSV_COLUMNS",
    "make_world", "run_experiment", "compute_regret", "fit_loglog_slope", "emit_outputs", "sweep",
]
