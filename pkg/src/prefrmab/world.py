"""Ground-truth restless arms, the Bradley-Terry comparison oracle, and the
benchmark environments (App Marketing, CPAP, ARMMAN)."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROW_TOL = 1e-9
BT_LOW = 1.0 / (1.0 + math.e)
BT_HIGH = math.e / (1.0 + math.e)


class ConfigurationError(ValueError):
    """Raised for malformed worlds, ids out of range, or bad experiment settings."""


def _check_kernel(kernel: np.ndarray, n_states: int, name: str) -> np.ndarray:
    kernel = np.array(kernel, dtype=np.float64)
    if kernel.shape != (n_states, n_states):
        raise ConfigurationError(f"{name} has shape {kernel.shape}, expected {(n_states, n_states)}")
    if np.any(kernel < 0):
        raise ConfigurationError(f"{name} has negative entries")
    if np.any(np.abs(kernel.sum(axis=1) - 1.0) > ROW_TOL):
        raise ConfigurationError(f"{name} rows do not sum to 1: {kernel.sum(axis=1)}")
    kernel.setflags(write=False)
    return kernel


@dataclass(frozen=True, eq=False)
class ArmModel:
    """One restless arm: passive/active transition kernels and latent rewards."""

    kernel_passive: np.ndarray
    kernel_active: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        rewards = np.array(self.rewards, dtype=np.float64)
        if rewards.ndim != 1 or rewards.size == 0:
            raise ConfigurationError("rewards must be a non-empty vector")
        if np.any(rewards < 0) or np.any(rewards > 1):
            raise ConfigurationError(f"rewards must lie in [0, 1], got {rewards}")
        rewards.setflags(write=False)
        n = rewards.size
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "kernel_passive", _check_kernel(self.kernel_passive, n, "kernel_passive"))
        object.__setattr__(self, "kernel_active", _check_kernel(self.kernel_active, n, "kernel_active"))

    @property
    def n_states(self) -> int:
        return self.rewards.size

    def kernel(self, a: int) -> np.ndarray:
        if a == 0:
            return self.kernel_passive
        if a == 1:
            return self.kernel_active
        raise ConfigurationError(f"action must be 0 or 1, got {a}")


@dataclass(eq=False)
class WorldModel:
    """N arms sharing a state space, a per-step budget B and the current states."""

    arms: list[ArmModel]
    budget: int
    states: np.ndarray = None
    name: str = "custom"
    arm_types: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.arms:
            raise ConfigurationError("a world needs at least one arm")
        sizes = {arm.n_states for arm in self.arms}
        if len(sizes) != 1:
            raise ConfigurationError(f"all arms must share |S|, got sizes {sorted(sizes)}")
        if not 1 <= self.budget <= len(self.arms):
            raise ConfigurationError(f"budget must be in [1, {len(self.arms)}], got {self.budget}")
        if self.states is None:
            self.states = np.zeros(len(self.arms), dtype=np.int64)
        self.states = np.asarray(self.states, dtype=np.int64).copy()
        if self.states.shape != (len(self.arms),):
            raise ConfigurationError("states must hold one entry per arm")
        if np.any(self.states < 0) or np.any(self.states >= self.n_states):
            raise ConfigurationError(f"initial states out of range: {self.states}")

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    @property
    def n_states(self) -> int:
        return self.arms[0].n_states

    def kernels(self) -> np.ndarray:
        """Stacked kernels indexed ``[arm, action, state, next_state]``."""
        return np.stack([np.stack([arm.kernel_passive, arm.kernel_active]) for arm in self.arms])

    def reward_table(self) -> np.ndarray:
        return np.stack([arm.rewards for arm in self.arms])

    def preference(self, i: tuple[int, int], j: tuple[int, int]) -> float:
        """BT probability that (arm, state) ``i`` beats ``j``, computed on demand."""
        (m, sm), (n, sn) = i, j
        return bt_preference(self.arms[m].rewards[sm], self.arms[n].rewards[sn])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.budget).tobytes())
        h.update(self.states.tobytes())
        h.update(np.ascontiguousarray(self.kernels()).tobytes())
        h.update(np.ascontiguousarray(self.reward_table()).tobytes())
        return h.hexdigest()


def bt_preference(r_m: float, r_n: float) -> float:
    """Bradley-Terry win probability exp(r_m) / (exp(r_m) + exp(r_n)).

    The smaller side is taken as the complement of the larger one, so that
    ``bt_preference(a, b) + bt_preference(b, a) == 1`` holds exactly in floating point.
    """
    if r_m >= r_n:
        em, en = math.exp(r_m), math.exp(r_n)
        return em / (em + en)
    return 1.0 - bt_preference(r_n, r_m)


def sample_comparison(rng: np.random.Generator, p: float) -> int:
    """Bernoulli(p) comparison bit; consumes exactly one uniform draw."""
    return int(rng.random() < p)


def step_arm(rng: np.random.Generator, arm: ArmModel, s: int, a: int) -> int:
    """Sample the next state of ``arm`` from state ``s`` under action ``a``."""
    if not 0 <= s < arm.n_states:
        raise ConfigurationError(f"state {s} out of range for |S|={arm.n_states}")
    row = np.cumsum(arm.kernel(a)[s])
    return min(int(np.searchsorted(row, rng.random(), side="right")), arm.n_states - 1)


# --- App Marketing ---------------------------------------------------------

APP_PASSIVE = [
    [0.7, 0.1, 0.1, 0.1],
    [0.5, 0.3, 0.1, 0.1],
    [0.2, 0.4, 0.3, 0.1],
    [0.1, 0.2, 0.2, 0.5],
]
APP_ACTIVE = [
    [0.1, 0.1, 0.7, 0.1],
    [0.1, 0.1, 0.1, 0.7],
    [0.1, 0.1, 0.1, 0.7],
    [0.05, 0.05, 0.05, 0.85],
]
APP_REWARDS = [0.0, 0.33, 0.66, 1.0]


def build_app_marketing(n_arms: int = 10, budget: int = 4) -> WorldModel:
    arms = [ArmModel(APP_PASSIVE, APP_ACTIVE, APP_REWARDS) for _ in range(n_arms)]
    return WorldModel(arms, budget, name="app_marketing", arm_types=["user"] * n_arms)


# --- CPAP --------------------------------------------------------------------

CPAP_GENERAL_PASSIVE = [
    [0.1385, 0.1, 0.7615],
    [0.1, 0.1, 0.8],
    [0.1257, 0.1245, 0.7498],
]
CPAP_GENERAL_ACTIVE = [
    [0.1, 0.1, 0.8],
    [0.1, 0.1, 0.8],
    [0.1, 0.1, 0.8],
]
CPAP_HIGH_RISK_PASSIVE = [
    [0.7427, 0.0741, 0.1832],
    [0.3399, 0.1634, 0.4967],
    [0.2323, 0.1020, 0.6657],
]
CPAP_HIGH_RISK_ACTIVE = [
    [0.1427, 0.3741, 0.4832],
    [0.1399, 0.1, 0.7601],
    [0.1323, 0.1, 0.7677],
]
CPAP_REWARDS = [0.0, 0.5, 1.0]


def build_cpap(n_general: int = 10, n_high_risk: int = 10, budget: int = 8) -> WorldModel:
    """CPAP adherence world. High-risk patients come first, then general ones."""
    high = [ArmModel(CPAP_HIGH_RISK_PASSIVE, CPAP_HIGH_RISK_ACTIVE, CPAP_REWARDS) for _ in range(n_high_risk)]
    general = [ArmModel(CPAP_GENERAL_PASSIVE, CPAP_GENERAL_ACTIVE, CPAP_REWARDS) for _ in range(n_general)]
    types = ["high_risk"] * n_high_risk + ["general"] * n_general
    return WorldModel(high + general, budget, name="cpap", arm_types=types)


# --- ARMMAN ------------------------------------------------------------------

# (low, high) per cell; equal bounds mark a fixed cell.
_FIX = (0.05, 0.05)
_TOP = [(0.5, 0.95), (0.0, 0.90), _FIX]
_LOW_ROW = [_FIX, (0.1, 0.6), (0.35, 0.85)]

ARMMAN_RANGES = {
    "A": (
        [_TOP, [_FIX, (0.0, 0.5), (0.45, 0.95)], _LOW_ROW],
        [_TOP, [(0.45, 0.95), (0.0, 0.5), _FIX], _LOW_ROW],
    ),
    "B": (
        [_TOP, _LOW_ROW, _LOW_ROW],
        [_TOP, [(0.15, 0.65), (0.3, 0.8), _FIX], _LOW_ROW],
    ),
    "C": (
        [_TOP, _LOW_ROW, _LOW_ROW],
        [_TOP, [(0.05, 0.50), (0.45, 0.90), _FIX], _LOW_ROW],
    ),
}
ARMMAN_REWARDS = [1.0, 0.5, 0.0]
ARMMAN_MAX_RETRIES = 10_000


def sample_ranged_row(rng: np.random.Generator, ranges, max_retries: int = ARMMAN_MAX_RETRIES) -> np.ndarray:
    """Draw one kernel row with every cell inside its (low, high) range.

    Fixed cells keep their value, free cells except the last are uniform in
    their range, and the last free cell absorbs the residual. Rows whose
    residual leaves its range are redrawn.
    """
    lows = np.array([lo for lo, _ in ranges])
    highs = np.array([hi for _, hi in ranges])
    free = np.flatnonzero(highs > lows)
    if free.size == 0:
        if abs(lows.sum() - 1.0) > ROW_TOL:
            raise ConfigurationError(f"fixed row {lows} does not sum to 1")
        return lows.copy()
    drawn, residual = free[:-1], free[-1]
    for _ in range(max_retries):
        row = lows.copy()
        row[drawn] = rng.uniform(lows[drawn], highs[drawn])
        row[residual] = 1.0 - (row.sum() - row[residual])
        if lows[residual] - ROW_TOL <= row[residual] <= highs[residual] + ROW_TOL:
            row[residual] = min(max(row[residual], lows[residual]), highs[residual])
            return row
    raise ConfigurationError(f"could not sample a valid row from ranges {ranges} in {max_retries} tries")


def build_armman(rng: np.random.Generator, counts: dict[str, int] | None = None, budget: int = 10) -> WorldModel:
    """ARMMAN beneficiaries with kernels sampled from the per-type ranges (default A:4, B:4, C:12)."""
    counts = counts or {"A": 4, "B": 4, "C": 12}
    arms, types = [], []
    for kind in ("A", "B", "C"):
        passive_ranges, active_ranges = ARMMAN_RANGES[kind]
        for _ in range(counts.get(kind, 0)):
            passive = np.stack([sample_ranged_row(rng, r) for r in passive_ranges])
            active = np.stack([sample_ranged_row(rng, r) for r in active_ranges])
            arms.append(ArmModel(passive, active, ARMMAN_REWARDS))
            types.append(kind)
    return WorldModel(arms, budget, name="armman", arm_types=types)


# --- custom worlds -----------------------------------------------------------

def world_from_dict(spec: dict) -> WorldModel:
    """Build a world from a mapping.

    Expected keys: ``budget``, ``arms`` (list of objects with
    ``kernel_passive``, ``kernel_active``, ``rewards`` and an optional
    ``count`` replicating the arm), optional ``initial_states``.
    """
    try:
        arms, types = [], []
        for k, entry in enumerate(spec["arms"]):
            arm = ArmModel(entry["kernel_passive"], entry["kernel_active"], entry["rewards"])
            count = int(entry.get("count", 1))
            arms.extend([arm] * count)
            types.extend([entry.get("type", f"type{k}")] * count)
        return WorldModel(arms, int(spec["budget"]), spec.get("initial_states"),
                          name=spec.get("name", "custom"), arm_types=types)
    except KeyError as exc:
        raise ConfigurationError(f"world config is missing key {exc}") from None


def load_world(path: str | Path) -> WorldModel:
    path = Path(path)
    with path.open() as fh:
        return world_from_dict(json.load(fh))


def world_to_dict(world: WorldModel) -> dict:
    return {
        "name": world.name,
        "budget": world.budget,
        "initial_states": world.states.tolist(),
        "arms": [
            {
                "type": t,
                "kernel_passive": arm.kernel_passive.tolist(),
                "kernel_active": arm.kernel_active.tolist(),
                "rewards": arm.rewards.tolist(),
            }
            for arm, t in zip(world.arms, world.arm_types or ["arm"] * world.n_arms)
        ],
    }
