"""Time one CPAP episode rollout on the compiled and pure-Python backends.

    python benchmarks/bench_rollout.py [--horizon 1000] [--repeats 5]
"""

import argparse
import timeit

import numpy as np

from prefrmab import rollout
from prefrmab.policies import oracle_indices
from prefrmab.world import build_cpap


def inputs(horizon: int, seed: int = 0) -> dict:
    w = build_cpap()
    rng = np.random.default_rng(seed)
    table, _ = oracle_indices(w.kernels(), w.reward_table(), w.budget)
    return dict(
        index_table=np.ascontiguousarray(table),
        step_noise=None,
        cum_kernels=np.ascontiguousarray(np.cumsum(w.kernels(), axis=-1)),
        rewards=np.ascontiguousarray(w.reward_table()),
        states0=np.zeros(w.n_arms, dtype=np.int64),
        budget=w.budget,
        duel=True,
        active_only=False,
        u_pivot=rng.random(horizon),
        u_duel=rng.random((horizon, w.budget - 1)),
        u_trans=rng.random((horizon, w.n_arms)),
    )


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--horizon", type=int, default=1000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    kw = inputs(args.horizon)
    backends = {"python": rollout.python_rollout_episode}
    compiled = rollout.compiled_rollout_episode()
    if compiled is not None:
        backends["cython"] = compiled
    else:
        print("compiled extension not built; timing the Python backend only")

    results = {}
    for name, fn in backends.items():
        times = timeit.repeat(lambda: fn(**kw), number=1, repeat=args.repeats)
        results[name] = min(times)
        print(f"{name:>7}: {results[name] * 1e3:9.3f} ms per {args.horizon}-step episode (best of {args.repeats})")
    if len(results) == 2:
        same = all(np.array_equal(a, b) for a, b in zip(backends["python"](**kw), backends["cython"](**kw)))
        print(f"speedup: {results['python'] / results['cython']:.1f}x, outputs identical: {same}")


if __name__ == "__main__":
    main()
