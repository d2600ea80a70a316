"""Benchmark: compiled rollout kernel vs the pure-Python reference.

Times the planner's dominant workloads — the exhaustive QoE-bound enumeration
(|ladder|^(lookahead+1) full-horizon rollouts) and a GA-sized population
evaluation — on both backends and reports the speedup.

Run: python benchmarks/bench_kernel.py
"""

import time

import numpy as np

from beabr.kernel import pyrollout

try:
    from beabr.kernel import _rollout as compiled
except ImportError:
    compiled = None


def make_problem(n=6, n_levels=5, seed=0):
    rng = np.random.default_rng(seed)
    sizes = np.sort(rng.uniform(8e4, 9e5, (n, n_levels)), axis=1)
    delays = rng.uniform(0.3, 3.5, (n, n_levels))
    quality = np.asarray([350.0, 600.0, 1000.0, 2000.0, 3000.0])[:n_levels]
    return sizes, delays, quality


def enumeration_plans(n, n_levels):
    total = n_levels ** n
    g = np.arange(total, dtype=np.int64)
    idx = np.empty((total, n), dtype=np.int32)
    for pos in range(n):
        idx[:, pos] = (g // n_levels ** (n - 1 - pos)) % n_levels
    return idx


def run_case(mod, idx, waits, sizes, delays, quality, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        qoe, was = mod.evaluate_plans(idx, waits, sizes, delays, quality,
                                      2.133, 20.0, 4.0, 1.2e6, 1000.0, True,
                                      1.0, 600.0, 1.0)
        best = min(best, time.perf_counter() - t0)
    return best, qoe, was


def main():
    print(f"compiled backend available: {compiled is not None}")
    cases = [
        ("qoe-bound enumeration (5^6 plans)", enumeration_plans(6, 5),
         np.zeros((5 ** 6, 6)), 3),
        ("GA population (50 plans)",
         np.random.default_rng(1).integers(0, 5, (50, 6)).astype(np.int32),
         np.random.default_rng(2).choice([0.0, 0.25, 0.5, 1.0, 2.0, 4.0], (50, 6)), 20),
    ]
    sizes, delays, quality = make_problem()
    print(f"{'case':<38s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}")
    for label, idx, waits, repeats in cases:
        t_py, q_py, w_py = run_case(pyrollout, idx, waits, sizes, delays, quality,
                                    max(1, repeats // 3))
        if compiled is None:
            print(f"{label:<38s} {t_py * 1e3:9.2f}ms {'-':>10s} {'-':>8s}")
            continue
        t_c, q_c, w_c = run_case(compiled, idx, waits, sizes, delays, quality, repeats)
        assert np.array_equal(q_py, q_c) and np.array_equal(w_py, w_c), \
            "backends disagree"
        print(f"{label:<38s} {t_py * 1e3:9.2f}ms {t_c * 1e3:9.2f}ms {t_py / t_c:7.1f}x")
    print("results identical across backends: yes" if compiled is not None else "")


if __name__ == "__main__":
    main()
