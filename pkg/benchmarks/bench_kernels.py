"""Compare JIT-compiled kernels with their pure-numpy bodies.

Run with ``python3 benchmarks/bench_kernels.py``.  Each kernel is timed on a
preset-sized workload after one warm-up call; outputs of both paths are
checked for equality before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cafedsim import kernels
from cafedsim._accel import USE_NUMBA, python_impl
from cafedsim.availability import build_population, client_uniforms


def _time(fn, args, repeat):
    fn(*args)  # warm-up (triggers compilation)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def workloads(n_clients, n_rounds, seed=0):
    spec = build_population(n_clients, seed=seed)
    chains = spec.chains
    p_a = np.array([c.p_stay_active for c in chains])
    p_i = np.array([c.p_stay_inactive for c in chains])
    u = client_uniforms(n_rounds, n_clients, seed)
    trace = kernels.markov_walk(u, p_a, p_i, spec.pi_active)
    rng = np.random.default_rng(seed)
    alpha = np.full(n_clients, 1.0 / n_clients)
    gap = rng.random(n_clients) * 0.1
    order = np.argsort(-spec.lambda2, kind="stable").astype(np.int64)
    q = alpha / spec.pi_active
    return {
        "markov_walk": (kernels.markov_walk, (u, p_a, p_i, spec.pi_active)),
        "transition_counts": (kernels.transition_counts, (trace,)),
        "greedy_exclusion": (
            kernels.greedy_exclusion,
            (q, alpha, gap, float(gap.max()), spec.pi_active, order, 0.0, 1.0),
        ),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--clients", type=int, default=24)
    ap.add_argument("--rounds", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not USE_NUMBA:
        print("numba disabled (CAFEDSIM_NUMBA=0 or not installed); timings compare identical code")
    print(f"{'kernel':<20}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, (fn, fargs) in workloads(args.clients, args.rounds).items():
        py = python_impl(fn)
        a, b = fn(*fargs), py(*fargs)
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            assert np.array_equal(np.asarray(x), np.asarray(y)), name
        t_jit = _time(fn, fargs, args.repeat)
        t_py = _time(py, fargs, args.repeat)
        print(f"{name:<20}{1e3 * t_jit:>12.3f}{1e3 * t_py:>12.3f}{t_py / t_jit:>10.1f}")


if __name__ == "__main__":
    main()
