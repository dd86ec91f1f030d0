"""Compare the numba and numpy kernel backends.

Times each kernel on synthetic workloads sized like a real run (graph
joins over a few hundred thousand edges, dense tables up to 2^20) and
prints a table of per-call times and speedups. JIT compilation happens
during warmup, outside the timed region.

Usage: python benchmarks/bench_kernels.py [--scale N] [--repeat R]
"""

import argparse
import time

import numpy as np

from kgrules import kernels


def _join_workload(rng, scale):
    n_entities = 20_000 * scale
    n_edges = 200_000 * scale
    subs = np.sort(rng.integers(0, n_entities, size=n_edges).astype(np.int64))
    objs = rng.integers(0, n_entities, size=n_edges).astype(np.int64)
    order = np.lexsort((objs, subs))
    subs, objs = subs[order], objs[order]
    offsets = np.zeros(n_entities + 1, dtype=np.int64)
    np.cumsum(np.bincount(subs, minlength=n_entities), out=offsets[1:])
    keys = subs * n_entities + objs
    bindings = np.full((50_000 * scale, 3), -1, dtype=np.int64)
    bindings[:, 0] = rng.integers(0, n_entities, size=bindings.shape[0])
    return n_entities, offsets, objs, subs, keys, bindings


def build_cases(scale, rng):
    n_entities, offsets, objs, subs, keys, bindings = _join_workload(rng, scale)
    expanded = kernels.IMPLEMENTATIONS["numpy"]["expand_bindings"](
        bindings, 0, -1, 1, offsets, objs
    )
    marginals = rng.uniform(0.05, 0.95, size=20)
    table = kernels.IMPLEMENTATIONS["numpy"]["independent_table"](marginals)
    keep = np.array([1, 4, 7, 9, 12, 15], dtype=np.int64)
    return {
        "expand_bindings": (bindings, 0, -1, 1, offsets, objs),
        "filter_bindings": (expanded, 0, -1, 1, -1, keys, n_entities),
        "cross_bindings": (bindings[:2_000], 1, objs[:500], 2, subs[:500]),
        "independent_table": (marginals,),
        "mass_any": (table, 0b10110),
        "bit_marginals": (table, 20),
        "marginalize_table": (table, keep),
    }


def bench(fn, args, repeat):
    fn(*args)  # warmup (compiles the numba path)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scale", type=int, default=1, help="workload size multiplier")
    parser.add_argument("--repeat", type=int, default=5, help="timed repetitions, best kept")
    args = parser.parse_args()

    rng = np.random.default_rng(42)
    cases = build_cases(args.scale, rng)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (active: {kernels.active_backend()})")
    header = f"{'kernel':<20}" + "".join(f"{b:>12}" for b in backends)
    if "numba" in backends:
        header += f"{'speedup':>10}"
    print(header)
    for name, call_args in cases.items():
        times = {}
        for backend in backends:
            times[backend] = bench(kernels.IMPLEMENTATIONS[backend][name], call_args, args.repeat)
        row = f"{name:<20}" + "".join(f"{times[b] * 1e3:>10.3f}ms" for b in backends)
        if "numba" in times:
            row += f"{times['numpy'] / times['numba']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
