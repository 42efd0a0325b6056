"""Benchmark: compiled pattern-matching kernel vs the pure-Python fallback.

Usage: python3 benchmarks/bench_match.py [--nodes 3000] [--repeat 5]

Builds random property graphs, compiles a few representative patterns, and
times only the enumeration kernels on identical inputs.
"""

from __future__ import annotations

import argparse
import random
import statistics
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from helpers import random_kb, random_pattern  # noqa: E402

from milepost._match import pure  # noqa: E402
from milepost.graph import _candidates  # noqa: E402

try:
    from milepost._match import _speedup
except ImportError:
    _speedup = None


def kernel_inputs(query, kg):
    node_ids = sorted(kg.nodes)
    index_of = {nid: i for i, nid in enumerate(node_ids)}
    rels = sorted(kg.relations)
    rel_of = {rel: i for i, rel in enumerate(rels)}
    n_rel = max(1, len(rels))
    n_nodes = max(1, len(node_ids))
    edge_keys = {
        (index_of[s] * n_rel + rel_of[r]) * n_nodes + index_of[d]
        for s, r, d in kg.edges
    }
    variables = [n.var for n in query.pattern_nodes]
    var_level = {var: i for i, var in enumerate(variables)}
    candidates = [
        sorted(index_of[nid] for nid in _candidates(query.node(var), kg))
        for var in variables
    ]
    checks = [[] for _ in variables]
    for e in query.pattern_edges:
        src_level, dst_level = var_level[e.src], var_level[e.dst]
        rel = rel_of[e.rel]
        if src_level == dst_level:
            checks[src_level].append((src_level, rel, 1))
        elif src_level < dst_level:
            checks[dst_level].append((src_level, rel, 1))
        else:
            checks[src_level].append((dst_level, rel, 0))
    return candidates, checks, edge_keys, n_rel, n_nodes


def time_kernel(fn, args, repeat):
    best = []
    rows = 0
    for _ in range(repeat):
        start = time.perf_counter()
        rows = len(fn(*args))
        best.append(time.perf_counter() - start)
    return statistics.median(best), rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--nodes", type=int, default=3000)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=13)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    print(f"graph: ~{args.nodes} nodes; median of {args.repeat} runs per pattern\n")
    header = f"{'pattern':>8} {'rows':>8} {'pure (ms)':>12} {'cython (ms)':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))

    for n_vars in (2, 3, 4):
        kg = random_kb(rng, args.nodes)
        query = random_pattern(rng, kg, n_vars)
        inputs = kernel_inputs(query, kg)
        pure_time, rows = time_kernel(pure.find_matches, inputs, args.repeat)
        if _speedup is None:
            print(f"{n_vars:>8} {rows:>8} {pure_time * 1e3:>12.2f} {'n/a':>12} {'n/a':>9}")
            continue
        fast_time, fast_rows = time_kernel(_speedup.find_matches, inputs, args.repeat)
        assert rows == fast_rows, "kernels disagree"
        speedup = pure_time / fast_time if fast_time > 0 else float("inf")
        print(
            f"{n_vars:>8} {rows:>8} {pure_time * 1e3:>12.2f} "
            f"{fast_time * 1e3:>12.2f} {speedup:>8.1f}x"
        )

    if _speedup is None:
        print("\ncompiled kernel not built; run: python3 setup.py build_ext --inplace")


if __name__ == "__main__":
    main()
