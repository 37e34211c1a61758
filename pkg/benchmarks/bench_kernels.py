#!/usr/bin/env python3
"""Benchmark the compiled traversal kernels against the pure-Python fallback.

Generates a synthetic temporal graph, then times walk sampling, body
sampling, and rule grounding in both implementations and verifies that the
outputs are bit-identical. Run after `pip install -e .`:

    python benchmarks/bench_kernels.py [--facts 60000] [--repeat 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from tkgfuse._kernels import available_backends, mix_seed
from tkgfuse.data import TemporalKG, augment_inverse


def build_graph(n_facts: int, seed: int = 0) -> TemporalKG:
    rng = np.random.default_rng(seed)
    n_entities, n_relations, n_snapshots = 2000, 24, 200
    raw = np.stack(
        [
            rng.integers(0, n_entities, n_facts * 2),
            rng.integers(0, n_relations, n_facts * 2),
            rng.integers(0, n_entities, n_facts * 2),
            rng.integers(0, n_snapshots, n_facts * 2),
        ],
        axis=1,
    ).astype(np.int64)
    facts = np.unique(raw, axis=0)[:n_facts]
    return augment_inverse(TemporalKG(facts, n_entities, n_relations))


def bench(fn, repeat: int):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--facts", type=int, default=60000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled kernels not built; only the pure fallback is available")
    kg = build_graph(args.facts)
    idx = kg.index
    n_rel2 = kg.n_rel2
    body2 = np.array([1, 3], dtype=np.int64)
    body3 = np.array([2, 5, 1], dtype=np.int64)
    subjects = np.unique(kg.facts[:, 0])[:200]

    tasks = {
        "sample_walks (len 3 x 2000)": lambda mod: mod.sample_walks(
            idx.re_s, idx.re_o, idx.re_t, int(idx.rel_ptr[1]), int(idx.rel_ptr[2]),
            idx.s_ptr, idx.ns_r, idx.ns_o, idx.ns_t,
            kg.relation_count, 3, 2000, 0.1, mix_seed(7, 1),
        ),
        "sample_bodies (len 3 x 5000)": lambda mod: mod.sample_bodies(
            idx.re_s, idx.re_o, idx.re_t, int(idx.rel_ptr[2]), int(idx.rel_ptr[3]),
            idx.sr_key, idx.sr_t, idx.sr_o, n_rel2, body3, 5000, mix_seed(7, 2),
        ),
        "ground_rule (len 2 x 200 subjects)": lambda mod: [
            mod.ground_rule(
                idx.sr_key, idx.sr_t, idx.sr_o, n_rel2, int(s), body2, 0, 150, 1000
            )[0]
            for s in subjects
        ],
    }

    print(f"{args.facts} facts, kernels: {', '.join(backends)}")
    header = f"{'task':<36s}" + "".join(f"{name:>12s}" for name in backends) + f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))
    for label, task in tasks.items():
        times = {}
        outputs = {}
        for name, mod in backends.items():
            times[name], outputs[name] = bench(lambda m=mod: task(m), args.repeat)
        row = f"{label:<36s}" + "".join(f"{times[name] * 1e3:>10.1f}ms" for name in backends)
        if len(backends) == 2:
            pure_out, comp_out = outputs["pure"], outputs["compiled"]
            if isinstance(pure_out, list):
                same = all(np.array_equal(a, b) for a, b in zip(pure_out, comp_out))
            else:
                same = np.array_equal(pure_out, comp_out)
            row += f"{times['pure'] / times['compiled']:>9.1f}x"
            row += "  (outputs match)" if same else "  (MISMATCH!)"
        print(row)


if __name__ == "__main__":
    main()
