"""Time exact search_both over a large synthetic gallery.

    python scripts/bench_search.py [--n 1000000] [--dim 64] [--k 16] [--queries 20]
"""

import argparse
import time

import numpy as np

from georag.vecstore import IndexConfig, build_index_from_arrays


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--queries", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((args.n, args.dim), dtype=np.float32)
    t0 = time.perf_counter()
    index = build_index_from_arrays(np.arange(args.n), np.zeros((args.n, 2)), x, IndexConfig(args.dim))
    print(f"build: {time.perf_counter() - t0:.2f}s")
    del x

    queries = rng.standard_normal((args.queries + 2, args.dim), dtype=np.float32)
    for q in queries[:2]:
        index.search_both(q, args.k, args.k)
    times = []
    for q in queries[2:]:
        t0 = time.perf_counter()
        index.search_both(q, args.k, args.k)
        times.append(1000 * (time.perf_counter() - t0))
    print(f"search_both n={args.n} dim={args.dim} k={args.k}: "
          f"median {np.median(times):.1f} ms, p90 {np.percentile(times, 90):.1f} ms")


if __name__ == "__main__":
    main()
