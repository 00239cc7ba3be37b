"""Sweep nprobe and report IVF recall@k against exact search on clustered data.

    python scripts/ivf_recall.py [--n 10000] [--dim 32] [--clusters 32] [--nlist 64]
"""

import argparse
import time

import numpy as np

from georag.synthetic import clustered_vectors
from georag.vecstore import IndexConfig, IndexMode, build_index_from_arrays


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--clusters", type=int, default=32)
    ap.add_argument("--nlist", type=int, default=64)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    x = clustered_vectors(args.n, args.dim, args.clusters, args.seed)
    ids, coords = np.arange(args.n), np.zeros((args.n, 2))
    flat = build_index_from_arrays(ids, coords, x, IndexConfig(args.dim))
    t0 = time.perf_counter()
    ivf = build_index_from_arrays(ids, coords, x, IndexConfig(args.dim, IndexMode.IVF, ivf_nlist=args.nlist,
                                                               rng_seed=args.seed))
    print(f"trained nlist={args.nlist} in {time.perf_counter() - t0:.2f}s; "
          f"list sizes min {ivf.list_sizes().min()} max {ivf.list_sizes().max()}")

    rng = np.random.default_rng(args.seed + 1)
    queries = x[rng.choice(args.n, args.queries, replace=False)]
    queries = queries + rng.normal(0, 0.5, queries.shape).astype(np.float32)
    truth = [{nb.id for nb in flat.search_similar(q, args.k)} for q in queries]
    for nprobe in (1, 2, 4, 8, 16, 32):
        if nprobe > args.nlist:
            break
        probe = ivf.with_nprobe(nprobe)
        t0 = time.perf_counter()
        hits = sum(len(t & {nb.id for nb in probe.search_similar(q, args.k)}) for q, t in zip(queries, truth))
        ms = 1000 * (time.perf_counter() - t0) / len(queries)
        print(f"nprobe={nprobe:>3}  recall@{args.k}={hits / (args.k * len(queries)):.4f}  {ms:.2f} ms/query")


if __name__ == "__main__":
    main()
