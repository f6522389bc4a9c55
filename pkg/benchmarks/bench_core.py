"""Time the compiled core against the pure-Python fallback.

    python benchmarks/bench_core.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from marketstates import _pycore

try:
    from marketstates import _ccore
except ImportError:
    _ccore = None


def cases(rng):
    r = rng.standard_normal(2068) * 0.03
    yield "local_normalize (2068 returns, n=13)", lambda core: core.local_normalize(r, 13, 5)

    n = 40
    A = rng.random((n, n)) < 0.3
    A = np.triu(A, 1)
    A = A | A.T
    indptr = np.concatenate([[0], np.cumsum(A.sum(axis=1))]).astype(np.int64)
    indices = np.concatenate([np.flatnonzero(row) for row in A]).astype(np.int64)
    labels = np.arange(n, dtype=np.int64)

    def relabel(core):
        table = {}
        for _ in range(103):  # one collection: 103 graphs, h=3
            ids = labels
            for _ in range(3):
                ids = np.asarray(core.wl_relabel(indptr, indices, ids, table))

    yield "wl_relabel (103 graphs x 3 steps, 40 nodes)", relabel

    X = rng.standard_normal((103, 4))
    init = X[rng.choice(103, 4, replace=False)].copy()
    yield "lloyd (103 x 4 points, k=4, x50 restarts)", lambda core: [core.lloyd(X, init.copy(), 300, 1e-10) for _ in range(50)]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    backends = [("python", _pycore)] + ([("cython", _ccore)] if _ccore is not None else [])
    if _ccore is None:
        print("compiled core not built; timing the fallback only")
    print(f"{'kernel':45s} " + " ".join(f"{name:>12s}" for name, _ in backends) + ("     speedup" if _ccore else ""))
    for name, fn in cases(rng):
        times = [min(timeit.repeat(lambda: fn(core), number=1, repeat=args.repeat)) for _, core in backends]
        row = f"{name:45s} " + " ".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) == 2:
            row += f" {times[0] / times[1]:10.1f}x"
        print(row)


if __name__ == "__main__":
    main()
