"""Time the tree kernels with numba against the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--rows 2000] [--repeat 5]

The kernel rows call both implementations in this process; the forest rows
run a full ``forest_fit`` in a child process with and without
``BATTRUL_DISABLE_NUMBA=1`` so the flag is exercised the way users set it.
Compilation happens once before timing (numba caches it on disk).
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from battrul import _jit, kernels
from battrul.baselines import tree_fit

_FOREST_CHILD = """
import json, sys, time
import numpy as np
from battrul import _jit
from battrul.baselines import forest_fit
rows, trees = int(sys.argv[1]), int(sys.argv[2])
r = np.random.default_rng(0)
X = r.random((rows, 5)); Y = r.random((rows, 3))
forest_fit(X[:50], Y[:50], n_trees=1)          # warm-up / compile
t = time.perf_counter()
forest_fit(X, Y, n_trees=trees, seed=1)
print(json.dumps({"numba": _jit.USE_NUMBA, "seconds": time.perf_counter() - t}))
"""


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def forest_time(rows, trees, disable):
    env = dict(os.environ)
    env.pop("BATTRUL_DISABLE_NUMBA", None)
    if disable:
        env["BATTRUL_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", _FOREST_CHILD, str(rows), str(trees)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)["seconds"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=2000)
    ap.add_argument("--queries", type=int, default=20000)
    ap.add_argument("--trees", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    if not _jit.HAS_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    X = rng.random((args.rows, 5))
    Y = rng.random((args.rows, 3))
    feats = np.arange(5, dtype=np.int64)
    kernels.best_split_jit(X[:10], Y[:10], feats, 1)

    tree = tree_fit(X, Y, max_depth=None, min_samples_leaf=1)
    Q = np.ascontiguousarray(rng.random((args.queries, 5)))
    route = (tree.feature, tree.threshold, tree.left, tree.right)
    kernels.route_rows_jit(Q[:10], *route)

    results = [
        (f"best_split ({args.rows} rows x 5 features)",
         best_of(lambda: kernels.best_split_numpy(X, Y, feats, 2), args.repeat),
         best_of(lambda: kernels.best_split_jit(X, Y, feats, 2), args.repeat)),
        (f"route_rows ({args.queries} rows, {tree.n_nodes} nodes, depth {tree.depth()})",
         best_of(lambda: kernels.route_rows_numpy(Q, *route), args.repeat),
         best_of(lambda: kernels.route_rows_jit(Q, *route), args.repeat)),
        (f"forest_fit ({args.trees} trees, {args.rows} rows)",
         forest_time(args.rows, args.trees, disable=True),
         forest_time(args.rows, args.trees, disable=False)),
    ]
    print(f"{'benchmark':<52}{'numpy s':>10}{'numba s':>10}{'speedup':>9}")
    for name, slow, fast in results:
        print(f"{name:<52}{slow:>10.4f}{fast:>10.4f}{slow / fast:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
