"""Time weighted-tree induction and prediction on both kernels.

    python benchmarks/bench_tree.py [--repeat 3] [--sizes 500 2000 8000]

Also checks that both kernels build the same tree.
"""
import argparse
import time

import numpy as np

from rampflow.tree import available_backends, fit_tree, predict_tree


def _best(fn, repeat):
    out, times = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 2000, 8000])
    ap.add_argument("--features", type=int, default=15)
    ap.add_argument("--depth", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = sorted(available_backends(), key=lambda b: b != "python")
    if "cython" not in backends:
        print("compiled kernel not built; timing the Python kernel only")
    rng = np.random.default_rng(args.seed)
    print(f"{'rows':>6} {'backend':>8} {'fit s':>9} {'predict s':>10} {'nodes':>6} {'speedup':>8}")
    for n in args.sizes:
        X = rng.normal(size=(n, args.features))
        y = X[:, 0] * 3 + np.sin(X[:, 1] * 2) + rng.normal(scale=0.3, size=n)
        w = rng.random(n)
        trees, fit_t = {}, {}
        for b in backends:
            trees[b], fit_t[b] = _best(lambda: fit_tree(X, y, w, args.depth, backend=b), args.repeat)
            _, pred_t = _best(lambda: predict_tree(trees[b], X, backend=b), args.repeat)
            speed = fit_t["python"] / fit_t[b] if "python" in fit_t else float("nan")
            print(f"{n:>6} {b:>8} {fit_t[b]:>9.4f} {pred_t:>10.5f} {trees[b].node_count:>6} {speed:>7.1f}x")
        if len(trees) == 2:
            a, c = trees["python"], trees["cython"]
            same = (np.array_equal(a.feature, c.feature) and np.array_equal(a.threshold, c.threshold)
                    and np.array_equal(a.value, c.value))
            print(f"{'':>6} {'':>8} identical trees: {same}")


if __name__ == "__main__":
    main()
