"""Time the compiled and NumPy kernels on problem sizes met in practice.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from ccf import kernels

# (origins n, loadings p, targets q, component lags k)
SIZES = [(136, 200, 50, 3), (136, 50, 50, 0), (180, 29, 20, 1), (400, 40, 30, 3)]


def _instance(rng, n, p, q, k):
    X = np.ascontiguousarray(rng.standard_normal((n + k, p)))
    Y = np.ascontiguousarray(rng.standard_normal((n, q)))
    beta = rng.standard_normal(p)
    return X, Y, beta / np.linalg.norm(beta), k, float(np.sum(Y * Y))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args(argv)
    backends = [("python", kernels.python)]
    if kernels.compiled is not None:
        backends.append(("cython", kernels.compiled))
    else:
        print("compiled kernels not built; timing the NumPy fallback only")
    rng = np.random.default_rng(0)
    print(f"{'n':>5} {'p':>5} {'q':>4} {'k':>3} {'kernel':>14} " +
          " ".join(f"{name + ' us':>12}" for name, _ in backends) + f" {'speedup':>8}")
    for n, p, q, k in SIZES:
        X, Y, beta, k, yy = _instance(rng, n, p, q, k)
        for fn in ("g1_value", "g1_value_grad"):
            times = []
            for _, mod in backends:
                f = getattr(mod, fn)
                best = min(timeit.repeat(lambda: f(X, Y, beta, k, yy), number=args.number,
                                         repeat=args.repeat))
                times.append(best / args.number * 1e6)
            speed = f"{times[0] / times[1]:8.2f}" if len(times) == 2 else f"{'n/a':>8}"
            print(f"{n:>5} {p:>5} {q:>4} {k:>3} {fn:>14} " + " ".join(f"{t:12.1f}" for t in times)
                  + f" {speed}")


if __name__ == "__main__":
    main()
