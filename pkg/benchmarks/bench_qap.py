"""Compare the compiled and pure-Python branch-and-bound kernels.

    python3 benchmarks/bench_qap.py --sizes 4 5 6 7 8 --reps 20
"""
import argparse
import time

import numpy as np

from mechlab.assignment import available_backends, solve_qap


def random_instance(rng, n):
    w = rng.uniform(0, 1, (n, n))
    kappa = rng.uniform(0, 0.5, (n, n))
    d = rng.uniform(0, 0.1, (n, n, n, n)) * (rng.random((n, n, n, n)) < 0.5)
    return w, d, kappa


def bench(n, reps, seed):
    rng = np.random.default_rng([seed, n])
    instances = [random_instance(rng, n) for _ in range(reps)]
    out = {}
    results = {}
    for backend in available_backends():
        start = time.perf_counter()
        sols = [solve_qap(*inst, backend=backend) for inst in instances]
        out[backend] = (time.perf_counter() - start) / reps
        results[backend] = [(s.matching, s.value) for s in sols]
        out[backend + "_nodes"] = np.mean([s.nodes for s in sols])
    if len(results) == 2:
        out["identical"] = results["cython"] == results["python"]
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[4, 5, 6, 7, 8])
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"backends: {', '.join(available_backends())}")
    print(f"{'n':>3} {'nodes':>10} {'python ms':>10} {'cython ms':>10} {'speedup':>8} identical")
    for n in args.sizes:
        r = bench(n, args.reps, args.seed)
        py = r["python"] * 1e3
        cy = r.get("cython", float("nan")) * 1e3
        print(f"{n:>3} {r['python_nodes']:>10.0f} {py:>10.3f} {cy:>10.3f} {py / cy:>8.1f} {r.get('identical', '-')}")


if __name__ == "__main__":
    main()
