"""Compare the numba and numpy backends of the assembly and classification kernels.

    python benchmarks/bench_kernels.py [--sizes 128 256 512] [--repeat 5]

Outputs are checked for equality before timing.  The numba column excludes
compilation (one warm-up call per kernel).
"""
import argparse
import time

import numpy as np

from hcdefect import _kernels
from hcdefect.assembly import Grid
from hcdefect.geometry import MediumSpec


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def triplet_case(n):
    g = Grid.square(4.0, 8.0 / n)
    dofs, phase = g.element_nodes()
    ne = g.n_elements
    rng = np.random.default_rng(0)
    args = (dofs, phase, rng.uniform(1, 2, ne), rng.uniform(1, 2, ne), np.zeros(ne),
            np.ones(ne), g.h ** 2)
    return lambda: _kernels.element_triplets(*args)


def classify_case(n):
    g = Grid.square(4.0, 8.0 / n)
    c = g.centroids()
    spec = MediumSpec()
    args = (c[:, 0], c[:, 1], 0.0625, 0.5, 0.5, spec.cell.radius, spec.defect.kind,
            spec.defect.size)
    return lambda: _kernels.classify(*args)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[128, 256, 512])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"{'kernel':<10}{'n':>6}{'elements':>10}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>9}")
    for name, case in (("triplets", triplet_case), ("classify", classify_case)):
        for n in args.sizes:
            fn = case(n)
            out = {}
            for b in ("numpy", "numba"):
                _kernels.set_backend(b)
                out[b] = fn()           # warm-up, compiles on first numba call
            ref, got = out["numpy"], out["numba"]
            if name == "classify":
                ref, got = (ref,), (got,)
            assert all(np.array_equal(x, y) for x, y in zip(ref, got)), f"{name}: mismatch"
            t = {}
            for b in ("numpy", "numba"):
                _kernels.set_backend(b)
                t[b] = best_of(fn, args.repeat)
            print(f"{name:<10}{n:>6}{n * n:>10}{t['numpy']:>12.4g}{t['numba']:>12.4g}"
                  f"{t['numpy'] / t['numba']:>9.2f}")
    _kernels.set_backend("numba")


if __name__ == "__main__":
    main()
