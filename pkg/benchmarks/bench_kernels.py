"""Compiled vs numpy kernels on the workloads the solver actually runs.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from carnotflow import kernels
from carnotflow.fields import Grid, grid_frame, _hessian, _partials
from carnotflow.groups import make_heisenberg


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    spec = make_heisenberg(1)
    grid = Grid.box(spec, 1.0, 1.0, 41, 41)
    vals = rng.standard_normal(grid.shape)
    A, dA = grid_frame(spec, grid)
    n = grid.ndim
    grad = _partials(grid, vals).reshape(-1, n)
    hess = _hessian(grid, vals).reshape(-1, n, n)
    A2 = A.reshape(-1, spec.m1, n)

    def sym(N, m):
        M = rng.standard_normal((N, m, m))
        return M + np.swapaxes(M, 1, 2)

    S2, S4, S8 = sym(68921, 2), sym(20000, 4), sym(5000, 8)
    a = rng.standard_normal(4000)
    K = rng.random((4000, 4000))
    return [
        ("jacobi m=2 N=68921", lambda b: kernels.jacobi_eigvals(S2, backend=b)),
        ("jacobi m=4 N=20000", lambda b: kernels.jacobi_eigvals(S4, backend=b)),
        ("jacobi m=8 N=5000", lambda b: kernels.jacobi_eigvals(S8, backend=b)),
        ("minplus 4000x4000", lambda b: kernels.minplus(a, K, 0.5, backend=b)),
        ("assemble 41^3", lambda b: kernels.horizontal_assemble(A2, dA, grad, hess, backend=b)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "cython":
        print("compiled kernels not built; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"threads: {kernels.num_threads()}")
    print(f"{'kernel':<22}{'cython [ms]':>14}{'python [ms]':>14}{'speedup':>10}{'max diff':>12}")
    for name, fn in cases(rng):
        rc, rp = fn("cython"), fn("python")
        if isinstance(rc, tuple):
            diff = max(float(np.max(np.abs(x - y))) for x, y in zip(rc, rp))
        else:
            diff = float(np.max(np.abs(rc - rp)))
        tc, tp = _best(lambda: fn("cython"), args.repeat), _best(lambda: fn("python"), args.repeat)
        print(f"{name:<22}{1e3 * tc:>14.2f}{1e3 * tp:>14.2f}{tp / tc:>10.1f}{diff:>12.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
