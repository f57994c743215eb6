"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
versions in ``_kernels_py`` are used.  Set ``CARNOTFLOW_PURE_PYTHON=1`` to
force the fallback.  ``CARNOTFLOW_THREADS`` caps the worker threads of the
compiled backend (0 or unset means one per CPU).
"""

import logging
import os

import numpy as np

from . import _kernels_py

log = logging.getLogger(__name__)

_compiled = None
if os.environ.get("CARNOTFLOW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        log.debug("compiled kernels unavailable, using numpy fallback")

BACKEND = "cython" if _compiled is not None else "python"


def num_threads() -> int:
    raw = os.environ.get("CARNOTFLOW_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def jacobi_eigvals(mats, backend=None):
    """Ascending eigenvalues of a stack of symmetric matrices ``(N, m, m)``."""
    mats = np.asarray(mats, dtype=float)
    if _use(backend):
        n = mats.shape[0]
        threads = num_threads() if n * mats.shape[1] ** 3 > 20_000 else 1
        return _compiled.jacobi_eigvals(mats, threads)
    return _kernels_py.jacobi_eigvals(mats)


def minplus(a, K, scale, backend=None):
    """``out[x] = min_y (a[y] + scale * K[x, y])``."""
    if _use(backend):
        threads = num_threads() if np.size(K) > 100_000 else 1
        return _compiled.minplus(a, K, float(scale), threads)
    return _kernels_py.minplus(a, K, scale)


def horizontal_assemble(A, dA, grad, hess, backend=None):
    """Per-node ``(D0 u, (D0^2 u)*)`` from frames and Euclidean derivatives.

    Shapes: ``A (N, m1, n)``, ``dA (m1, n, n)``, ``grad (N, n)``,
    ``hess (N, n, n)``.
    """
    if _use(backend):
        threads = num_threads() if A.shape[0] > 50_000 else 1
        return _compiled.horizontal_assemble(A, dA, grad, hess, threads)
    return _kernels_py.horizontal_assemble(
        np.asarray(A, float), np.asarray(dA, float), np.asarray(grad, float), np.asarray(hess, float)
    )


def _use(backend):
    if backend is None:
        return _compiled is not None
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return True
    if backend == "python":
        return False
    raise ValueError(f"unknown backend {backend!r}")
