"""Pure numpy versions of the hot kernels.

These are the reference implementations; ``_ckernels.pyx`` mirrors them
loop for loop.
"""

import numpy as np

JACOBI_RTOL = 1e-12
MAX_SWEEPS = 60


def jacobi_eigvals(mats):
    """Eigenvalues of a stack of symmetric matrices, shape ``(N, m, m) -> (N, m)``.

    Cyclic Jacobi, vectorized across the stack.  A matrix stops rotating
    once its off-diagonal Frobenius norm is below ``1e-12 * ||M||_F``.
    Eigenvalues are returned in ascending order.
    """
    A = np.array(mats, dtype=float, copy=True)
    n, m, _ = A.shape
    if n == 0:
        return np.zeros((0, m))
    if m == 1:
        return A[:, :, 0].copy()
    scale = np.sqrt(np.einsum("nij,nij->n", A, A))
    iu = np.triu_indices(m, 1)
    for _ in range(MAX_SWEEPS):
        off = np.sqrt(2.0 * np.sum(A[:, iu[0], iu[1]] ** 2, axis=1))
        active = off > JACOBI_RTOL * scale
        if not active.any():
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = A[:, p, q]
                rot = active & (apq != 0.0)
                if not rot.any():
                    continue
                safe = np.where(rot, apq, 1.0)
                theta = (A[:, q, q] - A[:, p, p]) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c = np.where(rot, c, 1.0)[:, None]
                s = np.where(rot, s, 0.0)[:, None]
                colp = A[:, :, p].copy()
                colq = A[:, :, q].copy()
                A[:, :, p] = c * colp - s * colq
                A[:, :, q] = s * colp + c * colq
                rowp = A[:, p, :].copy()
                rowq = A[:, q, :].copy()
                A[:, p, :] = c * rowp - s * rowq
                A[:, q, :] = s * rowp + c * rowq
                A[rot, p, q] = 0.0
                A[rot, q, p] = 0.0
    w = A.reshape(n, m * m)[:, :: m + 1].copy()
    w.sort(axis=1)
    return w


def minplus(a, K, scale):
    """``out[x] = min_y (a[y] + scale * K[x, y])``."""
    a = np.asarray(a, dtype=float)
    K = np.asarray(K, dtype=float)
    out = np.empty(K.shape[0])
    step = max(1, 2_000_000 // max(1, K.shape[1]))
    for lo in range(0, K.shape[0], step):
        out[lo : lo + step] = np.min(a[None, :] + scale * K[lo : lo + step], axis=1)
    return out


def horizontal_assemble(A, dA, grad, hess):
    """Horizontal gradient and symmetrized horizontal Hessian at every node.

    ``A``: ``(N, m1, n)`` frames, ``dA``: ``(m1, n, n)`` with
    ``dA[j, l, k] = d a_jl / d x_k``, ``grad``: ``(N, n)``, ``hess``:
    ``(N, n, n)``.  Returns ``(D0 (N, m1), M (N, m1, m1))``.
    """
    N, m1, n = A.shape
    D0 = np.zeros((N, m1))
    for l in range(n):
        D0 += A[:, :, l] * grad[:, l : l + 1]
    AH = np.zeros((N, m1, n))
    for k in range(n):
        for l in range(n):
            AH[:, :, l] += A[:, :, k] * hess[:, k, l : l + 1]
    M = np.zeros((N, m1, m1))
    for j in range(m1):
        for l in range(n):
            M[:, :, j] += AH[:, :, l] * A[:, j, l : l + 1]
    # first-order term sum_kl a_ik (d_k a_jl) d_l u
    corr = np.einsum("jlk,nl->njk", dA, grad)
    for k in range(n):
        M += A[:, :, k, None] * corr[:, None, :, k]
    return D0, 0.5 * (M + np.swapaxes(M, 1, 2))
