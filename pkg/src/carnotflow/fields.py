"""Grid-based horizontal calculus in exponential coordinates.

Grids are rectangular, axes ordered ``v_1..v_m1, z_1..z_m2``.  Derivatives
use second-order central stencils in the interior and second-order
one-sided stencils on the boundary.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import kernels
from .groups import GroupError, GroupSpec, Point, frame, frame_derivative, product

__all__ = [
    "Grid",
    "ScalarField",
    "SymMatrixField",
    "axis_names",
    "euclidean_partials",
    "euclidean_hessian",
    "horizontal_gradient",
    "second_layer_gradient",
    "horizontal_hessian",
    "horizontal_derivatives",
    "eigvals",
    "det_plus",
    "min_eigenvalue",
    "directional_derivative_oracle",
]

SYM_RTOL = 1e-12
CLAMP_RTOL = 1e-12


def axis_names(spec_or_m1, m2: Optional[int] = None) -> list:
    if isinstance(spec_or_m1, GroupSpec):
        m1, m2 = spec_or_m1.m1, spec_or_m1.m2
    else:
        m1 = spec_or_m1
    return [f"v{i + 1}" for i in range(m1)] + [f"z{k + 1}" for k in range(m2 or 0)]


@dataclass(frozen=True)
class Grid:
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    counts: Tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lower)
        hi = tuple(float(x) for x in self.upper)
        n = tuple(int(x) for x in self.counts)
        if not (len(lo) == len(hi) == len(n)) or not lo:
            raise ValueError("lower, upper and counts must have the same nonzero length")
        if any(c < 3 for c in n):
            raise ValueError(f"need at least 3 nodes per axis, got {n}")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("every axis needs upper > lower")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "counts", n)

    @classmethod
    def box(cls, spec: GroupSpec, v_half: float, z_half: float, nv: int, nz: int) -> "Grid":
        """Symmetric box ``[-v_half, v_half]^m1 x [-z_half, z_half]^m2``."""
        lo = [-v_half] * spec.m1 + [-z_half] * spec.m2
        n = [nv] * spec.m1 + [nz] * spec.m2
        return cls(tuple(lo), tuple(-x for x in lo), tuple(n))

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple((b - a) / (n - 1) for a, b, n in zip(self.lower, self.upper, self.counts))

    @property
    def h_min(self) -> float:
        return min(self.spacing)

    @property
    def axes(self) -> list:
        return [np.linspace(a, b, n) for a, b, n in zip(self.lower, self.upper, self.counts)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``counts + (ndim,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def points(self, spec: GroupSpec) -> Point:
        self.check(spec)
        return Point.from_coords(spec, self.coords())

    def check(self, spec: GroupSpec) -> None:
        if self.ndim != spec.dim:
            raise GroupError(f"grid has {self.ndim} axes, group needs {spec.dim}")

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.counts, dtype=bool)
        mask[tuple(slice(1, -1) for _ in self.counts)] = True
        return mask

    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask()

    def refined(self) -> "Grid":
        """Halve the spacing on every axis."""
        return Grid(self.lower, self.upper, tuple(2 * n - 1 for n in self.counts))

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(tuple(d["lower"]), tuple(d["upper"]), tuple(d["counts"]))


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray
    t: Optional[float] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values have shape {self.values.shape}, grid is {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @classmethod
    def sample(cls, spec: GroupSpec, grid: Grid, fn: Callable[[Point], np.ndarray], t: Optional[float] = None):
        return cls(grid, np.broadcast_to(fn(grid.points(spec)), grid.shape).copy(), t)

    def interpolate(self, coords) -> np.ndarray:
        """Multilinear interpolation at arbitrary coordinates ``(..., ndim)``."""
        interp = RegularGridInterpolator(self.grid.axes, self.values, method="linear", bounds_error=False, fill_value=None)
        coords = np.asarray(coords, dtype=float)
        return interp(coords.reshape(-1, self.grid.ndim)).reshape(coords.shape[:-1])

    def to_csv(self, path_or_buf, names: Optional[Sequence[str]] = None) -> None:
        names = list(names) if names else [f"x{i + 1}" for i in range(self.grid.ndim)]
        cols = np.column_stack([self.grid.coords().reshape(-1, self.grid.ndim), self.values.reshape(-1)])
        _write_csv(path_or_buf, names + ["value"], cols)

    @classmethod
    def from_csv(cls, path_or_buf) -> "ScalarField":
        header, data = _read_csv(path_or_buf)
        ndim = len(header) - 1
        grid = _grid_from_coords(data[:, :ndim])
        return cls(grid, data[:, ndim].reshape(grid.shape))


@dataclass
class SymMatrixField:
    """Per-node symmetric ``m x m`` matrices, stored as upper triangles."""

    grid: Grid
    m: int
    upper: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.upper = np.asarray(self.upper, dtype=float)
        want = self.grid.shape + (self.m * (self.m + 1) // 2,)
        if self.upper.shape != want:
            raise ValueError(f"upper-triangle array must have shape {want}")

    @classmethod
    def from_matrices(cls, grid: Grid, mats: np.ndarray) -> "SymMatrixField":
        m = mats.shape[-1]
        iu = np.triu_indices(m)
        sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
        return cls(grid, m, sym[..., iu[0], iu[1]])

    @property
    def matrices(self) -> np.ndarray:
        iu = np.triu_indices(self.m)
        out = np.empty(self.grid.shape + (self.m, self.m))
        out[..., iu[0], iu[1]] = self.upper
        out[..., iu[1], iu[0]] = self.upper
        return out

    def eigvals(self) -> np.ndarray:
        return eigvals(self.matrices)

    def to_csv(self, path_or_buf, names: Optional[Sequence[str]] = None) -> None:
        names = list(names) if names else [f"x{i + 1}" for i in range(self.grid.ndim)]
        iu = np.triu_indices(self.m)
        cols = [f"m{i + 1}{j + 1}" for i, j in zip(*iu)]
        data = np.column_stack(
            [self.grid.coords().reshape(-1, self.grid.ndim), self.upper.reshape(-1, len(cols))]
        )
        _write_csv(path_or_buf, names + cols, data)


# -- csv helpers -------------------------------------------------------------

def _write_csv(path_or_buf, header, rows) -> None:
    own = not hasattr(path_or_buf, "write")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) for x in row])
    finally:
        if own:
            fh.close()


def _read_csv(path_or_buf):
    text = path_or_buf.read() if hasattr(path_or_buf, "read") else open(path_or_buf).read()
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], np.array(rows[1:], dtype=float)


def _grid_from_coords(xs: np.ndarray) -> Grid:
    axes = [np.unique(xs[:, j]) for j in range(xs.shape[1])]
    return Grid(tuple(a[0] for a in axes), tuple(a[-1] for a in axes), tuple(len(a) for a in axes))


# -- Euclidean stencils -------------------------------------------------------

def _values(u) -> Tuple[Grid, np.ndarray]:
    return u.grid, u.values


def euclidean_partials(u: ScalarField) -> np.ndarray:
    """First partials, shape ``grid.shape + (ndim,)``."""
    grid, vals = _values(u)
    return _partials(grid, vals)


def _partials(grid: Grid, vals: np.ndarray) -> np.ndarray:
    grads = np.gradient(vals, *grid.spacing, edge_order=2)
    if grid.ndim == 1:
        grads = [grads]
    return np.stack(grads, axis=-1)


def _second_along(vals: np.ndarray, axis: int, h: float) -> np.ndarray:
    f = np.moveaxis(vals, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / (h * h)
    if f.shape[0] >= 4:
        out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / (h * h)
        out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / (h * h)
    else:
        out[0] = out[1]
        out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def _hessian(grid: Grid, vals: np.ndarray, grad: Optional[np.ndarray] = None) -> np.ndarray:
    n = grid.ndim
    hs = grid.spacing
    if grad is None:
        grad = _partials(grid, vals)
    H = np.empty(grid.shape + (n, n))
    for k in range(n):
        H[..., k, k] = _second_along(vals, k, hs[k])
        for l in range(k + 1, n):
            H[..., k, l] = H[..., l, k] = np.gradient(grad[..., k], hs[l], axis=l, edge_order=2)
    return H


def euclidean_hessian(u: ScalarField) -> np.ndarray:
    """Second partials, shape ``grid.shape + (ndim, ndim)``, exactly symmetric."""
    return _hessian(u.grid, u.values)


# -- horizontal operators -------------------------------------------------------

def horizontal_derivatives(spec: GroupSpec, grid: Grid, vals: np.ndarray):
    """``(D0 u, (D0^2 u)*)`` as plain arrays of shape ``(..., m1)`` and ``(..., m1, m1)``.

    ``X_i X_j u = sum_kl a_ik a_jl d_kl u + sum_kl a_ik (d_k a_jl) d_l u``,
    symmetrized.
    """
    A, dA = grid_frame(spec, grid)
    grad = _partials(grid, vals)
    hess = _hessian(grid, vals, grad)
    n, m1 = spec.dim, spec.m1
    D0, M = kernels.horizontal_assemble(
        A.reshape(-1, m1, n), dA, grad.reshape(-1, n), hess.reshape(-1, n, n)
    )
    return D0.reshape(grid.shape + (m1,)), M.reshape(grid.shape + (m1, m1))


@lru_cache(maxsize=32)
def grid_frame(spec: GroupSpec, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """Frame matrices at every node and the constant frame derivative, cached per grid."""
    grid.check(spec)
    A = frame(spec, grid.points(spec))
    dA = frame_derivative(spec)
    A.setflags(write=False)
    dA.setflags(write=False)
    return A, dA


def horizontal_gradient(spec: GroupSpec, u: ScalarField) -> np.ndarray:
    A, _ = grid_frame(spec, u.grid)
    return np.einsum("...il,...l->...i", A, euclidean_partials(u))


def second_layer_gradient(spec: GroupSpec, u: ScalarField) -> np.ndarray:
    if spec.step < 2:
        raise GroupError("second-layer gradient needs a step-2 group")
    u.grid.check(spec)
    return euclidean_partials(u)[..., spec.m1 :]


def horizontal_hessian(spec: GroupSpec, u: ScalarField) -> SymMatrixField:
    _, M = horizontal_derivatives(spec, u.grid, u.values)
    return SymMatrixField.from_matrices(u.grid, M)


# -- spectral helpers -----------------------------------------------------------

def _check_symmetric(M: np.ndarray) -> None:
    if M.shape[-1] != M.shape[-2]:
        raise ValueError("matrix must be square")
    scale = np.max(np.abs(M), initial=0.0)
    if np.max(np.abs(M - np.swapaxes(M, -1, -2)), initial=0.0) > SYM_RTOL * max(scale, 1e-300):
        raise ValueError("matrix is not symmetric")


def eigvals(M) -> np.ndarray:
    """Ascending eigenvalues by cyclic Jacobi; broadcasts over leading axes."""
    M = np.asarray(M, dtype=float)
    _check_symmetric(M)
    m = M.shape[-1]
    flat = M.reshape(-1, m, m)
    return kernels.jacobi_eigvals(flat).reshape(M.shape[:-1])


def _clamp_band(M: np.ndarray) -> np.ndarray:
    return CLAMP_RTOL * np.sqrt(np.einsum("...ij,...ij->...", M, M))


def det_plus(M, lam: Optional[np.ndarray] = None) -> np.ndarray:
    """Product of the positive parts of the eigenvalues.

    Eigenvalues within ``1e-12 * ||M||_F`` of zero count as zero.
    """
    M = np.asarray(M, dtype=float)
    if lam is None:
        lam = eigvals(M)
    band = _clamp_band(M)[..., None]
    pos = np.where(lam > band, lam, 0.0)
    return np.prod(pos, axis=-1)


def det_signed(M, lam: Optional[np.ndarray] = None) -> np.ndarray:
    """Determinant as the product of the Jacobi eigenvalues."""
    M = np.asarray(M, dtype=float)
    if lam is None:
        lam = eigvals(M)
    band = _clamp_band(M)[..., None]
    return np.prod(np.where(np.abs(lam) > band, lam, 0.0), axis=-1)


def min_eigenvalue(M) -> np.ndarray:
    return eigvals(M)[..., 0]


# -- group-exponential derivative oracle ---------------------------------------

def _richardson(values: list) -> Tuple[np.ndarray, np.ndarray]:
    """Eliminate even powers of h from central differences at h, h/2, h/4, ..."""
    T = [values[0]]
    best, err = values[0], np.full_like(values[0], np.inf)
    for k in range(1, len(values)):
        row = [values[k]]
        for j in range(1, k + 1):
            row.append(row[j - 1] + (row[j - 1] - T[j - 1]) / (4.0**j - 1.0))
        err = np.abs(row[-1] - row[-2])
        best = row[-1]
        T = row
    return best, err


def _unit(spec: GroupSpec, i: int, s, batch) -> Point:
    v = np.zeros(tuple(batch) + (spec.m1,))
    v[..., i] = s
    return Point(v, np.zeros(tuple(batch) + (spec.m2,)))


def _first(spec, u, p: Point, i: int, h: float, levels: int):
    vals = []
    for k in range(levels):
        hk = h / 2.0**k
        up = u(product(spec, p, _unit(spec, i, hk, p.batch_shape)))
        dn = u(product(spec, p, _unit(spec, i, -hk, p.batch_shape)))
        vals.append((np.asarray(up) - np.asarray(dn)) / (2.0 * hk))
    return _richardson(vals)


def directional_derivative_oracle(
    spec: GroupSpec,
    u: Callable[[Point], np.ndarray],
    p: Point,
    i: Union[int, Tuple[int, int]],
    order: int = 1,
    h: float = 1e-2,
    levels: int = 4,
    return_error: bool = False,
):
    """``X_i u(p)`` (order 1) or ``X_i X_j u(p)`` (order 2) along the group exponential.

    Central differences of ``s -> u(p * exp(s e_i))`` at ``s = 0`` with
    Richardson extrapolation.  For order 2 pass ``i=(i, j)``; a bare ``i``
    means ``X_i X_i``.  ``u`` must accept batched points.  With
    ``return_error`` the last Richardson correction is returned too.
    """
    if order == 1:
        if not isinstance(i, (int, np.integer)):
            raise ValueError("order 1 takes a single index")
        est, err = _first(spec, u, p, int(i), h, levels)
    elif order == 2:
        a, b = (i, i) if isinstance(i, (int, np.integer)) else i
        inner = lambda q: _first(spec, u, q, int(b), h, levels)[0]
        est, err = _first(spec, inner, p, int(a), h, levels)
    else:
        raise ValueError("order must be 1 or 2")
    return (est, err) if return_error else est
