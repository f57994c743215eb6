"""Step-1 and step-2 Carnot groups in exponential coordinates.

A point is a pair ``(v, z)`` of first-layer and second-layer coordinates.
All operations broadcast over leading batch axes, so ``v`` may have shape
``(..., m1)`` and ``z`` shape ``(..., m2)``.

The group law is the step-2 Baker-Campbell-Hausdorff product

    (v, z) * (v', z') = (v + v', z + z' + 1/2 [v, v'])

with ``[u, w]_k = sum_ij c[k, i, j] u_i w_j``.  Left-invariant frames are
derived from this law (see :func:`frame`), never written down by hand.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "GroupSpec",
    "Point",
    "make_euclidean",
    "make_heisenberg",
    "make_htype",
    "quaternionic_J",
    "adjoin_real_line",
    "identity",
    "product",
    "inverse",
    "dilate",
    "bracket",
    "gauge_norm",
    "gauge_power",
    "gauge_distance",
    "frame",
    "frame_derivative",
    "htype_apply_J",
    "random_points",
]

_ATOL = 1e-12


class GroupError(ValueError):
    """Raised for invalid group data or mismatched dimensions."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GroupSpec:
    """A stratified group of step at most two.

    ``brackets[k, i, j]`` is the coefficient of the k-th second-layer basis
    vector in ``[e_i, e_j]``.  ``htype_J`` holds the J-maps of an H-type
    structure when one is known.
    """

    step: int
    m1: int
    m2: int
    brackets: np.ndarray
    htype_J: Optional[np.ndarray] = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.step not in (1, 2):
            raise GroupError(f"step must be 1 or 2, got {self.step}")
        if self.m1 < 1:
            raise GroupError("m1 must be positive")
        if (self.step == 1) != (self.m2 == 0):
            raise GroupError("m2 must be 0 exactly when step is 1")
        c = _frozen(np.asarray(self.brackets, dtype=float).reshape(self.m2, self.m1, self.m1))
        if not np.allclose(c, -np.swapaxes(c, 1, 2), atol=_ATOL, rtol=0.0):
            raise GroupError("bracket tensor is not antisymmetric in (i, j)")
        object.__setattr__(self, "brackets", c)
        if self.htype_J is not None:
            J = _frozen(np.asarray(self.htype_J, dtype=float).reshape(self.m2, self.m1, self.m1))
            _check_htype(J)
            # c[k, i, j] = <J_k e_i, e_j> = J_k[j, i]
            if not np.allclose(c, np.swapaxes(J, 1, 2), atol=_ATOL, rtol=0.0):
                raise GroupError("bracket tensor inconsistent with htype_J")
            object.__setattr__(self, "htype_J", J)

    @property
    def dim(self) -> int:
        return self.m1 + self.m2

    @property
    def Q(self) -> int:
        """Homogeneous dimension."""
        return self.m1 + 2 * self.m2

    @property
    def is_htype(self) -> bool:
        return self.htype_J is not None

    def __hash__(self):
        return hash((self.step, self.m1, self.m2, self.brackets.tobytes()))

    def __eq__(self, other):
        if not isinstance(other, GroupSpec):
            return NotImplemented
        return (
            (self.step, self.m1, self.m2) == (other.step, other.m1, other.m2)
            and np.array_equal(self.brackets, other.brackets)
            and (self.htype_J is None) == (other.htype_J is None)
        )

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        entries = []
        for k, i, j in zip(*np.nonzero(self.brackets)):
            if i < j:
                entries.append([int(k), int(i), int(j), float(self.brackets[k, i, j])])
        out = {"step": self.step, "m1": self.m1, "m2": self.m2, "brackets": entries}
        if self.htype_J is not None:
            out["htype_J"] = self.htype_J.tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "GroupSpec":
        try:
            step, m1, m2 = int(d["step"]), int(d["m1"]), int(d["m2"])
        except KeyError as exc:
            raise GroupError(f"missing key {exc.args[0]!r} in group spec") from None
        c = np.zeros((m2, m1, m1))
        for entry in d.get("brackets", []):
            k, i, j, val = int(entry[0]), int(entry[1]), int(entry[2]), float(entry[3])
            if i == j:
                if val != 0.0:
                    raise GroupError("diagonal bracket entries must vanish")
                continue
            for (a, b, s) in ((i, j, val), (j, i, -val)):
                if c[k, a, b] != 0.0 and c[k, a, b] != s:
                    raise GroupError(f"conflicting bracket entries for ({k}, {i}, {j})")
                c[k, a, b] = s
        J = d.get("htype_J")
        return cls(step, m1, m2, c, None if J is None else np.asarray(J, dtype=float))

    @classmethod
    def from_json(cls, text: str) -> "GroupSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Point:
    """Exponential coordinates; ``v`` and ``z`` may carry batch axes."""

    v: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))

    @classmethod
    def from_coords(cls, spec: GroupSpec, x) -> "Point":
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != spec.dim:
            raise GroupError(f"expected {spec.dim} coordinates, got {x.shape[-1]}")
        return cls(x[..., : spec.m1], x[..., spec.m1 :])

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([self.v, self.z], axis=-1)

    @property
    def batch_shape(self) -> tuple:
        return self.v.shape[:-1]

    def __getitem__(self, idx) -> "Point":
        return Point(self.v[idx], self.z[idx])


def _check_htype(J: np.ndarray) -> None:
    m2, m1, _ = J.shape
    if not np.allclose(J, -np.swapaxes(J, 1, 2), atol=_ATOL, rtol=0.0):
        raise GroupError("J maps must be antisymmetric")
    eye = np.eye(m1)
    # (sum z_k J_k)^2 = -|z|^2 I on basis vectors and on pairwise sums
    # (the latter is equivalent to J_a J_b + J_b J_a = 0).
    for a in range(m2):
        if not np.allclose(J[a] @ J[a], -eye, atol=1e-10, rtol=0.0):
            raise GroupError(f"J_{a}^2 != -I: not an H-type system")
        for b in range(a + 1, m2):
            if not np.allclose(J[a] @ J[b] + J[b] @ J[a], 0.0, atol=1e-10, rtol=0.0):
                raise GroupError(f"J_{a}, J_{b} do not anticommute: not an H-type system")


# -- constructors ------------------------------------------------------

def make_euclidean(n: int) -> GroupSpec:
    if n < 1:
        raise GroupError("n must be positive")
    return GroupSpec(1, n, 0, np.zeros((0, n, n)), name=f"euclidean:{n}")


def make_htype(J: Sequence) -> GroupSpec:
    """Build the H-type group whose brackets satisfy ``<J_z u, w> = <z, [u, w]>``."""
    J = np.asarray(J, dtype=float)
    if J.ndim == 2:
        J = J[None]
    if J.ndim != 3 or J.shape[1] != J.shape[2]:
        raise GroupError("J must be a list of square matrices")
    _check_htype(J)
    c = np.swapaxes(J, 1, 2).copy()
    return GroupSpec(2, J.shape[1], J.shape[0], c, J, name=f"htype:{J.shape[1]}x{J.shape[0]}")


def make_heisenberg(n: int) -> GroupSpec:
    if n < 1:
        raise GroupError("n must be positive")
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    spec = make_htype([J])
    object.__setattr__(spec, "name", f"heisenberg:{n}")
    return spec


def quaternionic_J() -> np.ndarray:
    """Left multiplication by i, j, k on R^4 = H, as real 4x4 matrices."""
    i = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]], dtype=float)
    j = np.array([[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]], dtype=float)
    k = np.array([[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]], dtype=float)
    return np.stack([i, j, k])


def adjoin_real_line(spec: GroupSpec) -> GroupSpec:
    """Append one first-layer direction that commutes with everything.

    The result is no longer H-type (the new direction lies in every kernel),
    so ``htype_J`` is dropped.
    """
    m1 = spec.m1 + 1
    c = np.zeros((spec.m2, m1, m1))
    c[:, : spec.m1, : spec.m1] = spec.brackets
    name = f"{spec.name}+R" if spec.name else ""
    return GroupSpec(spec.step, m1, spec.m2, c, None, name=name)


# -- group operations ----------------------------------------------------

def _check(spec: GroupSpec, p: Point) -> None:
    if p.v.shape[-1] != spec.m1 or p.z.shape[-1] != spec.m2:
        raise GroupError(
            f"point has layer dims ({p.v.shape[-1]}, {p.z.shape[-1]}), "
            f"group needs ({spec.m1}, {spec.m2})"
        )


def identity(spec: GroupSpec) -> Point:
    return Point(np.zeros(spec.m1), np.zeros(spec.m2))


def bracket(spec: GroupSpec, u, w) -> np.ndarray:
    """``[u, w]`` for first-layer vectors, as second-layer coordinates."""
    # pairwise i < j, so [v, v] and [-v, v] vanish exactly
    u = np.asarray(u, float)
    w = np.asarray(w, float)
    iu, ju = np.triu_indices(spec.m1, 1)
    minors = u[..., iu] * w[..., ju] - u[..., ju] * w[..., iu]
    return minors @ spec.brackets[:, iu, ju].T


def product(spec: GroupSpec, p: Point, q: Point) -> Point:
    _check(spec, p)
    _check(spec, q)
    z = p.z + q.z
    if spec.m2:
        z = z + 0.5 * bracket(spec, p.v, q.v)
    return Point(p.v + q.v, z)


def inverse(spec: GroupSpec, p: Point) -> Point:
    _check(spec, p)
    return Point(-p.v, -p.z)


def dilate(spec: GroupSpec, s: float, p: Point) -> Point:
    if not s > 0:
        raise GroupError(f"dilation factor must be positive, got {s}")
    _check(spec, p)
    return Point(s * p.v, (s * s) * p.z)


def gauge_power(spec: GroupSpec, p: Point) -> np.ndarray:
    """``|p|_g ** (2 r!)`` without the final root: ``|v|^4 + |z|^2`` at step 2."""
    _check(spec, p)
    r = spec.step
    rf = math.factorial(r)
    layers = [p.v] if r == 1 else [p.v, p.z]
    total = 0.0
    for j, x in enumerate(layers, start=1):
        total = total + np.sum(x * x, axis=-1) ** (rf // j)
    return np.asarray(total)


def gauge_norm(spec: GroupSpec, p: Point) -> np.ndarray:
    return gauge_power(spec, p) ** (1.0 / (2 * math.factorial(spec.step)))


def gauge_distance(spec: GroupSpec, p: Point, q: Point) -> np.ndarray:
    return gauge_norm(spec, product(spec, inverse(spec, q), p))


def frame(spec: GroupSpec, p: Point) -> np.ndarray:
    """Matrix ``A`` of shape ``(..., m1, m1 + m2)`` with ``X_i = sum_j A[i, j] d_j``.

    Since ``q -> p * q`` is affine, row i is ``(p * e_i) - p``, the
    s-derivative of ``p * exp(s e_i)``: ``e_i`` in the first layer and the
    product's correction term ``[v, e_i] / 2`` in the second.  Built from
    that term directly so the first-layer block is exact.
    """
    _check(spec, p)
    batch = p.batch_shape
    m1 = spec.m1
    eye = np.broadcast_to(np.eye(m1), batch + (m1, m1))
    if not spec.m2:
        return eye.copy()
    zcols = 0.5 * bracket(spec, p.v[..., None, :], eye)
    return np.concatenate([eye, zcols], axis=-1)


def frame_derivative(spec: GroupSpec) -> np.ndarray:
    """Constant tensor ``dA[i, l, k] = d a_{i,l} / d x_k`` (frames are affine in v)."""
    n = spec.dim
    base = frame(spec, identity(spec))
    dA = np.zeros((spec.m1, n, n))
    for k in range(spec.m1):
        e = np.zeros(spec.m1)
        e[k] = 1.0
        dA[:, :, k] = frame(spec, Point(e, np.zeros(spec.m2))) - base
    return dA


def htype_apply_J(spec: GroupSpec, z, u) -> np.ndarray:
    """``J_z u = sum_k z_k J_k u``."""
    if spec.htype_J is None:
        raise GroupError("group has no H-type structure")
    return np.einsum("kij,...k,...j->...i", spec.htype_J, np.asarray(z, float), np.asarray(u, float))


def random_points(spec: GroupSpec, n: int, rng: np.random.Generator, scale: float = 1.0) -> Point:
    return Point(scale * rng.standard_normal((n, spec.m1)), scale * rng.standard_normal((n, spec.m2)))
