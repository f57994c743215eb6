"""Geometry of graphs ``s = u(x)`` in G x R and of level sets ``{u = 0}`` in G.

The pointwise functions take ``(D0u, H)`` as plain arrays, with ``H`` the
symmetrized horizontal Hessian, and broadcast over leading axes.  That
lets closed-form oracles skip the grid entirely.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, asdict
from typing import Optional, Tuple

import numpy as np

from .fields import (
    Grid,
    ScalarField,
    det_plus,
    det_signed,
    eigvals,
    horizontal_derivatives,
)
from .groups import GroupSpec

log = logging.getLogger(__name__)

VARIANTS = ("det", "det_plus")

STRICT = "strictly_weakly_H_convex"
WEAK = "weakly_H_convex"
NOT_CONVEX = "not_H_convex"


class CharacteristicPointError(ValueError):
    """The horizontal gradient vanishes where the level-set equation needs it."""


def horizontal_normal(D0u) -> np.ndarray:
    """Unit horizontal normal ``(D0u, -1) / sqrt(1 + |D0u|^2)`` of the graph."""
    D0u = np.asarray(D0u, dtype=float)
    ext = np.concatenate([D0u, -np.ones(D0u.shape[:-1] + (1,))], axis=-1)
    return ext / np.sqrt(1.0 + np.sum(D0u * D0u, axis=-1))[..., None]


def _grad_factor(D0u) -> np.ndarray:
    D0u = np.asarray(D0u, dtype=float)
    return 1.0 + np.sum(D0u * D0u, axis=-1)


def graph_gauss_curvature(D0u, H) -> np.ndarray:
    """Signed horizontal Gauss curvature ``det H / (1 + |D0u|^2)^((m1+2)/2)``."""
    H = np.asarray(H, dtype=float)
    m1 = H.shape[-1]
    return det_signed(H) / _grad_factor(D0u) ** ((m1 + 2) / 2.0)


def graph_flow_rhs(D0u, H, variant: str = "det_plus", lam: Optional[np.ndarray] = None) -> np.ndarray:
    """Normal speed of the graph flow: ``det(H)`` or ``det_+(H)`` over ``(1 + |D0u|^2)^((m1+1)/2)``.

    ``lam`` may carry precomputed eigenvalues of ``H``.
    """
    H = np.asarray(H, dtype=float)
    m1 = H.shape[-1]
    if variant == "det_plus":
        num = det_plus(H, lam)
    elif variant == "det":
        num = det_signed(H, lam)
    else:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    return num / _grad_factor(D0u) ** ((m1 + 1) / 2.0)


def default_char_tol(D0u) -> float:
    D0u = np.asarray(D0u, dtype=float)
    return 1e-8 * (1.0 + float(np.max(np.abs(D0u), initial=0.0)))


def levelset_flow_rhs(spec: GroupSpec, D0u, H, char_tol: Optional[float] = None) -> np.ndarray:
    """``|D0u| det(P H P / |D0u| + nu nu^T)`` with ``P = I - nu nu^T``, ``nu = D0u / |D0u|``.

    Raises :class:`CharacteristicPointError` where ``|D0u| < char_tol``.
    """
    D0u = np.asarray(D0u, dtype=float)
    H = np.asarray(H, dtype=float)
    m1 = spec.m1
    if D0u.shape[-1] != m1 or H.shape[-2:] != (m1, m1):
        raise ValueError("D0u and H must match the first-layer dimension")
    tol = default_char_tol(D0u) if char_tol is None else char_tol
    g = np.sqrt(np.sum(D0u * D0u, axis=-1))
    if np.any(g < tol):
        raise CharacteristicPointError(f"|D0u| = {float(np.min(g)):.3e} below {tol:.3e}")
    nu = D0u / g[..., None]
    nn = nu[..., :, None] * nu[..., None, :]
    P = np.eye(m1) - nn
    inner = P @ H @ P / g[..., None, None] + nn
    return g * np.linalg.det(inner)


@dataclass
class ConvexityReport:
    min_eig: float
    classification: str
    node_index: Tuple[int, ...]
    margin: float

    def to_dict(self) -> dict:
        return {
            "min_eig": self.min_eig,
            "class": self.classification,
            "node_index": list(self.node_index),
            "margin": self.margin,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def classify_min_eig(min_eig: float, margin: float) -> str:
    if min_eig > margin:
        return STRICT
    if min_eig >= -margin:
        return WEAK
    return NOT_CONVEX


def classify_convexity(spec: GroupSpec, u: ScalarField, margin: float = 0.0) -> ConvexityReport:
    """Weak H-convexity of ``u`` from the smallest eigenvalue of ``(D0^2 u)*`` on interior nodes."""
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    _, H = horizontal_derivatives(spec, u.grid, u.values)
    lam_min = eigvals(H)[..., 0]
    lam_min = np.where(u.grid.interior_mask(), lam_min, np.inf)
    flat = int(np.argmin(lam_min))
    idx = tuple(int(i) for i in np.unravel_index(flat, u.grid.shape))
    val = float(lam_min[idx])
    return ConvexityReport(val, classify_min_eig(val, margin), idx, float(margin))


def thm412_hypothesis_residual(
    spec: GroupSpec,
    u0: ScalarField,
    squared_gradient: bool = False,
    singular_tol: float = 1e-10,
) -> ScalarField:
    """Pointwise value of the initial-data condition for convexity preservation on G.

    With ``G = det_+(H) / (1 + |D0u0|^2)^((m1+1)/2)`` and ``H = (D0^2 u0)*``::

        -(m1+1) / (1 + |D0u0|) * G * sum_i X_i u0 X_i G + G * tr(H^{-1} (D0^2 G)*)

    The condition holds where the result is nonnegative.  Horizontal
    derivatives of ``G`` are taken on the sampled ``G`` field.  With
    ``squared_gradient=True`` the first denominator is ``1 + |D0u0|^2``,
    the form that comes out of differentiating the flow in time.

    Nodes where ``H`` is singular (smallest eigenvalue below
    ``singular_tol``) get ``nan`` and a warning.  If no interior node is
    strictly convex, ``ValueError`` is raised.
    """
    grid = u0.grid
    D0u, H = horizontal_derivatives(spec, grid, u0.values)
    lam = eigvals(H)
    G = graph_flow_rhs(D0u, H, "det_plus", lam)
    D0G, HG = horizontal_derivatives(spec, grid, G)
    interior = grid.interior_mask()
    singular = lam[..., 0] <= singular_tol
    if np.all(singular[interior]):
        raise ValueError("initial data is not strictly weakly H-convex at any interior node")
    if np.any(singular & interior):
        n_bad = int(np.sum(singular & interior))
        warnings.warn(f"{n_bad} interior nodes have singular horizontal Hessian; excluded", RuntimeWarning)
    safe_H = np.where(singular[..., None, None], np.eye(spec.m1), H)
    Hinv = np.linalg.inv(safe_H)
    g = np.sqrt(np.sum(D0u * D0u, axis=-1))
    denom = 1.0 + (g * g if squared_gradient else g)
    first = -(spec.m1 + 1) / denom * G * np.sum(D0u * D0G, axis=-1)
    second = G * np.einsum("...ji,...ij->...", Hinv, HG)
    res = np.where(singular, np.nan, first + second)
    return _NanField(grid, res)


class _NanField(ScalarField):
    """ScalarField that tolerates ``nan`` markers for excluded nodes."""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError("shape mismatch")
