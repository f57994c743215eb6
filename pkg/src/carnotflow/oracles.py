"""Closed-form solutions with hand-differentiated derivatives.

* ``grim_reaper``: ``u = t - ln cos x`` solves the one-dimensional graph
  flow ``u_t = u_xx / (1 + u_x^2)``.  It is the standard translating
  solution, used here only as a solver-convergence reference.
* ``shrinking_cylinder``: ``u = |v|^2 - (R0^m1 - m1 t)^(2/m1)``, whose zero
  sets shrink self-similarly under the level-set flow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .geometry import graph_flow_rhs, levelset_flow_rhs
from .groups import GroupSpec, Point, dilate, frame, make_euclidean

RESIDUAL_TOL = 1e-9


class OutsideDomain(ValueError):
    pass


@dataclass
class ExactSolution:
    name: str
    spec: GroupSpec
    u: Callable[[Point, float], np.ndarray]
    u_t: Callable[[Point, float], np.ndarray]
    D0u: Callable[[Point, float], np.ndarray]
    hess: Callable[[Point, float], np.ndarray]
    in_domain: Callable[[Point], np.ndarray]
    t_range: Tuple[float, float]
    target: str  # "graph" or "levelset"
    params: dict = field(default_factory=dict)

    def check(self, p: Point, t) -> None:
        t = np.asarray(t, dtype=float)
        lo, hi = self.t_range
        if np.any(t < lo) or np.any(t >= hi):
            raise OutsideDomain(f"{self.name}: t outside [{lo}, {hi})")
        if not np.all(self.in_domain(p)):
            raise OutsideDomain(f"{self.name}: point outside the domain of validity")

    def __call__(self, p: Point, t) -> np.ndarray:
        self.check(p, t)
        return self.u(p, t)

    def rhs(self, p: Point, t) -> np.ndarray:
        self.check(p, t)
        D0, H = self.D0u(p, t), self.hess(p, t)
        if self.target == "graph":
            return graph_flow_rhs(D0, H, "det")
        return levelset_flow_rhs(self.spec, D0, H)

    def residual(self, p: Point, t) -> np.ndarray:
        """``u_t - rhs`` from the analytic derivatives."""
        return self.u_t(p, t) - self.rhs(p, t)

    def report(self, p: Point, t) -> dict:
        r = np.abs(self.residual(p, t))
        return {"name": self.name, "max_residual": float(np.max(r)), "samples": int(r.size)}


def grim_reaper() -> ExactSolution:
    spec = make_euclidean(1)
    x = lambda p: p.v[..., 0]
    sol = ExactSolution(
        name="grim_reaper",
        spec=spec,
        u=lambda p, t: t - np.log(np.cos(x(p))),
        u_t=lambda p, t: np.ones_like(x(p)) + 0.0 * np.asarray(t),
        D0u=lambda p, t: np.tan(x(p))[..., None] + 0.0 * np.asarray(t)[..., None],
        hess=lambda p, t: (1.0 / np.cos(x(p)) ** 2)[..., None, None] + 0.0 * np.asarray(t)[..., None, None],
        in_domain=lambda p: np.abs(x(p)) < np.pi / 2,
        t_range=(-np.inf, np.inf),
        target="graph",
    )
    _self_test(sol, Point(np.linspace(-1.4, 1.4, 57)[:, None], np.zeros((57, 0))), np.linspace(-1, 1, 57))
    return sol


def cylinder_radius(m1: int, R0: float, t) -> np.ndarray:
    """``(R0^m1 - m1 t)^(1/m1)``."""
    return (R0**m1 - m1 * np.asarray(t, dtype=float)) ** (1.0 / m1)


def extinction_time(m1: int, R0: float) -> float:
    return R0**m1 / m1


def shrinking_cylinder(spec: GroupSpec, R0: float = 1.0) -> ExactSolution:
    if R0 <= 0:
        raise ValueError("R0 must be positive")
    m1 = spec.m1

    def D0u(p, t):
        # u depends on v only, so D0u = A Du = 2 v
        A = frame(spec, p)
        Du = np.concatenate([2.0 * p.v, np.zeros(p.z.shape)], axis=-1)
        return np.einsum("...il,...l->...i", A, Du) + 0.0 * np.asarray(t)[..., None]

    def hess(p, t):
        shape = np.broadcast_shapes(p.batch_shape, np.shape(t))
        return np.broadcast_to(2.0 * np.eye(m1), shape + (m1, m1)).copy()

    sol = ExactSolution(
        name="shrinking_cylinder",
        spec=spec,
        u=lambda p, t: np.sum(p.v * p.v, axis=-1) - cylinder_radius(m1, R0, t) ** 2,
        u_t=lambda p, t: 2.0 * (R0**m1 - m1 * np.asarray(t, dtype=float)) ** (2.0 / m1 - 1.0),
        D0u=D0u,
        hess=hess,
        in_domain=lambda p: np.sum(p.v * p.v, axis=-1) > 0,
        t_range=(0.0, extinction_time(m1, R0)),
        target="levelset",
        params={"R0": R0},
    )
    rng = np.random.default_rng(12345)
    ts = rng.uniform(0, 0.9 * extinction_time(m1, R0), 32)
    _self_test(sol, points_on_cylinder(spec, cylinder_radius(m1, R0, ts), rng), ts)
    return sol


def points_on_cylinder(spec: GroupSpec, radius, rng: np.random.Generator, z_scale: float = 1.0) -> Point:
    """Random points with ``|v| = radius`` (broadcast) and Gaussian ``z``."""
    radius = np.atleast_1d(np.asarray(radius, dtype=float))
    d = rng.standard_normal((radius.size, spec.m1))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return Point(radius[:, None] * d, z_scale * rng.standard_normal((radius.size, spec.m2)))


def _self_test(sol: ExactSolution, p: Point, t) -> None:
    r = float(np.max(np.abs(sol.residual(p, t))))
    if not r <= RESIDUAL_TOL:
        raise AssertionError(f"{sol.name} fails its own residual check: {r:.3e}")


def self_similarity_check(spec: GroupSpec, R0: float, t: float, samples: Point) -> dict:
    """Dilate points of ``M_0`` by ``lambda(t)`` and evaluate ``u(., t)`` there."""
    sol = shrinking_cylinder(spec, R0)
    lam = float(cylinder_radius(spec.m1, R0, t)) / R0
    on_m0 = np.abs(sol.u(samples, 0.0))
    moved = dilate(spec, lam, samples)
    dev = np.abs(sol.u(moved, t))
    return {
        "name": "self_similarity",
        "lambda": lam,
        "max_residual": float(np.max(dev)),
        "max_offset_on_M0": float(np.max(on_m0)),
        "samples": int(dev.size),
    }


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True)
