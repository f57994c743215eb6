"""Executable pieces of the comparison and existence arguments.

Everything here works on sampled data: envelopes are discrete inf/sup over
grid samples, and hypotheses that cannot be proved by computation (the
modulus condition, the barrier curvature bound) are tested by sampling,
with a witness reported on failure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .fields import Grid, ScalarField, det_plus, directional_derivative_oracle, eigvals, horizontal_derivatives
from .geometry import graph_flow_rhs
from .groups import (
    GroupError,
    GroupSpec,
    Point,
    bracket,
    gauge_power,
    inverse,
    product,
)

SOLUTION, SUB, SUPER, NEITHER = "solution", "sub", "super", "neither"

_CHUNK = 1 << 21  # pair evaluations per block
NOISE = 1e-8  # relative cancellation floor for oracle consistency


# -- space-time fields ----------------------------------------------------------

@dataclass
class SpaceTimeField:
    """Samples ``values[k] = u(., times[k])`` on a grid.

    ``time_derivative`` optionally carries exact ``u_t`` samples; without it
    ``u_t`` is taken by second-order finite differences in time.
    """

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    time_derivative: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.values.shape != (len(self.times),) + self.grid.shape:
            raise ValueError("values must have shape (len(times),) + grid.shape")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        if self.time_derivative is not None:
            self.time_derivative = np.asarray(self.time_derivative, dtype=float)
            if self.time_derivative.shape != self.values.shape:
                raise ValueError("time_derivative must match values")

    @classmethod
    def from_closure(cls, spec: GroupSpec, grid: Grid, times, u, u_t=None) -> "SpaceTimeField":
        pts = grid.points(spec)
        times = np.asarray(times, dtype=float)
        vals = np.stack([np.broadcast_to(u(pts, t), grid.shape) for t in times])
        dts = None
        if u_t is not None:
            dts = np.stack([np.broadcast_to(u_t(pts, t), grid.shape) for t in times])
        return cls(grid, times, vals, dts)

    @classmethod
    def from_trace(cls, trace) -> "SpaceTimeField":
        snaps = trace.snapshots
        return cls(snaps[0].grid, [s.t for s in snaps], np.stack([s.values for s in snaps]))

    def dt(self) -> np.ndarray:
        if self.time_derivative is not None:
            return self.time_derivative
        if len(self.times) < 2:
            raise ValueError("need at least two time samples for a time derivative")
        order = 2 if len(self.times) >= 3 else 1
        return np.gradient(self.values, self.times, axis=0, edge_order=order)

    def at(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.values[k], float(self.times[k]))


# -- residual classification ----------------------------------------------------

@dataclass
class ResidualReport:
    residual: np.ndarray  # nan outside the classified samples
    labels: np.ndarray
    overall: str
    max_residual: float
    min_residual: float

    def to_dict(self) -> dict:
        return {"overall": self.overall, "max_residual": self.max_residual, "min_residual": self.min_residual}


def flow_residual(spec: GroupSpec, u: SpaceTimeField, variant: str = "det_plus") -> np.ndarray:
    """``u_t - G(D0u, (D0^2u)*)`` at every sample; ``nan`` on spatial boundary nodes."""
    ut = u.dt()
    interior = u.grid.interior_mask()
    out = np.full(u.values.shape, np.nan)
    for k in range(len(u.times)):
        D0, H = horizontal_derivatives(spec, u.grid, u.values[k])
        r = ut[k] - graph_flow_rhs(D0, H, variant)
        out[k][interior] = r[interior]
    return out


def residual_classify(spec: GroupSpec, u: SpaceTimeField, variant: str = "det_plus", tol: float = 1e-6) -> ResidualReport:
    """Classify interior samples of a smooth field by the sign of its residual.

    For C^2 fields the test-function definitions reduce to the pointwise
    sign of ``r = u_t - G``: ``sub`` where ``r <= tol``, ``super`` where
    ``r >= -tol``, ``solution`` where both hold.
    """
    r = flow_residual(spec, u, variant)
    valid = np.isfinite(r)
    rv = r[valid]
    labels = np.full(r.shape, "", dtype=object)
    labels[valid] = np.where(np.abs(rv) <= tol, SOLUTION, np.where(rv < 0, SUB, SUPER))
    if np.all(np.abs(rv) <= tol):
        overall = SOLUTION
    elif np.all(rv <= tol):
        overall = SUB
    elif np.all(rv >= -tol):
        overall = SUPER
    else:
        overall = NEITHER
    return ResidualReport(r, labels, overall, float(np.max(rv)), float(np.min(rv)))


# -- envelopes ------------------------------------------------------------------

def _pair_kernel(spec: GroupSpec, x: Point, y: Point, fn=None) -> np.ndarray:
    """``fn(y^{-1} x)`` for all pairs, shape ``(len(x), len(y))``; default ``|.|_g^(2r!)``."""
    xb = Point(x.v[:, None, :], x.z[:, None, :])
    yb = inverse(spec, Point(y.v[None, :, :], y.z[None, :, :]))
    rel = product(spec, yb, xb)
    return gauge_power(spec, rel) if fn is None else np.asarray(fn(rel))


def _flat_points(spec: GroupSpec, grid: Grid) -> Point:
    p = grid.points(spec)
    n = p.v.size // spec.m1
    return Point(p.v.reshape(n, spec.m1), p.z.reshape(n, spec.m2))


def _inf_envelope(spec: GroupSpec, w: SpaceTimeField, eps: float) -> np.ndarray:
    """``min_{y,s} w(y,s) + (|y^{-1}x|_g^{2r!} + |t-s|^2) / (2 eps)`` on the sample set."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    pts = _flat_points(spec, w.grid)
    N = pts.v.shape[0]
    nt = len(w.times)
    W = w.values.reshape(nt, N)
    out = np.full((nt, N), np.inf)
    scale = 1.0 / (2.0 * eps)
    rows = max(1, _CHUNK // N)
    for lo in range(0, N, rows):
        K = _pair_kernel(spec, pts[lo : lo + rows], pts)
        for it, t in enumerate(w.times):
            for js, s in enumerate(w.times):
                cand = kernels.minplus(W[js] + scale * (t - s) ** 2, K, scale)
                np.minimum(out[it, lo : lo + rows], cand, out=out[it, lo : lo + rows])
    return out.reshape(w.values.shape)


def sup_convolution(spec: GroupSpec, w: SpaceTimeField, eps: float) -> SpaceTimeField:
    """Discrete sup-convolution with the gauge kernel; dominates ``w``."""
    neg = SpaceTimeField(w.grid, w.times, -w.values)
    return SpaceTimeField(w.grid, w.times, -_inf_envelope(spec, neg, eps))


def inf_convolution(spec: GroupSpec, v: SpaceTimeField, eps: float) -> SpaceTimeField:
    """Discrete inf-convolution with the gauge kernel; dominated by ``v``."""
    return SpaceTimeField(v.grid, v.times, _inf_envelope(spec, v, eps))


def strictify(w: SpaceTimeField, eps: float, T: float) -> SpaceTimeField:
    """``w - eps / (T - t)``; lowers ``u_t`` by exactly ``eps / (T - t)^2``."""
    if np.any(w.times >= T):
        raise ValueError("all sample times must be below T")
    gap = (T - w.times)[(slice(None),) + (None,) * w.grid.ndim]
    return SpaceTimeField(w.grid, w.times, w.values - eps / gap, w.dt() - eps / gap**2)


def scaling_admissible(mu: float, theta: float, m1: int) -> bool:
    return 0 < mu <= 1 and 0 < theta <= 1 and theta * mu ** (-(m1 - 1)) <= 1 + 1e-15


def scale_subsolution(u: SpaceTimeField, mu: float, theta: float, m1: int) -> SpaceTimeField:
    """``mu * u(x, theta t)`` at the original sample times, by linear interpolation in time."""
    if not scaling_admissible(mu, theta, m1):
        raise ValueError(f"(mu, theta) = ({mu}, {theta}) violates theta * mu^-(m1-1) <= 1 for m1 = {m1}")
    ts = theta * u.times
    if ts[0] < u.times[0] - 1e-15:
        raise ValueError("theta * t leaves the sampled time range; start the samples at t = 0")
    idx = np.clip(np.searchsorted(u.times, ts, side="right") - 1, 0, len(u.times) - 2)
    lo, hi = u.times[idx], u.times[idx + 1]
    wgt = ((ts - lo) / (hi - lo))[(slice(None),) + (None,) * u.grid.ndim]

    def interp(a):
        return (1 - wgt) * a[idx] + wgt * a[idx + 1]

    return SpaceTimeField(u.grid, u.times, mu * interp(u.values), mu * theta * interp(u.dt()))


# -- barrier ------------------------------------------------------------------

def htype_barrier(spec: GroupSpec) -> Callable[[Point], np.ndarray]:
    """``h0 = |v|^4 + 16 |z|^2``."""
    if not spec.is_htype:
        raise GroupError("the barrier needs an H-type group")

    def h0(p: Point) -> np.ndarray:
        vv = np.sum(p.v * p.v, axis=-1)
        return vv * vv + 16.0 * np.sum(p.z * p.z, axis=-1)

    return h0


@dataclass
class BarrierSpec:
    h0: Callable[[Point], np.ndarray]
    eps0: float
    C: float
    B_table: List[Tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.eps0 > 0 or not self.C > 0:
            raise ValueError("eps0 and C must be positive")
        if any(not (e > 0 and b >= 0) for e, b in self.B_table):
            raise ValueError("B_table entries need eps > 0 and B >= 0")


def sample_gauge_box(spec: GroupSpec, R: float, n: int, rng: np.random.Generator, n_near: int = 0) -> Point:
    """Points with ``|v| <= R`` and ``|z| <= R^2``.

    Layer radii are log-uniform (``|v|`` over four decades, ``|z|`` over
    eight) so every scale of the box is sampled, plus ``n_near`` points
    close to the identity.
    """

    def dirs(k, d):
        x = rng.standard_normal((k, d))
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    rv = R * 10.0 ** rng.uniform(-4, 0, n)
    v = rv[:, None] * dirs(n, spec.m1)
    if spec.m2:
        rz = R * R * 10.0 ** rng.uniform(-8, 0, n)
        z = rz[:, None] * dirs(n, spec.m2)
    else:
        z = np.zeros((n, 0))
    if n_near:
        s = 10.0 ** rng.uniform(-3, -1, n_near)
        v = np.vstack([v, s[:, None] * dirs(n_near, spec.m1)])
        zn = (s * s)[:, None] * dirs(n_near, spec.m2) if spec.m2 else np.zeros((n_near, 0))
        z = np.vstack([z, zn])
    return Point(v, z)


def oracle_jets(spec: GroupSpec, u, p: Point, h: float = 1e-2):
    """Horizontal gradient and symmetrized Hessian of a closure by the exponential oracle.

    Returns ``(D0, H, err)`` with ``err`` the largest Richardson correction
    per sample, relative to ``1 + |value|`` plus the cancellation noise
    floor ``NOISE * |u(p)| / h^order`` of the divided differences.
    """
    m1 = spec.m1
    batch = p.batch_shape
    D0 = np.empty(batch + (m1,))
    H = np.empty(batch + (m1, m1))
    err = np.zeros(batch)
    mag = NOISE * np.abs(np.asarray(u(p), dtype=float))
    for i in range(m1):
        est, e = directional_derivative_oracle(spec, u, p, i, 1, h=h, return_error=True)
        D0[..., i] = est
        err = np.maximum(err, e / (1 + np.abs(est) + mag / h))
    for i in range(m1):
        for j in range(m1):
            est, e = directional_derivative_oracle(spec, u, p, (i, j), 2, h=h, return_error=True)
            H[..., i, j] = est
            err = np.maximum(err, e / (1 + np.abs(est) + mag / h**2))
    return D0, 0.5 * (H + np.swapaxes(H, -1, -2)), err


@dataclass
class BarrierReport:
    max_ratio: float
    feasible: bool
    lower_bound_ok: bool
    smooth_ok: bool
    curvature_ok: bool
    witness: Optional[dict]
    B_table: list
    n_samples: int
    suggested_C: float

    def to_dict(self) -> dict:
        return {
            "max_ratio": self.max_ratio,
            "witness": self.witness,
            "B_table": [list(x) for x in self.B_table],
            "feasible": self.feasible,
            "lower_bound_ok": self.lower_bound_ok,
            "smooth_ok": self.smooth_ok,
            "curvature_ok": self.curvature_ok,
            "n_samples": self.n_samples,
            "suggested_C": self.suggested_C,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def barrier_validate(
    spec: GroupSpec,
    barrier: BarrierSpec,
    R: float,
    N: int = 10_000,
    seed: int = 0,
    n_near: int = 0,
    smooth_rtol: float = 1e-6,
    check_C: bool = True,
) -> BarrierReport:
    """Sample the barrier hypotheses on the gauge box of radius ``R``.

    (a) ``h0 >= eps0 |x|_g^(2r!)``; (b) ``det_+((D0^2 h0)*) / (1+|D0 h0|^2)^((m1+1)/2) <= C``,
    derivatives by the exponential oracle.  Samples where the Richardson
    corrections disagree by more than ``smooth_rtol`` are flagged as
    non-smooth.  The first failure of each kind becomes the witness.
    """
    rng = np.random.default_rng(seed)
    pts = sample_gauge_box(spec, R, N, rng, n_near)
    h = np.asarray(barrier.h0(pts))
    lower = barrier.eps0 * gauge_power(spec, pts)
    low_bad = h < lower * (1 - 1e-12) - 1e-300
    D0, H, err = oracle_jets(spec, barrier.h0, pts)
    smooth_bad = ~(err <= smooth_rtol)
    ratio = det_plus(H) / (1.0 + np.sum(D0 * D0, axis=-1)) ** ((spec.m1 + 1) / 2.0)
    ratio_ok = np.where(smooth_bad, 0.0, ratio)
    max_ratio = float(np.max(ratio_ok))
    curv_bad = (ratio_ok > barrier.C) if check_C else np.zeros_like(low_bad)

    witness = None
    for kind, bad in (("lower_bound", low_bad), ("not_smooth", smooth_bad), ("curvature", curv_bad)):
        if bad.any():
            k = int(np.argmax(bad))
            witness = {
                "kind": kind,
                "v": pts.v[k].tolist(),
                "z": pts.z[k].tolist(),
                "h0": float(h[k]),
                "eps0_gauge": float(lower[k]),
                "ratio": float(ratio[k]),
                "richardson_err": float(err[k]),
            }
            break
    return BarrierReport(
        max_ratio=max_ratio,
        feasible=witness is None,
        lower_bound_ok=not low_bad.any(),
        smooth_ok=not smooth_bad.any(),
        curvature_ok=not curv_bad.any(),
        witness=witness,
        B_table=list(barrier.B_table),
        n_samples=int(h.size),
        suggested_C=1.1 * max_ratio,
    )


# -- closed-form H-type identities ----------------------------------------------

def htype_identities_check(spec: GroupSpec, samples: Point, h: float = 1e-2) -> dict:
    """Compare the oracle derivatives of the barrier with their closed forms.

    (a) ``|D0 h0|^2 = 16 |v|^2 h0``;
    (b) ``(D0^2 h0)*_ij = 8 v_i v_j + 4 |v|^2 delta_ij + 8 <[v, e_j], [v, e_i]>``;
    (c) ``sum_j |[v, e_j]|^2 = m2 |v|^2``.
    Deviations are ``|lhs - rhs| / (1 + |rhs|)``, maximized over samples.
    """
    h0 = htype_barrier(spec)
    v = samples.v
    vv = np.sum(v * v, axis=-1)
    D0, H, _ = oracle_jets(spec, h0, samples, h=h)

    lhs_a = np.sum(D0 * D0, axis=-1)
    rhs_a = 16.0 * vv * h0(samples)

    E = np.eye(spec.m1)
    br = np.stack([bracket(spec, v, np.broadcast_to(E[j], v.shape)) for j in range(spec.m1)], axis=-2)
    rhs_b = 8.0 * v[..., :, None] * v[..., None, :] + 4.0 * vv[..., None, None] * E + 8.0 * np.einsum("...ik,...jk->...ij", br, br)

    lhs_c = np.sum(br * br, axis=(-1, -2))
    rhs_c = spec.m2 * vv

    def dev(a, b):
        return float(np.max(np.abs(a - b) / (1.0 + np.abs(b))))

    return {
        "gradient_identity": dev(lhs_a, rhs_a),
        "hessian_identity": dev(H, rhs_b),
        "bracket_sum": dev(lhs_c, rhs_c),
        "samples": int(vv.size),
    }


# -- modulus and Perron sandwich ------------------------------------------------

class ModulusViolation(ValueError):
    def __init__(self, msg: str, witness: dict):
        super().__init__(msg)
        self.witness = witness


def estimate_modulus(
    spec: GroupSpec,
    h: Callable[[Point], np.ndarray],
    h0: Callable[[Point], np.ndarray],
    eps: float,
    x: Point,
    xi: Point,
    headroom: float = 1.1,
    floor: float = 1e-12,
) -> float:
    """Smallest sampled ``B`` with ``|h(x) - h(xi)| <= eps + B h0(xi^{-1} x)``, times ``headroom``.

    ``x`` and ``xi`` are matched arrays of sample pairs.  Raises
    :class:`ModulusViolation` if a pair with ``h0(xi^{-1} x) < floor`` has
    ``|h(x) - h(xi)| > eps``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    diff = np.abs(np.asarray(h(x)) - np.asarray(h(xi)))
    k0 = np.asarray(h0(product(spec, inverse(spec, xi), x)))
    excess = np.maximum(diff - eps, 0.0)
    tiny = k0 < floor
    if np.any(tiny & (excess > 0)):
        k = int(np.argmax(tiny & (excess > 0)))
        raise ModulusViolation(
            f"|h(x) - h(xi)| = {diff[k]:.3e} > eps = {eps} with h0(xi^-1 x) = {k0[k]:.1e}",
            {"x_v": x.v[k].tolist(), "x_z": x.z[k].tolist(), "xi_v": xi.v[k].tolist(), "xi_z": xi.z[k].tolist(), "diff": float(diff[k])},
        )
    ratios = np.where(tiny, 0.0, excess / np.where(tiny, 1.0, k0))
    return headroom * float(np.max(ratios, initial=0.0))


def modulus_table(spec: GroupSpec, h, h0, grid: Grid, eps_list: Sequence[float], headroom: float = 1.1) -> List[Tuple[float, float]]:
    """``[(eps, B_eps)]`` from :func:`estimate_modulus` over all ordered pairs of grid nodes."""
    pts = _flat_points(spec, grid)
    N = pts.v.shape[0]
    ii, jj = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    x, xi = pts[ii.reshape(-1)], pts[jj.reshape(-1)]
    return [(float(e), estimate_modulus(spec, h, h0, e, x, xi, headroom)) for e in eps_list]


class PerronEnvelope:
    """``f(x, t) = min_{xi, k} h(xi) + eps_k + B_k (h0(xi^{-1} x) + C t)`` over grid ``xi``."""

    def __init__(self, spec: GroupSpec, grid: Grid, h, barrier: BarrierSpec, check: bool = True, xi_mask=None):
        if not barrier.B_table:
            raise ValueError("B_table is empty")
        self.spec, self.grid, self.barrier = spec, grid, barrier
        pts = _flat_points(spec, grid)
        hv = np.asarray(h(pts), dtype=float).reshape(-1)
        keep = np.ones(hv.size, bool) if xi_mask is None else np.asarray(xi_mask).reshape(-1)
        xi = pts[keep]
        hxi = hv[keep]
        N = hv.size
        self.h_values = hv.reshape(grid.shape)
        self._spatial = np.full((len(barrier.B_table), N), np.inf)
        rows = max(1, _CHUNK // max(1, xi.v.shape[0]))
        for lo in range(0, N, rows):
            K = _pair_kernel(spec, pts[lo : lo + rows], xi, barrier.h0)
            if check:
                self._check_modulus(hv[lo : lo + rows], hxi, K, lo)
            for k, (eps, B) in enumerate(barrier.B_table):
                self._spatial[k, lo : lo + rows] = kernels.minplus(hxi + eps, K, B)
        self._rates = np.array([B * barrier.C for _, B in barrier.B_table])

    def _check_modulus(self, hx, hxi, K, lo):
        diff = np.abs(hx[:, None] - hxi[None, :])
        for eps, B in self.barrier.B_table:
            bad = diff > eps + B * K + 1e-12 * (1 + np.abs(hx[:, None]))
            if bad.any():
                i, j = np.argwhere(bad)[0]
                raise ModulusViolation(
                    f"modulus condition fails at eps = {eps}, B = {B}",
                    {"x_index": int(lo + i), "xi_index": int(j), "diff": float(diff[i, j]), "h0": float(K[i, j]), "eps": eps, "B": B},
                )

    def values(self, t: float) -> np.ndarray:
        f = np.min(self._spatial + self._rates[:, None] * t, axis=0)
        return f.reshape(self.grid.shape)

    def boundary(self):
        """``g(points, t)`` for the flow solver; ``points`` must be this grid's nodes."""

        def g(points: Point, t: float) -> np.ndarray:
            if points.batch_shape != self.grid.shape:
                raise ValueError("Perron boundary data is tabulated on its own grid only")
            return self.values(t)

        return g


@dataclass
class PerronResult:
    z: SpaceTimeField
    f: SpaceTimeField
    envelope: PerronEnvelope

    def report(self) -> dict:
        gap0 = self.f.values[0] - self.z.values[0]
        return {
            "min_f_minus_z": float(np.min(self.f.values - self.z.values)),
            "f0_minus_h_min": float(np.min(gap0)),
            "f0_minus_h_max": float(np.max(gap0)),
            "B_table": [list(x) for x in self.envelope.barrier.B_table],
            "feasible": True,
        }


def perron_sandwich(spec: GroupSpec, h, barrier: BarrierSpec, grid: Grid, times) -> PerronResult:
    """Subsolution ``z(x, t) = h(x)`` and supersolution envelope ``f`` on ``grid x times``."""
    env = PerronEnvelope(spec, grid, h, barrier)
    times = np.asarray(times, dtype=float)
    zvals = np.broadcast_to(env.h_values, (len(times),) + grid.shape).copy()
    fvals = np.stack([env.values(t) for t in times])
    z = SpaceTimeField(grid, times, zvals, np.zeros_like(zvals))
    f = SpaceTimeField(grid, times, fvals)
    return PerronResult(z, f, env)
