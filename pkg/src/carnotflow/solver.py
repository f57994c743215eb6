"""Explicit time stepping of the graph flow ``u_t = G(D0u, (D0^2u)*)`` on a box.

Forward Euler at interior nodes, Dirichlet overwrite at boundary nodes,
adaptive step from an explicit-diffusion stability bound.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .fields import Grid, ScalarField, eigvals, horizontal_derivatives
from .geometry import VARIANTS, graph_flow_rhs
from .groups import GroupSpec, Point, frame

log = logging.getLogger(__name__)

EPS_FLOOR = 1e-12
TIME_RTOL = 1e-12

Boundary = Union[str, Callable[[Point, float], np.ndarray]]


class SolverAbort(RuntimeError):
    """A step produced non-finite values."""

    def __init__(self, msg: str, node=None, t=None):
        super().__init__(msg)
        self.node = node
        self.t = t


class GridMismatch(ValueError):
    pass


@dataclass
class FlowProblem:
    spec: GroupSpec
    grid: Grid
    u0: ScalarField
    T_end: float
    boundary: Boundary = "frozen"
    variant: str = "det_plus"
    dt_safety: float = 0.25
    snapshot_every: int = 0
    snapshot_times: Optional[Sequence[float]] = None

    def __post_init__(self):
        self.grid.check(self.spec)
        if self.u0.grid != self.grid:
            raise GridMismatch("u0 lives on a different grid")
        if not self.T_end >= 0:
            raise ValueError("T_end must be nonnegative")
        if not 0 < self.dt_safety <= 1:
            raise ValueError("dt_safety must lie in (0, 1]")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if isinstance(self.boundary, str) and self.boundary != "frozen":
            raise ValueError("boundary must be 'frozen' or a callable g(points, t)")
        if self.snapshot_times is not None:
            ts = np.asarray(sorted(set(float(t) for t in self.snapshot_times)))
            if ts.size and (ts[0] < 0 or ts[-1] > self.T_end * (1 + TIME_RTOL) + TIME_RTOL):
                raise ValueError("snapshot_times must lie in [0, T_end]")
            self.snapshot_times = ts
        self._points = self.grid.points(self.spec)
        self._bmask = self.grid.boundary_mask()
        A = frame(self.spec, self._points)
        self._kappa = float(np.max(np.sum(np.abs(A), axis=-1) ** 2))

    def boundary_values(self, t: float) -> np.ndarray:
        if self.boundary == "frozen":
            return self.u0.values[self._bmask]
        g = np.broadcast_to(self.boundary(self._points, t), self.grid.shape)
        return np.asarray(g)[self._bmask]


@dataclass
class StepRecord:
    step: int
    t: float
    dt: float
    min_eig: float
    max_rhs: float
    sup_u: float


@dataclass
class FlowTrace:
    snapshots: List[ScalarField] = field(default_factory=list)
    series: List[StepRecord] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def final(self) -> ScalarField:
        return self.snapshots[-1]

    def series_array(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.series])

    def write(self, outdir: str, names: Optional[Sequence[str]] = None) -> None:
        os.makedirs(outdir, exist_ok=True)
        for k, snap in enumerate(self.snapshots):
            snap.to_csv(os.path.join(outdir, f"snap_{k:04d}_t{snap.t:.6f}.csv"), names)
        with open(os.path.join(outdir, "diagnostics.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "t", "dt", "min_eig", "max_rhs", "sup_u"])
            for r in self.series:
                w.writerow([r.step] + [repr(float(x)) for x in (r.t, r.dt, r.min_eig, r.max_rhs, r.sup_u)])


def _evaluate(problem: FlowProblem, vals: np.ndarray):
    D0u, H = horizontal_derivatives(problem.spec, problem.grid, vals)
    lam = eigvals(H)
    rhs = graph_flow_rhs(D0u, H, problem.variant, lam)
    return rhs, lam


def _dt_from_eigs(problem: FlowProblem, lam: np.ndarray) -> float:
    interior = problem.grid.interior_mask()
    m1 = problem.spec.m1
    if problem.variant == "det_plus":
        big = float(np.max(np.maximum(lam[interior], 0.0), initial=0.0))
    else:
        big = float(np.max(np.abs(lam[interior]), initial=0.0))
    return problem.dt_safety * problem.grid.h_min**2 / (m1 * big ** (m1 - 1) * problem._kappa + EPS_FLOOR)


def stable_dt(problem: FlowProblem, u: ScalarField) -> float:
    """``dt_safety * h_min^2 / (m1 * L^(m1-1) * kappa + 1e-12)``.

    ``L`` is the largest positive eigenvalue of ``(D0^2u)*`` over interior
    nodes (largest modulus for the ``det`` variant) and ``kappa`` the
    largest squared row sum of the frame over the grid.  Not capped here;
    :func:`run` caps at the remaining time.
    """
    _, lam = _evaluate(problem, u.values)
    return _dt_from_eigs(problem, lam)


def _advance(problem: FlowProblem, vals: np.ndarray, rhs: np.ndarray, t: float, dt: float) -> np.ndarray:
    new = vals + dt * rhs
    new[problem._bmask] = problem.boundary_values(t + dt)
    bad = ~np.isfinite(new)
    if bad.any():
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise SolverAbort(f"non-finite value at node {node}, t={t + dt:.6g}", node, t + dt)
    return new


def step(problem: FlowProblem, u: ScalarField, dt: float) -> ScalarField:
    """One forward-Euler step of size ``dt`` from ``u`` (time stamp ``u.t``, default 0)."""
    t = 0.0 if u.t is None else float(u.t)
    rhs, _ = _evaluate(problem, u.values)
    rhs = np.where(problem._bmask, 0.0, rhs)
    return ScalarField(problem.grid, _advance(problem, u.values, rhs, t, dt), t + dt)


def _record(k, t, dt, vals, rhs, lam, interior) -> StepRecord:
    return StepRecord(
        k,
        t,
        dt,
        float(np.min(lam[..., 0][interior])),
        float(np.max(np.abs(rhs[interior]), initial=0.0)),
        float(np.max(np.abs(vals))),
    )


def run(problem: FlowProblem, max_steps: int = 10_000_000) -> FlowTrace:
    """Integrate to ``T_end``; never overshoots it.

    Snapshots: the initial state, every ``snapshot_every`` steps (if > 0),
    every time in ``snapshot_times`` (hit exactly), and the final state.
    ``series`` holds one record per state visited, the last with ``dt=0``.
    """
    trace = FlowTrace()
    interior = problem.grid.interior_mask()
    vals = problem.u0.values.copy()
    t = 0.0
    T = float(problem.T_end)
    targets = list(problem.snapshot_times) if problem.snapshot_times is not None else []
    targets = [x for x in targets if x > TIME_RTOL * max(T, 1.0)]
    trace.snapshots.append(ScalarField(problem.grid, vals.copy(), 0.0))
    k = 0
    while True:
        rhs, lam = _evaluate(problem, vals)
        rhs = np.where(problem._bmask, 0.0, rhs)
        remaining = T - t
        if remaining <= TIME_RTOL * max(T, 1.0):
            trace.series.append(_record(k, t, 0.0, vals, rhs, lam, interior))
            break
        if k >= max_steps:
            raise SolverAbort(f"step limit {max_steps} reached at t={t:.6g}", None, t)
        dt = min(_dt_from_eigs(problem, lam), remaining)
        while targets and targets[0] <= t + TIME_RTOL * max(T, 1.0):
            targets.pop(0)
        if targets and t + dt > targets[0]:
            dt = targets[0] - t
        trace.series.append(_record(k, t, dt, vals, rhs, lam, interior))
        vals = _advance(problem, vals, rhs, t, dt)
        k += 1
        hit_target = bool(targets) and abs(t + dt - targets[0]) <= TIME_RTOL * max(T, 1.0)
        t = targets[0] if hit_target else t + dt
        if abs(T - t) <= TIME_RTOL * max(T, 1.0):
            t = T
        periodic = problem.snapshot_every > 0 and k % problem.snapshot_every == 0
        if periodic or hit_target or t == T:
            trace.snapshots.append(ScalarField(problem.grid, vals.copy(), t))
    return trace


@dataclass
class OrderingReport:
    ordered: bool
    margin: float
    first_violation: Optional[dict] = None

    def to_dict(self) -> dict:
        return {"ordered": self.ordered, "margin": self.margin, "first_violation": self.first_violation}


def compare_runs(trace_a: FlowTrace, trace_b: FlowTrace, tol: float = 1e-6) -> OrderingReport:
    """Check ``u_A <= u_B + tol`` at every node of every shared snapshot."""
    if len(trace_a.snapshots) != len(trace_b.snapshots):
        raise GridMismatch("traces have different snapshot counts")
    margin = np.inf
    for k, (a, b) in enumerate(zip(trace_a.snapshots, trace_b.snapshots)):
        if a.grid != b.grid:
            raise GridMismatch("traces live on different grids")
        if abs(a.t - b.t) > 1e-9 * max(1.0, abs(a.t)):
            raise GridMismatch(f"snapshot {k} times differ: {a.t} vs {b.t}")
        gap = b.values - a.values
        margin = min(margin, float(np.min(gap)))
        bad = gap < -tol
        if bad.any():
            node = tuple(int(i) for i in np.argwhere(bad)[0])
            return OrderingReport(
                False,
                margin,
                {"snapshot": k, "t": a.t, "node": list(node), "u_a": float(a.values[node]), "u_b": float(b.values[node])},
            )
    return OrderingReport(True, float(margin))
