import os

import numpy as np
import pytest

from carnotflow.fields import Grid, ScalarField
from carnotflow.groups import make_euclidean, make_heisenberg
from carnotflow.oracles import grim_reaper
from carnotflow.solver import (
    FlowProblem,
    GridMismatch,
    SolverAbort,
    compare_runs,
    run,
    stable_dt,
    step,
)

H1 = make_heisenberg(1)
E1 = make_euclidean(1)


def heis(u0, n=9, T=0.01, **kw):
    g = Grid.box(H1, 1.0, 1.0, n, n)
    return FlowProblem(H1, g, ScalarField.sample(H1, g, u0), T, **kw)


def radial(p):
    return np.sum(p.v**2, -1)


class TestProblem:
    def test_validation(self):
        g = Grid.box(H1, 1.0, 1.0, 5, 5)
        u = ScalarField(g, np.zeros(g.shape))
        with pytest.raises(ValueError):
            FlowProblem(H1, g, u, -1.0)
        with pytest.raises(ValueError):
            FlowProblem(H1, g, u, 1.0, dt_safety=2.0)
        with pytest.raises(ValueError):
            FlowProblem(H1, g, u, 1.0, variant="trace")
        with pytest.raises(ValueError):
            FlowProblem(H1, g, u, 1.0, snapshot_times=[2.0])
        with pytest.raises(GridMismatch):
            FlowProblem(H1, g, ScalarField(Grid.box(H1, 1.0, 1.0, 6, 6), np.zeros((6, 6, 6))), 1.0)


class TestStableDt:
    def test_linear_is_degenerate(self):
        prob = heis(lambda p: p.v[..., 0] + 2 * p.z[..., 0], T=0.5)
        assert stable_dt(prob, prob.u0) > 1e6
        tr = run(prob)
        assert len(tr.series) == 2 and tr.final.t == 0.5

    def test_paraboloid_formula(self):
        prob = heis(radial)
        h = prob.grid.h_min
        assert np.isclose(stable_dt(prob, prob.u0), 0.25 * h * h / (2 * 2 * prob._kappa + 1e-12), rtol=1e-9)

    def test_halving_h_quarters_dt(self):
        e = make_euclidean(2)
        dts = []
        for n in (11, 21):
            g = Grid((-1.0, -1.0), (1.0, 1.0), (n, n))
            p = FlowProblem(e, g, ScalarField.sample(e, g, radial), 0.1)
            dts.append(stable_dt(p, p.u0))
        assert np.isclose(dts[0] / dts[1], 4.0, rtol=1e-9)


class TestStep:
    def test_linear_unchanged(self):
        f = lambda p: p.v[..., 0] - p.z[..., 0]
        prob = heis(f, boundary=lambda p, t: f(p) + t)
        new = step(prob, prob.u0, 1e-3)
        assert np.allclose(new.values[prob.grid.interior_mask()], prob.u0.values[prob.grid.interior_mask()])
        assert np.allclose(new.values[prob.grid.boundary_mask()], prob.u0.values[prob.grid.boundary_mask()] + 1e-3)
        assert new.t == 1e-3

    def test_grim_reaper_moves_up_by_dt(self):
        gr = grim_reaper()
        g = Grid((-1.2,), (1.2,), (201,))
        prob = FlowProblem(E1, g, ScalarField.sample(E1, g, lambda p: gr(p, 0.0)), 0.1, boundary=gr)
        dt = 0.5 * stable_dt(prob, prob.u0)
        new = step(prob, prob.u0, dt)
        assert np.allclose((new.values - prob.u0.values)[1:-1], dt, rtol=1e-3)

    def test_det_vs_det_plus(self):
        saddle = lambda p: p.v[..., 0] ** 2 - p.v[..., 1] ** 2
        a = heis(saddle, variant="det")
        b = heis(saddle, variant="det_plus")
        m = a.grid.interior_mask()
        assert np.all(step(a, a.u0, 1e-4).values[m] < a.u0.values[m])
        assert np.allclose(step(b, b.u0, 1e-4).values[m], b.u0.values[m])

    def test_abort_on_nonfinite(self):
        prob = heis(radial, boundary=lambda p, t: np.full(p.batch_shape, np.nan))
        with pytest.raises(SolverAbort) as exc:
            step(prob, prob.u0, 1e-4)
        assert exc.value.node is not None


class TestRun:
    def test_zero_time(self):
        tr = run(heis(radial, T=0.0))
        assert len(tr.snapshots) == 1 and tr.final.t == 0.0

    def test_snapshot_times_hit_exactly(self):
        tr = run(heis(radial, T=0.01, snapshot_times=[0.0031, 0.007]))
        assert list(tr.times) == [0.0, 0.0031, 0.007, 0.01]
        ts = tr.series_array("t")
        assert np.all(np.diff(ts) > 0) and ts[-1] == 0.01 and tr.series[-1].dt == 0

    def test_snapshot_every(self):
        tr = run(heis(radial, T=0.005, snapshot_every=3))
        steps = len(tr.series) - 1
        assert len(tr.snapshots) == 1 + steps // 3 + (steps % 3 != 0)

    def test_monotone_det_plus(self):
        tr = run(heis(lambda p: radial(p) + 0.1 * p.z[..., 0] ** 2 + 0.3 * p.v[..., 0] * p.z[..., 0], T=0.01, snapshot_every=1))
        m = tr.final.grid.interior_mask()
        vals = np.stack([s.values[m] for s in tr.snapshots])
        assert np.all(np.diff(vals, axis=0) >= -1e-15)

    def test_translation_invariance(self):
        f = lambda p: radial(p) + 0.1 * p.z[..., 0] ** 2
        a = run(heis(f, snapshot_times=[0.005]))
        b = run(heis(lambda p: f(p) + 3.0, snapshot_times=[0.005]))
        for sa, sb in zip(a.snapshots, b.snapshots):
            assert np.max(np.abs(sb.values - sa.values - 3.0)) < 1e-13

    def test_step_limit(self):
        with pytest.raises(SolverAbort):
            run(heis(radial, T=0.01), max_steps=2)

    def test_write(self, tmp_path):
        tr = run(heis(radial, n=5, T=0.001))
        tr.write(str(tmp_path), ["v1", "v2", "z1"])
        names = sorted(os.listdir(tmp_path))
        assert names[0] == "diagnostics.csv" and names[1].startswith("snap_0000_t0.000000")
        back = ScalarField.from_csv(str(tmp_path / names[-1]))
        assert np.array_equal(back.values, tr.final.values)


class TestCompare:
    def test_identical(self):
        a = run(heis(radial, snapshot_times=[0.005]))
        b = run(heis(radial, snapshot_times=[0.005]))
        rep = compare_runs(a, b)
        assert rep.ordered and rep.margin == 0

    def test_offset(self):
        a = run(heis(radial, snapshot_times=[0.005]))
        b = run(heis(lambda p: radial(p) + 1.0, snapshot_times=[0.005]))
        rep = compare_runs(a, b)
        assert rep.ordered and abs(rep.margin - 1.0) < 1e-12

    def test_swapped(self):
        a = run(heis(lambda p: radial(p) + 0.25 * radial(p) ** 2, snapshot_times=[0.005]))
        b = run(heis(radial, snapshot_times=[0.005]))
        rep = compare_runs(a, b)
        assert not rep.ordered and rep.first_violation["snapshot"] == 0

    def test_mismatch(self):
        a = run(heis(radial, snapshot_times=[0.005]))
        b = run(heis(radial))
        with pytest.raises(GridMismatch):
            compare_runs(a, b)
        c = run(heis(radial, n=7, snapshot_times=[0.005]))
        with pytest.raises(GridMismatch):
            compare_runs(a, c)
