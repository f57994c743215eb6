import io

import numpy as np
import pytest

from carnotflow.fields import (
    Grid,
    ScalarField,
    SymMatrixField,
    det_plus,
    det_signed,
    directional_derivative_oracle,
    eigvals,
    euclidean_hessian,
    euclidean_partials,
    horizontal_derivatives,
    horizontal_gradient,
    horizontal_hessian,
    min_eigenvalue,
    second_layer_gradient,
)
from carnotflow.groups import GroupError, Point, make_euclidean, make_heisenberg
from carnotflow.polynomial import Polynomial

from charpoly_oracle import det_plus_oracle

H1 = make_heisenberg(1)


def heis_grid(n=9):
    return Grid.box(H1, 1.0, 1.0, n, n)


class TestGrid:
    def test_too_few_nodes(self):
        with pytest.raises(ValueError):
            Grid((0.0,), (1.0,), (2,))

    def test_masks(self):
        g = heis_grid(5)
        assert g.interior_mask().sum() == 27 and g.boundary_mask().sum() == 125 - 27

    def test_refined(self):
        g = heis_grid(5).refined()
        assert g.counts == (9, 9, 9) and np.isclose(g.h_min, 0.25)

    def test_dict_roundtrip(self):
        g = heis_grid()
        assert Grid.from_dict(g.to_dict()) == g

    def test_dimension_check(self):
        with pytest.raises(GroupError):
            Grid((0.0,), (1.0,), (5,)).check(H1)


class TestScalarField:
    def test_nonfinite_rejected(self):
        g = Grid((0.0,), (1.0,), (3,))
        with pytest.raises(ValueError):
            ScalarField(g, [0.0, np.nan, 1.0])

    def test_csv_roundtrip(self, rng):
        g = heis_grid(4)
        u = ScalarField(g, rng.standard_normal(g.shape))
        buf = io.StringIO()
        u.to_csv(buf, ["v1", "v2", "z1"])
        assert buf.getvalue().splitlines()[0] == "v1,v2,z1,value"
        buf.seek(0)
        back = ScalarField.from_csv(buf)
        assert back.grid == g and np.array_equal(back.values, u.values)

    def test_interpolate_linear_exact(self):
        g = heis_grid(5)
        u = ScalarField.sample(H1, g, lambda p: 1 + 2 * p.v[..., 0] - p.z[..., 0])
        pts = np.array([[0.1, 0.33, -0.7], [0.9, -0.2, 0.05]])
        assert np.allclose(u.interpolate(pts), 1 + 2 * pts[:, 0] - pts[:, 2])

    def test_symmatrix_field(self, rng):
        g = heis_grid(4)
        M = rng.standard_normal(g.shape + (2, 2))
        M = M + np.swapaxes(M, -1, -2)
        f = SymMatrixField.from_matrices(g, M)
        assert np.array_equal(f.matrices, np.swapaxes(f.matrices, -1, -2))
        assert np.allclose(f.matrices, M)
        buf = io.StringIO()
        f.to_csv(buf)
        assert buf.getvalue().splitlines()[0].endswith("m11,m12,m22")


class TestEuclideanStencils:
    def test_constant_and_affine(self):
        g = Grid((0.0, -1.0), (1.0, 2.0), (6, 7))
        c = ScalarField(g, np.full(g.shape, 3.0))
        assert np.allclose(euclidean_partials(c), 0)
        x = g.coords()
        lin = ScalarField(g, 2 * x[..., 0] - 5 * x[..., 1])
        assert np.allclose(euclidean_partials(lin), [2, -5])
        assert np.allclose(euclidean_hessian(lin), 0, atol=1e-10)

    def test_quadratic_exact(self):
        g = Grid((0.0,), (1.0,), (11,))
        u = ScalarField(g, g.coords()[..., 0] ** 2)
        assert np.isclose(euclidean_partials(u)[5, 0], 1.0, rtol=0, atol=1e-14)
        assert np.allclose(euclidean_hessian(u), 2.0)

    def test_second_order_convergence(self):
        errs = []
        for n in (21, 41, 81):
            g = Grid((0.0,), (1.0,), (n,))
            x = g.coords()[..., 0]
            u = ScalarField(g, np.sin(3 * x))
            errs.append(np.max(np.abs(euclidean_hessian(u)[..., 0, 0] + 9 * np.sin(3 * x))))
        assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


class TestHorizontal:
    def test_z_gradient(self):
        # left-invariant frame: D0 z = (v2 / 2, -v1 / 2)
        g = heis_grid()
        u = ScalarField.sample(H1, g, lambda p: p.z[..., 0])
        pts = g.points(H1)
        expect = np.stack([0.5 * pts.v[..., 1], -0.5 * pts.v[..., 0]], axis=-1)
        assert np.allclose(horizontal_gradient(H1, u), expect, atol=1e-13)

    def test_step1_gradient_is_euclidean(self, rng):
        e = make_euclidean(2)
        g = Grid((0.0, 0.0), (1.0, 1.0), (7, 7))
        u = ScalarField(g, rng.standard_normal(g.shape))
        assert np.allclose(horizontal_gradient(e, u), euclidean_partials(u))

    @pytest.mark.parametrize("n", [1, 2])
    def test_radial_first_layer(self, n):
        h = make_heisenberg(n)
        g = Grid.box(h, 1.0, 1.0, 5, 5)
        u = ScalarField.sample(h, g, lambda p: np.sum(p.v**2, axis=-1))
        D0, H = horizontal_derivatives(h, g, u.values)
        assert np.allclose(D0, 2 * g.points(h).v, atol=1e-12)
        assert np.allclose(H, 2 * np.eye(2 * n), atol=1e-10)

    def test_second_layer(self):
        g = heis_grid()
        pts = g.points(H1)
        u = ScalarField.sample(H1, g, lambda p: p.v[..., 0] * p.z[..., 0])
        assert np.allclose(second_layer_gradient(H1, u)[..., 0], pts.v[..., 0])
        u2 = ScalarField.sample(H1, g, lambda p: np.sum(p.v**2, axis=-1))
        assert np.allclose(second_layer_gradient(H1, u2), 0)
        with pytest.raises(GroupError):
            second_layer_gradient(make_euclidean(1), ScalarField(Grid((0.0,), (1.0,), (4,)), np.zeros(4)))

    def test_affine_in_z_has_zero_hessian(self):
        g = heis_grid()
        u = ScalarField.sample(H1, g, lambda p: 3.0 * p.z[..., 0] - 1.0)
        assert np.allclose(horizontal_hessian(H1, u).matrices, 0, atol=1e-12)

    def test_hessian_matches_oracle(self, backend, monkeypatch):
        from carnotflow import kernels

        monkeypatch.setattr(kernels, "_use", lambda b, _orig=kernels._use: _orig(backend))
        poly = Polynomial.from_terms([[1.0, [2, 1, 0]], [1.0, [0, 0, 2]]], 3)  # v1^2 v2 + z^2
        g = Grid.box(H1, 1.0, 1.0, 11, 11)
        D0, H = horizontal_derivatives(H1, g, poly(g.points(H1)))
        idx = np.argwhere(g.interior_mask())
        pts = g.points(H1)[tuple(idx.T)]
        Hs = H[tuple(idx.T)]
        for i in range(2):
            for j in range(2):
                o = 0.5 * (
                    directional_derivative_oracle(H1, poly, pts, (i, j), 2)
                    + directional_derivative_oracle(H1, poly, pts, (j, i), 2)
                )
                assert np.max(np.abs(o - Hs[:, i, j])) < 1e-6

    def test_oracle_convergence_rate(self):
        # smooth non-polynomial test function: errors fall by ~4 per halving
        fn = lambda p: np.exp(0.5 * p.v[..., 0]) * np.cos(p.v[..., 1] + p.z[..., 0])
        probe = Point(np.array([[0.1, -0.2], [0.3, 0.25]]), np.array([[0.2], [-0.1]]))
        errs = []
        for n in (9, 17, 33):
            g = Grid.box(H1, 0.5, 0.5, n, n)
            _, H = horizontal_derivatives(H1, g, fn(g.points(H1)))
            f = ScalarField(g, H[..., 0, 1])
            # compare at the nodes nearest to the probe points
            k = [np.argmin(np.abs(ax[:, None] - c[None, :]), axis=0) for ax, c in zip(g.axes, probe.coords.T)]
            nodes = Point(np.stack([g.axes[0][k[0]], g.axes[1][k[1]]], -1), g.axes[2][k[2]][:, None])
            ref = 0.5 * (
                directional_derivative_oracle(H1, fn, nodes, (0, 1), 2)
                + directional_derivative_oracle(H1, fn, nodes, (1, 0), 2)
            )
            errs.append(np.max(np.abs(f.values[k[0], k[1], k[2]] - ref)))
        assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


class TestOracle:
    def test_affine(self):
        a = np.array([2.0, -3.0])
        p = Point(np.array([[0.4, 1.0]]), np.array([[0.3]]))
        lin = lambda q: q.v @ a
        for i in range(2):
            assert np.isclose(directional_derivative_oracle(H1, lin, p, i)[0], a[i], atol=1e-12)

    def test_z_example(self):
        # X_1 z at ((0, 1), 0) is +1/2 for the left-invariant frame
        val = directional_derivative_oracle(H1, lambda q: q.z[..., 0], Point([0.0, 1.0], [0.0]), 0)
        assert np.isclose(val, 0.5, atol=1e-12)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            directional_derivative_oracle(H1, lambda q: q.z[..., 0], Point([0.0, 1.0], [0.0]), 0, order=3)


class TestSpectral:
    def test_examples(self):
        assert np.isclose(det_plus(np.diag([2.0, 3.0])), 6)
        assert det_plus(np.diag([2.0, -3.0])) == 0
        assert np.isclose(det_plus(np.array([[2.0, 1.0], [1.0, 2.0]])), 3)
        assert np.isclose(min_eigenvalue(np.eye(2)), 1)
        assert np.isclose(min_eigenvalue(np.diag([5.0, -2.0])), -2)
        assert np.isclose(min_eigenvalue(np.array([[2.0, 1.0], [1.0, 2.0]])), 1)

    def test_nonsymmetric_rejected(self):
        with pytest.raises(ValueError):
            eigvals(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_det_plus_equals_det_when_psd(self, rng):
        A = rng.standard_normal((200, 3, 3))
        M = A @ np.swapaxes(A, 1, 2)
        assert np.allclose(det_plus(M), np.linalg.det(M), rtol=1e-10)
        assert np.allclose(det_signed(M), np.linalg.det(M), rtol=1e-10)

    def test_det_plus_zero_with_nonpositive_eigenvalue(self, rng):
        M = rng.standard_normal((200, 3, 3))
        M = M + np.swapaxes(M, 1, 2)
        lam = np.linalg.eigvalsh(M)
        dp = det_plus(M)
        ref = np.prod(np.maximum(lam, 0), axis=-1)
        assert np.allclose(dp, ref, rtol=1e-10, atol=1e-12)

    def test_spectral_invariance(self, rng):
        M = rng.standard_normal((100, 4, 4))
        M = M + np.swapaxes(M, 1, 2)
        Q, _ = np.linalg.qr(rng.standard_normal((100, 4, 4)))
        R = Q @ M @ np.swapaxes(Q, 1, 2)
        R = 0.5 * (R + np.swapaxes(R, 1, 2))
        assert np.allclose(det_plus(R), det_plus(M), rtol=1e-9, atol=1e-12)

    def test_clamp_band(self):
        tiny = np.diag([1.0, 1e-14])
        assert det_plus(tiny) == 0.0
        assert det_plus(np.diag([1.0, -1e-14])) == 0.0

    def test_against_bisection(self, rng):
        M = rng.standard_normal((500, 3, 3))
        M = M + np.swapaxes(M, 1, 2)
        ref, _ = det_plus_oracle(M)
        assert np.allclose(det_plus(M), ref, rtol=1e-10, atol=1e-12)
