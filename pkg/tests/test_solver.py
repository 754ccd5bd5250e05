import numpy as np
import pytest

from abreu_toric.abreu import abreu_analytic
from abreu_toric.estimates import check_det_lower
from abreu_toric.polytope import DelzantPolytope
from abreu_toric.potential import GridPsi, SymplecticPotential, normalize_at
from abreu_toric.solver import (NonConvexStartError, NonMetricSolutionError, SolveConfig, continuation,
                                solve_1d, solve_nd)


def sin_bump(x):
    return 0.1 * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])


def affine_residual(values, nodes):
    A = np.c_[nodes, np.ones(len(nodes))]
    return np.abs(values - A @ np.linalg.lstsq(A, values, rcond=None)[0]).max()


QUARTIC = {"kind": "polynomial", "terms": [[[2], 12.0], [[1], -12.0], [[0], 4.0]]}


class TestSolve1D:
    def test_constant_two(self):
        res = solve_1d(2.0)
        x = res.grid.nodes[:, 0]
        assert res.converged and res.certificate is None
        assert np.abs(res.w - x * (1 - x)).max() <= 1e-12

    def test_zero_infeasible(self):
        res = solve_1d(0.0)
        assert not res.converged and res.psi is None
        assert res.certificate["integral_K_minus_2"] == pytest.approx(-2.0, abs=1e-12)
        assert res.certificate["moment_minus_length"] == pytest.approx(-1.0, abs=1e-12)

    def test_quartic(self):
        res = solve_1d(QUARTIC)
        assert res.potential.psi.w(np.array([0.5]))[0] == pytest.approx(0.1875, abs=1e-12)
        x = np.linspace(0.02, 0.98, 49)[:, None]
        A = abreu_analytic(res.potential, x)["A"]
        assert np.abs(A + 12 * x[:, 0] ** 2 - 12 * x[:, 0] + 4).max() <= 1e-8

    def test_shifted_interval(self):
        # K = 2/(b-a)... on [1, 3]: w = (xi-1)(3-xi)/2 needs K = 1
        res = solve_1d(1.0, (1.0, 3.0), h=1 / 16)
        x = res.grid.nodes[:, 0]
        assert np.abs(res.w - (x - 1) * (3 - x) / 2).max() <= 1e-12

    def test_non_metric(self):
        # int K = 2 and moment = 1 but w dips negative
        K = {"kind": "polynomial", "terms": [[[2], 120.0], [[1], -120.0], [[0], 22.0]]}
        with pytest.raises(NonMetricSolutionError):
            solve_1d(K)

    def test_non_polynomial_curvature(self):
        res = solve_1d(lambda x: 2.0 + 0.0 * x[:, 0])
        x = res.grid.nodes[:, 0]
        assert np.abs(res.w - x * (1 - x)).max() <= 1e-10

    def test_gauge_and_rows(self):
        res = solve_1d(QUARTIC, h=1 / 8)
        val, grad = res.potential.derivs([[0.5]], 1)[:2]
        assert abs(val[0]) < 1e-12 and abs(grad[0, 0]) < 1e-12
        assert res.header() == ["xi_1", "psi", "u", "w", "free"]
        assert len(list(res.rows())) == len(res.grid)


class TestConfig:
    def test_margin(self):
        with pytest.raises(ValueError):
            SolveConfig(h=0.1, margin=0.1)

    def test_tol(self):
        with pytest.raises(ValueError):
            SolveConfig(h=0.1, margin=0.2, tol=0.0)


@pytest.fixture(scope="module")
def square_run():
    P = DelzantPolytope.unit_square()
    cfg = SolveConfig(h=1 / 32, margin=1 / 16, band="zero")
    return P, solve_nd(P, 4.0, cfg, sin_bump)


class TestSolveND:
    def test_square_converges(self, square_run):
        _, res = square_run
        assert res.converged
        assert res.max_residual < 1e-6
        assert res.final.residual_summary()["max"] < 1e-6

    def test_square_recovers_zero(self, square_run):
        _, res = square_run
        assert affine_residual(res.psi, res.grid.nodes) < 1e-4
        assert np.abs(res.psi).max() < 1e-4

    def test_square_det_lower(self, square_run):
        _, res = square_run
        rep = check_det_lower(res.potential, 4.0, res.final.grid)
        assert rep.passed

    def test_history_nonincreasing(self, square_run):
        _, res = square_run
        for s in res.steps:
            assert s["converged"]
        h = res.residual_history
        assert all(b <= a for a, b in zip(h, h[1:]))

    def test_gauge(self, square_run):
        _, res = square_run
        g = res.grid
        i = g.locate(res.gauge_point)
        assert abs(res.psi[i]) < 1e-12
        for k in range(2):
            e = np.zeros(2, dtype=int)
            e[k] = 1
            ip, im = g.neighbor(e)[i], g.neighbor(-e)[i]
            assert abs(res.psi[ip] - res.psi[im]) < 1e-12

    def test_affine_renormalize(self, square_run):
        # adding an affine function and normalising again reproduces psi
        _, res = square_run
        p = res.gauge_point
        g = res.grid
        shifted = SymplecticPotential(g.polytope, GridPsi(g, res.psi + g.nodes @ [2.0, -3.0] + 5.0))
        a = normalize_at(res.potential, p).value(g.nodes)
        b = normalize_at(shifted, p).value(g.nodes)
        assert np.abs(a - b).max() < 1e-10

    def test_nonconvex_start(self, square):
        cfg = SolveConfig(h=1 / 16, margin=1 / 8)
        with pytest.raises(NonConvexStartError):
            solve_nd(square, 4.0, cfg, lambda x: -5 * (x[:, 0] - 0.5) ** 2)

    def test_interval_band_from_closed_form(self, interval):
        exact = solve_1d(2.0).potential.psi
        cfg = SolveConfig(h=1 / 64, margin=1 / 32, band=exact)
        res = solve_nd(interval, 2.0, cfg, lambda x: 0.05 * (x[:, 0] - 0.5) ** 2)
        assert res.converged
        ref = exact.derivs(res.grid.nodes, 0)[0]
        assert affine_residual(res.psi - ref, res.grid.nodes) < 1e-10

    def test_affine_start_invariance(self, square):
        cfg = SolveConfig(h=1 / 16, margin=1 / 8, band="zero")
        a = solve_nd(square, 4.0, cfg, sin_bump)
        b = solve_nd(square, 4.0, cfg, lambda x: sin_bump(x) + 3 * x[:, 0] - x[:, 1] + 2)
        assert a.converged and b.converged
        assert np.abs(a.psi - b.psi).max() < 1e-8

    def test_budget_exhausted(self, square):
        cfg = SolveConfig(h=1 / 16, margin=1 / 8, max_iter=1, tol=1e-14)
        res = solve_nd(square, 4.0, cfg, sin_bump)
        assert not res.converged and "budget" in res.message


class TestContinuation:
    def test_quartic_1d(self, interval):
        exact = solve_1d(QUARTIC).potential.psi
        cfg = SolveConfig(h=1 / 1024, margin=1 / 512, tol=1e-4, band=exact)
        res = continuation(interval, QUARTIC, 4, cfg)
        assert res.converged and len(res.steps) == 4
        ref = exact.derivs(res.grid.nodes, 0)[0]
        assert affine_residual(res.psi - ref, res.grid.nodes) < 1e-6

    def test_trivial_square(self, square):
        res = continuation(square, 4.0, 2, SolveConfig(h=1 / 16, margin=1 / 8))
        assert res.converged and np.abs(res.psi).max() < 1e-10

    def test_bad_steps(self, square):
        with pytest.raises(ValueError):
            continuation(square, 4.0, 0, SolveConfig(h=1 / 16, margin=1 / 8))
