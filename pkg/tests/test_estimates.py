import math

import numpy as np
import pytest

from abreu_toric.estimates import (H_field, check_det_lower, d1_bound, dual_scalar_curvature, metric_and_P,
                                   prop31_rhs, ricci_norm, verify_bounds, verify_prop31)
from abreu_toric.legendre import XGrid
from abreu_toric.potential import SymplecticPotential

from conftest import bump_1d, poly_psi


class TestD1:
    def test_examples(self):
        assert d1_bound(2, 1, 1) == 0.125
        assert d1_bound(1, 1, 2) == pytest.approx(0.25)
        assert d1_bound(6, math.sqrt(2), 2) == pytest.approx(1 / 576)

    def test_monotone(self):
        assert d1_bound(1, 1, 1) > d1_bound(2, 1, 1) > d1_bound(2, 2, 1)

    @pytest.mark.parametrize("args", [(0, 1, 1), (-1, 1, 1), (1, 0, 1), (1, 1, 0)])
    def test_degenerate(self, args):
        with pytest.raises(ValueError):
            d1_bound(*args)


class TestDetLower:
    def test_interval_v(self, interval, v_interval):
        r = check_det_lower(v_interval, 2.0, interval.interior_grid(1 / 64, 1 / 64))
        assert r.status == "pass" and r.passed
        assert r.d1 == 0.125
        assert r.min_det == pytest.approx(4.0, abs=1e-12)
        assert r.argmin == [0.5]

    def test_precondition(self, interval, v_interval):
        r = check_det_lower(v_interval, 1.0, interval.interior_grid(1 / 64, 1 / 64))
        assert r.status == "precondition violated" and r.passed is None

    def test_b_zero(self, interval, v_interval):
        with pytest.raises(ValueError):
            check_det_lower(v_interval, 0.0, interval.interior_grid(0.1, 0.1))

    def test_square(self, square):
        r = check_det_lower(SymplecticPotential(square), 4.0, square.interior_grid(1 / 16, 1 / 16))
        assert r.passed and r.min_det == pytest.approx(16.0)


class TestH:
    def test_guillemin_is_one(self, v_interval):
        H = H_field(v_interval, XGrid((0.0,), 10.0, 0.5))
        np.testing.assert_allclose(H.values, 1.0, atol=1e-12)

    def test_bump_at_zero(self, u_bump):
        H = H_field(u_bump, XGrid((0.0,), 1.0, 1.0))
        assert H.values[1] == pytest.approx(1.05, abs=1e-10)


class TestRicci:
    def test_flat_dual(self):
        # u = 1/2 |xi|^2 has f = 1/2 |x|^2 and a flat dual metric
        u = SymplecticPotential.quadratic(2)
        M, P = metric_and_P(u, np.random.default_rng(0).normal(size=(10, 2)), "chain")
        np.testing.assert_allclose(M, np.broadcast_to(np.eye(2), M.shape), atol=1e-12)
        np.testing.assert_allclose(P, 0, atol=1e-12)

    @pytest.mark.parametrize("method,tol", [("chain", 1e-9), ("fd4", 1e-5)])
    def test_cp1(self, v_interval, method, tol):
        r = ricci_norm(v_interval, XGrid((0.0,), 5.0, 0.1), method)
        assert r.kappa == pytest.approx(2.0, abs=tol)
        np.testing.assert_allclose(r.trace, -2.0, atol=tol)

    def test_cp2(self, cp2):
        r = ricci_norm(SymplecticPotential(cp2), XGrid((0.0, 0.0), 3.0, 0.5))
        assert r.kappa == pytest.approx(3 * math.sqrt(2), abs=1e-6)
        np.testing.assert_allclose(r.trace, -6.0, atol=1e-6)

    def test_chain_vs_fd4(self, square):
        u = SymplecticPotential(square, poly_psi(2, {(2, 0): 0.1, (1, 1): 0.05}))
        X = XGrid((0.0, 0.0), 1.0, 0.5)
        a = metric_and_P(u, X.nodes, "chain")[1]
        b = metric_and_P(u, X.nodes, "fd4", 0.05)[1]
        assert np.abs(a - b).max() < 1e-5

    def test_unknown_method(self, v_interval):
        with pytest.raises(ValueError):
            metric_and_P(v_interval, [[0.0]], "spectral")

    def test_dual_scalar_curvature_matches_A(self, u_bump):
        from abreu_toric.abreu import abreu_analytic
        from abreu_toric.legendre import legendre_batch
        X = XGrid((0.0,), 4.0, 0.5)
        tr = dual_scalar_curvature(u_bump, X).values
        xi = legendre_batch(u_bump, X.nodes).xi
        np.testing.assert_allclose(tr, abreu_analytic(u_bump, xi)["A"], atol=1e-8)


class TestHBound:
    def test_rhs_examples(self):
        assert prop31_rhs(2, 2, 0, 1) == pytest.approx(8 / 3)
        assert prop31_rhs(0, 0, 0, 2) == pytest.approx(4)
        assert prop31_rhs(2, 2, 1, 1) == pytest.approx(8 / 3 * math.exp(5))
        assert prop31_rhs(1, 1, 1e6, 1) == math.inf

    def test_cp1_guillemin(self, interval, v_interval):
        rep = verify_prop31(v_interval, XGrid((0.0,), 10.0, 0.1), interval.interior_grid(1 / 64, 1 / 64))
        assert rep.kappa == pytest.approx(2.0, abs=1e-6)
        assert rep.H_max == pytest.approx(1.0, abs=1e-12)
        assert rep.rhs_33 == pytest.approx(8 / 3, abs=1e-6)
        assert rep.pass_prop31 and rep.pass_F_pointwise

    def test_bump(self, interval, u_bump):
        rep = verify_prop31(u_bump, XGrid((0.0,), 10.0, 0.1), interval.interior_grid(1 / 64, 1 / 64))
        assert rep.pass_prop31
        assert rep.margins["H_bound"] > 0.5

    def test_error_is_recorded(self, interval):
        u = SymplecticPotential(interval, bump_1d(-40.0))
        rep = verify_prop31(u, XGrid((0.0,), 5.0, 0.5), interval.interior_grid(0.1, 0.1))
        assert rep.errors and rep.pass_prop31 is None and not rep.passed


class TestVerifyBounds:
    def test_interval_v(self, interval, v_interval):
        rep = verify_bounds(v_interval, interval.interior_grid(1 / 64, 1 / 64), XGrid((0.0,), 10.0, 0.1), 2.0)
        assert rep.passed
        assert rep.pass_dual_det and rep.dual_det_max <= 8.0
        d = rep.to_dict()
        assert d["d1"] == 0.125 and "operator" in d["conventions"]

    def test_default_b(self, interval, u_bump):
        rep = verify_bounds(u_bump, interval.interior_grid(1 / 64, 1 / 64), XGrid((0.0,), 5.0, 0.25))
        assert rep.b == pytest.approx(rep.max_abs_S)
        assert rep.passed
