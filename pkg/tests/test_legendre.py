import math

import numpy as np
import pytest

from abreu_toric.legendre import (DualPotential, LegendreError, XGrid, check_lemma42, inclusion_check,
                                  legendre_batch, legendre_value, phi_field, sublevel)
from abreu_toric.potential import SymplecticPotential

from conftest import bump_1d, interior_points, poly_psi


def test_xgrid_nodes():
    X = XGrid((0.0, 1.0), 1.0, 0.5)
    assert len(X) == 25 and X.nodes.shape == (25, 2)
    np.testing.assert_allclose(X.nodes[0], [-1.0, 0.0])
    np.testing.assert_allclose(X.nodes[-1], [1.0, 2.0])
    assert XGrid.from_dict({"center": [0], "half_width": 2, "h": 1}).key() == ((0.0,), 2.0, 1.0)


class TestClosedForms:
    def test_interval_f0(self, v_interval):
        f, xi, M = legendre_value(v_interval, [0.0])
        assert f == pytest.approx(math.log(2), abs=1e-8)
        assert xi[0] == pytest.approx(0.5, abs=1e-12)
        assert M[0, 0] == pytest.approx(0.25, abs=1e-12)

    def test_interval_softplus(self, v_interval):
        x = np.linspace(-15, 15, 61)
        r = legendre_batch(v_interval, x[:, None])
        np.testing.assert_allclose(r.f, np.logaddexp(0, x), atol=1e-9)
        np.testing.assert_allclose(r.xi[:, 0], 1 / (1 + np.exp(-x)), atol=1e-12)

    def test_cp2_log_sum_exp(self, cp2):
        X = np.random.default_rng(0).uniform(-5, 5, size=(50, 2))
        r = legendre_batch(SymplecticPotential(cp2), X)
        expect = np.log1p(np.exp(X).sum(axis=1))
        np.testing.assert_allclose(r.f, expect, atol=1e-9)


class TestDuality:
    @pytest.mark.parametrize("name", ["interval", "cp2", "square"])
    def test_hessian_duality(self, request, name):
        P = request.getfixturevalue(name)
        u = SymplecticPotential(P, poly_psi(P.dim, {(2,) + (0,) * (P.dim - 1): 0.1}))
        X = np.random.default_rng(2).uniform(-3, 3, size=(100, P.dim))
        r = legendre_batch(u, X)
        H = u.derivs(r.xi, 2)[2]
        np.testing.assert_allclose(r.M @ H, np.broadcast_to(np.eye(P.dim), H.shape), atol=1e-8)

    def test_involution(self, square):
        # grad u(xi(x)) = x and f(x) + u(xi) = <x, xi>
        u = SymplecticPotential(square, poly_psi(2, {(2, 0): 0.2, (1, 1): 0.05}))
        X = np.random.default_rng(4).uniform(-4, 4, size=(100, 2))
        r = legendre_batch(u, X)
        val, grad = u.derivs(r.xi, 1)[:2]
        assert np.abs(grad - X).max() <= 1e-8
        assert np.abs(r.f + val - np.einsum("mi,mi->m", X, r.xi)).max() <= 1e-8

    def test_inverse_direction(self, cp2):
        u = SymplecticPotential(cp2)
        pts = interior_points(cp2, 100, seed=8, pad=1e-3)
        X = u.derivs(pts, 1)[1]
        r = legendre_batch(u, X)
        assert np.abs(r.xi - pts).max() <= 1e-8

    def test_gradient_of_f_is_xi(self, u_bump):
        x, e = 0.7, 1e-5
        fp = legendre_value(u_bump, [x + e])[0]
        fm = legendre_value(u_bump, [x - e])[0]
        assert (fp - fm) / (2 * e) == pytest.approx(legendre_value(u_bump, [x])[1][0], abs=1e-8)

    def test_det_identity(self, cp2):
        u = SymplecticPotential(cp2, poly_psi(2, {(0, 2): 0.3}))
        r = legendre_batch(u, np.random.default_rng(9).uniform(-2, 2, size=(30, 2)))
        d = np.linalg.det(u.derivs(r.xi, 2)[2])
        np.testing.assert_allclose(np.linalg.det(r.M) * d, 1.0, rtol=1e-9)

    def test_nonconvex_raises(self, interval):
        u = SymplecticPotential(interval, bump_1d(-40.0))
        with pytest.raises(LegendreError):
            legendre_batch(u, [[3.0]])


class TestPhi:
    def test_phi_zero_for_v(self, v_interval):
        pf = phi_field(v_interval, XGrid((0.0,), 5.0, 0.5))
        assert np.abs(pf.phi).max() == 0.0
        assert pf.header() == ["x_1", "xi_1", "f", "g", "phi"]
        assert len(list(pf.rows())) == 21

    def test_phi_at_zero(self, u_bump):
        # u = v + c(xi-1/2)^2: xi(0) = 1/2, so f(0) = -u(1/2) = log 2 = g(0)
        pf = phi_field(u_bump, XGrid((0.0,), 1.0, 1.0))
        assert pf.phi[1] == pytest.approx(0.0, abs=1e-10)

    def test_cache(self, u_bump):
        d = DualPotential(u_bump)
        X = XGrid((0.0,), 1.0, 0.5)
        assert d.on_grid(X) is d.on_grid(X)

    def test_sup_comparison_coarse(self, u_bump):
        r = check_lemma42(u_bump, 1e-2, XGrid((0.0,), 20.0, 0.05), tolerance=2e-2)
        assert r.passed
        assert r.psi_sup == pytest.approx(0.025, abs=2e-3)


class TestSublevel:
    def test_monotone_in_level(self, u_bump):
        X = XGrid((0.0,), 5.0, 0.25)
        a = sublevel("f", u_bump, 1.0, X)
        b = sublevel("f", u_bump, 2.0, X)
        assert inclusion_check(a, b)
        assert a.mask.sum() < b.mask.sum()

    def test_f_g_shift(self, u_bump):
        # |phi| <= sup|psi| = 0.025, so {f <= C} sits inside {g <= C + 0.025}
        X = XGrid((0.0,), 6.0, 0.1)
        assert inclusion_check(sublevel("f", u_bump, 1.5, X), sublevel("g", u_bump, 1.5 + 0.025, X))

    def test_bad_tag_and_grid(self, u_bump):
        with pytest.raises(ValueError):
            sublevel("h", u_bump, 1.0, XGrid((0.0,), 1.0, 0.5))
        with pytest.raises(ValueError):
            inclusion_check(sublevel("f", u_bump, 1.0, XGrid((0.0,), 1.0, 0.5)),
                            sublevel("f", u_bump, 1.0, XGrid((0.0,), 2.0, 0.5)))
