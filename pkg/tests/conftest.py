import numpy as np
import pytest

from abreu_toric.polynomial import Polynomial
from abreu_toric.polytope import DelzantPolytope
from abreu_toric.potential import PolynomialPsi, SymplecticPotential


def poly_psi(dim, terms):
    return PolynomialPsi(Polynomial(dim, terms))


def bump_1d(c, p=0.5):
    """``c (xi - p)^2`` as a perturbation."""
    return poly_psi(1, {(2,): c, (1,): -2 * c * p, (0,): c * p * p})


def interior_points(P, m, seed=0, pad=0.05):
    """``m`` random points whose facet values all exceed ``pad``."""
    rng = np.random.default_rng(seed)
    lo, hi = P.vertices.min(axis=0), P.vertices.max(axis=0)
    out = []
    while len(out) < m:
        x = rng.uniform(lo, hi, size=(4 * m, P.dim))
        ok = np.all(P.facet_values(x) > pad, axis=1)
        out.extend(x[ok])
    return np.array(out[:m])


@pytest.fixture
def interval():
    return DelzantPolytope.interval(0.0, 1.0)


@pytest.fixture
def square():
    return DelzantPolytope.unit_square()


@pytest.fixture
def cp2():
    return DelzantPolytope.simplex(2)


@pytest.fixture
def p112():
    return DelzantPolytope([[1, 0], [0, 1], [-1, -2]], [0, 0, -2])


@pytest.fixture
def v_interval(interval):
    return SymplecticPotential(interval)


@pytest.fixture
def u_bump(interval):
    """``v + 0.1 (xi - 1/2)^2`` on the unit interval."""
    return SymplecticPotential(interval, bump_1d(0.1))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
