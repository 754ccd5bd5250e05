import numpy as np
from hypothesis import given, settings, strategies as st

from abreu_toric.abreu import abreu_analytic
from abreu_toric.estimates import d1_bound
from abreu_toric.legendre import XGrid, inclusion_check, legendre_batch, sublevel
from abreu_toric.polytope import DelzantPolytope, validate_delzant
from abreu_toric.potential import SymplecticPotential, normalize_at

from conftest import bump_1d, poly_psi

SHAPES = {
    "square": DelzantPolytope.unit_square(),
    "cp2": DelzantPolytope.simplex(2),
    "p112": DelzantPolytope([[1, 0], [0, 1], [-1, -2]], [0, 0, -2]),
    "hirzebruch1": DelzantPolytope([[1, 0], [0, 1], [-1, -1], [0, -1]], [0, 0, -2, -1]),
}

settings.register_profile("pkg", deadline=None, max_examples=40)
settings.load_profile("pkg")

elementary = st.sampled_from([np.array(m) for m in
                              ([[1, 1], [0, 1]], [[1, 0], [1, 1]], [[1, -1], [0, 1]], [[0, 1], [1, 0]],
                               [[-1, 0], [0, 1]])])
unimodular = st.lists(elementary, min_size=1, max_size=4).map(
    lambda ms: np.linalg.multi_dot(ms + [np.eye(2, dtype=int)]).astype(int))
shape = st.sampled_from(sorted(SHAPES))
coef = st.floats(-5, 5, allow_nan=False)


@given(shape, st.tuples(coef, coef))
def test_delzant_translation(name, t):
    P = SHAPES[name]
    assert validate_delzant(P.translate(t)).passed == validate_delzant(P).passed


@given(shape, st.randoms(use_true_random=False))
def test_delzant_relabel(name, rnd):
    P = SHAPES[name]
    idx = list(range(len(P.offsets)))
    rnd.shuffle(idx)
    Q = DelzantPolytope(P.normals[idx], P.offsets[idx])
    assert validate_delzant(Q).passed == validate_delzant(P).passed


@given(shape, unimodular)
def test_delzant_gl2z(name, T):
    P = SHAPES[name]
    r, s = validate_delzant(P), validate_delzant(P.pullback(T))
    assert r.passed == s.passed
    dets = sorted(abs(v["determinant"]) for v in r.violations if "determinant" in v)
    assert dets == sorted(abs(v["determinant"]) for v in s.violations if "determinant" in v)


pos = st.floats(0.01, 100, allow_nan=False)


@given(pos, pos, pos, st.integers(1, 4))
def test_d1_monotone(b, diam, factor, n):
    base = d1_bound(b, diam, n)
    assert d1_bound(b * (1 + factor), diam, n) < base
    assert d1_bound(b, diam * (1 + factor), n) < base


@st.composite
def square_potential(draw):
    c = [draw(st.floats(0, 0.5)) for _ in range(3)]
    return SymplecticPotential(SHAPES["square"], poly_psi(2, {(2, 0): c[0], (0, 2): c[1], (2, 2): c[2]}))


PTS = np.array([[0.2, 0.3], [0.5, 0.5], [0.9, 0.15], [0.05, 0.95]])


@given(square_potential(), coef, coef, coef)
def test_affine_invariance(u, a1, a2, c):
    a = abreu_analytic(u, PTS)["A"]
    b = abreu_analytic(u.plus_affine([a1, a2], c), PTS)["A"]
    assert np.abs(a - b).max() <= 1e-10 * max(1, np.abs(a).max())


@given(square_potential(), st.floats(0.1, 10))
def test_scaling_law(u, lam):
    a = abreu_analytic(u, PTS)["A"]
    b = abreu_analytic(u.scaled(lam), PTS)["A"]
    assert np.abs(lam * b - a).max() <= 1e-9


@given(square_potential(), st.floats(0.1, 0.9), st.floats(0.1, 0.9))
def test_normalize_idempotent(u, p1, p2):
    a = normalize_at(u, [p1, p2])
    b = normalize_at(a, [p1, p2])
    np.testing.assert_allclose(a.value(PTS), b.value(PTS), atol=1e-12)
    val, grad = a.derivs([[p1, p2]], 1)[:2]
    assert abs(val[0]) < 1e-12 and np.abs(grad).max() < 1e-12


@given(st.floats(0, 1), st.floats(-1, 3), st.floats(0, 2))
def test_sublevel_monotone(c, C, dC):
    u = SymplecticPotential(DelzantPolytope.interval(0, 1), bump_1d(c))
    X = XGrid((0.0,), 4.0, 0.5)
    assert inclusion_check(sublevel("f", u, C, X), sublevel("f", u, C + dC, X))


@given(st.floats(0, 1), st.lists(st.floats(-8, 8), min_size=1, max_size=10))
def test_legendre_gradient_inverse(c, xs):
    u = SymplecticPotential(DelzantPolytope.interval(0, 1), bump_1d(c))
    X = np.array(xs)[:, None]
    r = legendre_batch(u, X)
    assert np.abs(u.derivs(r.xi, 1)[1] - X).max() <= 1e-8
