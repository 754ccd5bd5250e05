"""Explicit a priori quantities: the determinant lower bound, the determinant
ratio H, the Ricci norm of the reference metric, and the H upper bound.

Ricci norm convention: with ``M = D^2 g`` and ``P = D^2 log det M`` in
x-coordinates, ``|Ric| := sqrt(tr((M^-1 P)^2))`` and ``tr(M^-1 P) = A(u)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .abreu import CONVENTION, abreu_operator, in_class_R, logdet_derivatives
from .legendre import DualPotential, XGrid, legendre_batch, phi_field, reference_potential
from .polytope import GridDomain
from .potential import SymplecticPotential

RICCI_CONVENTION = "|Ric| = sqrt(tr((M^-1 P)^2)), M = D^2 g(x), P = D^2 log det M (box estimate)"
S_ASSUMPTION = "max|S| taken as max |A(u)| over the xi-grid (curvature of the perturbed metric)"

# 4th-order centred stencils
_D1 = {-2: 1 / 12, -1: -8 / 12, 1: 8 / 12, 2: -1 / 12}
_D2 = {-2: -1 / 12, -1: 16 / 12, 0: -30 / 12, 1: 16 / 12, 2: -1 / 12}


def d1_bound(b: float, diam: float, n: int) -> float:
    """Lower bound ``(4 b diam^2 / n)^-n`` for det D^2u when ``|A(u)| <= b``."""
    if not b > 0:
        raise ValueError("b must be positive: the determinant bound degenerates at b = 0")
    if not diam > 0 or n < 1:
        raise ValueError("diameter must be positive and n >= 1")
    return (4.0 * b * diam ** 2 / n) ** (-n)


@dataclass(frozen=True)
class DetLowerReport:
    status: str            # "pass" | "fail" | "precondition violated"
    passed: bool | None
    b: float
    d1: float | None
    min_det: float
    argmin: list
    margin: float | None
    max_abs_A: float


def check_det_lower(u: SymplecticPotential, b: float, grid: GridDomain) -> DetLowerReport:
    """``min det D^2u >= d1(b, Diam, n)`` over the grid, for ``u`` with ``|A(u)| <= b``."""
    d1 = d1_bound(b, grid.polytope.diameter(), grid.dim)
    member = in_class_R(u, b, grid)
    det = u.derivs(grid.nodes, 2)[2]
    dets = np.linalg.det(det)
    i = int(np.argmin(dets))
    if not member.passed:
        return DetLowerReport("precondition violated", None, float(b), d1, float(dets[i]),
                             grid.nodes[i].tolist(), None, member.max_abs_A)
    ok = bool(dets[i] >= d1)
    return DetLowerReport("pass" if ok else "fail", ok, float(b), d1, float(dets[i]),
                         grid.nodes[i].tolist(), float(dets[i] - d1), member.max_abs_A)


@dataclass(frozen=True)
class XField:
    xgrid: XGrid
    values: np.ndarray

    def argmax(self) -> tuple[float, list]:
        i = int(np.argmax(self.values))
        return float(self.values[i]), self.xgrid.nodes[i].tolist()


def H_field(u: SymplecticPotential, xgrid: XGrid, dual_u: DualPotential | None = None,
            dual_v: DualPotential | None = None) -> XField:
    """``H(x) = det D^2 g / det D^2 f``, via ``det D^2 f = 1/det D^2 u(xi(x))``."""
    Mf = (dual_u or DualPotential(u)).on_grid(xgrid).M
    Mg = (dual_v or DualPotential(reference_potential(u))).on_grid(xgrid).M
    return XField(xgrid, np.linalg.det(Mg) / np.linalg.det(Mf))


def _default_step(h: float) -> float:
    return h * max(1, math.ceil(0.05 / h - 1e-9))


def _logdet_M(u: SymplecticPotential, X: np.ndarray) -> np.ndarray:
    M = legendre_batch(u, X).M
    return np.linalg.slogdet(M)[1]


def metric_and_P(u: SymplecticPotential, X, method: str = "fd4", step: float = 0.05):
    """``M = D^2 f`` and ``P = D^2 log det M`` at x-points for the dual of ``u``.

    ``chain``: exact chain rule through ``xi(x)`` using third and fourth
    derivatives of ``u``. ``fd4``: fourth-order centred differences of
    ``log det M`` with spacing ``step``. Where ``M`` is tiny (far out in the
    box) ``M^-1 P`` amplifies the absolute FD error, so ``fd4`` is only
    reliable on moderate boxes; it serves as an independent cross-check.
    """
    X = np.asarray(X, dtype=float).reshape(-1, u.dim)
    m, n = X.shape
    lv = legendre_batch(u, X)
    M = lv.M
    if method == "chain":
        _, _, H, T3, T4 = u.derivs(lv.xi, 4)
        _, dL, d2L = logdet_derivatives(H, T3, T4)
        dH = np.einsum("mijc,mcb->mijb", T3, M)
        dM = -np.einsum("mij,mjkb,mkl->milb", M, dH, M)
        P = -np.einsum("mia,mij,mjb->mab", M, d2L, M) - np.einsum("mi,miab->mab", dL, dM)
        return M, P
    if method != "fd4":
        raise ValueError(f"unknown method {method!r}")
    cache: dict = {}

    def F(off):
        if off not in cache:
            cache[off] = _logdet_M(u, X + step * np.array(off, dtype=float))
        return cache[off]

    P = np.zeros((m, n, n))
    for i in range(n):
        for a, c in _D2.items():
            off = tuple(a if k == i else 0 for k in range(n))
            P[:, i, i] += c * F(off)
        for j in range(i + 1, n):
            acc = np.zeros(m)
            for (a, ca), (b, cb) in itertools.product(_D1.items(), repeat=2):
                off = tuple(a if k == i else (b if k == j else 0) for k in range(n))
                acc += ca * cb * F(off)
            P[:, i, j] = P[:, j, i] = acc
    return M, P / step ** 2


@dataclass(frozen=True)
class RicciResult:
    xgrid: XGrid
    norm: np.ndarray     # |Ric| per node
    trace: np.ndarray    # tr(M^-1 P) per node
    kappa: float
    argmax: list
    method: str
    step: float | None
    convention: str = RICCI_CONVENTION


def ricci_norm(reference: SymplecticPotential, xgrid: XGrid, method: str = "chain",
               step: float | None = None) -> RicciResult:
    """Pointwise Ricci norm of the dual metric of ``reference`` and its box maximum."""
    step = _default_step(xgrid.h) if step is None else step
    M, P = metric_and_P(reference, xgrid.nodes, method, step)
    MP = np.linalg.solve(M, P)
    norm = np.sqrt(np.maximum(np.einsum("mij,mji->m", MP, MP), 0.0))
    trace = np.einsum("mii->m", MP)
    i = int(np.argmax(norm))
    return RicciResult(xgrid, norm, trace, float(norm[i]), xgrid.nodes[i].tolist(), method,
                       step if method == "fd4" else None)


def dual_scalar_curvature(u: SymplecticPotential, xgrid: XGrid, method: str = "chain",
                          step: float | None = None) -> XField:
    """``tr(M_f^-1 P_f)(x)``, which equals ``A(u)(xi(x))``."""
    step = _default_step(xgrid.h) if step is None else step
    M, P = metric_and_P(u, xgrid.nodes, method, step)
    return XField(xgrid, np.einsum("mii->m", np.linalg.solve(M, P)))


def prop31_rhs(max_abs_S: float, kappa: float, osc_phi: float, n: int) -> float:
    """``(2 + S/(n(K+1)))^n exp((2K+1) osc)``."""
    base = (2.0 + max_abs_S / (n * (kappa + 1.0))) ** n
    try:
        return base * math.exp((2.0 * kappa + 1.0) * osc_phi)
    except OverflowError:
        return math.inf


@dataclass
class EstimateReport:
    b: float | None = None
    d1: float | None = None
    min_det: float | None = None
    min_det_location: list | None = None
    pass_lemma32: bool | None = None
    det_lower_status: str | None = None
    dual_det_max: float | None = None
    pass_dual_det: bool | None = None
    max_abs_S: float | None = None
    H_max: float | None = None
    H_argmax: list | None = None
    kappa: float | None = None
    kappa_argmax: list | None = None
    osc_phi: float | None = None
    min_phi: float | None = None
    C: float | None = None
    rhs_33: float | None = None
    F_max: float | None = None
    F_argmax: list | None = None
    F_pointwise_bound: float | None = None
    pass_F_pointwise: bool | None = None
    pass_prop31: bool | None = None
    flagged_nodes: int = 0
    margins: dict = field(default_factory=dict)
    conventions: dict = field(default_factory=lambda: {
        "operator": CONVENTION, "ricci": RICCI_CONVENTION, "S": S_ASSUMPTION})
    errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def passed(self) -> bool:
        flags = [self.pass_lemma32, self.pass_dual_det, self.pass_prop31]
        return all(f is True for f in flags if f is not None) and not self.errors and any(
            f is not None for f in flags)


def verify_prop31(u: SymplecticPotential, xgrid: XGrid, xi_grid: GridDomain,
                  report: EstimateReport | None = None, kappa_method: str = "chain") -> EstimateReport:
    """Check ``max H <= rhs`` on the x-box, plus the pointwise bound at argmax F."""
    rep = report or EstimateReport()
    n = u.dim
    try:
        curv = abreu_operator(u, xi_grid, "analytic" if u.analytic else "fd")
        S, _ = curv.max_abs_A()
        rep.flagged_nodes = curv.n_flagged
        v = reference_potential(u)
        du, dv = DualPotential(u), DualPotential(v)
        phi = phi_field(u, xgrid, du, dv).phi
        ric = ricci_norm(v, xgrid, kappa_method)
        H = H_field(u, xgrid, du, dv)
    except Exception as exc:  # partial report, no verdict
        rep.errors.append(f"{type(exc).__name__}: {exc}")
        rep.pass_prop31 = None
        return rep
    kappa = ric.kappa
    C = 2 * kappa + 1
    osc = float(phi.max() - phi.min())
    rhs = prop31_rhs(S, kappa, osc, n)
    Hmax, Harg = H.argmax()
    with np.errstate(over="ignore"):
        F = np.exp(-C * phi) * H.values
        point_bound = float((2 + S / (n * (kappa + 1))) ** n * np.exp(-C * float(phi.min())))
    j = int(np.argmax(F))
    rep.max_abs_S, rep.kappa, rep.kappa_argmax = S, kappa, ric.argmax
    rep.osc_phi, rep.min_phi, rep.C, rep.rhs_33 = osc, float(phi.min()), C, rhs
    rep.H_max, rep.H_argmax = Hmax, Harg
    rep.F_max, rep.F_argmax = float(F[j]), xgrid.nodes[j].tolist()
    rep.F_pointwise_bound = point_bound
    rep.pass_F_pointwise = bool(F[j] <= point_bound)
    rep.pass_prop31 = bool(Hmax <= rhs) and curv.n_flagged == 0
    rep.margins["H_bound"] = rhs - Hmax
    rep.margins["F_pointwise"] = point_bound - float(F[j])
    return rep


def verify_bounds(u: SymplecticPotential, xi_grid: GridDomain, xgrid: XGrid,
                  b: float | None = None, kappa_method: str = "chain") -> EstimateReport:
    """Full estimate report: determinant lower bound, its dual form, and the H bound."""
    rep = EstimateReport()
    try:
        if b is None:
            curv = abreu_operator(u, xi_grid, "analytic" if u.analytic else "fd")
            b = curv.max_abs_A()[0]
        rep.b = float(b)
        lem = check_det_lower(u, b, xi_grid)
        rep.d1, rep.min_det, rep.min_det_location = lem.d1, lem.min_det, lem.argmin
        rep.det_lower_status, rep.pass_lemma32 = lem.status, lem.passed
        if lem.margin is not None:
            rep.margins["det_lower"] = lem.margin
        Mf = DualPotential(u).on_grid(xgrid).M
        dets = np.linalg.det(Mf)
        rep.dual_det_max = float(dets.max())
        if lem.passed:
            rep.pass_dual_det = bool(np.all(dets <= 1.0 / lem.d1))
            rep.margins["dual_det"] = 1.0 / lem.d1 - rep.dual_det_max
    except Exception as exc:
        rep.errors.append(f"{type(exc).__name__}: {exc}")
        return rep
    return verify_prop31(u, xgrid, xi_grid, rep, kappa_method)
