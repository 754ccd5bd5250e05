"""The Abreu operator ``A(u) = sum_ij U^ij w_ij`` with ``w = 1/det D^2 u``.

Convention used throughout the package: scalar curvature ``K := -A(u)``, so a
potential solves the prescribed-curvature problem for ``K`` when
``A(u) + K == 0``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .polynomial import Polynomial
from .polytope import GridDomain
from .potential import DomainError, SymplecticPotential

CONVENTION = "A(u) = sum_ij U^ij w_ij, w = 1/det D^2u; scalar curvature K = -A(u)"


class SingularHessianError(np.linalg.LinAlgError):
    pass


def cofactor(H) -> tuple[float, np.ndarray]:
    """Determinant and adjugate of a symmetric matrix (``U H = det I``)."""
    H = np.asarray(H, dtype=float)
    det, U = cofactor_batch(H[None])
    return float(det[0]), U[0]


def cofactor_batch(H: np.ndarray, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`cofactor` over a stack of ``(m, n, n)`` matrices."""
    H = np.asarray(H, dtype=float)
    n = H.shape[-1]
    if n == 1:
        det = H[:, 0, 0].copy()
        U = np.ones_like(H)
    elif n == 2:
        a, b, c, d = H[:, 0, 0], H[:, 0, 1], H[:, 1, 0], H[:, 1, 1]
        det = a * d - b * c
        U = np.stack([np.stack([d, -b], -1), np.stack([-c, a], -1)], -2)
    elif n == 3:
        U = np.empty_like(H)
        for i in range(3):
            for j in range(3):
                r = [k for k in range(3) if k != j]
                c = [k for k in range(3) if k != i]
                minor = H[:, r][:, :, c]
                U[:, i, j] = (-1) ** (i + j) * (minor[:, 0, 0] * minor[:, 1, 1]
                                                - minor[:, 0, 1] * minor[:, 1, 0])
        det = np.einsum("mj,mj->m", H[:, 0, :], U[:, :, 0])
    else:
        det = np.linalg.det(H)
        with np.errstate(all="ignore"):
            U = det[:, None, None] * np.linalg.inv(H)
    if check:
        scale = np.abs(H).max(axis=(1, 2)) ** n
        bad = np.abs(det) <= 1e-14 * np.maximum(scale, 1e-300)
        if np.any(bad):
            cond = np.linalg.cond(H[bad][0])
            raise SingularHessianError(f"singular Hessian (condition number {cond:.3e})")
    return det, U


def _is_pd(H: np.ndarray) -> np.ndarray:
    """Positive definiteness of each matrix in a stack."""
    ev = np.linalg.eigvalsh(H)
    return ev[:, 0] > 0


def logdet_derivatives(H, T3, T4):
    """Gradient and Hessian of ``L = log det H`` from derivative tensors of ``u``."""
    Hinv = np.linalg.inv(H)
    dL = np.einsum("mab,mbai->mi", Hinv, T3)
    HT = np.einsum("mab,mbci->maci", Hinv, T3)  # H^-1 dH_i
    d2L = (np.einsum("mab,mbaij->mij", Hinv, T4)
           - np.einsum("maci,mcaj->mij", HT, HT))
    return Hinv, dL, d2L


def abreu_analytic(u: SymplecticPotential, pts) -> dict:
    """Pointwise analytic evaluation at an ``(m, n)`` array of points.

    Uses ``w_ij = w (L_i L_j - L_ij)`` with ``L = log det D^2u``, so only
    exact derivative tensors of ``u`` up to fourth order are needed.
    """
    if not u.analytic:
        raise ValueError(f"analytic mode needs closed-form 4th derivatives (psi kind {u.psi.kind!r})")
    pts = np.asarray(pts, dtype=float).reshape(-1, u.dim)
    _, _, H, T3, T4 = u.derivs(pts, 4)
    pd = _is_pd(H)
    det, U = cofactor_batch(np.where(pd[:, None, None], H, np.eye(u.dim)), check=False)
    Hs = np.where(pd[:, None, None], H, np.eye(u.dim))
    _, dL, d2L = logdet_derivatives(Hs, T3, T4)
    w = 1.0 / det
    wij = w[:, None, None] * (dL[:, :, None] * dL[:, None, :] - d2L)
    A = np.einsum("mij,mij->m", U, wij)
    nan = ~pd
    for arr in (det, w, A):
        arr[nan] = np.nan
    U[nan] = np.nan
    return {"det": det, "w": w, "U": U, "A": A, "flagged": nan}


def _w_at(u: SymplecticPotential, pts: np.ndarray):
    """``w = 1/det D^2u`` at points, NaN where outside or not convex."""
    pts = np.asarray(pts, dtype=float).reshape(-1, u.dim)
    out = np.full(len(pts), np.nan)
    ok = u.in_domain(pts)
    if ok.any():
        try:
            H = u.derivs(pts[ok], 2)[2]
        except DomainError:
            # grid perturbations: evaluate point by point to isolate support failures
            H = np.full((ok.sum(), u.dim, u.dim), np.nan)
            for r, p in enumerate(pts[ok]):
                try:
                    H[r] = u.derivs(p, 2)[2][0]
                except DomainError:
                    pass
        good = np.all(np.isfinite(H), axis=(1, 2))
        pd = np.zeros(len(H), dtype=bool)
        pd[good] = _is_pd(H[good])
        det, _ = cofactor_batch(np.where(pd[:, None, None], H, np.eye(u.dim)), check=False)
        vals = np.where(pd, 1.0 / det, np.nan)
        out[np.flatnonzero(ok)] = vals
    return out


def abreu_fd(u: SymplecticPotential, pts, step: float) -> dict:
    """Centred second-order finite differences of the ``w`` field with spacing ``step``."""
    pts = np.asarray(pts, dtype=float).reshape(-1, u.dim)
    n, m = u.dim, len(pts)
    offsets = list(itertools.product((-1, 0, 1), repeat=n))
    wv = {off: _w_at(u, pts + step * np.array(off)) for off in offsets}
    w0 = wv[(0,) * n]
    H = np.full((m, n, n), np.nan)
    ok = np.isfinite(w0)
    if ok.any():
        H[ok] = u.derivs(pts[ok], 2)[2]
    wij = np.empty((m, n, n))
    for i in range(n):
        e = tuple(int(k == i) for k in range(n))
        me = tuple(-x for x in e)
        wij[:, i, i] = (wv[e] - 2 * w0 + wv[me]) / step ** 2
        for j in range(i + 1, n):
            pp = tuple(int(k in (i, j)) for k in range(n))
            pm = tuple(1 if k == i else (-1 if k == j else 0) for k in range(n))
            mp = tuple(-x for x in pm)
            mm = tuple(-x for x in pp)
            wij[:, i, j] = wij[:, j, i] = (wv[pp] - wv[pm] - wv[mp] + wv[mm]) / (4 * step ** 2)
    flagged = ~np.all(np.stack([np.isfinite(v) for v in wv.values()]), axis=0)
    Hs = np.where(flagged[:, None, None], np.eye(n), H)
    det, U = cofactor_batch(Hs, check=False)
    A = np.einsum("mij,mij->m", U, wij)
    for arr in (det, A):
        arr[flagged] = np.nan
    U[flagged] = np.nan
    return {"det": det, "w": np.where(flagged, np.nan, 1.0 / det), "U": U, "A": A,
            "flagged": flagged}


@dataclass(eq=False)
class CurvatureResult:
    """Per-node Abreu data on a grid (flagged nodes carry NaN and are excluded)."""

    grid: GridDomain
    mode: str
    det_hess: np.ndarray
    w: np.ndarray
    U: np.ndarray
    A: np.ndarray
    flagged: np.ndarray
    K_target: np.ndarray | None = None
    convention: str = CONVENTION

    @property
    def K(self) -> np.ndarray:
        return -self.A

    @property
    def residual(self) -> np.ndarray | None:
        if self.K_target is None:
            return None
        return self.A + self.K_target

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())

    def _max_abs(self, arr):
        vals = np.where(self.flagged, -np.inf, np.abs(arr))
        i = int(np.argmax(vals))
        return float(vals[i]), i

    def max_abs_A(self) -> tuple[float, list]:
        v, i = self._max_abs(self.A)
        return v, self.grid.nodes[i].tolist()

    def residual_summary(self) -> dict:
        r = self.residual
        if r is None:
            raise ValueError("no target curvature supplied")
        good = r[~self.flagged]
        v, i = self._max_abs(r)
        return {"max": v, "rms": float(np.sqrt(np.mean(good ** 2))) if good.size else float("nan"),
                "argmax": self.grid.nodes[i].tolist(), "flagged": self.n_flagged}

    def rows(self):
        """CSV rows ``xi_1..xi_n, det_hess, w, A, K_target, residual, flagged``."""
        K = self.K_target if self.K_target is not None else np.full(len(self.A), np.nan)
        R = self.residual if self.residual is not None else np.full(len(self.A), np.nan)
        for i, xi in enumerate(self.grid.nodes):
            yield [*xi.tolist(), self.det_hess[i], self.w[i], self.A[i], K[i], R[i],
                   int(self.flagged[i])]

    def header(self) -> list[str]:
        return [f"xi_{i + 1}" for i in range(self.grid.dim)] + [
            "det_hess", "w", "A", "K_target", "residual", "flagged"]


def abreu_operator(u: SymplecticPotential, grid: GridDomain, mode: str = "analytic",
                   step: float | None = None) -> CurvatureResult:
    """Evaluate the Abreu operator at every grid node.

    ``mode='fd'`` differences the ``w`` field with spacing ``step`` (default:
    the grid spacing).
    """
    if mode == "analytic":
        r = abreu_analytic(u, grid.nodes)
    elif mode == "fd":
        r = abreu_fd(u, grid.nodes, grid.h if step is None else step)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return CurvatureResult(grid, mode, r["det"], r["w"], r["U"], r["A"], r["flagged"])


def curvature_function(spec, dim: int):
    """Turn a curvature spec (dict, number, Polynomial or callable) into a callable."""
    if isinstance(spec, Polynomial) or callable(spec):
        return spec
    if isinstance(spec, (int, float)):
        return Polynomial.constant(dim, float(spec))
    kind = spec["kind"]
    if kind == "constant":
        return Polynomial.constant(dim, float(spec["value"]))
    if kind == "affine":
        a = spec["a"]
        if len(a) != dim:
            raise ValueError(f"affine curvature has {len(a)} coefficients, expected {dim}")
        return Polynomial.affine(a, float(spec["b"]))
    if kind == "polynomial":
        return Polynomial(dim, [(t[0], t[1]) for t in spec["terms"]])
    raise ValueError(f"unknown curvature kind {kind!r}")


def residual(u: SymplecticPotential, K_target, grid: GridDomain, mode: str = "analytic",
             step: float | None = None) -> CurvatureResult:
    """``A(u) + K_target`` at every node; zero exactly when ``u`` has curvature ``K_target``."""
    res = abreu_operator(u, grid, mode, step)
    K = curvature_function(K_target, grid.dim)
    res.K_target = np.asarray(K(grid.nodes), dtype=float).reshape(-1)
    return res


@dataclass(frozen=True)
class MembershipReport:
    passed: bool
    b: float
    max_abs_A: float
    location: list
    flagged: int
    convention: str = field(default=CONVENTION)


def in_class_R(u: SymplecticPotential, b: float, grid: GridDomain, mode: str | None = None,
               atol: float = 1e-9) -> MembershipReport:
    """``max |A(u)| <= b`` over the grid (``atol`` absorbs rounding in the comparison)."""
    mode = mode or ("analytic" if u.analytic else "fd")
    res = abreu_operator(u, grid, mode)
    m, loc = res.max_abs_A()
    passed = bool(m <= b + atol) and res.n_flagged == 0
    return MembershipReport(passed, float(b), m, loc, res.n_flagged)
