"""Candidate solutions of the prescribed-curvature problem ``A(u) + K = 0``.

* 1D: exact. ``w'' = -K`` with Guillemin boundary behaviour of ``w``.
* nD: damped Gauss-Newton on grid values of ``psi``, with a fixed boundary
  band and an affine gauge at a grid node applied after convergence.
"""
from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from .abreu import CurvatureResult, cofactor_batch, curvature_function
from .polynomial import Polynomial
from .polytope import DelzantPolytope, GridDomain
from .potential import (GridPsi, Perturbation, SymplecticPotential, grid_fd_derivatives,
                        guillemin_derivs)

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9


class NonMetricSolutionError(ValueError):
    def __init__(self, msg, location):
        super().__init__(msg)
        self.location = location


class NonConvexStartError(ValueError):
    pass


@dataclass(eq=False)
class SolveResult:
    grid: GridDomain | None
    psi: np.ndarray | None
    converged: bool
    residual_history: list = field(default_factory=list)
    final: CurvatureResult | None = None
    iterations: int = 0
    message: str = ""
    certificate: dict | None = None
    w: np.ndarray | None = None
    u: np.ndarray | None = None
    potential: SymplecticPotential | None = None
    free: np.ndarray | None = None
    unknowns: np.ndarray | None = None
    gauge_point: list | None = None
    steps: list = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else float("nan")

    def summary(self) -> dict:
        out = {"converged": self.converged, "iterations": self.iterations,
               "message": self.message, "residual_history": list(self.residual_history),
               "max_residual": self.max_residual, "certificate": self.certificate,
               "gauge_point": self.gauge_point, "steps": self.steps}
        if self.grid is not None:
            out.update(h=self.grid.h, margin=self.grid.margin, n_nodes=len(self.grid),
                       n_free=int(self.free.sum()) if self.free is not None else len(self.grid))
        if self.final is not None:
            out["flagged_nodes"] = self.final.n_flagged
        return out

    def rows(self):
        """CSV rows ``xi_1..xi_n, psi[, u, w], free``."""
        for i, xi in enumerate(self.grid.nodes):
            row = [*xi.tolist(), self.psi[i]]
            if self.u is not None:
                row += [self.u[i], self.w[i]]
            row.append(int(self.free[i]) if self.free is not None else 1)
            yield row

    def header(self) -> list[str]:
        cols = [f"xi_{i + 1}" for i in range(self.grid.dim)] + ["psi"]
        if self.u is not None:
            cols += ["u", "w"]
        return cols + ["free"]


# ----------------------------------------------------------------------------
# one dimension


class WProfilePsi(Perturbation):
    """1D perturbation defined through ``u'' = 1/w`` on an interval.

    ``w, dw, d2w`` are callables; ``psi = u - v`` is normalised so that
    ``u(p) = 0`` and ``u'(p) = 0``.
    """

    kind = "w-profile"
    _gl = np.polynomial.legendre.leggauss(80)

    def __init__(self, alpha, beta, w, dw, d2w, p=None):
        super().__init__(1)
        self.alpha, self.beta = float(alpha), float(beta)
        self.w, self.dw, self.d2w = w, dw, d2w
        self.p = 0.5 * (self.alpha + self.beta) if p is None else float(p)
        self._interval = DelzantPolytope.interval(self.alpha, self.beta)
        v0, v1 = guillemin_derivs(self._interval, [self.p], 1)
        self.c0, self.c1 = -float(v0[0]), -float(v1[0, 0])
        self.affine = (0.0, 0.0)  # extra (slope, constant) from plus_affine

    def _psi2(self, x):
        l1, l2 = x - self.alpha, self.beta - x
        return 1.0 / self.w(x) - 1.0 / l1 - 1.0 / l2

    def derivs(self, pts, order):
        x = np.asarray(pts, dtype=float).reshape(-1)
        nodes, weights = self._gl
        half = 0.5 * (x - self.p)
        t = self.p + half[:, None] * (nodes[None, :] + 1.0)  # (m, q)
        f2 = self._psi2(t)
        I0 = half * (f2 * weights).sum(axis=1)
        I1 = half * ((x[:, None] - t) * f2 * weights).sum(axis=1)
        a, b = self.affine
        out = [self.c0 + self.c1 * (x - self.p) + I1 + a * x + b]
        if order >= 1:
            out.append((self.c1 + I0 + a)[:, None])
        l1, l2 = x - self.alpha, self.beta - x
        w, dw, d2w = self.w(x), self.dw(x), self.d2w(x)
        if order >= 2:
            out.append(self._psi2(x)[:, None, None])
        if order >= 3:
            out.append((-dw / w ** 2 + 1 / l1 ** 2 - 1 / l2 ** 2)[:, None, None, None])
        if order >= 4:
            u4 = 2 * dw ** 2 / w ** 3 - d2w / w ** 2
            out.append((u4 - 2 / l1 ** 3 - 2 / l2 ** 3)[:, None, None, None, None])
        return out

    def plus_affine(self, a, c):
        out = WProfilePsi(self.alpha, self.beta, self.w, self.dw, self.d2w, self.p)
        out.affine = (self.affine[0] + float(np.ravel(a)[0]), self.affine[1] + float(c))
        return out

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "beta": self.beta}


def _interval_of(polytope: DelzantPolytope | None, interval) -> tuple[float, float]:
    if polytope is None:
        return tuple(map(float, interval))
    if polytope.dim != 1:
        raise ValueError("solve_1d needs a one-dimensional polytope")
    V = polytope.vertices[:, 0]
    return float(V.min()), float(V.max())


def solve_1d(K, interval=(0.0, 1.0), h: float = 1 / 64, margin: float | None = None,
             polytope: DelzantPolytope | None = None) -> SolveResult:
    """Exact 1D solve of ``w'' = -K``, ``w(a)=w(b)=0``, ``w'(a)=1``, ``w'(b)=-1``.

    Solvable iff ``int K = 2`` and ``int (xi - a) K = b - a``; otherwise the
    result carries those two constraint residuals as an infeasibility
    certificate. Raises ``NonMetricSolutionError`` if ``w`` changes sign.
    """
    a, b = _interval_of(polytope, interval)
    Kf = curvature_function(K, 1)
    if isinstance(Kf, Polynomial):
        Kp = Kf.to_numpy_1d()
        deg = Kp.degree() + 1
        x, wts = np.polynomial.legendre.leggauss(deg // 2 + 2)
        t = 0.5 * (b - a) * (x + 1) + a
        I0 = 0.5 * (b - a) * float(np.sum(wts * Kp(t)))
        I1 = 0.5 * (b - a) * float(np.sum(wts * (t - a) * Kp(t)))
    else:
        Kp = None
        kf = lambda t: float(np.ravel(Kf(np.array([[t]])))[0])  # noqa: E731
        I0 = integrate.quad(kf, a, b, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
        I1 = integrate.quad(lambda t: (t - a) * kf(t), a, b, epsabs=1e-12, epsrel=1e-12,
                            limit=200)[0]
    cert = {"integral_K_minus_2": I0 - 2.0, "moment_minus_length": I1 - (b - a)}
    grid = (polytope or DelzantPolytope.interval(a, b)).interior_grid(
        h, h if margin is None else margin)
    if abs(cert["integral_K_minus_2"]) > FEASIBILITY_TOL or abs(cert["moment_minus_length"]) > FEASIBILITY_TOL:
        return SolveResult(grid, None, False, message="infeasible curvature: boundary "
                           "constraints on w cannot all hold", certificate=cert)
    if Kp is not None:
        lin = np.polynomial.Polynomial([-a, 1.0])
        W = lin - Kp.integ(2, lbnd=a)
        dW, d2W = W.deriv(1), W.deriv(2)
        w, dw, d2w = W, dW, d2W
        roots = [r.real for r in W.roots() if abs(r.imag) < 1e-12 and a + 1e-12 < r.real < b - 1e-12]
    else:
        def dw(x):
            x = np.asarray(x, dtype=float)
            return np.array([1.0 - integrate.quad(kf, a, s, epsabs=1e-13, limit=200)[0]
                             for s in x.ravel()]).reshape(x.shape)

        def w(x):
            x = np.asarray(x, dtype=float)
            return np.array([(s - a) - integrate.quad(lambda t: (s - t) * kf(t), a, s,
                                                      epsabs=1e-13, limit=200)[0]
                             for s in x.ravel()]).reshape(x.shape)

        def d2w(x):
            x = np.asarray(x, dtype=float)
            return -np.asarray(Kf(x.reshape(-1, 1)), dtype=float).reshape(x.shape)
        roots = []
    probe = np.linspace(a, b, 2001)[1:-1]
    wp = w(probe)
    if roots or np.any(wp <= 0):
        loc = min(roots) if roots else float(probe[np.argmax(wp <= 0)])
        raise NonMetricSolutionError(f"w changes sign at xi = {loc:.12g}: not a metric", loc)
    psi = WProfilePsi(a, b, w, dw, d2w)
    u = SymplecticPotential(grid.polytope, psi)
    wv = w(grid.nodes[:, 0])
    resid = float(np.max(np.abs(d2w(grid.nodes[:, 0]) + Kf(grid.nodes).reshape(-1))))
    return SolveResult(grid, psi.derivs(grid.nodes, 0)[0], True, [resid], None, 0,
                       "closed-form solution", None, np.asarray(wv), u.value(grid.nodes), u,
                       np.ones(len(grid), dtype=bool), gauge_point=[psi.p])


# ----------------------------------------------------------------------------
# n dimensions


@dataclass
class SolveConfig:
    h: float
    margin: float
    tol: float = 1e-6
    max_iter: int = 50
    lam0: float = 1e-6
    lam_grow: float = 10.0
    lam_shrink: float = 0.1
    lam_max: float = 1e12
    gauge_point: tuple | None = None
    band: object = "initial"  # "initial" | "zero" | nodal array | callable
    band_steps: int = 1  # >1: move the band from psi0 to its source in stages

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.margin < 2 * self.h - 1e-15:
            raise ValueError("margin must be at least 2h so finite-difference stencils stay inside")


def _threads() -> int:
    try:
        n = int(os.environ.get("ABREU_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


class GridAbreu:
    """Finite-difference Abreu operator for ``u = v + psi`` with ``psi`` on grid nodes.

    Residual nodes are those whose radius-2 stencil is complete.
    """

    def __init__(self, grid: GridDomain):
        self.grid = grid
        n = grid.dim
        self.free = grid.stencil_complete(2)
        self.wnodes = grid.stencil_complete(1)
        self.Hv = np.full((len(grid), n, n), np.nan)
        self.Hv[self.wnodes] = guillemin_derivs(grid.polytope, grid.nodes[self.wnodes], 2)[2]
        self.offsets = list(itertools.product((-1, 0, 1), repeat=n))
        fidx = np.flatnonzero(self.free)
        self.nb = {off: grid.neighbor(off)[fidx] for off in self.offsets}

    def _wij(self, w: np.ndarray) -> np.ndarray:
        n, h = self.grid.dim, self.grid.h
        wv = {off: w[idx] for off, idx in self.nb.items()}
        z = (0,) * n
        wij = np.empty((len(wv[z]), n, n))
        for i in range(n):
            e = tuple(int(k == i) for k in range(n))
            me = tuple(-x for x in e)
            wij[:, i, i] = (wv[e] - 2 * wv[z] + wv[me]) / h ** 2
            for j in range(i + 1, n):
                pp = tuple(int(k in (i, j)) for k in range(n))
                pm = tuple(1 if k == i else (-1 if k == j else 0) for k in range(n))
                mp = tuple(-x for x in pm)
                mm = tuple(-x for x in pp)
                wij[:, i, j] = wij[:, j, i] = (wv[pp] - wv[pm] - wv[mp] + wv[mm]) / (4 * h * h)
        return wij

    def evaluate(self, psi: np.ndarray, full: bool = False) -> dict:
        g, n = self.grid, self.grid.dim
        _, Hpsi = grid_fd_derivatives(g, psi)
        H = self.Hv + Hpsi
        w = np.full(len(g), np.nan)
        ok = self.wnodes & np.all(np.isfinite(H), axis=(1, 2))
        if ok.any():
            Hk = H[ok]
            pd = np.linalg.eigvalsh(Hk)[:, 0] > 0
            det, _ = cofactor_batch(np.where(pd[:, None, None], Hk, np.eye(n)), check=False)
            w[np.flatnonzero(ok)] = np.where(pd, 1.0 / det, np.nan)
        fidx = np.flatnonzero(self.free)
        wij = self._wij(w)
        flagged = ~np.all(np.stack([np.isfinite(w[idx]) for idx in self.nb.values()]), axis=0)
        Hf = np.where(flagged[:, None, None], np.eye(n), H[fidx])
        det, U = cofactor_batch(Hf, check=False)
        A = np.einsum("mij,mij->m", U, wij)
        A[flagged] = np.nan
        out = {"A": A, "det": np.where(flagged, np.nan, det), "U": U, "flagged": flagged,
               "w": np.where(flagged, np.nan, 1.0 / det)}
        if full:
            out.update(H=H, w_all=w, wij=wij, det_f=det)
        return out

    def directional(self, base: dict, dpsi: np.ndarray) -> np.ndarray:
        """Exact derivative of ``A`` at the free nodes along ``dpsi``.

        ``base`` is ``evaluate(psi, full=True)``.
        """
        g = self.grid
        _, dH = grid_fd_derivatives(g, dpsi)
        H, w = base["H"], base["w_all"]
        dw = np.zeros(len(g))
        ok = np.isfinite(w)
        Hinv = np.linalg.inv(H[ok])
        dw[ok] = -w[ok] * np.einsum("mij,mji->m", Hinv, np.nan_to_num(dH[ok]))
        dwij = self._wij(dw)
        fidx = np.flatnonzero(self.free)
        Hf_inv = np.linalg.inv(H[fidx])
        dHf = dH[fidx]
        tr = np.einsum("mij,mji->m", Hf_inv, dHf)
        dU = base["det_f"][:, None, None] * (tr[:, None, None] * Hf_inv
                                             - Hf_inv @ dHf @ Hf_inv)
        return np.einsum("mij,mij->m", dU, base["wij"]) + np.einsum("mij,mij->m", base["U"], dwij)

    def curvature_result(self, psi, K_nodes=None) -> CurvatureResult:
        r = self.evaluate(psi)
        sub = self.grid.subgrid(self.free)
        res = CurvatureResult(sub, "fd", r["det"], r["w"], r["U"], r["A"], r["flagged"])
        if K_nodes is not None:
            res.K_target = np.asarray(K_nodes)[self.free]
        return res


def _nodal(values, grid: GridDomain) -> np.ndarray:
    if values is None:
        return np.zeros(len(grid))
    if isinstance(values, Perturbation):
        return values.derivs(grid.nodes, 0)[0]
    if callable(values):
        return np.asarray(values(grid.nodes), dtype=float).reshape(-1)
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape[0] != len(grid):
        raise ValueError(f"{arr.shape[0]} nodal values for {len(grid)} grid nodes")
    return arr


def _affine_fit(values: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Coefficients ``(a_1..a_n, c)`` of the least-squares affine fit of ``values``."""
    A = np.c_[nodes, np.ones(len(nodes))]
    coef = np.linalg.lstsq(A, values, rcond=None)[0]
    return coef


def _aligned_band(src: np.ndarray, start: np.ndarray, grid: GridDomain, band: np.ndarray) -> np.ndarray:
    """``src`` minus the affine function that best matches ``src - start`` on the band."""
    coef = _affine_fit((src - start)[band], grid.nodes[band])
    return src - grid.nodes @ coef[:-1] - coef[-1]


class _Problem:
    def __init__(self, polytope, K_nodes, config: SolveConfig, psi0, grid=None):
        self.cfg = config
        self.grid = grid or polytope.interior_grid(config.h, config.margin)
        self.op = GridAbreu(self.grid)
        g, n = self.grid, self.grid.dim
        self.free = self.op.free
        if not self.free.any():
            raise ValueError("no nodes with a complete stencil; refine h or reduce the margin")
        self.fidx = np.flatnonzero(self.free)
        self.bidx = np.flatnonzero(~self.free)
        self.K = K_nodes[self.fidx]
        psi0 = _nodal(psi0, g)
        band = config.band
        if isinstance(band, str):
            if band == "initial":
                band = psi0
            elif band == "zero":
                band = np.zeros(len(g))
            else:
                raise ValueError(f"unknown band source {band!r}")
        self.band = _nodal(band, g)[self.bidx]
        gp = config.gauge_point
        if gp is None:
            cand = g.nodes[self.fidx]
            gp = cand[np.argmin(np.linalg.norm(cand - g.polytope.barycenter, axis=1))]
        self.p_row = g.locate(gp)
        if self.p_row < 0 or not self.free[self.p_row]:
            raise ValueError(f"gauge point {list(gp)} is not a free grid node")
        self.p = g.nodes[self.p_row]
        col = np.full(len(g), -1)
        col[self.fidx] = np.arange(len(self.fidx))
        self.col = col
        self.gauge_cols = []
        for i in range(n):
            e = np.zeros(n, dtype=int)
            e[i] = 1
            self.gauge_cols.append((col[g.neighbor(e)[self.p_row]], col[g.neighbor(-e)[self.p_row]]))
        self.nF = len(self.fidx)
        # shift the start by the affine part of its mismatch with the band
        coef = _affine_fit((_nodal(band, g) - psi0)[self.bidx], g.nodes[self.bidx])
        self.z0 = psi0[self.fidx] + g.nodes[self.fidx] @ coef[:-1] + coef[-1]

    def psi_full(self, z):
        psi = np.empty(len(self.grid))
        psi[self.fidx] = z
        psi[self.bidx] = self.band
        return psi

    def residual(self, z):
        r = self.op.evaluate(self.psi_full(z))
        return r["A"] + self.K, r["flagged"]

    def jacobian(self, z):
        """Exact Jacobian, assembled from directional derivatives along colour groups.

        Nodes whose indices agree mod 5 have disjoint radius-2 stencils, so one
        directional derivative per colour recovers every column.
        """
        g, n, nF = self.grid, self.grid.dim, self.nF
        base = self.op.evaluate(self.psi_full(z), full=True)
        J = np.zeros((nF, nF))
        colors = {}
        for j, key in enumerate(map(tuple, np.mod(g.index[self.fidx], 5))):
            colors.setdefault(key, []).append(j)
        groups = [np.array(v) for _, v in sorted(colors.items())]
        reach = list(itertools.product(range(-2, 3), repeat=n))

        def column(cols):
            d = np.zeros(len(g))
            d[self.fidx[cols]] = 1.0
            return self.op.directional(base, d)

        with ThreadPoolExecutor(max_workers=min(_threads(), 8)) as ex:
            outs = list(ex.map(column, groups))
        for cols, d in zip(groups, outs):
            for off in reach:
                nb = g.neighbor(off)[self.fidx[cols]]
                rows = np.where(nb >= 0, self.col[nb], -1)
                ok = rows >= 0
                J[rows[ok], cols[ok]] = d[rows[ok]]
        return J

    def gauged(self, z):
        """Full nodal psi minus the affine function matching psi(p) and its FD gradient."""
        psi = self.psi_full(z)
        grad = np.array([(z[cp] - z[cm]) / (2 * self.grid.h) for cp, cm in self.gauge_cols])
        c = z[self.col[self.p_row]] - grad @ self.p
        return psi - self.grid.nodes @ grad - c


def _target_nodes(K, grid: GridDomain) -> np.ndarray:
    if isinstance(K, np.ndarray) and K.shape == (len(grid),):
        return K.astype(float)
    return np.asarray(curvature_function(K, grid.dim)(grid.nodes), dtype=float).reshape(-1)


def solve_nd(polytope: DelzantPolytope, K, config: SolveConfig, psi0=None,
             warm_start: np.ndarray | None = None) -> SolveResult:
    """Damped Gauss-Newton (Levenberg-Marquardt) for ``A_fd(v + psi) + K = 0``.

    Steps are rejected (damping raised) if any node loses convexity or if
    either the 2-norm or the max-norm of the residual would increase.

    When the band source differs from ``psi0`` the band values are moved from
    ``psi0`` to the source in warm-started stages (at least
    ``config.band_steps``; a stage whose start is not convex is retried with
    half the increment). A single stage is used when it already starts convex.
    ``NonConvexStartError`` is raised only if ``v + psi0`` itself is not convex
    on the grid.
    """
    band = config.band
    if warm_start is not None or (isinstance(band, str) and band == "initial"):
        return _solve_stage(polytope, K, config, psi0, warm_start)
    grid = polytope.interior_grid(config.h, config.margin)
    start = _nodal(psi0, grid)
    if config.band_steps <= 1:
        try:
            return _solve_stage(polytope, K, config, start)
        except NonConvexStartError:
            # is psi0 convex with its own band? then the band source is to blame
            _solve_stage(polytope, K, replace(config, band="initial", max_iter=0), start)
    src = np.zeros(len(grid)) if isinstance(band, str) else _nodal(band, grid)
    src = _aligned_band(src, start, grid, ~grid.stencil_complete(2))
    z, stages, res = None, [], None
    s0, ds = 0.0, 1.0 / max(config.band_steps, 2)
    while s0 < 1.0:
        s = min(1.0, s0 + ds)
        cfg_k = replace(config, band=(1 - s) * start + s * src, band_steps=1)
        try:
            res = _solve_stage(polytope, K, cfg_k, start, z)
        except NonConvexStartError:
            if ds < 1.0 / 1024:
                raise
            ds *= 0.5  # band moved too far in one stage; refine the ramp
            continue
        stages.append({"band_stage": len(stages) + 1, "s": s, "converged": res.converged,
                       "iterations": res.iterations, "max_residual": res.max_residual})
        if not res.converged:
            res.message = f"band stage {len(stages)}: {res.message}"
            break
        z, s0 = res.unknowns, s
    res.steps = stages
    return res


def _solve_stage(polytope, K, config: SolveConfig, psi0=None, warm_start=None) -> SolveResult:
    """One Levenberg-Marquardt solve with the band held at ``config.band``."""
    cfg = config
    grid = polytope.interior_grid(cfg.h, cfg.margin)
    K_nodes = _target_nodes(K, grid)
    prob = _Problem(polytope, K_nodes, cfg, psi0, grid)
    z = prob.z0 if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    r, flagged = prob.residual(z)
    if flagged.any():
        raise NonConvexStartError(f"initial potential is not convex at {int(flagged.sum())} nodes")

    def norms(r):
        return float(np.linalg.norm(r)), float(np.max(np.abs(r)))

    l2, mx = norms(r)
    history = [mx]
    lam = cfg.lam0
    it = 0
    converged = history[-1] <= cfg.tol
    message = "converged" if converged else ""
    while not converged and it < cfg.max_iter:
        it += 1
        J = prob.jacobian(z)
        scale = np.sqrt(np.maximum(np.einsum("ij,ij->j", J, J), 1e-300))
        accepted = False
        # undamped Gauss-Newton first, then increasing Levenberg-Marquardt damping;
        # damped steps solve the augmented least-squares system to avoid squaring cond(J)
        for damp in [0.0] + [lam * cfg.lam_grow ** k for k in range(64)
                             if lam * cfg.lam_grow ** k <= cfg.lam_max]:
            try:
                if damp == 0.0:
                    dz = -np.linalg.solve(J, r)
                else:
                    aug = np.vstack([J, np.diag(np.sqrt(damp) * scale)])
                    dz = -np.linalg.lstsq(aug, np.concatenate([r, np.zeros(len(z))]), rcond=None)[0]
            except np.linalg.LinAlgError:
                continue
            z_new = z + dz
            r_new, fl = prob.residual(z_new)
            if not fl.any() and np.all(np.isfinite(r_new)):
                l2n, mxn = norms(r_new)
                if l2n < l2 and mxn <= mx:
                    accepted = True
                    lam = max(damp, cfg.lam0) if damp else lam
                    break
        if not accepted:
            message = "damping limit reached without a decreasing step"
            break
        z, r, l2, mx = z_new, r_new, l2n, mxn
        lam = max(lam * cfg.lam_shrink, 1e-15)
        history.append(mx)
        log.debug("iteration %d: max residual %.3e (lambda %.1e)", it, history[-1], lam)
        converged = history[-1] <= cfg.tol
    if converged:
        message = "converged"
    elif not message:
        message = f"iteration budget of {cfg.max_iter} exhausted"
    # A_fd is invariant under affine functions, so the gauge does not move the residual
    psi = prob.gauged(z)
    final = prob.op.curvature_result(psi, K_nodes)
    u = SymplecticPotential(polytope, GridPsi(grid, psi))
    return SolveResult(grid, psi, bool(converged), history, final, it, message, None,
                       potential=u, free=prob.free, unknowns=z, gauge_point=prob.p.tolist())


def guillemin_curvature_nodes(polytope: DelzantPolytope, grid: GridDomain) -> np.ndarray:
    """``-A_fd(v)`` at every node (NaN where the stencil is incomplete)."""
    op = GridAbreu(grid)
    out = np.full(len(grid), np.nan)
    out[op.free] = -op.evaluate(np.zeros(len(grid)))["A"]
    return out


def continuation(polytope: DelzantPolytope, K_target, steps: int, config: SolveConfig,
                 psi0=None) -> SolveResult:
    """Homotopy ``K_t = (1-t) K_guillemin + t K_target`` in ``steps`` warm-started solves.

    A band source other than ``'initial'`` is moved along with ``t``
    (``band_t = (1-t) psi0 + t source``) so every intermediate problem has
    consistent data.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    grid = polytope.interior_grid(config.h, config.margin)
    Kg = guillemin_curvature_nodes(polytope, grid)
    Kt = _target_nodes(K_target, grid)
    Kg = np.where(np.isnan(Kg), Kt, Kg)
    start = _nodal(psi0, grid)
    src = config.band
    if isinstance(src, str):
        src = start if src == "initial" else np.zeros(len(grid))
    src = _aligned_band(_nodal(src, grid), start, grid, ~grid.stencil_complete(2))
    z, summaries, res = None, [], None
    for k in range(1, steps + 1):
        t = k / steps
        cfg = replace(config, band=(1 - t) * start + t * src)
        res = solve_nd(polytope, (1 - t) * Kg + t * Kt, cfg, start, warm_start=z)
        summaries.append({"step": k, "t": t, "converged": res.converged,
                          "iterations": res.iterations, "max_residual": res.max_residual})
        if not res.converged:
            res.steps = summaries
            res.message = f"continuation aborted at step {k}: {res.message}"
            return res
        z = res.unknowns
    res.steps = summaries
    return res
