"""Legendre duality between symplectic potentials u(xi) and Kähler potentials f(x).

``f(x) = sup_xi <x, xi> - u(xi)``; the maximiser solves ``grad u(xi) = x`` and
``D^2 f(x) = (D^2 u(xi(x)))^-1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .potential import SymplecticPotential

EPS = np.finfo(float).eps


class LegendreError(RuntimeError):
    def __init__(self, msg, last_iterate=None):
        super().__init__(msg)
        self.last_iterate = last_iterate


@dataclass(frozen=True, eq=False)
class XGrid:
    """Uniform box grid in x-space, nodes in lexicographic order."""

    center: tuple
    half_width: float
    h: float

    @classmethod
    def from_dict(cls, data: dict) -> "XGrid":
        return cls(tuple(float(c) for c in data["center"]), float(data["half_width"]), float(data["h"]))

    @property
    def dim(self) -> int:
        return len(self.center)

    @cached_property
    def axis(self) -> np.ndarray:
        k = int(round(self.half_width / self.h))
        return np.arange(-k, k + 1) * self.h

    @cached_property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*[self.axis + c for c in self.center], indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.dim)

    def __len__(self) -> int:
        return len(self.axis) ** self.dim

    def key(self) -> tuple:
        return (self.center, self.half_width, self.h)


@dataclass(frozen=True)
class LegendreValue:
    f: np.ndarray        # (m,)
    xi: np.ndarray       # (m, n)
    M: np.ndarray        # (m, n, n) Hessian of f in x
    iterations: np.ndarray


def legendre_batch(u: SymplecticPotential, X, tol: float = 1e-10, max_iter: int = 100,
                   max_halvings: int = 60) -> LegendreValue:
    """Solve ``grad u(xi) = x`` by damped Newton for every row of ``X``.

    Steps that leave the polytope or decrease ``<x, xi> - u(xi)`` are halved.
    A point is converged when ``|grad u - x| <= tol (1 + |x|)`` or when the
    Newton step has shrunk to floating-point resolution of ``xi`` (which is
    where facet values of order 1e-9 stop being representable).
    """
    X = np.asarray(X, dtype=float).reshape(-1, u.dim)
    m, n = X.shape
    if u.polytope is not None:
        xi = np.tile(u.polytope.barycenter, (m, 1))
    else:
        xi = np.zeros((m, n))
    iters = np.zeros(m, dtype=int)
    active = np.ones(m, dtype=bool)
    xnorm = np.linalg.norm(X, axis=1)
    for it in range(max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        val, grad, hess = u.derivs(xi[idx], 2)
        r = grad - X[idx]
        done = np.linalg.norm(r, axis=1) <= tol * (1 + xnorm[idx])
        ev = np.linalg.eigvalsh(hess)
        if np.any(ev[:, 0] <= 0):
            bad = idx[np.argmin(ev[:, 0])]
            raise LegendreError("potential is not strictly convex along the Newton path",
                                last_iterate=xi[bad].copy())
        step = -np.linalg.solve(hess, r[..., None])[..., 0]
        tiny = np.linalg.norm(step, axis=1) <= 4 * EPS * (1 + np.linalg.norm(xi[idx], axis=1))
        done |= tiny
        active[idx[done]] = False
        rnorm = np.linalg.norm(r, axis=1)
        idx, step, val, rnorm = idx[~done], step[~done], val[~done], rnorm[~done]
        if idx.size == 0:
            break
        if it == max_iter:
            raise LegendreError(f"Newton inversion did not converge in {max_iter} iterations",
                                last_iterate=xi[idx[0]].copy())
        obj = np.einsum("mi,mi->m", X[idx], xi[idx]) - val
        t = np.ones(idx.size)
        pending = np.ones(idx.size, dtype=bool)
        new = xi[idx].copy()
        for _ in range(max_halvings):
            trial = xi[idx[pending]] + t[pending, None] * step[pending]
            inside = u.in_domain(trial)
            ok = inside.copy()
            if inside.any():
                tv, tg = u.derivs(trial[inside], 1)
                xp = X[idx[pending]][inside]
                tobj = np.einsum("mi,mi->m", xp, trial[inside]) - tv
                ref = obj[pending][inside]
                # the objective is flat to rounding near the optimum; fall back on the residual
                better = np.linalg.norm(tg - xp, axis=1) < rnorm[pending][inside]
                ok[inside] = (tobj >= ref - 1e-14 * (1 + np.abs(ref))) | better
            where = np.flatnonzero(pending)
            new[where[ok]] = trial[ok]
            pending[where[ok]] = False
            t[pending] *= 0.5
            if not pending.any():
                break
        # halving exhausted: the step is below resolution, freeze the point
        active[idx[pending]] = False
        xi[idx] = new
        iters[idx] += 1
    # one polishing Newton step pushes converged points to rounding level
    _, grad, hess = u.derivs(xi, 2)
    trial = xi - np.linalg.solve(hess, (grad - X)[..., None])[..., 0]
    inside = u.in_domain(trial)
    if inside.any():
        tg = u.derivs(trial[inside], 1)[1]
        keep = np.linalg.norm(tg - X[inside], axis=1) <= np.linalg.norm(grad[inside] - X[inside], axis=1)
        xi[np.flatnonzero(inside)[keep]] = trial[inside][keep]
    val, grad, hess = u.derivs(xi, 2)
    res = np.linalg.norm(grad - X, axis=1)
    if np.any(res > 1e-6 * (1 + xnorm)):
        bad = int(np.argmax(res / (1 + xnorm)))
        raise LegendreError(f"Newton inversion stalled at x={X[bad].tolist()} "
                            f"(residual {res[bad]:.3e})", last_iterate=xi[bad].copy())
    f = np.einsum("mi,mi->m", X, xi) - val
    return LegendreValue(f, xi, np.linalg.inv(hess), iters)


def legendre_value(u: SymplecticPotential, x):
    """``(f(x), xi(x), D^2 f(x))`` at one point."""
    r = legendre_batch(u, np.atleast_1d(np.asarray(x, dtype=float)))
    return float(r.f[0]), r.xi[0], r.M[0]


class DualPotential:
    """Legendre dual of ``u`` with a per-grid cache of the Newton solutions."""

    def __init__(self, u: SymplecticPotential, tol: float = 1e-10, max_iter: int = 100):
        self.u = u
        self.tol = tol
        self.max_iter = max_iter
        self._cache: dict = {}

    def on_grid(self, xgrid: XGrid) -> LegendreValue:
        key = xgrid.key()
        if key not in self._cache:
            self._cache[key] = legendre_batch(self.u, xgrid.nodes, self.tol, self.max_iter)
        return self._cache[key]

    def at(self, X) -> LegendreValue:
        return legendre_batch(self.u, X, self.tol, self.max_iter)


def reference_potential(u: SymplecticPotential) -> SymplecticPotential:
    """The Guillemin potential ``v`` on the same polytope."""
    if u.polytope is None:
        raise ValueError("reference potential needs a polytope")
    return SymplecticPotential(u.polytope)


@dataclass(frozen=True)
class PhiField:
    xgrid: XGrid
    f: np.ndarray
    g: np.ndarray
    xi_f: np.ndarray
    xi_g: np.ndarray

    @property
    def phi(self) -> np.ndarray:
        return self.f - self.g

    def rows(self):
        """CSV rows ``x_1..x_n, xi_1..xi_n, f, g, phi``."""
        for i, x in enumerate(self.xgrid.nodes):
            yield [*x.tolist(), *self.xi_f[i].tolist(), self.f[i], self.g[i], self.phi[i]]

    def header(self) -> list[str]:
        n = self.xgrid.dim
        return ([f"x_{i + 1}" for i in range(n)] + [f"xi_{i + 1}" for i in range(n)]
                + ["f", "g", "phi"])


def phi_field(u: SymplecticPotential, xgrid: XGrid, dual_u: DualPotential | None = None,
              dual_v: DualPotential | None = None) -> PhiField:
    """``phi = f - g`` where f, g are the Legendre duals of u and of the Guillemin v."""
    du = (dual_u or DualPotential(u)).on_grid(xgrid)
    dv = (dual_v or DualPotential(reference_potential(u))).on_grid(xgrid)
    return PhiField(xgrid, du.f, dv.f, du.xi, dv.xi)


@dataclass(frozen=True)
class SupComparisonReport:
    psi_sup: float
    phi_sup: float
    discrepancy: float
    passed: bool
    tolerance: float
    margin_used: float
    phi_argmax: list


def check_lemma42(u: SymplecticPotential, h_xi: float, xgrid: XGrid,
                  tolerance: float = 1e-3) -> SupComparisonReport:
    """Compare ``sup |u - v|`` on the polytope with ``sup |phi|`` on an x-box."""
    from .potential import sup_norm_diff

    v = reference_potential(u)
    s = sup_norm_diff(u, v, h_xi)
    pf = phi_field(u, xgrid)
    a = np.abs(pf.phi)
    i = int(np.argmax(a))
    disc = abs(s.value - float(a[i]))
    return SupComparisonReport(s.value, float(a[i]), disc, disc <= tolerance, tolerance, s.margin,
                         xgrid.nodes[i].tolist())


@dataclass(frozen=True)
class SublevelSet:
    tag: str
    level: float
    xgrid: XGrid
    mask: np.ndarray = field(repr=False)


def sublevel(tag: str, u: SymplecticPotential, C: float, xgrid: XGrid,
             values: np.ndarray | None = None) -> SublevelSet:
    """``{x : f(x) <= C}`` (tag 'f', dual of u) or ``{x : g(x) <= C}`` (tag 'g')."""
    if tag not in ("f", "g"):
        raise ValueError("tag must be 'f' or 'g'")
    if values is None:
        pot = u if tag == "f" else reference_potential(u)
        values = DualPotential(pot).on_grid(xgrid).f
    return SublevelSet(tag, float(C), xgrid, np.asarray(values) <= C)


def inclusion_check(a: SublevelSet, b: SublevelSet) -> bool:
    if a.xgrid.key() != b.xgrid.key():
        raise ValueError("sublevel sets live on different x-grids")
    return bool(np.all(~a.mask | b.mask))
