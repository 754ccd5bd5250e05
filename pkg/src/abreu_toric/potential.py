"""Symplectic potentials ``u = c*v + psi`` on a Delzant polytope.

``v`` is the Guillemin potential, handled analytically (derivatives up to
fourth order); ``psi`` is a perturbation that is smooth up to the boundary.
All evaluation routines are vectorised over an ``(m, n)`` array of points.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .polynomial import Polynomial
from .polytope import DelzantPolytope, GridDomain


class DomainError(ValueError):
    """Evaluation point outside the open polytope (or interpolation support)."""


def _as_points(xi, dim: int) -> np.ndarray:
    return np.asarray(xi, dtype=float).reshape(-1, dim)


def guillemin_derivs(polytope: DelzantPolytope, xi, order: int = 2) -> list[np.ndarray]:
    """Value and derivative tensors of ``sum_k l_k log l_k`` up to ``order`` (<= 4)."""
    pts = _as_points(xi, polytope.dim)
    ell = polytope.facet_values(pts)
    if np.any(ell <= 0):
        raise DomainError("point on or outside the polytope boundary")
    H = polytope.facet_float
    out = [np.sum(ell * np.log(ell), axis=1)]
    if order >= 1:
        out.append((1.0 + np.log(ell)) @ H)
    if order >= 2:
        out.append(np.einsum("mk,ki,kj->mij", 1.0 / ell, H, H))
    if order >= 3:
        out.append(np.einsum("mk,ki,kj,kl->mijl", -1.0 / ell ** 2, H, H, H))
    if order >= 4:
        out.append(np.einsum("mk,ki,kj,kl,kr->mijlr", 2.0 / ell ** 3, H, H, H, H))
    return out


def guillemin_eval(polytope: DelzantPolytope, xi):
    """``(v, grad v, Hess v)`` at a single point."""
    val, grad, hess = guillemin_derivs(polytope, xi, 2)
    return float(val[0]), grad[0], hess[0]


# ----------------------------------------------------------------------------
# perturbations


class Perturbation:
    """Smooth correction ``psi`` added to the Guillemin part."""

    kind = "abstract"
    max_order = 4

    def __init__(self, dim: int):
        self.dim = int(dim)

    def derivs(self, pts: np.ndarray, order: int) -> list[np.ndarray]:
        raise NotImplementedError

    def plus_affine(self, a, c: float) -> "Perturbation":
        raise NotImplementedError

    def scaled(self, s: float) -> "Perturbation":
        raise NotImplementedError

    def compose_linear(self, T) -> "Perturbation":
        raise NotImplementedError(f"{self.kind} perturbations cannot be pulled back")

    def to_dict(self) -> dict:
        raise NotImplementedError


class PolynomialPsi(Perturbation):
    kind = "polynomial"

    def __init__(self, poly: Polynomial):
        super().__init__(poly.dim)
        self.poly = poly

    @classmethod
    def zero(cls, dim: int) -> "PolynomialPsi":
        return ZeroPsi(dim)

    def derivs(self, pts, order):
        return [self.poly(pts)] + [self.poly.tensor(pts, k) for k in range(1, order + 1)]

    def plus_affine(self, a, c):
        return _wrap(self.poly + Polynomial.affine(np.asarray(a, dtype=float), c))

    def scaled(self, s):
        return _wrap(self.poly * s)

    def compose_linear(self, T):
        return _wrap(self.poly.compose_linear(T))

    def to_dict(self):
        return {"kind": self.kind, "terms": self.poly.to_json()}


class AffinePsi(PolynomialPsi):
    kind = "affine"

    def to_dict(self):
        a = [self.poly.terms.get(tuple(int(i == j) for j in range(self.dim)), 0.0)
             for i in range(self.dim)]
        return {"kind": "affine", "a": a, "b": self.poly.terms.get((0,) * self.dim, 0.0)}


class ZeroPsi(AffinePsi):
    kind = "zero"

    def __init__(self, dim: int):
        super().__init__(Polynomial(dim))

    def to_dict(self):
        return {"kind": "zero"}


def _wrap(poly: Polynomial) -> PolynomialPsi:
    if not poly.terms:
        return ZeroPsi(poly.dim)
    if poly.degree <= 1:
        return AffinePsi(poly)
    return PolynomialPsi(poly)


@dataclass(eq=False)
class GridField:
    """Per-node values (scalar, vector or matrix) on a ``GridDomain``."""

    grid: GridDomain
    values: np.ndarray
    interpolation: str = "multilinear"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != len(self.grid):
            raise ValueError(f"{self.values.shape[0]} values for {len(self.grid)} nodes")
        if self.values.ndim == 3 and not np.allclose(self.values, np.swapaxes(self.values, 1, 2)):
            raise ValueError("matrix-valued field must be symmetric")

    def max_abs(self) -> tuple[float, int]:
        v = np.abs(self.values.reshape(len(self.grid), -1)).max(axis=1)
        i = int(np.nanargmax(v))
        return float(v[i]), i


def grid_fd_derivatives(grid: GridDomain, values: np.ndarray):
    """Centred second-order FD gradient and Hessian of nodal values.

    Nodes lacking a neighbour get NaN.
    """
    n, h = grid.dim, grid.h
    N = len(grid)
    vals = np.append(values, np.nan)  # index -1 -> NaN
    grad = np.empty((N, n))
    hess = np.empty((N, n, n))
    for i in range(n):
        e = np.zeros(n, dtype=int)
        e[i] = 1
        fp, fm = vals[grid.neighbor(e)], vals[grid.neighbor(-e)]
        grad[:, i] = (fp - fm) / (2 * h)
        hess[:, i, i] = (fp - 2 * values + fm) / h ** 2
        for j in range(i + 1, n):
            f = np.zeros(n, dtype=int)
            f[j] = 1
            mixed = (vals[grid.neighbor(e + f)] - vals[grid.neighbor(e - f)]
                     - vals[grid.neighbor(-e + f)] + vals[grid.neighbor(-e - f)]) / (4 * h * h)
            hess[:, i, j] = hess[:, j, i] = mixed
    return grad, hess


class GridPsi(Perturbation):
    """Perturbation sampled on a lattice grid.

    Values are interpolated multilinearly; gradient and Hessian come from
    centred finite differences at the nodes (then interpolated).
    """

    kind = "grid"
    max_order = 2

    def __init__(self, grid: GridDomain, values):
        super().__init__(grid.dim)
        self.field = GridField(grid, np.asarray(values, dtype=float).reshape(-1))

    @property
    def grid(self) -> GridDomain:
        return self.field.grid

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @cached_property
    def _nodal(self):
        grad, hess = grid_fd_derivatives(self.grid, self.values)
        return self.values, grad, hess

    def derivs(self, pts, order):
        if order > 2:
            raise ValueError("grid perturbations provide derivatives up to order 2 only")
        pts = _as_points(pts, self.dim)
        t = pts / self.grid.h
        r = np.rint(t)
        t = np.where(np.abs(t - r) < 1e-9, r, t)
        base = np.floor(t).astype(int)
        frac = t - base
        fields = self._nodal[: order + 1]
        out = [np.zeros((len(pts),) + f.shape[1:]) for f in fields]
        lo, table = self.grid._lookup
        for corner in itertools.product((0, 1), repeat=self.dim):
            c = np.array(corner)
            wgt = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
            use = wgt > 0
            if not use.any():
                continue
            j = base[use] + c - lo
            inside = np.all((j >= 0) & (j < np.array(table.shape)), axis=1)
            rows = np.full(use.sum(), -1)
            rows[inside] = table[tuple(j[inside].T)]
            if np.any(rows < 0):
                raise DomainError("point outside the grid perturbation's support")
            for k, f in enumerate(fields):
                contrib = f[rows]
                if np.any(np.isnan(contrib)):
                    raise DomainError("finite-difference stencil leaves the grid perturbation's support")
                w = wgt[use].reshape((-1,) + (1,) * (f.ndim - 1))
                out[k][use] += w * contrib
        return out

    def plus_affine(self, a, c):
        return GridPsi(self.grid, self.values + self.grid.nodes @ np.asarray(a, dtype=float) + c)

    def scaled(self, s):
        return GridPsi(self.grid, self.values * s)

    def to_dict(self):
        return {"kind": "grid", "h": self.grid.h, "margin": self.grid.margin,
                "values": self.values.tolist()}


# ----------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class PotentialValue:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    positive_definite: bool


@dataclass(frozen=True, eq=False)
class SymplecticPotential:
    """``u = guillemin * v + psi``.

    ``polytope`` may be None for a pure ``psi`` potential on all of R^n.
    """

    polytope: DelzantPolytope | None
    psi: Perturbation = field(default=None)
    guillemin: float = 1.0
    normalized_at: tuple | None = None

    def __post_init__(self):
        if self.psi is None:
            if self.polytope is None:
                raise ValueError("need a polytope or a perturbation to fix the dimension")
            object.__setattr__(self, "psi", ZeroPsi(self.polytope.dim))
        if self.polytope is None and self.guillemin != 0:
            raise ValueError("the Guillemin part needs a polytope")
        if self.polytope is not None and self.psi.dim != self.polytope.dim:
            raise ValueError("perturbation dimension does not match the polytope")

    @classmethod
    def guillemin_only(cls, polytope: DelzantPolytope) -> "SymplecticPotential":
        return cls(polytope)

    @classmethod
    def quadratic(cls, dim: int, polytope: DelzantPolytope | None = None) -> "SymplecticPotential":
        """``1/2 |xi|^2`` (flat metric)."""
        terms = {tuple(2 * int(i == j) for j in range(dim)): 0.5 for i in range(dim)}
        return cls(polytope, PolynomialPsi(Polynomial(dim, terms)), guillemin=0.0)

    @property
    def dim(self) -> int:
        return self.psi.dim

    @property
    def max_order(self) -> int:
        return self.psi.max_order

    @property
    def analytic(self) -> bool:
        return self.psi.max_order >= 4

    def in_domain(self, xi) -> np.ndarray:
        pts = _as_points(xi, self.dim)
        if self.polytope is None:
            return np.ones(len(pts), dtype=bool)
        return self.polytope.contains(pts)

    def derivs(self, xi, order: int = 2) -> list[np.ndarray]:
        """Value and derivative tensors up to ``order`` at points ``(m, n)``."""
        pts = _as_points(xi, self.dim)
        if self.polytope is not None and not np.all(self.polytope.contains(pts)):
            raise DomainError("point on or outside the polytope boundary")
        out = self.psi.derivs(pts, order)
        if self.guillemin != 0.0:
            g = guillemin_derivs(self.polytope, pts, order)
            out = [a + self.guillemin * b for a, b in zip(out, g)]
        return out

    def value(self, xi) -> np.ndarray:
        return self.derivs(xi, 0)[0]

    def with_psi(self, psi: Perturbation, **kw) -> "SymplecticPotential":
        return SymplecticPotential(self.polytope, psi, kw.get("guillemin", self.guillemin),
                                   kw.get("normalized_at", None))

    def plus_affine(self, a, c: float) -> "SymplecticPotential":
        return self.with_psi(self.psi.plus_affine(a, c))

    def scaled(self, s: float) -> "SymplecticPotential":
        return self.with_psi(self.psi.scaled(s), guillemin=self.guillemin * s)

    def pullback(self, T) -> "SymplecticPotential":
        """``xi -> u(T xi)`` on the pulled-back polytope."""
        poly = None if self.polytope is None else self.polytope.pullback(T)
        return SymplecticPotential(poly, self.psi.compose_linear(T), self.guillemin)

    def to_dict(self) -> dict:
        return {"guillemin": self.guillemin != 0.0, "guillemin_coefficient": self.guillemin,
                "psi": self.psi.to_dict()}


def potential_eval(u: SymplecticPotential, xi) -> PotentialValue:
    val, grad, hess = u.derivs(xi, 2)
    hess = hess[0]
    try:
        np.linalg.cholesky(hess)
        pd = True
    except np.linalg.LinAlgError:
        pd = False
    return PotentialValue(float(val[0]), grad[0], hess, pd)


def normalize_at(u: SymplecticPotential, p) -> SymplecticPotential:
    """Subtract the tangent affine function at ``p`` so that u(p)=0, grad u(p)=0."""
    p = np.asarray(p, dtype=float).reshape(u.dim)
    if not u.in_domain(p)[0]:
        raise DomainError(f"normalisation point {p.tolist()} is not inside the polytope")
    val, grad = u.derivs(p, 1)
    a = -grad[0]
    c = -val[0] + float(grad[0] @ p)
    out = u.with_psi(u.psi.plus_affine(a, c))
    return SymplecticPotential(out.polytope, out.psi, out.guillemin, tuple(p.tolist()))


@dataclass(frozen=True)
class SupNorm:
    value: float
    margin: float
    location: list
    sweep: list  # [(margin, value), ...] from coarse to fine margin


def sup_norm_diff(u1: SymplecticPotential, u2: SymplecticPotential, h: float,
                  margins=None) -> SupNorm:
    """Grid sweep of ``max |u1 - u2|`` with decreasing margins (default ``2h, h``)."""
    if u1.polytope is not u2.polytope and (
            u1.polytope is None or u2.polytope is None
            or u1.polytope.to_dict() != u2.polytope.to_dict()):
        raise ValueError("potentials live on different polytopes")
    margins = [2 * h, h] if margins is None else list(margins)
    sweep, best = [], None
    for delta in margins:
        grid = u1.polytope.interior_grid(h, delta)
        diff = np.abs(_difference(u1, u2, grid.nodes))
        i = int(np.argmax(diff))
        sweep.append((float(delta), float(diff[i])))
        best = (float(diff[i]), float(delta), grid.nodes[i].tolist())
    return SupNorm(best[0], best[1], best[2], sweep)


def _difference(u1, u2, pts):
    # skip the singular Guillemin part when it cancels
    if u1.guillemin == u2.guillemin:
        return u1.psi.derivs(pts, 0)[0] - u2.psi.derivs(pts, 0)[0]
    return u1.value(pts) - u2.value(pts)
