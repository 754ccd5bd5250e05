"""Sparse multivariate polynomials with exact derivative tensors.

Used both for smooth perturbations of symplectic potentials and for
prescribed curvature functions.
"""
from __future__ import annotations

import itertools
from collections import Counter
from typing import Iterable, Mapping, Sequence

import numpy as np


def _falling(e: int, k: int) -> int:
    out = 1
    for j in range(k):
        out *= e - j
    return out


class Polynomial:
    """Polynomial in n variables stored as ``{exponent tuple: coefficient}``."""

    def __init__(self, dim: int, terms: Mapping[tuple[int, ...], float] | Iterable = ()):
        self.dim = int(dim)
        acc: dict[tuple[int, ...], float] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for exps, coeff in items:
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.dim:
                raise ValueError(f"exponent {exps} does not match dimension {self.dim}")
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            acc[exps] = acc.get(exps, 0.0) + float(coeff)
        self.terms = {k: c for k, c in sorted(acc.items()) if c != 0.0}
        self._dcache: dict[tuple[int, ...], Polynomial] = {}

    # construction helpers
    @classmethod
    def constant(cls, dim: int, c: float) -> "Polynomial":
        return cls(dim, {(0,) * dim: c})

    @classmethod
    def affine(cls, a: Sequence[float], b: float) -> "Polynomial":
        dim = len(a)
        terms = {(0,) * dim: b}
        for i, ai in enumerate(a):
            e = [0] * dim
            e[i] = 1
            terms[tuple(e)] = ai
        return cls(dim, terms)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def __repr__(self) -> str:
        return f"Polynomial(dim={self.dim}, terms={self.terms})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Polynomial) and self.dim == other.dim and self.terms == other.terms

    def __hash__(self):
        return hash((self.dim, tuple(self.terms.items())))

    def __add__(self, other: "Polynomial") -> "Polynomial":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return Polynomial(self.dim, list(self.terms.items()) + list(other.terms.items()))

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            out: dict[tuple[int, ...], float] = {}
            for e1, c1 in self.terms.items():
                for e2, c2 in other.terms.items():
                    e = tuple(a + b for a, b in zip(e1, e2))
                    out[e] = out.get(e, 0.0) + c1 * c2
            return Polynomial(self.dim, out)
        return Polynomial(self.dim, {e: c * float(other) for e, c in self.terms.items()})

    __rmul__ = __mul__

    def derivative(self, alpha: Sequence[int]) -> "Polynomial":
        """Partial derivative with multi-index ``alpha``."""
        alpha = tuple(alpha)
        if alpha in self._dcache:
            return self._dcache[alpha]
        out = {}
        for exps, c in self.terms.items():
            if all(e >= a for e, a in zip(exps, alpha)):
                f = 1
                for e, a in zip(exps, alpha):
                    f *= _falling(e, a)
                out[tuple(e - a for e, a in zip(exps, alpha))] = c * f
        d = Polynomial(self.dim, out)
        self._dcache[alpha] = d
        return d

    def __call__(self, xi) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(xi, dtype=float))
        if pts.shape[-1] != self.dim:
            pts = pts.reshape(-1, self.dim)
        val = np.zeros(pts.shape[0])
        for exps, c in self.terms.items():
            term = np.full(pts.shape[0], c)
            for i, e in enumerate(exps):
                if e:
                    term = term * pts[:, i] ** e
            val += term
        return val

    def tensor(self, xi: np.ndarray, order: int) -> np.ndarray:
        """Derivative tensor of the given order at points ``xi`` (shape (m, n)).

        Returns an array of shape ``(m,) + (n,) * order``.
        """
        pts = np.asarray(xi, dtype=float).reshape(-1, self.dim)
        m, n = pts.shape[0], self.dim
        out = np.zeros((m,) + (n,) * order)
        if order == 0:
            return self(pts)
        for combo in itertools.combinations_with_replacement(range(n), order):
            counts = Counter(combo)
            alpha = tuple(counts.get(i, 0) for i in range(n))
            vals = self.derivative(alpha)(pts)
            for perm in set(itertools.permutations(combo)):
                out[(slice(None),) + perm] = vals
        return out

    def compose_linear(self, T) -> "Polynomial":
        """Return the polynomial ``xi -> p(T @ xi)``."""
        T = np.asarray(T, dtype=float)
        n = self.dim
        # row polynomials (T xi)_i
        rows = [Polynomial.affine(T[i], 0.0) for i in range(n)]
        out = Polynomial(n)
        for exps, c in self.terms.items():
            term = Polynomial.constant(n, c)
            for i, e in enumerate(exps):
                for _ in range(e):
                    term = term * rows[i]
            out = out + term
        return out

    def to_numpy_1d(self) -> np.polynomial.Polynomial:
        if self.dim != 1:
            raise ValueError("only univariate polynomials convert to numpy form")
        coef = np.zeros(self.degree + 1)
        for (e,), c in self.terms.items():
            coef[e] += c
        return np.polynomial.Polynomial(coef)

    def to_json(self) -> list:
        return [[list(e), c] for e, c in self.terms.items()]
