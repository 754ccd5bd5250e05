"""Delzant polytopes, vertex enumeration, and interior lattice grids."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, reduce

import numpy as np
from scipy.optimize import linprog

VERTEX_TOL = 1e-9


class PolytopeError(ValueError):
    pass


class UnboundedPolytopeError(PolytopeError):
    pass


class EmptyInteriorError(PolytopeError):
    pass


class EmptyGridError(PolytopeError):
    pass


def _int_det(rows: list[list[int]]) -> int:
    """Exact integer determinant (Bareiss fraction-free elimination)."""
    a = [list(map(int, r)) for r in rows]
    n = len(a)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for r in range(k + 1, n):
                if a[r][k] != 0:
                    a[k], a[r] = a[r], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def _int_adjugate(rows: list[list[int]]) -> list[list[int]]:
    n = len(rows)
    if n == 1:
        return [[1]]
    adj = [[0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [r[:j] + r[j + 1:] for k, r in enumerate(rows) if k != i]
            adj[j][i] = (-1) ** (i + j) * _int_det(minor)
    return adj


def _primitive(v: list[int]) -> list[int]:
    g = reduce(math.gcd, (abs(x) for x in v), 0)
    return [x // g for x in v] if g else v


@dataclass(frozen=True)
class DelzantReport:
    passed: bool
    vertices: list[list[float]]
    violations: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"delzant": "pass" if self.passed else "fail",
                "passed": self.passed,
                "vertices": self.vertices,
                "violations": self.violations}


class DelzantPolytope:
    """Polytope ``{xi : <xi, h_k> - lambda_k > 0 for all k}`` with integer normals."""

    def __init__(self, normals, offsets):
        normals = np.asarray(normals)
        if normals.ndim != 2 or normals.shape[0] == 0:
            raise PolytopeError("need a nonempty (d, n) array of facet normals")
        if not np.all(np.equal(np.mod(normals, 1), 0)):
            raise PolytopeError("facet normals must be integer vectors")
        self.normals = normals.astype(np.int64)
        self.offsets = np.asarray(offsets, dtype=float).reshape(-1)
        if self.offsets.shape[0] != self.normals.shape[0]:
            raise PolytopeError("one offset per facet normal required")
        self.dim = self.normals.shape[1]
        self.normals.setflags(write=False)
        self.offsets.setflags(write=False)

    @classmethod
    def from_dict(cls, data: dict) -> "DelzantPolytope":
        facets = data["facets"]
        p = cls([f["normal"] for f in facets], [f["offset"] for f in facets])
        if p.dim != int(data["dim"]):
            raise PolytopeError(f"dim {data['dim']} does not match normal length {p.dim}")
        return p

    def to_dict(self) -> dict:
        return {"dim": self.dim,
                "facets": [{"normal": [int(x) for x in h], "offset": float(l)}
                           for h, l in zip(self.normals, self.offsets)]}

    def __repr__(self):
        return f"DelzantPolytope(dim={self.dim}, facets={len(self.offsets)})"

    # standard examples
    @classmethod
    def interval(cls, a: float = 0.0, b: float = 1.0) -> "DelzantPolytope":
        return cls([[1], [-1]], [a, -b])

    @classmethod
    def unit_square(cls) -> "DelzantPolytope":
        return cls([[1, 0], [0, 1], [-1, 0], [0, -1]], [0, 0, -1, -1])

    @classmethod
    def simplex(cls, dim: int = 2) -> "DelzantPolytope":
        normals = np.vstack([np.eye(dim, dtype=int), -np.ones((1, dim), dtype=int)])
        return cls(normals, [0.0] * dim + [-1.0])

    @property
    def facet_float(self) -> np.ndarray:
        return self.normals.astype(float)

    def facet_values(self, xi) -> np.ndarray:
        """Affine facet functions ``l_k(xi)``; broadcasts over leading axes."""
        xi = np.asarray(xi, dtype=float)
        if xi.ndim == 0:
            xi = xi.reshape(1)
        return xi @ self.facet_float.T - self.offsets

    def contains(self, xi) -> np.ndarray:
        return np.all(self.facet_values(xi) > 0, axis=-1)

    def translate(self, t) -> "DelzantPolytope":
        t = np.asarray(t, dtype=float)
        return DelzantPolytope(self.normals, self.offsets + self.facet_float @ t)

    def pullback(self, T) -> "DelzantPolytope":
        """Polytope ``{xi : T xi in self}`` (normals become ``T^T h_k``)."""
        T = np.asarray(T)
        return DelzantPolytope(self.normals @ T, self.offsets)

    # geometry
    def _check_bounded(self) -> None:
        n = self.dim
        H = self.facet_float
        # recession cone {xi : H xi >= 0} must be {0}
        for i in range(n):
            for s in (1.0, -1.0):
                c = np.zeros(n)
                c[i] = -s
                res = linprog(c, A_ub=-H, b_ub=np.zeros(len(H)), bounds=[(-1, 1)] * n,
                              method="highs")
                if res.status == 0 and -res.fun > 1e-9:
                    raise UnboundedPolytopeError(
                        f"polytope is unbounded along direction {np.round(res.x, 12).tolist()}")

    def _check_interior(self) -> None:
        n = self.dim
        H = self.facet_float
        # maximise t subject to l_k(xi) >= t, t <= 1
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A = np.hstack([-H, np.ones((len(H), 1))])
        res = linprog(c, A_ub=A, b_ub=-self.offsets, bounds=[(None, None)] * n + [(None, 1.0)],
                      method="highs")
        if res.status != 0 or -res.fun <= 1e-12:
            raise EmptyInteriorError("polytope has empty interior")

    @cached_property
    def vertices(self) -> np.ndarray:
        self._check_bounded()
        self._check_interior()
        H = self.facet_float
        found: list[np.ndarray] = []
        for subset in itertools.combinations(range(len(H)), self.dim):
            A = H[list(subset)]
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            x = np.linalg.solve(A, self.offsets[list(subset)])
            if np.all(self.facet_values(x) >= -VERTEX_TOL):
                if not any(np.allclose(x, y, atol=1e-9) for y in found):
                    found.append(x)
        found.sort(key=lambda p: tuple(np.round(p, 9)))
        return np.array(found)

    @cached_property
    def barycenter(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def active_facets(self, vertex) -> list[int]:
        vals = self.facet_values(vertex)
        return [k for k, l in enumerate(vals) if abs(l) <= VERTEX_TOL]

    def diameter(self) -> float:
        V = self.vertices
        diff = V[:, None, :] - V[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    def boundary_distance(self, region) -> float:
        """Euclidean distance from a point or ``GridDomain`` to the boundary."""
        pts = region.nodes if isinstance(region, GridDomain) else np.atleast_2d(
            np.asarray(region, dtype=float).reshape(-1, self.dim))
        vals = self.facet_values(pts)
        if np.any(vals <= 0):
            raise PolytopeError("region is not inside the open polytope")
        norms = np.linalg.norm(self.facet_float, axis=1)
        return float((vals / norms).min())

    def interior_grid(self, h: float, margin: float) -> "GridDomain":
        return GridDomain.build(self, h, margin)


def validate_delzant(polytope: DelzantPolytope) -> DelzantReport:
    """Check primitivity, simplicity and unimodularity at every vertex.

    Raises ``UnboundedPolytopeError`` / ``EmptyInteriorError`` rather than
    reporting them as violations.
    """
    violations: list[dict] = []
    normals = [list(map(int, h)) for h in polytope.normals]
    for k, h in enumerate(normals):
        g = reduce(math.gcd, (abs(x) for x in h), 0)
        if g != 1:
            violations.append({"kind": "non-primitive normal", "facet": k, "normal": h, "gcd": g})
    V = polytope.vertices
    n = polytope.dim
    for vert in V:
        vlist = [float(x) for x in np.round(vert, 12)]
        active = polytope.active_facets(vert)
        if len(active) != n:
            violations.append({"kind": "non-simple vertex", "vertex": vlist,
                               "facets_meeting": len(active)})
            continue
        N = [normals[k] for k in active]
        adj = _int_adjugate(N)
        # column i of adj(N) is orthogonal to every active normal except the i-th
        edges = []
        for i in range(n):
            e = _primitive([adj[r][i] for r in range(n)])
            if sum(a * b for a, b in zip(N[i], e)) < 0:
                e = [-x for x in e]
            edges.append(e)
        det = _int_det(edges)
        if abs(det) != 1:
            violations.append({"kind": "non-unimodular vertex", "vertex": vlist,
                               "edges": edges, "determinant": abs(det)})
    return DelzantReport(passed=not violations,
                         vertices=[[float(x) for x in np.round(v, 12)] for v in V],
                         violations=violations)


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Lattice ``h * Z^n`` points with every facet value at least ``margin``."""

    polytope: DelzantPolytope
    h: float
    margin: float
    index: np.ndarray  # (N, n) integer lattice coordinates, lexicographic
    nodes: np.ndarray  # (N, n) = h * index

    @classmethod
    def build(cls, polytope: DelzantPolytope, h: float, margin: float) -> "GridDomain":
        if not h > 0:
            raise ValueError("grid spacing must be positive")
        if margin < 0:
            raise ValueError("margin must be nonnegative")
        V = polytope.vertices
        lo = np.floor(V.min(axis=0) / h).astype(int)
        hi = np.ceil(V.max(axis=0) / h).astype(int)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, polytope.dim)
        pts = idx * h
        vals = polytope.facet_values(pts)
        keep = np.all(vals > 0, axis=1) & np.all(vals >= margin - 1e-12 * max(1.0, margin), axis=1)
        if not keep.any():
            raise EmptyGridError(
                f"no lattice nodes with h={h} at margin {margin}; shrink h or the margin")
        return cls(polytope, float(h), float(margin), idx[keep], pts[keep])

    def __len__(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.polytope.dim

    @cached_property
    def _lookup(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.index.min(axis=0)
        shape = self.index.max(axis=0) - lo + 1
        table = np.full(tuple(shape), -1, dtype=np.int64)
        table[tuple((self.index - lo).T)] = np.arange(len(self))
        return lo, table

    @cached_property
    def _neighbors(self) -> dict:
        return {}

    def neighbor(self, offset) -> np.ndarray:
        """Row index of ``node + offset * h`` for every node (-1 if absent)."""
        key = tuple(int(o) for o in np.atleast_1d(offset))
        if key not in self._neighbors:
            self._neighbors[key] = self._neighbor(key)
        return self._neighbors[key]

    def _neighbor(self, offset) -> np.ndarray:
        lo, table = self._lookup
        j = self.index + np.asarray(offset, dtype=int) - lo
        ok = np.all((j >= 0) & (j < np.array(table.shape)), axis=1)
        out = np.full(len(self), -1, dtype=np.int64)
        out[ok] = table[tuple(j[ok].T)]
        return out

    def locate(self, xi) -> int:
        """Row of the node nearest to ``xi`` (must be a lattice node of the grid)."""
        k = np.rint(np.asarray(xi, dtype=float) / self.h).astype(int)
        lo, table = self._lookup
        j = k - lo
        if np.any(j < 0) or np.any(j >= table.shape):
            return -1
        return int(table[tuple(j)])

    def stencil_complete(self, radius: int) -> np.ndarray:
        """Mask of nodes whose full cube stencil of the given radius lies in the grid."""
        ok = np.ones(len(self), dtype=bool)
        for off in itertools.product(range(-radius, radius + 1), repeat=self.dim):
            ok &= self.neighbor(off) >= 0
        return ok

    def subgrid(self, mask) -> "GridDomain":
        mask = np.asarray(mask, dtype=bool)
        return GridDomain(self.polytope, self.h, self.margin, self.index[mask], self.nodes[mask])
