"""Triangular meshes, reference quadrature, orthonormal P_l bases and DG spaces."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import roots_jacobi

from . import symexpr as se

MAX_DEGREE = 4


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Conforming triangulation with counter-clockwise cells.

    ``facet_cells[f] = (plus, minus)`` with ``minus == -1`` on the boundary;
    ``facet_local[f]`` holds the local facet index (opposite vertex) of the
    facet in each adjacent cell. Boundary facets carry an integer region tag
    in ``boundary_tags`` (0 for interior facets).
    """

    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray = field(repr=False)
    facet_cells: np.ndarray = field(repr=False)
    facet_local: np.ndarray = field(repr=False)
    boundary_tags: np.ndarray = field(repr=False)

    @classmethod
    def from_cells(cls, vertices, cells, tagger=None) -> "Mesh2D":
        """Build facet connectivity; ``tagger(midpoints) -> tags`` labels boundary facets."""
        vertices = np.asarray(vertices, dtype=float)
        cells = np.asarray(cells, dtype=np.int64).copy()
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be (n, 2)")
        p = vertices[cells]
        det = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
               - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        if np.any(np.abs(det) <= 1e-14 * max(1.0, np.abs(det).max(initial=0.0))):
            raise MeshError("degenerate (zero-area) cell")
        flip = det < 0
        cells[flip] = cells[flip][:, [0, 2, 1]]
        # local facet k is opposite vertex k
        local = np.array([[1, 2], [2, 0], [0, 1]])
        edges = np.sort(cells[:, local], axis=2).reshape(-1, 2)
        owner = np.repeat(np.arange(len(cells)), 3)
        lidx = np.tile(np.arange(3), len(cells))
        uniq, inverse, counts = np.unique(edges, axis=0, return_inverse=True,
                                          return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts > 2):
            raise MeshError("non-manifold facet shared by more than two cells")
        nf = len(uniq)
        fc = -np.ones((nf, 2), dtype=np.int64)
        fl = -np.ones((nf, 2), dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        for k in order:
            f = inverse[k]
            slot = 0 if fc[f, 0] < 0 else 1
            fc[f, slot] = owner[k]
            fl[f, slot] = lidx[k]
        tags = np.zeros(nf, dtype=np.int64)
        bnd = fc[:, 1] < 0
        if np.any(bnd):
            mid = vertices[uniq[bnd]].mean(axis=1)
            tags[bnd] = 1 if tagger is None else np.asarray(tagger(mid), dtype=np.int64)
        return cls(vertices, cells, uniq, fc, fl, tags)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_facets(self) -> int:
        return len(self.facets)

    @property
    def interior_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cells[:, 1] >= 0)

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cells[:, 1] < 0)

    def cell_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def facet_lengths(self) -> np.ndarray:
        p = self.vertices[self.facets]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def facet_normals(self) -> np.ndarray:
        """Unit normals pointing out of the ``plus`` cell of each facet."""
        p = self.vertices[self.facets]
        t = p[:, 1] - p[:, 0]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        n /= np.linalg.norm(n, axis=1)[:, None]
        centroid = self.vertices[self.cells[self.facet_cells[:, 0]]].mean(axis=1)
        flip = np.einsum("fi,fi->f", n, p[:, 0] - centroid) < 0
        n[flip] *= -1
        return n

    def facet_measure_h(self) -> np.ndarray:
        """min(adjacent cell areas) / facet length; boundary uses the single cell."""
        area = self.cell_areas()
        fc = self.facet_cells
        a = area[fc[:, 0]]
        other = np.where(fc[:, 1] >= 0, area[np.maximum(fc[:, 1], 0)], np.inf)
        return np.minimum(a, other) / self.facet_lengths()

    def max_diameter(self) -> float:
        p = self.vertices[self.cells]
        e = np.linalg.norm(p[:, [1, 2, 0]] - p, axis=2)
        return float(e.max())

    # line-oriented text format ---------------------------------------------
    def dump(self, path) -> None:
        lines = [f"vertices {len(self.vertices)}"]
        lines += [f"{x!r} {y!r}" for x, y in self.vertices.tolist()]
        lines.append(f"cells {len(self.cells)}")
        lines += [" ".join(map(str, c)) for c in self.cells.tolist()]
        b = self.boundary_facets
        lines.append(f"boundary {len(b)}")
        lines += [f"{a} {c} {t}" for (a, c), t in
                  zip(self.facets[b].tolist(), self.boundary_tags[b].tolist())]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Mesh2D":
        tokens = Path(path).read_text().split("\n")
        it = iter(t for t in tokens if t.strip())

        def section(name):
            head = next(it).split()
            if head[0] != name:
                raise MeshError(f"expected section {name!r}, found {head[0]!r}")
            return [next(it).split() for _ in range(int(head[1]))]

        verts = np.array(section("vertices"), dtype=float).reshape(-1, 2)
        cells = np.array(section("cells"), dtype=np.int64).reshape(-1, 3)
        bnd = section("boundary")
        tagmap = {tuple(sorted((int(a), int(b)))): int(t) for a, b, t in bnd}
        mesh = cls.from_cells(verts, cells)
        for f in mesh.boundary_facets:
            key = tuple(mesh.facets[f].tolist())
            if key not in tagmap:
                raise MeshError(f"boundary facet {key} missing from tag list")
            mesh.boundary_tags[f] = tagmap[key]
        return mesh


LEFT, RIGHT, BOTTOM, TOP = 1, 2, 3, 4


def structured_triangle_mesh(nx: int, ny: int, box=((0.0, 0.0), (1.0, 1.0))) -> Mesh2D:
    """Uniform grid of ``nx * ny`` squares, each cut along its rising diagonal.

    Boundary facets are tagged ``LEFT=1, RIGHT=2, BOTTOM=3, TOP=4``.
    """
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be >= 1")
    (x0, y0), (x1, y1) = box
    if not (x1 > x0 and y1 > y0):
        raise MeshError("degenerate box")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    vid = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = vid[:-1, :-1].ravel()
    b = vid[:-1, 1:].ravel()
    c = vid[1:, 1:].ravel()
    d = vid[1:, :-1].ravel()
    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    cells[0::2] = np.stack([a, b, c], axis=1)
    cells[1::2] = np.stack([a, c, d], axis=1)
    tol = 1e-10 * max(x1 - x0, y1 - y0)

    def tagger(mid):
        t = np.zeros(len(mid), dtype=np.int64)
        t[np.abs(mid[:, 0] - x0) < tol] = LEFT
        t[np.abs(mid[:, 0] - x1) < tol] = RIGHT
        t[np.abs(mid[:, 1] - y0) < tol] = BOTTOM
        t[np.abs(mid[:, 1] - y1) < tol] = TOP
        return t

    return Mesh2D.from_cells(verts, cells, tagger)


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,)
    degree: int          # polynomial exactness


MAX_QUADRATURE_ORDER = 40


@lru_cache(maxsize=None)
def reference_quadrature(order: int) -> QuadratureRule:
    """Rule on the reference triangle {x, y >= 0, x + y <= 1}, exact to ``order``.

    Order <= 1 is the centroid rule; higher orders use a collapsed
    Gauss-Legendre x Gauss-Jacobi(1, 0) product rule.
    """
    if order < 0 or order > MAX_QUADRATURE_ORDER:
        raise ValueError(f"unsupported quadrature order {order}")
    if order <= 1:
        return QuadratureRule(np.array([[1 / 3, 1 / 3]]), np.array([0.5]), 1)
    n = (order + 2) // 2
    ga, wa = np.polynomial.legendre.leggauss(n)
    a = 0.5 * (ga + 1.0)
    wa = 0.5 * wa
    gb, wb = roots_jacobi(n, 1.0, 0.0)
    b = 0.5 * (gb + 1.0)
    wb = 0.25 * wb
    A, B = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    pts = np.stack([(A * (1.0 - B)).ravel(), B.ravel()], axis=1)
    return QuadratureRule(pts, (WA * WB).ravel(), 2 * n - 1)


@lru_cache(maxsize=None)
def facet_quadrature(order: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1]."""
    if order < 0 or order > MAX_QUADRATURE_ORDER:
        raise ValueError(f"unsupported quadrature order {order}")
    n = max(1, (order + 2) // 2)
    g, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(0.5 * (g + 1.0)[:, None], 0.5 * w, 2 * n - 1)


# ---------------------------------------------------------------------------
# basis


def _exponents(degree):
    return [(i, k - i) for k in range(degree + 1) for i in range(k, -1, -1)]


def monomial_moment(a: int, b: int) -> float:
    """Integral of x^a y^b over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@dataclass(frozen=True, eq=False)
class ReferenceBasis:
    """Orthonormal (w.r.t. the reference L2 product) basis of P_degree."""

    degree: int
    exponents: tuple
    coeffs: np.ndarray  # (nb, nmono): phi_i = sum_k coeffs[i, k] * mono_k

    @property
    def dim(self) -> int:
        return len(self.exponents)

    def _monomials(self, pts):
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([x ** a * y ** b for a, b in self.exponents], axis=-1)

    def _monomial_grads(self, pts):
        x, y = pts[..., 0], pts[..., 1]
        dx = [a * x ** max(a - 1, 0) * y ** b for a, b in self.exponents]
        dy = [b * x ** a * y ** max(b - 1, 0) for a, b in self.exponents]
        return np.stack([np.stack(dx, axis=-1), np.stack(dy, axis=-1)], axis=-1)

    def values(self, pts) -> np.ndarray:
        """(..., nb) basis values at reference points (..., 2)."""
        return self._monomials(np.asarray(pts, dtype=float)) @ self.coeffs.T

    def gradients(self, pts) -> np.ndarray:
        """(..., nb, 2) reference gradients."""
        g = self._monomial_grads(np.asarray(pts, dtype=float))
        return np.einsum("ik,...kd->...id", self.coeffs, g)


@lru_cache(maxsize=None)
def reference_basis(degree: int) -> ReferenceBasis:
    if degree < 0 or degree > MAX_DEGREE:
        raise ValueError(f"degree must be in 0..{MAX_DEGREE}")
    ex = _exponents(degree)
    M = np.array([[monomial_moment(a1 + a2, b1 + b2) for a2, b2 in ex] for a1, b1 in ex])
    L = np.linalg.cholesky(M)
    coeffs = np.linalg.inv(L)
    return ReferenceBasis(degree, tuple(ex), coeffs)


def lattice_points(degree: int) -> np.ndarray:
    """Uniform interpolation lattice on the reference triangle."""
    if degree == 0:
        return np.array([[1 / 3, 1 / 3]])
    return np.array([(i / degree, j / degree)
                     for j in range(degree + 1) for i in range(degree + 1 - j)])


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class AffineMap:
    origin: np.ndarray    # (2,)
    jacobian: np.ndarray  # (2, 2), x = origin + J xhat
    det: float
    normals: np.ndarray   # (3, 2) outward unit normal of local facet k (opposite vertex k)

    def __call__(self, xhat):
        return self.origin + np.asarray(xhat) @ self.jacobian.T

    def inverse(self, x):
        return (np.asarray(x) - self.origin) @ np.linalg.inv(self.jacobian).T


def geometry_map(mesh: Mesh2D, cell: int) -> AffineMap:
    p = mesh.vertices[mesh.cells[cell]]
    J = np.stack([p[1] - p[0], p[2] - p[0]], axis=1)
    det = float(np.linalg.det(J))
    if abs(det) <= 1e-300:
        raise MeshError(f"zero-area cell {cell}")
    normals = np.empty((3, 2))
    centroid = p.mean(axis=0)
    for k in range(3):
        a, b = p[(k + 1) % 3], p[(k + 2) % 3]
        t = b - a
        n = np.array([t[1], -t[0]]) / np.linalg.norm(t)
        if np.dot(n, a - centroid) < 0:
            n = -n
        normals[k] = n
    return AffineMap(p[0].copy(), J, det, normals)


class DGSpace:
    """Discontinuous P_degree space with ``m`` components on a triangle mesh.

    Global dof of (cell K, basis i, component j) is ``(K * nb + i) * m + j``.
    """

    def __init__(self, mesh: Mesh2D, degree: int, m: int = 1):
        self.mesh = mesh
        self.degree = int(degree)
        self.m = int(m)
        self.basis = reference_basis(self.degree)
        p = mesh.vertices[mesh.cells]
        self.origin = p[:, 0]
        self.J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        self.detJ = np.linalg.det(self.J)
        self.invJ = np.linalg.inv(self.J)

    @property
    def local_dim(self) -> int:
        return self.basis.dim

    @property
    def num_dofs(self) -> int:
        return self.mesh.num_cells * self.local_dim * self.m

    def default_order(self) -> int:
        return 2 * self.degree + 2

    def to_physical(self, xhat, cells=None) -> np.ndarray:
        """Map reference points (nq, 2) to (ncells, nq, 2)."""
        o = self.origin if cells is None else self.origin[cells]
        J = self.J if cells is None else self.J[cells]
        return o[:, None, :] + np.einsum("cij,qj->cqi", J, xhat)

    def to_reference(self, x, cells) -> np.ndarray:
        """Map physical points (n, nq, 2) in ``cells`` (n,) to reference coordinates."""
        return np.einsum("cij,cqj->cqi", self.invJ[cells], x - self.origin[cells][:, None, :])

    def physical_gradients(self, ref_grads, cells=None) -> np.ndarray:
        """Apply J^{-T}: ref_grads (..., nb, 2) per cell -> physical gradients."""
        invJ = self.invJ if cells is None else self.invJ[cells]
        if ref_grads.ndim == 3:  # shared reference points (nq, nb, 2)
            return np.einsum("cji,qbj->cqbi", invJ, ref_grads)
        return np.einsum("cji,cqbj->cqbi", invJ, ref_grads)


def interpolate(expr, space: DGSpace):
    """Cellwise interpolant on the uniform lattice; exact on P_degree."""
    from .assembly import DiscreteField

    comps = _components(expr, space.m)
    nodes = lattice_points(space.degree)
    x = space.to_physical(nodes)
    values = np.empty((space.mesh.num_cells, len(nodes), space.m))
    for j, e in enumerate(comps):
        values[:, :, j] = np.broadcast_to(
            se.evaluate(e, {se.coordinate(0): x[..., 0], se.coordinate(1): x[..., 1]}),
            x.shape[:2])
    V = space.basis.values(nodes)  # (nodes, nb)
    coef = np.linalg.solve(V, values.transpose(1, 0, 2).reshape(len(nodes), -1))
    coef = coef.reshape(space.local_dim, space.mesh.num_cells, space.m).transpose(1, 0, 2)
    return DiscreteField(space, coef.reshape(-1).copy())


def _components(expr, m):
    if isinstance(expr, se.SymArray):
        comps = list(expr.data.flat)
    elif isinstance(expr, (list, tuple)):
        comps = [se.as_expr(e) for e in expr]
    else:
        comps = [se.as_expr(expr)]
    if len(comps) != m:
        raise se.ShapeError(f"expected {m} components, got {len(comps)}")
    return comps
