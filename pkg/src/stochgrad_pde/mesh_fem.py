"""P1 finite elements on a uniform triangulation of the unit square.

All operators share one CSR sparsity pattern (the P1 node graph), so a
reassembly only recomputes the ``data`` array. Nodal vectors are plain
numpy arrays of length ``mesh.n_nodes``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# Up to this many nodes, systems are solved with dense LAPACK Cholesky.
DENSE_LIMIT = 400


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    n_div: int
    boundary: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Constant gradients of the three local hat functions, shape (m, 3, 2)."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_a = 2.0 * self.signed_areas
        # grad phi_i = (y_j - y_k, x_k - x_j) / 2|T| for (i, j, k) cyclic
        g = np.empty(p.shape)
        for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            g[:, i, 0] = (y[:, j] - y[:, k]) / two_a
            g[:, i, 1] = (x[:, k] - x[:, j]) / two_a
        return g

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        """Edge-midpoint quadrature points, shape (m, 3, 2); edges (0,1), (1,2), (2,0)."""
        p = self.nodes[self.triangles]
        return 0.5 * (p + np.roll(p, -1, axis=1))

    @cached_property
    def pattern(self) -> "Pattern":
        return Pattern(self)


def build_mesh(n_div: int) -> Mesh:
    """Uniform mesh of (0,1)^2, each square split along its lower-left to
    upper-right diagonal. Nodes are numbered row-major: y outer, x inner."""
    if n_div < 1:
        raise ValueError("n_div must be >= 1")
    t = np.linspace(0.0, 1.0, n_div + 1)
    xx, yy = np.meshgrid(t, t)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])
    i, j = np.meshgrid(np.arange(n_div), np.arange(n_div))
    n0 = (j * (n_div + 1) + i).ravel()
    n1 = n0 + 1
    n2 = n0 + n_div + 2
    n3 = n0 + n_div + 1
    tris = np.empty((2 * n_div * n_div, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([n0, n1, n2])
    tris[1::2] = np.column_stack([n0, n2, n3])
    bnd = (np.isclose(nodes, 0.0) | np.isclose(nodes, 1.0)).any(axis=1)
    for a in (nodes, tris, bnd):
        a.setflags(write=False)
    return Mesh(nodes=nodes, triangles=tris, n_div=n_div, boundary=bnd)


class Pattern:
    """Shared CSR pattern plus scatter maps from element matrices to ``data``."""

    def __init__(self, mesh: Mesh):
        tri = mesh.triangles
        n = mesh.n_nodes
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        key = rows * n + cols
        uniq, slot = np.unique(key, return_inverse=True)
        self.n = n
        self.rows = uniq // n
        self.cols = uniq % n
        self.nnz = uniq.size
        # slot[t*9 + 3a + b] = position of (tri[t,a], tri[t,b]) in data
        self.slot = slot.reshape(-1, 3, 3)
        self.indptr = np.searchsorted(self.rows, np.arange(n + 1)).astype(np.int32)
        self.indices = self.cols.astype(np.int32)
        self.diag = np.flatnonzero(self.rows == self.cols)

    def scatter(self, local: np.ndarray) -> np.ndarray:
        """Sum element matrices of shape (m, 3, 3) into a data array.

        Accumulation runs in triangle order, so results are bit-reproducible.
        """
        return np.bincount(self.slot.ravel(), weights=local.ravel(), minlength=self.nnz)

    def csr(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def dense(self, data: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.rows, self.cols] = data
        return out


class SpdSolver:
    """Factorization of a symmetric positive definite matrix given on a pattern."""

    def __init__(self, pattern: Pattern, data: np.ndarray):
        if pattern.n <= DENSE_LIMIT:
            try:
                self._chol = sla.cho_factor(pattern.dense(data), lower=True, check_finite=True)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError("matrix is not positive definite") from exc
            self._lu = None
        else:
            if np.any(data[pattern.diag] <= 0):
                raise np.linalg.LinAlgError("matrix is not positive definite")
            self._chol = None
            self._lu = spla.splu(pattern.csr(data).tocsc())

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._chol is not None:
            return sla.cho_solve(self._chol, rhs, check_finite=False)
        return self._lu.solve(rhs)


def _as_centroid_values(mesh: Mesh, coeff) -> np.ndarray:
    if callable(coeff):
        vals = np.asarray(coeff(mesh.centroids), dtype=float)
        if vals.ndim == 0:
            vals = np.full(mesh.n_triangles, float(vals))
    else:
        vals = np.broadcast_to(np.asarray(coeff, dtype=float), (mesh.n_triangles,))
    return vals


def mass_data(mesh: Mesh) -> np.ndarray:
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    return mesh.pattern.scatter(mesh.areas[:, None, None] * local)


def stiffness_local(mesh: Mesh) -> np.ndarray:
    """Element matrices |T| grad phi_a . grad phi_b for a unit coefficient."""
    g = mesh.basis_gradients
    return mesh.areas[:, None, None] * np.einsum("tad,tbd->tab", g, g)


def stiffness_data(mesh: Mesh, centroid_values: np.ndarray) -> np.ndarray:
    return mesh.pattern.scatter(centroid_values[:, None, None] * stiffness_local(mesh))


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Exact P1 mass matrix."""
    return mesh.pattern.csr(mass_data(mesh))


def assemble_stiffness(mesh: Mesh, coeff=1.0) -> sp.csr_matrix:
    """Stiffness matrix int a grad phi_a . grad phi_b with centroid quadrature.

    ``coeff`` is a vectorized callable of points (k, 2) or per-triangle values.
    """
    vals = _as_centroid_values(mesh, coeff)
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise ValueError("coefficient must be strictly positive at every quadrature point")
    return mesh.pattern.csr(stiffness_data(mesh, vals))


def interpolate(mesh: Mesh, f) -> np.ndarray:
    """Nodal interpolant of a vectorized callable f(points) -> values."""
    vals = np.asarray(f(mesh.nodes), dtype=float)
    if vals.ndim == 0:
        vals = np.full(mesh.n_nodes, float(vals))
    return vals


class P1Space:
    """Norms and inner products through the assembled mass and Laplace matrices."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.mass = assemble_mass(mesh)
        self.laplace = assemble_stiffness(mesh, 1.0)

    def _check(self, *vs):
        for v in vs:
            if np.shape(v) != (self.mesh.n_nodes,):
                raise ValueError(
                    f"vector of shape {np.shape(v)} does not live on a mesh with "
                    f"{self.mesh.n_nodes} nodes")

    def l2_inner(self, v, w) -> float:
        self._check(v, w)
        return float(v @ (self.mass @ w))

    def l2_norm(self, v) -> float:
        return float(np.sqrt(max(self.l2_inner(v, v), 0.0)))

    def h1_norm(self, v) -> float:
        self._check(v)
        return float(np.sqrt(max(v @ (self.laplace @ v) + v @ (self.mass @ v), 0.0)))

    def linf_norm(self, v) -> float:
        self._check(v)
        return float(np.max(np.abs(v)))
