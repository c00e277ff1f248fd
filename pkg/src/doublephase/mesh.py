"""Uniform simplicial meshes, P1 fields, quadrature and Dirichlet handling."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .expr import Expr, parse

__all__ = [
    "Mesh",
    "Field",
    "build_interval_mesh",
    "build_rect_mesh",
    "gradient",
    "interpolate",
    "poincare_estimate",
]

# 2-point Gauss rule per segment (exact for quadratics) in barycentric form
_G = 0.5 / np.sqrt(3.0)
_BARY_1D = np.array([[0.5 + _G, 0.5 - _G], [0.5 - _G, 0.5 + _G]])
_W_1D = np.array([0.5, 0.5])
# interior 3-point rule per triangle, degree 2
_BARY_2D = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
_W_2D = np.array([1 / 3, 1 / 3, 1 / 3])


class Mesh:
    """Simplicial mesh with per-element P1 data.

    Attributes
    ----------
    nodes : (N, d) array
    elements : (M, d+1) int array
    boundary_nodes : sorted int array
    element_measures : (M,) array
    grad_basis : (M, d+1, d) array
        Gradient of each local hat function on each element.
    quad_points : (M, nq, d) array
    quad_weights : (M, nq) array
    quad_basis : (nq, d+1) array
        Hat-function values at the reference quadrature points.
    """

    def __init__(self, nodes, elements, boundary_nodes, bary, ref_weights):
        self.nodes = np.asarray(nodes, dtype=float)
        self.elements = np.asarray(elements, dtype=np.int64)
        self.boundary_nodes = np.unique(np.asarray(boundary_nodes, dtype=np.int64))
        self.dim = self.nodes.shape[1]
        verts = self.nodes[self.elements]  # (M, d+1, d)
        edges = verts[:, 1:, :] - verts[:, :1, :]  # (M, d, d)
        det = np.linalg.det(edges) if self.dim > 1 else edges[:, 0, 0]
        if np.any(det <= 0):
            raise ValueError("elements must have positive orientation")
        fact = 1.0 if self.dim == 1 else 2.0
        self.element_measures = det / fact
        inv = np.linalg.inv(edges)  # rows: reference-to-physical inverse
        ref = np.vstack([-np.ones((1, self.dim)), np.eye(self.dim)])  # (d+1, d)
        # grad phi_k = inv @ ref_k  ->  (M, d+1, d)
        self.grad_basis = np.einsum("mij,kj->mki", inv, ref)
        self.quad_basis = np.asarray(bary, dtype=float)
        self.quad_points = np.einsum("qk,mkd->mqd", self.quad_basis, verts)
        self.quad_weights = self.element_measures[:, None] * np.asarray(ref_weights)[None, :]
        mask = np.ones(len(self.nodes), dtype=bool)
        mask[self.boundary_nodes] = False
        self.interior = np.flatnonzero(mask)

    def __repr__(self):
        return f"Mesh(dim={self.dim}, nodes={self.n_nodes}, elements={self.n_elements})"

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def volume(self) -> float:
        return float(self.element_measures.sum())

    @property
    def bbox(self):
        return tuple((float(lo), float(hi)) for lo, hi in zip(self.nodes.min(0), self.nodes.max(0)))

    # -- fields -------------------------------------------------------------------
    def gradient(self, coeffs) -> np.ndarray:
        u = np.asarray(coeffs, dtype=float)[self.elements]  # (M, d+1)
        return np.einsum("mk,mkd->md", u, self.grad_basis)

    def grad_norm(self, coeffs) -> np.ndarray:
        return np.linalg.norm(self.gradient(coeffs), axis=1)

    def at_quad(self, coeffs) -> np.ndarray:
        u = np.asarray(coeffs, dtype=float)[self.elements]
        return u @ self.quad_basis.T

    def integrate(self, values) -> float:
        """Quadrature sum of values given at the quadrature points (or per element)."""
        v = self.broadcast_quad(values)
        return float(np.sum(v * self.quad_weights))

    def broadcast_quad(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        shape = self.quad_weights.shape
        if v.shape == shape:
            return v
        if v.shape == shape[:1]:
            return np.broadcast_to(v[:, None], shape)
        if v.ndim == 0:
            return np.broadcast_to(v, shape)
        raise ValueError(f"samples of shape {v.shape} do not match quadrature shape {shape}")

    def assemble_vector(self, local) -> np.ndarray:
        """Gather per-element local vectors (M, d+1) into a nodal vector."""
        return np.bincount(self.elements.ravel(), weights=np.asarray(local).ravel(), minlength=self.n_nodes)

    def load_vector(self, values) -> np.ndarray:
        """``int values * phi_i`` from values at the quadrature points."""
        v = self.broadcast_quad(values) * self.quad_weights
        return self.assemble_vector(v @ self.quad_basis)

    def stiffness(self, coef=None) -> sp.csr_matrix:
        """``sum_e c_e |e| grad phi_i . grad phi_j`` (c_e = 1 by default)."""
        c = np.ones(self.n_elements) if coef is None else np.asarray(coef, dtype=float)
        loc = np.einsum("mid,mjd->mij", self.grad_basis, self.grad_basis)
        loc *= (c * self.element_measures)[:, None, None]
        return self._assemble_matrix(loc)

    def mass(self) -> sp.csr_matrix:
        """Mass matrix under the mesh quadrature rule."""
        loc = np.einsum("mq,qi,qj->mij", self.quad_weights, self.quad_basis, self.quad_basis)
        return self._assemble_matrix(loc)

    def _assemble_matrix(self, loc) -> sp.csr_matrix:
        k = self.elements.shape[1]
        rows = np.repeat(self.elements, k, axis=1).ravel()
        cols = np.tile(self.elements, (1, k)).ravel()
        return sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(self.n_nodes, self.n_nodes))

    def dirichlet(self, coeffs) -> np.ndarray:
        u = np.array(coeffs, dtype=float)
        u[self.boundary_nodes] = 0.0
        return u

    def extend(self, interior_values) -> np.ndarray:
        u = np.zeros(self.n_nodes)
        u[self.interior] = interior_values
        return u

    # -- sparsity of the local residual ------------------------------------------------
    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Node-to-node coupling through shared elements (includes the diagonal)."""
        k = self.elements.shape[1]
        rows = np.repeat(self.elements, k, axis=1).ravel()
        cols = np.tile(self.elements, (1, k)).ravel()
        a = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(self.n_nodes, self.n_nodes))
        a.data[:] = 1.0
        return a

    @cached_property
    def interior_pattern(self) -> sp.csr_matrix:
        a = self.adjacency[self.interior][:, self.interior]
        return a.tocsr()

    @cached_property
    def interior_coloring(self) -> np.ndarray:
        """Greedy column coloring so that no row sees two columns of one color."""
        a = self.interior_pattern
        conflict = (a @ a).tocsr()
        n = a.shape[0]
        colors = -np.ones(n, dtype=np.int64)
        for j in range(n):
            nbr = conflict.indices[conflict.indptr[j] : conflict.indptr[j + 1]]
            used = set(colors[nbr][colors[nbr] >= 0].tolist())
            c = 0
            while c in used:
                c += 1
            colors[j] = c
        return colors


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal coefficients of a P1 function on ``mesh``."""

    coefficients: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.mesh.n_nodes,):
            raise ValueError(f"expected {self.mesh.n_nodes} coefficients, got shape {c.shape}")
        object.__setattr__(self, "coefficients", c)

    @property
    def is_dirichlet(self) -> bool:
        return bool(np.all(self.coefficients[self.mesh.boundary_nodes] == 0.0))

    def gradient(self) -> np.ndarray:
        return self.mesh.gradient(self.coefficients)

    def at_quad(self) -> np.ndarray:
        return self.mesh.at_quad(self.coefficients)


def build_interval_mesh(a: float, b: float, n: int) -> Mesh:
    if not a < b:
        raise ValueError("interval needs a < b")
    if int(n) != n or n < 2:
        raise ValueError("interval mesh needs n >= 2 segments")
    n = int(n)
    x = np.linspace(a, b, n + 1)
    elems = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return Mesh(x[:, None], elems, [0, n], _BARY_1D, _W_1D)


def build_rect_mesh(lx: float, ly: float, nx: int, ny: int) -> Mesh:
    """(0,lx) x (0,ly) with each of the nx*ny cells cut along its rising diagonal."""
    if lx <= 0 or ly <= 0:
        raise ValueError("rectangle sides must be positive")
    if int(nx) != nx or int(ny) != ny or nx < 2 or ny < 2:
        raise ValueError("rectangle mesh needs nx, ny >= 2")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row j = y index
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    n00 = idx[:-1, :-1].ravel()
    n10 = idx[:-1, 1:].ravel()
    n01 = idx[1:, :-1].ravel()
    n11 = idx[1:, 1:].ravel()
    tri = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tri[0::2] = np.column_stack([n00, n10, n11])
    tri[1::2] = np.column_stack([n00, n11, n01])
    on_edge = (
        np.isin(np.arange(len(nodes)), idx[0])
        | np.isin(np.arange(len(nodes)), idx[-1])
        | np.isin(np.arange(len(nodes)), idx[:, 0])
        | np.isin(np.arange(len(nodes)), idx[:, -1])
    )
    return Mesh(nodes, tri, np.flatnonzero(on_edge), _BARY_2D, _W_2D)


def gradient(field: Field) -> np.ndarray:
    """Per-element gradient vectors, shape (M, d)."""
    return field.gradient()


def _coords_env(points: np.ndarray) -> dict:
    env = {"x": points[..., 0]}
    if points.shape[-1] > 1:
        env["y"] = points[..., 1]
    return env


def interpolate(expr, mesh: Mesh) -> Field:
    """Nodal interpolant of a spatial expression."""
    space = ("x", "y")[: mesh.dim]
    e = expr if isinstance(expr, Expr) else parse(str(expr), space)
    bad = e.variables - set(space)
    if bad:
        raise ValueError(f"interpolated expression may only use {space}, found {sorted(bad)}")
    vals = e.vec(**_coords_env(mesh.nodes))
    return Field(np.broadcast_to(vals, (mesh.n_nodes,)).copy(), mesh)


def poincare_estimate(mesh: Mesh, model, mode, trials: int = 32, tol: float = 1e-10, seed: int = 0,
                      refine_steps: int = 40) -> float:
    """Lower estimate of ``sup ||u|| / ||grad u||`` over Dirichlet fields.

    Random Dirichlet fields are tried as they are and after smoothing by
    inverse iteration with the Laplacian; for the quadratic case the inverse
    iteration converges to the first eigenmode, which attains the sup.
    """
    from .modular import luxemburg_norm  # local import: modular depends on mesh data only

    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    inner = mesh.interior
    K = mesh.stiffness()[inner][:, inner].tocsc()
    M = mesh.mass()[inner][:, inner].tocsc()
    solve = spla.factorized(K)

    def quotient(ui):
        u = mesh.extend(ui)
        num = luxemburg_norm(mesh.at_quad(u), model, mode, mesh, tol).value
        den = luxemburg_norm(mesh.grad_norm(u), model, mode, mesh, tol).value
        return num / den if den > 0 else 0.0

    best = 0.0
    for _ in range(trials):
        v = rng.uniform(-1.0, 1.0, inner.size)
        if not np.any(v):
            continue
        best = max(best, quotient(v))
        for _k in range(refine_steps):
            v = solve(M @ v)
            v /= np.max(np.abs(v))
        best = max(best, quotient(v))
    return best
