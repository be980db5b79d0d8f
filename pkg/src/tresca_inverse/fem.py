"""P1 finite elements on triangles: quadrature, assembly and SPD solves."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .geometry import GAMMA, DomainSpec, Mesh, omega_indicator

log = logging.getLogger(__name__)

# Degree-2 rule: barycentric (2/3, 1/6, 1/6) and permutations, weights relative to area.
TRI_RULE_2 = (
    np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
    np.full(3, 1 / 3),
)

# Degree-4 six-point rule (Dunavant).
_a, _b = 0.445948490915965, 0.091576213509771
_wa, _wb = 0.223381589678011, 0.109951743655322
TRI_RULE_4 = (
    np.array([[1 - 2 * _a, _a, _a], [_a, 1 - 2 * _a, _a], [_a, _a, 1 - 2 * _a],
              [1 - 2 * _b, _b, _b], [_b, 1 - 2 * _b, _b], [_b, _b, 1 - 2 * _b]]),
    np.array([_wa, _wa, _wa, _wb, _wb, _wb]),
)


def edge_rule(n: int = 3):
    """Gauss-Legendre points on [0, 1] with weights summing to one."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed."""


class AssemblyError(ValueError):
    pass


@dataclass(eq=False)
class FemField:
    """Nodal P1 coefficients on a mesh; entries on Gamma_0 are zero."""

    mesh: Mesh
    values: np.ndarray

    @property
    def dirichlet_mask(self) -> np.ndarray:
        return self.mesh.dirichlet_mask

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


# ---------------------------------------------------------------------------
# element geometry


def p1_gradients(mesh: Mesh):
    """Areas (m,) and constant basis gradients (m, 3, 2) of every triangle."""
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    # gradient of lambda_i is (y_j - y_k, x_k - x_j) / (2 A) for (i, j, k) cyclic
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    h2 = mesh.h_max**2
    if np.any(area < 1e-14 * h2):
        bad = int(np.argmin(area))
        raise AssemblyError(f"degenerate triangle {bad} with area {area[bad]:.3e}")
    grads = np.stack([b, c], axis=2) / (2.0 * area)[:, None, None]
    return area, grads


def _scatter(elements: np.ndarray, local: np.ndarray, n: int) -> sparse.csr_matrix:
    k = elements.shape[1]
    rows = np.repeat(elements, k, axis=1).ravel()
    cols = np.tile(elements, (1, k)).ravel()
    return sparse.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def _symmetrize(A: sparse.csr_matrix) -> sparse.csr_matrix:
    # exact symmetry; duplicate summation order can differ between (i,j) and (j,i)
    A = A.tocsr()
    return ((A + A.T) * 0.5).tocsr()


def assemble_stiffness(mesh: Mesh) -> sparse.csr_matrix:
    """Exact P1 stiffness matrix of int grad u . grad v."""
    area, g = p1_gradients(mesh)
    local = area[:, None, None] * np.einsum("eid,ejd->eij", g, g)
    return _symmetrize(_scatter(mesh.triangles, local, mesh.n_vertices))


def assemble_mass(mesh: Mesh, triangles: np.ndarray | None = None) -> sparse.csr_matrix:
    """Exact P1 mass matrix, optionally restricted to a boolean triangle subset."""
    area = mesh.signed_areas()
    tri = mesh.triangles
    if triangles is not None:
        area, tri = area[triangles], tri[triangles]
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = area[:, None, None] * ref[None]
    return _symmetrize(_scatter(tri, local, mesh.n_vertices))


class TriangleQuadrature:
    """Quadrature points of a triangle subset, with P1 basis values."""

    def __init__(self, mesh: Mesh, triangles: np.ndarray | None = None, rule=TRI_RULE_2):
        bary, w = rule
        idx = np.arange(mesh.n_triangles) if triangles is None else np.flatnonzero(triangles)
        self.mesh = mesh
        self.triangles = idx
        self.nodes = mesh.triangles[idx]
        corners = mesh.vertices[self.nodes]
        self.points = np.einsum("qi,eid->eqd", bary, corners)
        self.weights = mesh.signed_areas()[idx][:, None] * w[None, :]
        self.basis = bary

    def interpolate(self, u) -> np.ndarray:
        """Values of the P1 field ``u`` at the points, shape (m, q)."""
        return np.asarray(u)[self.nodes] @ self.basis.T

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * values))

    def load(self, values) -> np.ndarray:
        """Vector of int values * phi_i."""
        local = (self.weights * values) @ self.basis
        return np.bincount(self.nodes.ravel(), local.ravel(), minlength=self.mesh.n_vertices)


class BoundaryQuadrature:
    """Gauss points on the straight edges carrying ``marker``."""

    def __init__(self, mesh: Mesh, marker: int = GAMMA, n_points: int = 3):
        s, w = edge_rule(n_points)
        self.mesh = mesh
        self.edges = mesh.edges(marker)
        a = mesh.vertices[self.edges[:, 0]]
        b = mesh.vertices[self.edges[:, 1]]
        self.lengths = np.hypot(*(b - a).T)
        self.basis = np.column_stack([1.0 - s, s])
        self.points = (a[:, None, :] * self.basis[None, :, 0, None]
                       + b[:, None, :] * self.basis[None, :, 1, None])
        self.weights = self.lengths[:, None] * w[None, :]
        self.angles = np.arctan2(self.points[..., 1], self.points[..., 0])

    def interpolate(self, u) -> np.ndarray:
        return np.asarray(u)[self.edges] @ self.basis.T

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * values))

    def load(self, values) -> np.ndarray:
        local = (self.weights * values) @ self.basis
        return np.bincount(self.edges.ravel(), local.ravel(), minlength=self.mesh.n_vertices)

    def mass(self, coefficient) -> sparse.csr_matrix:
        """Matrix of int c phi_i phi_j ds for coefficient values at the points."""
        cw = self.weights * coefficient
        local = np.einsum("eq,qi,qj->eij", cw, self.basis, self.basis)
        return _symmetrize(_scatter(self.edges, local, self.mesh.n_vertices))

    def evaluate(self, data) -> np.ndarray:
        """Coerce scalar, callable or point-shaped data to values at the points."""
        if callable(data):
            return np.asarray(data(self.points.reshape(-1, 2)), dtype=float).reshape(self.weights.shape)
        return np.broadcast_to(np.asarray(data, dtype=float), self.weights.shape)


def assemble_boundary_weighted_mass(mesh: Mesh, weight, quad: BoundaryQuadrature | None = None):
    """int_Gamma w phi_i phi_j ds with 3-point Gauss per edge."""
    quad = quad or BoundaryQuadrature(mesh)
    return quad.mass(quad.evaluate(weight))


def assemble_boundary_load(mesh: Mesh, integrand, quad: BoundaryQuadrature | None = None):
    """int_Gamma integrand phi_i ds."""
    quad = quad or BoundaryQuadrature(mesh)
    return quad.load(quad.evaluate(integrand))


def assemble_interior_load(mesh: Mesh, f) -> np.ndarray:
    """The interior part of the right-hand side, -int_Omega f phi_i dx."""
    quad = TriangleQuadrature(mesh)
    if callable(f):
        vals = np.asarray(f(quad.points.reshape(-1, 2)), dtype=float).reshape(quad.weights.shape)
    else:
        vals = np.broadcast_to(np.asarray(f, dtype=float), quad.weights.shape)
    return -quad.load(vals)


def omega_triangles(mesh: Mesh, spec: DomainSpec) -> np.ndarray:
    """Triangles whose centroid lies in the observation region."""
    return omega_indicator(spec, mesh.centroids())


def assemble_omega_mass(mesh: Mesh, spec: DomainSpec) -> sparse.csr_matrix:
    return assemble_mass(mesh, omega_triangles(mesh, spec))


# ---------------------------------------------------------------------------
# Dirichlet conditions and linear solves


def apply_dirichlet(matrix, rhs, mask):
    """Symmetric elimination of homogeneous Dirichlet rows/columns.

    Masked rows and columns are replaced by identity rows and the matching
    right-hand side entries are set to zero.
    """
    mask = np.asarray(mask, dtype=bool)
    keep = sparse.diags((~mask).astype(float))
    A = (keep @ matrix @ keep + sparse.diags(mask.astype(float))).tocsr()
    b = None if rhs is None else np.where(mask, 0.0, rhs)
    return A, b


DIRECT_LIMIT = 600_000


class SPDSolver:
    """Factorization of an SPD matrix reused across right-hand sides.

    Systems up to ``DIRECT_LIMIT`` unknowns are factored by sparse LU with a
    symmetric minimum-degree ordering and no pivoting, which yields the
    Cholesky pivots; a non-positive pivot means the matrix is not SPD.
    Larger systems use conjugate gradients with an algebraic multigrid
    preconditioner.
    """

    def __init__(self, matrix, name: str = "linear solve", rtol: float = 1e-12):
        self.A = sparse.csc_matrix(matrix)
        self.name = name
        self.rtol = rtol
        n = self.A.shape[0]
        self._lu = None
        self._amg = None
        if n <= DIRECT_LIMIT:
            try:
                self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                     options={"SymmetricMode": True})
            except RuntimeError as exc:
                raise SolverError(f"{name}: factorization failed ({exc})") from exc
            if np.any(self._lu.U.diagonal() <= 0):
                raise SolverError(f"{name}: matrix is not positive definite")
        else:
            self.A = self.A.tocsr()
            if np.any(self.A.diagonal() <= 0):
                raise SolverError(f"{name}: non-positive diagonal")
            try:
                import pyamg
                self._amg = pyamg.smoothed_aggregation_solver(self.A, symmetry="symmetric")
            except ImportError:  # pragma: no cover - pyamg is a dependency
                self._amg = None

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        nb = np.linalg.norm(b)
        if nb == 0.0:
            return np.zeros_like(b)
        if self._lu is not None:
            x = self._lu.solve(b)
            r = b - self.A @ x
            # one step of iterative refinement is cheap and usually reaches 1e-15
            if np.linalg.norm(r) > 1e-14 * nb:
                x += self._lu.solve(r)
        else:
            x = self._iterative(b)
        rn = np.linalg.norm(b - self.A @ x)
        res = rn / nb
        # the residual itself cannot be computed more accurately than ~eps |A||x|
        floor = 1e-14 * np.linalg.norm(abs(self.A) @ np.abs(x))
        if not (res <= self.rtol or rn <= floor):
            raise SolverError(f"{self.name}: relative residual {res:.2e} exceeds {self.rtol:.0e}")
        return x

    def solve_block(self, B) -> np.ndarray:
        """Direct solve for the columns of ``B`` (factored systems only)."""
        if self._lu is None:
            raise SolverError(f"{self.name}: block solves need a direct factorization")
        B = np.asarray(B, dtype=float)
        X = self._lu.solve(B)
        R = B - self.A @ X
        if np.linalg.norm(R) > 1e-14 * np.linalg.norm(B):
            X += self._lu.solve(R)
        return X

    @property
    def is_direct(self) -> bool:
        return self._lu is not None

    def _iterative(self, b):
        if self._amg is not None:
            M = self._amg.aspreconditioner(cycle="V")
        else:
            M = sparse.diags(1.0 / self.A.diagonal())
        # defect correction around loosely converged CG keeps the true residual honest
        x = np.zeros_like(b)
        nb = np.linalg.norm(b)
        for _ in range(6):
            r = b - self.A @ x
            if np.linalg.norm(r) <= 0.5 * self.rtol * nb:
                break
            dx, info = spla.cg(self.A, r, rtol=1e-7, atol=0.0, M=M, maxiter=5000)
            if info != 0:
                raise SolverError(f"{self.name}: conjugate gradients did not converge (info={info})")
            x += dx
        return x


def solve_spd(matrix, rhs, name: str = "linear solve") -> np.ndarray:
    return SPDSolver(matrix, name).solve(rhs)


# ---------------------------------------------------------------------------
# norms and errors


def l2_norm(mesh: Mesh, u, triangles=None) -> float:
    M = assemble_mass(mesh, triangles)
    u = np.asarray(u)
    return float(np.sqrt(max(u @ (M @ u), 0.0)))


def h1_norm(mesh: Mesh, u, stiffness=None, mass=None) -> float:
    K = assemble_stiffness(mesh) if stiffness is None else stiffness
    M = assemble_mass(mesh) if mass is None else mass
    u = np.asarray(u)
    return float(np.sqrt(max(u @ (K @ u) + u @ (M @ u), 0.0)))


def errors_against(mesh: Mesh, u_h, exact, grad_exact) -> tuple[float, float]:
    """(L2 error, H1 error) of a P1 field against closures, degree-4 quadrature."""
    quad = TriangleQuadrature(mesh, rule=TRI_RULE_4)
    pts = quad.points.reshape(-1, 2)
    shape = quad.weights.shape
    diff = quad.interpolate(u_h) - np.asarray(exact(pts)).reshape(shape)
    _, g = p1_gradients(mesh)
    grad_h = np.einsum("ei,eid->ed", np.asarray(u_h)[mesh.triangles], g)
    gex = np.asarray(grad_exact(pts)).reshape(shape + (2,))
    gdiff = grad_h[:, None, :] - gex
    l2sq = quad.integrate(diff**2)
    semi = quad.integrate((gdiff**2).sum(axis=2))
    return float(np.sqrt(l2sq)), float(np.sqrt(l2sq + semi))
