"""Isoparametric quadratic (P2) elements for reference solutions.

Degrees of freedom are the mesh vertices followed by one node per edge.
Edge nodes on Gamma and Gamma_0 sit on the exact boundary curves, so
boundary triangles are curved and the geometric error does not spoil the
third-order L2 accuracy.  Only the nonlinear Robin forward problem is
implemented; reference data for the inverse problem needs nothing else.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import sparse

from .beta import BetaFamily
from .fem import SPDSolver, apply_dirichlet
from .forward import damped_newton
from .geometry import GAMMA, GAMMA0, DomainSpec, Mesh

log = logging.getLogger(__name__)

# vertex i, then the edge nodes between local vertices (0,1), (1,2), (2,0)
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))
CHUNK = 50_000


def collapsed_rule(n: int):
    """Conical product Gauss rule on the reference triangle.

    Returns barycentric points (n*n, 3) and weights summing to one (relative
    to the triangle area); exact for polynomials of degree 2n - 2 (the collapse Jacobian adds one degree).
    """
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    xi, eta = u.ravel(), (v * (1.0 - u)).ravel()
    weights = 2.0 * (wu * wv * (1.0 - u)).ravel()
    return np.column_stack([1.0 - xi - eta, xi, eta]), weights


def shape_values(lam) -> np.ndarray:
    """P2 shape functions at barycentric points, shape (q, 6)."""
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    return np.column_stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                            4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0])


def shape_gradients(lam) -> np.ndarray:
    """Reference gradients d/d(xi, eta) of the shape functions, shape (q, 6, 2)."""
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    q = len(lam)
    out = np.empty((q, 6, 2))
    for i in range(3):
        out[:, i] = (4 * lam[:, i] - 1)[:, None] * dl[i]
    for k, (i, j) in enumerate(LOCAL_EDGES):
        out[:, 3 + k] = 4 * (lam[:, i, None] * dl[j] + lam[:, j, None] * dl[i])
    return out


def _edge_shape(s):
    values = np.column_stack([(1 - s) * (1 - 2 * s), 4 * s * (1 - s), s * (2 * s - 1)])
    slopes = np.column_stack([4 * s - 3, 4 - 8 * s, 4 * s - 1])
    return values, slopes


class QuadraticSpace:
    """P2 degrees of freedom on a P1 mesh, with curved boundary edges.

    Parameters
    ----------
    spec : DomainSpec
        Supplies the exact boundary curves for the edge nodes.
    mesh : Mesh
    """

    def __init__(self, spec: DomainSpec, mesh: Mesh):
        self.spec = spec
        self.mesh = mesh
        nv = mesh.n_vertices
        tri = mesh.triangles
        local = np.stack([np.sort(tri[:, list(e)], axis=1) for e in LOCAL_EDGES], axis=1)
        keys = local[..., 0].astype(np.int64) * nv + local[..., 1]
        uniq, inverse = np.unique(keys.ravel(), return_inverse=True)
        self.n_edges = len(uniq)
        self.n_dofs = nv + self.n_edges
        self.cells = np.hstack([tri, nv + inverse.reshape(-1, 3)])
        ends = np.column_stack([uniq // nv, uniq % nv])
        nodes = 0.5 * (mesh.vertices[ends[:, 0]] + mesh.vertices[ends[:, 1]])

        be = np.sort(mesh.boundary_edges, axis=1)
        bkeys = be[:, 0].astype(np.int64) * nv + be[:, 1]
        bidx = np.searchsorted(uniq, bkeys)
        if not np.array_equal(uniq[bidx], bkeys):
            raise ValueError("boundary edges are not edges of the triangulation")
        self.boundary_nodes = {}
        for marker, curve in ((GAMMA, spec.inner), (GAMMA0, spec.outer)):
            sel = mesh.boundary_markers == marker
            mid = nodes[bidx[sel]]
            theta = np.arctan2(mid[:, 1], mid[:, 0])
            nodes[bidx[sel]] = curve.r(theta)[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
            # (start vertex, edge node, end vertex) in the mesh's edge orientation
            self.boundary_nodes[marker] = np.column_stack(
                [mesh.boundary_edges[sel, 0], nv + bidx[sel], mesh.boundary_edges[sel, 1]])
        self.coords = np.vstack([mesh.vertices, nodes])
        curved = np.zeros(self.n_edges, dtype=bool)
        curved[bidx] = True
        self.curved_cells = curved[inverse.reshape(-1, 3)].any(axis=1)
        mask = np.zeros(self.n_dofs, dtype=bool)
        mask[self.boundary_nodes[GAMMA0].ravel()] = True
        self.dirichlet_mask = mask

    # -- element maps --------------------------------------------------------

    def geometry(self, cells, lam):
        """Mapped points, |det J| and physical shape gradients at ``lam``."""
        N = shape_values(lam)
        dN = shape_gradients(lam)
        X = self.coords[self.cells[cells]]                      # (m, 6, 2)
        pts = np.einsum("qk,mkd->mqd", N, X)
        J = np.einsum("qkb,mka->mqab", dN, X)                   # dx_a / dxi_b
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        if np.any(det <= 0):
            raise ValueError("inverted isoparametric element")
        inv = np.stack([np.stack([J[..., 1, 1], -J[..., 0, 1]], -1),
                        np.stack([-J[..., 1, 0], J[..., 0, 0]], -1)], -2) / det[..., None, None]
        grads = np.einsum("mqba,qkb->mqka", inv, dN)            # J^{-T} dN
        return pts, det, grads

    def assemble(self, f: Callable | float, rule=None):
        """Stiffness matrix and interior load -int f phi_i, in chunks of cells."""
        lam, w = rule or collapsed_rule(3)
        w = 0.5 * w                                             # reference triangle area
        K = sparse.csr_matrix((self.n_dofs, self.n_dofs))
        load = np.zeros(self.n_dofs)
        N = shape_values(lam)
        for start in range(0, len(self.cells), CHUNK):
            cells = np.arange(start, min(start + CHUNK, len(self.cells)))
            pts, det, grads = self.geometry(cells, lam)
            dw = det * w
            local = np.einsum("mq,mqia,mqja->mij", dw, grads, grads)
            idx = self.cells[cells]
            rows = np.broadcast_to(idx[:, :, None], local.shape).ravel()
            cols = np.broadcast_to(idx[:, None, :], local.shape).ravel()
            K = K + sparse.csr_matrix((local.ravel(), (rows, cols)), shape=K.shape)
            fv = _evaluate(f, pts)
            load -= np.bincount(idx.ravel(), np.einsum("mq,qk->mk", dw * fv, N).ravel(),
                                minlength=self.n_dofs)
        return (0.5 * (K + K.T)).tocsr(), load

    def inverse_map(self, cells, points, lam, tol: float = 1e-14, max_iter: int = 20):
        """Barycentric coordinates of ``points`` under the isoparametric maps of ``cells``."""
        X = self.coords[self.cells[cells]]                      # (n, 6, 2)
        ref = lam[:, 1:].copy()
        scale = np.abs(X).max()
        for _ in range(max_iter):
            full = np.column_stack([1.0 - ref.sum(axis=1), ref])
            resid = np.einsum("nk,nkd->nd", shape_values(full), X) - points
            if np.abs(resid).max() <= tol * scale:
                break
            J = np.einsum("nkb,nka->nab", shape_gradients(full), X)
            ref -= np.linalg.solve(J, resid[..., None])[..., 0]
        else:
            raise ValueError("inverse isoparametric map did not converge")
        return np.column_stack([1.0 - ref.sum(axis=1), ref])

    def integrate(self, integrand, rule=None) -> float:
        """Sum over cells of int integrand(points, u-independent) dx."""
        lam, w = rule or collapsed_rule(4)
        total = 0.0
        for start in range(0, len(self.cells), CHUNK):
            cells = np.arange(start, min(start + CHUNK, len(self.cells)))
            pts, det, grads = self.geometry(cells, lam)
            total += float(np.sum(0.5 * w * det * integrand(cells, pts, grads)))
        return total


def _evaluate(data, pts):
    if callable(data):
        return np.asarray(data(pts.reshape(-1, 2)), dtype=float).reshape(pts.shape[:-1])
    return np.broadcast_to(np.asarray(data, dtype=float), pts.shape[:-1])


class CurvedEdgeQuadrature:
    """Gauss points on the quadratic Gamma edges of a :class:`QuadraticSpace`."""

    def __init__(self, space: QuadraticSpace, marker: int = GAMMA, n_points: int = 5):
        s, w = np.polynomial.legendre.leggauss(n_points)
        s, w = 0.5 * (s + 1.0), 0.5 * w
        self.n_dofs = space.n_dofs
        self.nodes = space.boundary_nodes[marker]
        self.basis, slopes = _edge_shape(s)
        X = space.coords[self.nodes]                            # (e, 3, 2)
        self.points = np.einsum("qk,ekd->eqd", self.basis, X)
        tangent = np.einsum("qk,ekd->eqd", slopes, X)
        self.weights = np.hypot(tangent[..., 0], tangent[..., 1]) * w

    def interpolate(self, u):
        return np.asarray(u)[self.nodes] @ self.basis.T

    def load(self, values):
        local = (self.weights * values) @ self.basis
        return np.bincount(self.nodes.ravel(), local.ravel(), minlength=self.n_dofs)

    def mass(self, coef):
        local = np.einsum("eq,qi,qj->eij", self.weights * coef, self.basis, self.basis)
        rows = np.broadcast_to(self.nodes[:, :, None], local.shape).ravel()
        cols = np.broadcast_to(self.nodes[:, None, :], local.shape).ravel()
        M = sparse.csr_matrix((local.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs))
        return 0.5 * (M + M.T)

    def evaluate(self, data):
        return _evaluate(data, self.points)


@dataclass(eq=False)
class QuadraticSolution:
    space: QuadraticSpace
    values: np.ndarray

    def evaluate(self, points, locate) -> np.ndarray:
        """Point values; ``locate`` maps points to (triangle, barycentric) on the P1 mesh.

        In curved boundary cells the barycentric guess is corrected by
        inverting the quadratic element map with Newton's method.
        """
        points = np.atleast_2d(points)
        tri, lam = locate(self.space.mesh, points)
        curved = np.flatnonzero(self.space.curved_cells[tri])
        if len(curved):
            lam = lam.copy()
            lam[curved] = self.space.inverse_map(tri[curved], points[curved], lam[curved])
        return np.einsum("nk,nk->n", self.values[self.space.cells[tri]], shape_values(lam))

    def errors_against(self, exact, grad_exact) -> tuple[float, float]:
        """(L2, H1) errors with a degree-6 rule on the curved cells."""
        u = self.values
        lam, _ = collapsed_rule(4)
        N = shape_values(lam)

        def sq_l2(cells, pts, grads):
            uh = np.einsum("mk,qk->mq", u[self.space.cells[cells]], N)
            return (uh - _evaluate(exact, pts)) ** 2

        def sq_semi(cells, pts, grads):
            gh = np.einsum("mk,mqka->mqa", u[self.space.cells[cells]], grads)
            ge = np.asarray(grad_exact(pts.reshape(-1, 2))).reshape(gh.shape)
            return ((gh - ge) ** 2).sum(axis=-1)

        l2 = self.space.integrate(sq_l2)
        semi = self.space.integrate(sq_semi)
        return float(np.sqrt(l2)), float(np.sqrt(l2 + semi))


def solve_quadratic(spec: DomainSpec, mesh: Mesh, beta: BetaFamily, a: Callable,
                    f: Callable | float, g: Callable | float = 0.0, rtol: float = 1e-10,
                    max_iter: int = 50) -> QuadraticSolution:
    """P2 solution of the nonlinear Robin problem, by the same damped Newton as P1."""
    space = QuadraticSpace(spec, mesh)
    K, load = space.assemble(f)
    gq = CurvedEdgeQuadrature(space)
    a_q = gq.evaluate(a)
    if not a_q.min() > 0:
        raise ValueError("friction coefficient must be positive on Gamma")
    load = load + gq.load(gq.evaluate(g))
    mask = space.dirichlet_mask
    load[mask] = 0.0
    log.info("P2 space: %d dofs on %d cells", space.n_dofs, len(space.cells))

    def residual(u):
        r = K @ u + gq.load(a_q * beta.beta(gq.interpolate(u))) - load
        r[mask] = 0.0
        return r

    def newton_step(u, r):
        A = K + gq.mass(a_q * beta.beta_prime(gq.interpolate(u)))
        return SPDSolver(apply_dirichlet(A, None, mask)[0], "P2 Newton step").solve(-r)

    u0 = newton_step(np.zeros(space.n_dofs), -load)
    u = damped_newton(residual, newton_step, u0, rtol * (1.0 + np.linalg.norm(load)), max_iter)
    return QuadraticSolution(space, u)
