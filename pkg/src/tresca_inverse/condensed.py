"""Static condensation of the interior unknowns onto Gamma.

The friction term only couples degrees of freedom on Gamma.  With the
interior block K_II of the stiffness matrix factored once per mesh, every
linearized Robin system reduces to a small dense system for the Gamma
values with the Schur complement

    S = K_GG - K_GI K_II^{-1} K_IG,

and the interior values follow from one more back-substitution.  The
nonlinear problem itself becomes a dense Newton iteration on Gamma.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import linalg

from .fem import BoundaryQuadrature, SolverError, SPDSolver

log = logging.getLogger(__name__)


class GammaCondensation:
    """Factored interior block and Schur complement for one mesh.

    Parameters
    ----------
    stiffness : sparse matrix
        Stiffness matrix before Dirichlet elimination.
    mask : ndarray of bool
        Dirichlet vertices.
    gamma_quad : BoundaryQuadrature
        Quadrature on the Gamma edges; fixes which vertices form G.
    block : int
        Number of Schur complement columns computed per back-substitution.
    """

    def __init__(self, stiffness, mask, gamma_quad: BoundaryQuadrature, block: int = 64):
        n = stiffness.shape[0]
        self.n = n
        self.quad = gamma_quad
        self.G = np.unique(gamma_quad.edges)
        on_gamma = np.zeros(n, dtype=bool)
        on_gamma[self.G] = True
        if np.any(on_gamma & mask):
            raise ValueError("Gamma and Gamma_0 share vertices")
        self.I = np.flatnonzero(~mask & ~on_gamma)
        K = stiffness.tocsr()
        K_I = K[self.I]
        self.interior = SPDSolver(K_I[:, self.I], "interior stiffness block")
        if not self.interior.is_direct:
            raise SolverError("condensation needs a direct factorization of the interior block")
        self.K_IG = K_I[:, self.G].tocsc()
        self.K_GI = self.K_IG.T.tocsr()
        local = np.full(n, -1)
        local[self.G] = np.arange(len(self.G))
        self.edges = local[gamma_quad.edges]
        S = K[self.G][:, self.G].toarray()
        for start in range(0, len(self.G), block):
            cols = self.K_IG[:, start:start + block].toarray()
            S[:, start:start + block] -= self.K_GI @ self.interior.solve_block(cols)
        self.S = 0.5 * (S + S.T)
        log.debug("condensed %d unknowns onto %d Gamma vertices", len(self.I), len(self.G))

    @property
    def size(self) -> int:
        return len(self.G)

    # -- Gamma-local boundary operators ------------------------------------

    def boundary_mass(self, coef_q) -> np.ndarray:
        """Dense G x G matrix of int_Gamma c phi_i phi_j ds."""
        cw = self.quad.weights * coef_q
        local = np.einsum("eq,qi,qj->eij", cw, self.quad.basis, self.quad.basis)
        M = np.zeros((self.size, self.size))
        np.add.at(M, (self.edges[:, :, None], self.edges[:, None, :]), local)
        return M

    def boundary_load(self, vals_q) -> np.ndarray:
        local = (self.quad.weights * vals_q) @ self.quad.basis
        return np.bincount(self.edges.ravel(), local.ravel(), minlength=self.size)

    def interpolate(self, u_gamma) -> np.ndarray:
        return np.asarray(u_gamma)[self.edges] @ self.quad.basis.T

    # -- elimination -----------------------------------------------------------

    def _interior_solve(self, b):
        return self.interior.solve(b) if b.ndim == 1 else self.interior.solve_block(b)

    def condense(self, b):
        """Gamma right-hand side b_G - K_GI K_II^{-1} b_I and the interior part K_II^{-1} b_I."""
        b = np.asarray(b, dtype=float)
        b_I = b[self.I]
        if not np.any(b_I):
            return b[self.G], None
        y = self._interior_solve(b_I)
        return b[self.G] - self.K_GI @ y, y

    def expand(self, x_gamma, y=None) -> np.ndarray:
        """Full vector from Gamma values, given the interior part of the condensed load."""
        x_gamma = np.asarray(x_gamma)
        x = np.zeros((self.n,) + x_gamma.shape[1:])
        x[self.G] = x_gamma
        x[self.I] = -self._interior_solve(self.K_IG @ x_gamma)
        if y is not None:
            x[self.I] += y
        return x

    def solver(self, coef_q, stiffness, name: str = "condensed solve") -> "CondensedSolver":
        return CondensedSolver(self, coef_q, stiffness, name)


class CondensedSolver:
    """Solver for K + M_c through the Schur complement; same interface as SPDSolver."""

    def __init__(self, cond: GammaCondensation, coef_q, stiffness, name: str = "condensed solve",
                 rtol: float = 1e-12):
        self.cond = cond
        self.coef_q = np.asarray(coef_q)
        self.stiffness = stiffness
        self.name = name
        self.rtol = rtol
        try:
            self._chol = linalg.cho_factor(cond.S + cond.boundary_mass(self.coef_q))
        except linalg.LinAlgError as exc:
            raise SolverError(f"{name}: matrix is not positive definite") from exc

    def apply(self, x) -> np.ndarray:
        """(K + M_c) x with Dirichlet rows replaced by identity rows."""
        q = self.cond.quad
        y = self.stiffness @ x
        if x.ndim == 1:
            y += q.load(self.coef_q * q.interpolate(x))
        else:
            for k in range(x.shape[1]):
                y[:, k] += q.load(self.coef_q * q.interpolate(x[:, k]))
        dirichlet = np.ones(self.cond.n, dtype=bool)
        dirichlet[self.cond.G] = False
        dirichlet[self.cond.I] = False
        y[dirichlet] = x[dirichlet]
        return y

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        nb = np.linalg.norm(b)
        if nb == 0.0:
            return np.zeros_like(b)
        rhs, y = self.cond.condense(b)
        x = self.cond.expand(linalg.cho_solve(self._chol, rhs), y)
        r = b - self.apply(x)
        rn = np.linalg.norm(r)
        floor = 1e-14 * (np.linalg.norm(abs(self.stiffness) @ np.abs(x)) + nb)
        if not (rn <= self.rtol * nb or rn <= floor):
            raise SolverError(f"{self.name}: relative residual {rn / nb:.2e} exceeds {self.rtol:.0e}")
        return x

    solve_block = solve
