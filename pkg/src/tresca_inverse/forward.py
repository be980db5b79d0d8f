"""Discrete nonlinear Robin problem, its linearization and the adjoint solve.

The nonlinear problem reads: find u_h with u_h = 0 on Gamma_0 and

    int grad u_h . grad v + int_Gamma a beta(u_h) v = -int f v + int_Gamma g v

for all test functions v.  Linearized problems replace a beta(u) by
a beta'(u_h) w with given data (fdot, gdot) on the right.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .beta import BetaFamily
from .fem import (BoundaryQuadrature, FemField, SolverError, SPDSolver, TriangleQuadrature,
                  apply_dirichlet, assemble_interior_load, assemble_stiffness)
from .geometry import GAMMA, Mesh

log = logging.getLogger(__name__)


class ConvergenceError(SolverError):
    """Newton iteration for the nonlinear problem did not converge."""


@dataclass(eq=False)
class NonlinearProblem:
    """Data of the nonlinear Robin problem on one mesh.

    ``a``, ``f`` and ``g`` are callables on (n, 2) point arrays (``g`` may be
    a constant).  Matrices and quadrature structures are built once.
    """

    mesh: Mesh
    beta: BetaFamily
    a: Callable
    f: Callable | float
    g: Callable | float = 0.0
    stiffness: object = field(default=None, repr=False)
    interior_load: np.ndarray | None = field(default=None, repr=False)
    condensation: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.stiffness is None:
            self.stiffness = assemble_stiffness(self.mesh)
        self.mask = self.mesh.dirichlet_mask
        self.gamma_quad = BoundaryQuadrature(self.mesh, GAMMA)
        self.a_q = self.gamma_quad.evaluate(self.a)
        a0 = self.a_q.min()
        if not a0 > 0:
            raise ValueError(f"friction coefficient must be positive on Gamma, min is {a0:.3e}")
        if self.interior_load is None:
            self.interior_load = assemble_interior_load(self.mesh, self.f)
        load = self.interior_load + self.gamma_quad.load(self.gamma_quad.evaluate(self.g))
        self.load = np.where(self.mask, 0.0, load)
        self._condensed_load = None

    def with_coefficient(self, a) -> "NonlinearProblem":
        """Same mesh and data with friction ``a``; matrices, loads and the condensation are shared."""
        other = NonlinearProblem(self.mesh, self.beta, a, self.f, self.g, stiffness=self.stiffness,
                                 interior_load=self.interior_load, condensation=self.condensation)
        other._condensed_load = self.condensed_load() if self.condensation is not None else None
        return other

    def condense(self, block: int = 64) -> "NonlinearProblem":
        """Attach a :class:`GammaCondensation` so solves work on the Gamma unknowns."""
        from .condensed import GammaCondensation

        self.condensation = GammaCondensation(self.stiffness, self.mask, self.gamma_quad, block)
        self._condensed_load = None
        return self

    def condensed_load(self):
        if self._condensed_load is None:
            self._condensed_load = self.condensation.condense(self.load)
        return self._condensed_load

    def residual(self, u) -> np.ndarray:
        """R(u) = K u + B(u) - L restricted to the free nodes."""
        uq = self.gamma_quad.interpolate(u)
        r = self.stiffness @ u + self.gamma_quad.load(self.a_q * self.beta.beta(uq)) - self.load
        r[self.mask] = 0.0
        return r

    def linearized_matrix(self, u):
        """K + M_{a beta'(u)} with Dirichlet rows eliminated."""
        uq = self.gamma_quad.interpolate(u)
        A = self.stiffness + self.gamma_quad.mass(self.a_q * self.beta.beta_prime(uq))
        return apply_dirichlet(A, None, self.mask)[0]

    def linearized_solver(self, u, name="linearized solve") -> SPDSolver:
        if self.condensation is not None:
            coef = self.a_q * self.beta.beta_prime(self.gamma_quad.interpolate(u))
            return self.condensation.solver(coef, self.stiffness, name)
        return SPDSolver(self.linearized_matrix(u), name)


def damped_newton(residual, newton_step, u, tol: float, max_iter: int = 50):
    """Newton iteration with residual-halving line search.

    ``newton_step(u, r)`` returns the update for residual ``r`` at ``u``.
    Stops once ||R|| <= tol and one further step has been tried (it is kept
    only if it lowers the residual).
    """
    r = residual(u)
    rn = np.linalg.norm(r)
    polished = False
    for it in range(max_iter + 1):
        if rn <= tol and polished:
            break
        if it == max_iter:
            raise ConvergenceError(f"nonlinear solve: no convergence after {max_iter} iterations, "
                                   f"residual {rn:.3e} (tolerance {tol:.3e})")
        d = newton_step(u, r)
        lam = 1.0
        for _ in range(40):
            trial = u + lam * d
            rt = residual(trial)
            rtn = np.linalg.norm(rt)
            if rtn < rn:
                break
            lam *= 0.5
        else:
            if rn <= tol:
                break
            raise ConvergenceError(f"nonlinear solve: line search stalled at residual {rn:.3e}")
        if rn <= tol:
            polished = True
        u, r, rn = trial, rt, rtn
        log.debug("nonlinear it %d: |R|=%.3e step=%g", it, rn, lam)
    return u


def solve_nonlinear(problem: NonlinearProblem, initial=None, max_iter: int = 50,
                    rtol: float = 1e-10) -> FemField:
    """Newton's method with residual-halving line search.

    The initial iterate, unless given, solves the problem with beta replaced
    by beta'(0) u.  Converges when ||R|| <= rtol (1 + ||L||); one extra
    Newton step is then taken if it lowers the residual further.
    """
    tol = rtol * (1.0 + np.linalg.norm(problem.load))
    if problem.condensation is not None:
        return _solve_condensed(problem, initial, max_iter, tol)
    n = problem.mesh.n_vertices
    if initial is None:
        u = problem.linearized_solver(np.zeros(n), "nonlinear initial guess").solve(problem.load)
    else:
        u = np.where(problem.mask, 0.0, np.asarray(initial, dtype=float))
    u = damped_newton(problem.residual,
                      lambda u, r: problem.linearized_solver(u, "nonlinear Newton step").solve(-r),
                      u, tol, max_iter)
    return FemField(problem.mesh, u)


def _solve_condensed(problem: NonlinearProblem, initial, max_iter: int, tol: float) -> FemField:
    """The Newton iteration of :func:`solve_nonlinear` carried out on the Gamma unknowns."""
    cond = problem.condensation
    rhs, y = problem.condensed_load()
    a_q, beta = problem.a_q, problem.beta

    def residual(ug):
        return cond.S @ ug + cond.boundary_load(a_q * beta.beta(cond.interpolate(ug))) - rhs

    def newton_step(ug, r):
        jac = cond.S + cond.boundary_mass(a_q * beta.beta_prime(cond.interpolate(ug)))
        try:
            return -linalg.cho_solve(linalg.cho_factor(jac), r)
        except linalg.LinAlgError as exc:
            raise ConvergenceError("condensed Newton step: Jacobian is not positive definite") from exc

    if initial is None:
        ug = newton_step(np.zeros(cond.size), -rhs)
    else:
        ug = np.asarray(initial, dtype=float)[cond.G].copy()
    ug = damped_newton(residual, newton_step, ug, tol, max_iter)
    return FemField(problem.mesh, cond.expand(ug, y))


@dataclass(eq=False)
class LinearizedProblem:
    """Linearized Robin problem about ``u_h``.

    ``fdot`` is either a callable on points or ``None``; ``fdot_omega`` is an
    optional (quadrature, values) pair giving 1_omega * field at omega
    quadrature points; ``gdot`` is a callable, constant, or an array of
    values at Gamma quadrature points.
    """

    base: NonlinearProblem
    u_h: np.ndarray
    fdot: Callable | float | None = None
    gdot: Callable | float | np.ndarray | None = None
    fdot_omega: tuple[TriangleQuadrature, np.ndarray] | None = None

    def rhs(self) -> np.ndarray:
        mesh = self.base.mesh
        b = np.zeros(mesh.n_vertices)
        if self.fdot is not None:
            b += assemble_interior_load(mesh, self.fdot)
        if self.fdot_omega is not None:
            quad, vals = self.fdot_omega
            b -= quad.load(vals)
        if self.gdot is not None:
            b += self.base.gamma_quad.load(self.base.gamma_quad.evaluate(self.gdot))
        b[self.base.mask] = 0.0
        return b


def solve_linearized(problem: LinearizedProblem, solver: SPDSolver | None = None) -> FemField:
    solver = solver or problem.base.linearized_solver(problem.u_h)
    return FemField(problem.base.mesh, solver.solve(problem.rhs()))


def solve_adjoint(base: NonlinearProblem, u_h, omega_quad: TriangleQuadrature, q_values,
                  solver: SPDSolver | None = None) -> FemField:
    """Adjoint state: linearized solve with fdot = 1_omega (u_h - q), gdot = 0."""
    u_h = np.asarray(u_h)
    resid = omega_quad.interpolate(u_h) - q_values
    prob = LinearizedProblem(base, u_h, fdot_omega=(omega_quad, resid))
    return solve_linearized(prob, solver)


# ---------------------------------------------------------------------------
# manufactured solutions


@dataclass(frozen=True)
class ManufacturedSolution:
    u: Callable
    grad: Callable
    laplacian: Callable


def _radial_wave_u(p):
    x, y = p[:, 0], p[:, 1]
    return x * y * np.sin(5 * np.pi * np.hypot(x, y))


def _radial_wave_grad(p):
    x, y = p[:, 0], p[:, 1]
    r = np.hypot(x, y)
    s = np.sin(5 * np.pi * r)
    ds = 5 * np.pi * np.cos(5 * np.pi * r)
    return np.column_stack([y * s + x * y * ds * x / r, x * s + x * y * ds * y / r])


def _radial_wave_lap(p):
    x, y = p[:, 0], p[:, 1]
    r = np.hypot(x, y)
    k = 5 * np.pi
    return x * y * (5 * k * np.cos(k * r) / r - k * k * np.sin(k * r))


RADIAL_WAVE_MMS = ManufacturedSolution(_radial_wave_u, _radial_wave_grad, _radial_wave_lap)

ZERO_MMS = ManufacturedSolution(
    lambda p: np.zeros(len(p)),
    lambda p: np.zeros((len(p), 2)),
    lambda p: np.zeros(len(p)),
)


def inner_normal_circle(p):
    """Outward normal of Omega on an origin-centred inner circle (points inward)."""
    r = np.hypot(p[:, 0], p[:, 1])
    return -p / r[:, None]


def mms_rhs(ms: ManufacturedSolution, a: Callable, beta: BetaFamily):
    """Right-hand sides (f, g) reproducing ``ms.u`` exactly.

    f = Laplacian of u in Omega, g = d_nu u + a beta(u) on Gamma.
    """
    def f(p):
        return ms.laplacian(np.atleast_2d(p))

    def g(p):
        p = np.atleast_2d(p)
        dn = np.sum(ms.grad(p) * inner_normal_circle(p), axis=1)
        return dn + a(p) * beta.beta(ms.u(p))

    return f, g
