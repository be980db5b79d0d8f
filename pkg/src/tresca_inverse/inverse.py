"""Recovery of the friction coefficient from interior observations.

The coefficient lives in a trigonometric space on the inner circle.  Its
root function collects, for every basis function phi_j, the boundary
integral of phi_j beta(u_h) z_h where u_h is the discrete state and z_h the
adjoint driven by the misfit on omega.  Newton's method with a
positivity-preserving backtracking rule finds the root.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .beta import BetaFamily
from .fem import (DIRECT_LIMIT, FemField, SolverError, SPDSolver, TriangleQuadrature, assemble_mass,
                  assemble_stiffness, omega_triangles)
from .condensed import CondensedSolver
from .forward import (LinearizedProblem, NonlinearProblem, solve_adjoint, solve_linearized,
                      solve_nonlinear)
from .geometry import DomainSpec, Mesh

log = logging.getLogger(__name__)

_NORM = 2.0 / math.sqrt(math.pi)
POSITIVITY_SAMPLES = 1024


class PositivityError(ValueError):
    """The friction coefficient is not positive on Gamma."""


class LineSearchError(SolverError):
    pass


class SingularJacobianError(SolverError):
    pass


@dataclass(frozen=True)
class FrictionCoefficient:
    """a(t) = sum_m alpha_m phi_{1,m-1}(t) + sum_n beta_n phi_{2,n}(t), t the angle on Gamma.

    phi_{1,m}(t) = 2/sqrt(pi) cos(m t) and phi_{2,n}(t) = 2/sqrt(pi) sin(n t).
    """

    cos_coeffs: tuple[float, ...]
    sin_coeffs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "cos_coeffs", tuple(float(c) for c in self.cos_coeffs))
        object.__setattr__(self, "sin_coeffs", tuple(float(c) for c in self.sin_coeffs))
        if len(self.cos_coeffs) < 1 or len(self.sin_coeffs) < 1:
            raise ValueError("need at least one cosine and one sine coefficient")

    @classmethod
    def from_vector(cls, x, J1: int) -> "FrictionCoefficient":
        x = np.asarray(x, dtype=float)
        return cls(tuple(x[:J1]), tuple(x[J1:]))

    @classmethod
    def constant(cls, value: float, J1: int, J2: int) -> "FrictionCoefficient":
        return cls((value / _NORM,) + (0.0,) * (J1 - 1), (0.0,) * J2)

    @classmethod
    def basis_function(cls, j: int, J1: int, J2: int) -> "FrictionCoefficient":
        x = np.zeros(J1 + J2)
        x[j] = 1.0
        return cls.from_vector(x, J1)

    @property
    def J1(self) -> int:
        return len(self.cos_coeffs)

    @property
    def J2(self) -> int:
        return len(self.sin_coeffs)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.cos_coeffs + self.sin_coeffs)

    def eval_angle(self, t, derivative: int = 0) -> np.ndarray:
        """Value or angle derivative (termwise) at angles ``t``."""
        return self.vector @ trig_basis(t, self.J1, self.J2, derivative)

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        return self.eval_angle(np.arctan2(p[:, 1], p[:, 0]))

    def min_value(self, samples: int = POSITIVITY_SAMPLES) -> float:
        t = 2.0 * math.pi * np.arange(samples) / samples
        return float(self.eval_angle(t).min())

    def is_positive(self, samples: int = POSITIVITY_SAMPLES) -> bool:
        return self.min_value(samples) > 0.0


def trig_basis(t, J1: int, J2: int, derivative: int = 0) -> np.ndarray:
    """Rows phi_{1,0..J1-1} then phi_{2,1..J2} (or their derivatives) at ``t``."""
    t = np.asarray(t, dtype=float)
    m = np.arange(J1)[:, None]
    n = np.arange(1, J2 + 1)[:, None]
    # d^k/dt^k cos(m t) = m^k cos(m t + k pi/2), likewise for sin
    shift = derivative * math.pi / 2
    rows_c = m**derivative * np.cos(m * t.ravel()[None, :] + shift)
    rows_s = n**derivative * np.sin(n * t.ravel()[None, :] + shift)
    out = _NORM * np.vstack([rows_c, rows_s])
    return out.reshape((J1 + J2,) + t.shape)


def c2_norm(a: FrictionCoefficient, samples: int = 4096) -> float:
    t = 2.0 * math.pi * np.arange(samples) / samples
    return max(float(np.abs(a.eval_angle(t, k)).max()) for k in range(3))


def c2_error(a: FrictionCoefficient, a_tilde: FrictionCoefficient, samples: int = 4096) -> float:
    """Relative C^2 error ||a_tilde - a|| / ||a_tilde|| on sampled angles."""
    if (a.J1, a.J2) != (a_tilde.J1, a_tilde.J2):
        raise ValueError("coefficients live in different trigonometric spaces")
    denom = c2_norm(a_tilde, samples)
    if denom == 0.0:
        raise ZeroDivisionError("reference coefficient has zero C^2 norm")
    diff = FrictionCoefficient.from_vector(a_tilde.vector - a.vector, a.J1)
    return c2_norm(diff, samples) / denom


# ---------------------------------------------------------------------------
# context and data


@dataclass(eq=False)
class InverseContext:
    """Everything fixed during a recovery on one mesh."""

    spec: DomainSpec
    mesh: Mesh
    beta: BetaFamily
    f: Callable | float
    g: Callable | float
    J1: int
    J2: int
    threads: int = 1
    condense: bool = True

    def __post_init__(self):
        self.stiffness = assemble_stiffness(self.mesh)
        placeholder = FrictionCoefficient.constant(1.0, self.J1, self.J2)
        self.base = NonlinearProblem(self.mesh, self.beta, placeholder, self.f, self.g,
                                     stiffness=self.stiffness)
        if self.condense and self.mesh.n_vertices <= DIRECT_LIMIT:
            # every state and derivative solve then costs a few back-substitutions
            self.base.condense()
        self.gamma_quad = self.base.gamma_quad
        # basis values at Gamma quadrature points, shape (J, edges, q)
        self.phi_q = trig_basis(self.gamma_quad.angles, self.J1, self.J2)
        self.omega_mask = omega_triangles(self.mesh, self.spec)
        self.omega_quad = TriangleQuadrature(self.mesh, self.omega_mask)
        self._mass = None

    @property
    def J(self) -> int:
        return self.J1 + self.J2

    @property
    def mass(self):
        if self._mass is None:
            self._mass = assemble_mass(self.mesh)
        return self._mass

    def problem(self, a: FrictionCoefficient) -> NonlinearProblem:
        return self.base.with_coefficient(a)

    def h1_norm(self, u) -> float:
        u = np.asarray(u)
        return float(np.sqrt(max(u @ (self.stiffness @ u) + u @ (self.mass @ u), 0.0)))


@dataclass(frozen=True, eq=False)
class ObservationData:
    """Values of q at the omega quadrature points of a context's mesh."""

    values: np.ndarray
    provenance: str = "fine-reference"


def inverse_crime_data(a: FrictionCoefficient, ctx: InverseContext) -> ObservationData:
    """q = u_h^{(a)} on omega, computed on the working mesh itself."""
    u = solve_nonlinear(ctx.problem(a)).values
    return ObservationData(ctx.omega_quad.interpolate(u), "inverse-crime")


NOISE_CENTERS = ((-0.8, 0.0), (0.8, 0.0))


def noise_function(points, centers=NOISE_CENTERS, radius: float = 0.25,
                   wave: float = 10.0) -> np.ndarray:
    """sum_j Re(exp(i (x - x_j) . z)) 1_{B_r(x_j)}(x) with z = (wave, i wave)."""
    p = np.atleast_2d(points)
    out = np.zeros(len(p))
    for cx, cy in centers:
        dx, dy = p[:, 0] - cx, p[:, 1] - cy
        inside = dx * dx + dy * dy < radius * radius
        out += np.where(inside, np.exp(-wave * dy) * np.cos(wave * dx), 0.0)
    return out


def add_noise(data: ObservationData, ctx: InverseContext, sigma: float,
              centers=NOISE_CENTERS, radius: float = 0.25) -> ObservationData:
    """q + sigma (delta_1 + delta_2) at the omega quadrature points."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return data
    pts = ctx.omega_quad.points.reshape(-1, 2)
    delta = noise_function(pts, centers, radius).reshape(data.values.shape)
    return ObservationData(data.values + sigma * delta, data.provenance + "+noise")


# ---------------------------------------------------------------------------
# root function and derivatives


@dataclass(eq=False)
class State:
    """u_h, z_h and the factored linearized operator at one coefficient."""

    a: FrictionCoefficient
    problem: NonlinearProblem
    u: np.ndarray
    z: np.ndarray
    solver: SPDSolver
    F: np.ndarray = field(default=None)


def compute_state(a: FrictionCoefficient, data: ObservationData, ctx: InverseContext,
                  u_guess=None) -> State:
    if not a.is_positive():
        raise PositivityError(f"coefficient has minimum {a.min_value():.3e} on Gamma")
    # the sampled check can miss a dip between samples at a quadrature point
    a_min = float(np.tensordot(a.vector, ctx.phi_q, axes=1).min())
    if not a_min > 0:
        raise PositivityError(f"coefficient has minimum {a_min:.3e} at the Gamma quadrature points")
    problem = ctx.problem(a)
    u = solve_nonlinear(problem, initial=u_guess).values
    solver = problem.linearized_solver(u, "linearized operator")
    z = solve_adjoint(problem, u, ctx.omega_quad, data.values, solver).values
    uq = ctx.gamma_quad.interpolate(u)
    zq = ctx.gamma_quad.interpolate(z)
    F = np.einsum("jeq,eq->j", ctx.phi_q, ctx.gamma_quad.weights * ctx.beta.beta(uq) * zq)
    return State(a, problem, u, z, solver, F)


def eval_F(a: FrictionCoefficient, data: ObservationData, ctx: InverseContext,
           u_guess=None) -> np.ndarray:
    """F_j(a) = int_Gamma phi_j beta(u_h) z_h ds for j = 1..J."""
    return compute_state(a, data, ctx, u_guess).F


def _direction_values(eta, ctx: InverseContext) -> np.ndarray:
    return ctx.gamma_quad.evaluate(eta)


def solve_u_dot(a: FrictionCoefficient, u_h, eta, ctx: InverseContext,
                solver: SPDSolver | None = None, problem: NonlinearProblem | None = None) -> FemField:
    """Derivative of u_h in direction eta: fdot = 0, gdot = -eta beta(u_h)."""
    problem = problem or ctx.problem(a)
    u_h = np.asarray(u_h)
    uq = ctx.gamma_quad.interpolate(u_h)
    gdot = -_direction_values(eta, ctx) * ctx.beta.beta(uq)
    return solve_linearized(LinearizedProblem(problem, u_h, gdot=gdot), solver)


def solve_z_dot(a: FrictionCoefficient, u_h, z_h, u_dot, eta, ctx: InverseContext,
                solver: SPDSolver | None = None, problem: NonlinearProblem | None = None) -> FemField:
    """Derivative of z_h in direction eta.

    fdot = 1_omega u_dot and gdot = -eta beta'(u_h) z_h - a beta''(u_h) u_dot z_h.
    """
    problem = problem or ctx.problem(a)
    u_h, z_h, u_dot = (np.asarray(v) for v in (u_h, z_h, u_dot))
    gq = ctx.gamma_quad
    uq, zq, udq = gq.interpolate(u_h), gq.interpolate(z_h), gq.interpolate(u_dot)
    gdot = (-_direction_values(eta, ctx) * ctx.beta.beta_prime(uq) * zq
            - problem.a_q * ctx.beta.beta_second(uq) * udq * zq)
    fdot_omega = (ctx.omega_quad, ctx.omega_quad.interpolate(u_dot))
    return solve_linearized(LinearizedProblem(problem, u_h, gdot=gdot, fdot_omega=fdot_omega), solver)


def jacobian_from_state(state: State, ctx: InverseContext) -> np.ndarray:
    """Matrix with columns dF[a] phi_j, sharing one factorization."""
    gq = ctx.gamma_quad
    uq, zq = gq.interpolate(state.u), gq.interpolate(state.z)
    bq, bpq = ctx.beta.beta(uq), ctx.beta.beta_prime(uq)

    if isinstance(state.solver, CondensedSolver):
        return _jacobian_block(state, ctx, uq, zq, bq, bpq)

    def column(j):
        eta = ctx.phi_q[j]
        udot = solve_u_dot(state.a, state.u, eta, ctx, state.solver, state.problem).values
        zdot = solve_z_dot(state.a, state.u, state.z, udot, eta, ctx, state.solver, state.problem).values
        integrand = bpq * gq.interpolate(udot) * zq + bq * gq.interpolate(zdot)
        return np.einsum("jeq,eq->j", ctx.phi_q, gq.weights * integrand)

    if ctx.threads > 1:
        with ThreadPoolExecutor(ctx.threads) as pool:
            cols = list(pool.map(column, range(ctx.J)))
    else:
        cols = [column(j) for j in range(ctx.J)]
    return np.column_stack(cols)


def _jacobian_block(state: State, ctx: InverseContext, uq, zq, bq, bpq) -> np.ndarray:
    """All Jacobian columns with two block solves; same quantities as the column loop."""
    gq, oq = ctx.gamma_quad, ctx.omega_quad
    mask = ctx.mesh.dirichlet_mask
    B = np.column_stack([gq.load(-ctx.phi_q[j] * bq) for j in range(ctx.J)])
    B[mask] = 0.0
    udot = state.solver.solve(B)
    udq = [gq.interpolate(udot[:, j]) for j in range(ctx.J)]
    bppq = ctx.beta.beta_second(uq)
    a_q = state.problem.a_q
    B = np.column_stack([
        gq.load(-ctx.phi_q[j] * bpq * zq - a_q * bppq * udq[j] * zq) - oq.load(oq.interpolate(udot[:, j]))
        for j in range(ctx.J)])
    B[mask] = 0.0
    zdot = state.solver.solve(B)
    cols = [np.einsum("jeq,eq->j", ctx.phi_q,
                      gq.weights * (bpq * udq[j] * zq + bq * gq.interpolate(zdot[:, j])))
            for j in range(ctx.J)]
    return np.column_stack(cols)


def eval_F_jacobian(a: FrictionCoefficient, data: ObservationData, ctx: InverseContext) -> np.ndarray:
    return jacobian_from_state(compute_state(a, data, ctx), ctx)


# ---------------------------------------------------------------------------
# Newton iteration


@dataclass
class TraceRow:
    k: int
    x: np.ndarray
    F_norm: float
    step: float
    e_rel: float | None = None


@dataclass
class NewtonTrace:
    rows: list[TraceRow] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.rows) - 1

    @property
    def F_norms(self) -> np.ndarray:
        return np.array([r.F_norm for r in self.rows])


@dataclass
class NewtonOptions:
    """Stopping rules for :func:`newton_recover`.

    The iteration stops as soon as |F| <= tol (absolute, if given),
    |F| <= rtol |F(x_0)|, or the Newton update satisfies
    |d| <= xtol |x|.
    """

    tol: float | None = None
    rtol: float = 1e-11
    xtol: float = 1e-10
    max_iter: int = 200
    max_halvings: int = 60
    max_condition: float = 1e14


def newton_recover(initial: FrictionCoefficient, data: ObservationData, ctx: InverseContext,
                   opts: NewtonOptions | None = None, a_true: FrictionCoefficient | None = None,
                   callback=None) -> tuple[FrictionCoefficient, NewtonTrace]:
    """Newton iteration x_{k+1} = x_k + 2^-kappa d_k on the root function.

    kappa is the smallest non-negative integer for which the trial
    coefficient is positive on Gamma and |F| does not increase.
    """
    opts = opts or NewtonOptions()
    if not initial.is_positive():
        raise PositivityError("initial coefficient is not positive on Gamma")
    a = initial
    state = compute_state(a, data, ctx)
    fn = float(np.linalg.norm(state.F))
    if not np.isfinite(fn):
        raise SolverError("root function is not finite at the initial coefficient")
    tol = opts.rtol * fn
    if opts.tol is not None:
        tol = max(tol, opts.tol)
    trace = NewtonTrace()
    step = 0.0

    def record(k):
        err = c2_error(a, a_true) if a_true is not None else None
        row = TraceRow(k, a.vector, fn, step, err)
        trace.rows.append(row)
        if callback is not None:
            callback(row)
        log.info("newton %3d  |F|=%.3e  step=%g%s", k, fn, step,
                 "" if err is None else f"  e_rel={err:.3e}")

    for k in range(opts.max_iter + 1):
        record(k)
        if fn <= tol:
            trace.converged = True
            break
        if k == opts.max_iter:
            break
        jac = jacobian_from_state(state, ctx)
        cond = np.linalg.cond(jac)
        if not cond <= opts.max_condition:
            raise SingularJacobianError(f"iteration {k}: Jacobian condition number {cond:.2e}")
        d = -np.linalg.solve(jac, state.F)
        x = a.vector
        small_update = np.linalg.norm(d) <= opts.xtol * np.linalg.norm(x)
        for kappa in range(opts.max_halvings + 1):
            step = 0.5**kappa
            trial = FrictionCoefficient.from_vector(x + step * d, ctx.J1)
            if not trial.is_positive():
                continue
            try:
                trial_state = compute_state(trial, data, ctx, u_guess=state.u)
            except (SolverError, PositivityError) as exc:
                log.debug("trial step 2^-%d rejected: %s", kappa, exc)
                continue
            tfn = float(np.linalg.norm(trial_state.F))
            if tfn <= fn:
                break
            if small_update:
                # |F| is at its rounding floor; the current iterate is the root
                break
        else:
            raise LineSearchError(f"iteration {k}: no acceptable step after "
                                  f"{opts.max_halvings} halvings (|F|={fn:.3e})")
        if small_update:
            if tfn <= fn:
                a, state, fn = trial, trial_state, tfn
                record(k + 1)
            trace.converged = True
            break
        a, state, fn = trial, trial_state, tfn
    return a, trace
