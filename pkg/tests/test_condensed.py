import numpy as np
import pytest

from tresca_inverse.beta import BetaFamily
from tresca_inverse.condensed import CondensedSolver, GammaCondensation
from tresca_inverse.fem import SolverError, SPDSolver
from tresca_inverse.forward import RADIAL_WAVE_MMS, NonlinearProblem, mms_rhs, solve_nonlinear
from tresca_inverse.geometry import annulus, flower_domain, generate_mesh
from tresca_inverse.registry import exp_sine_friction, oscillating_source


@pytest.fixture(scope="module")
def ring_problem():
    beta = BetaFamily(0.1)
    f, g = mms_rhs(RADIAL_WAVE_MMS, exp_sine_friction, beta)
    mesh = generate_mesh(annulus(0.5, 1.0), 0.08, seed=2)
    return NonlinearProblem(mesh, beta, exp_sine_friction, f, g)


@pytest.fixture(scope="module")
def condensed(ring_problem):
    p = ring_problem
    return p.with_coefficient(p.a).condense()


def test_schur_complement_matches_dense_elimination(condensed):
    cond = condensed.condensation
    K = condensed.stiffness.toarray()
    G, I = cond.G, cond.I
    S = K[np.ix_(G, G)] - K[np.ix_(G, I)] @ np.linalg.solve(K[np.ix_(I, I)], K[np.ix_(I, G)])
    assert np.allclose(cond.S, S, rtol=1e-10, atol=1e-10 * np.abs(S).max())
    assert np.allclose(cond.S, cond.S.T)


def test_schur_complement_independent_of_block_size(condensed):
    p = condensed
    other = GammaCondensation(p.stiffness, p.mask, p.gamma_quad, block=7)
    assert np.allclose(other.S, p.condensation.S, rtol=0, atol=1e-12 * np.abs(other.S).max())


def test_vertex_partition(condensed):
    cond = condensed.condensation
    dirichlet = np.flatnonzero(condensed.mask)
    every = np.sort(np.concatenate([cond.G, cond.I, dirichlet]))
    assert np.array_equal(every, np.arange(cond.n))


def test_condensed_nonlinear_solve_matches_assembled(ring_problem, condensed):
    full = solve_nonlinear(ring_problem).values
    reduced = solve_nonlinear(condensed).values
    assert np.max(np.abs(full - reduced)) <= 1e-10 * np.max(np.abs(full))


def test_condensed_solver_matches_sparse_solver(ring_problem, condensed):
    rng = np.random.default_rng(4)
    u = rng.standard_normal(ring_problem.mesh.n_vertices)
    b = np.where(ring_problem.mask, 0.0, rng.standard_normal(ring_problem.mesh.n_vertices))
    x_full = ring_problem.linearized_solver(u).solve(b)
    solver = condensed.linearized_solver(u)
    assert isinstance(solver, CondensedSolver)
    x = solver.solve(b)
    assert np.allclose(x, x_full, rtol=0, atol=1e-11 * np.abs(x_full).max())
    assert np.allclose(solver.apply(x), b, atol=1e-10 * np.abs(b).max())


def test_condensed_block_solve(condensed):
    rng = np.random.default_rng(5)
    n = condensed.mesh.n_vertices
    B = np.where(condensed.mask[:, None], 0.0, rng.standard_normal((n, 3)))
    solver = condensed.linearized_solver(np.zeros(n))
    X = solver.solve_block(B)
    for k in range(3):
        assert np.allclose(X[:, k], solver.solve(B[:, k]), atol=1e-13)


def test_indefinite_boundary_coefficient_is_rejected(condensed):
    cond = condensed.condensation
    coef = np.full(cond.quad.weights.shape, -1e6)
    with pytest.raises(SolverError, match="not positive definite"):
        CondensedSolver(cond, coef, condensed.stiffness)


def test_zero_right_hand_side(condensed):
    solver = condensed.linearized_solver(np.zeros(condensed.mesh.n_vertices))
    assert np.array_equal(solver.solve(np.zeros(condensed.mesh.n_vertices)),
                          np.zeros(condensed.mesh.n_vertices))


def test_with_coefficient_shares_condensation(condensed):
    other = condensed.with_coefficient(lambda p: 3.0 + 0 * p[:, 0])
    assert other.condensation is condensed.condensation
    assert other.stiffness is condensed.stiffness


def test_condensation_on_flower():
    spec = flower_domain()
    mesh = generate_mesh(spec, 0.06, seed=0)
    a = lambda p: 2.0 + 0.3 * p[:, 0]
    full = NonlinearProblem(mesh, BetaFamily(1.0), a, oscillating_source, 0.0)
    reduced = full.with_coefficient(a).condense()
    u_full = solve_nonlinear(full).values
    u_red = solve_nonlinear(reduced).values
    assert np.max(np.abs(u_full - u_red)) <= 1e-10 * np.max(np.abs(u_full))
    assert isinstance(full.linearized_solver(u_full), SPDSolver)
