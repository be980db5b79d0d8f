"""Finite-element forward solver and Newton recovery of the friction threshold
in a regularized scalar Tresca (nonlinear Robin) boundary value problem."""

from .beta import BetaFamily, normalization_constant
from .condensed import CondensedSolver, GammaCondensation
from .fem import FemField, SolverError
from .forward import (ConvergenceError, LinearizedProblem, ManufacturedSolution, NonlinearProblem,
                      damped_newton, mms_rhs, solve_adjoint, solve_linearized, solve_nonlinear)
from .geometry import (GAMMA, GAMMA0, DomainSpec, Mesh, MeshError, annulus, flower_domain,
                       generate_mesh, measure_h, omega_indicator, read_mesh, write_mesh)
from .inverse import (FrictionCoefficient, InverseContext, LineSearchError, NewtonOptions, NewtonTrace,
                      ObservationData, PositivityError, SingularJacobianError, add_noise, c2_error,
                      eval_F, eval_F_jacobian, inverse_crime_data, newton_recover, solve_u_dot,
                      solve_z_dot)
from .quadratic import QuadraticSolution, QuadraticSpace, solve_quadratic
from .reference import ReferenceSolution, reference_solution

__all__ = [
    "BetaFamily", "normalization_constant", "CondensedSolver", "GammaCondensation", "FemField",
    "SolverError", "ConvergenceError", "LinearizedProblem", "ManufacturedSolution",
    "NonlinearProblem", "damped_newton", "mms_rhs", "solve_adjoint", "solve_linearized",
    "solve_nonlinear", "GAMMA", "GAMMA0", "DomainSpec", "Mesh", "MeshError", "annulus",
    "flower_domain", "generate_mesh", "measure_h", "omega_indicator", "read_mesh", "write_mesh",
    "FrictionCoefficient", "InverseContext", "LineSearchError", "NewtonOptions", "NewtonTrace",
    "ObservationData", "PositivityError", "SingularJacobianError", "add_noise", "c2_error",
    "eval_F", "eval_F_jacobian", "inverse_crime_data", "newton_recover", "solve_u_dot",
    "solve_z_dot", "QuadraticSolution", "QuadraticSpace", "solve_quadratic", "ReferenceSolution",
    "reference_solution",
]
