"""Mixed discontinuous Galerkin solver for the Brinkman equations in
pseudostress-velocity form on triangulations of the unit square."""
from .mesh import Mesh, MeshError, build_uniform_unit_square
from .problems import BrinkmanProblem, InvalidProblemError, example1, example2, example3, example4
from .solver import DiscreteSolution, SolverError, solve, solve_problem
from .postprocess import compute_errors, kappa_tilde, local_conservation_residual

__version__ = "0.1.0"
