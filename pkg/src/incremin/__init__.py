"""Local incremental minimization for rate-independent evolutions."""

from .errors import (DegenerateTrajectory, IllPosedProblem, InfeasibleTau, NoConvergence,
                     OutOfRange, RISError, StallLimitExceeded, Unbounded)
from .gallery import (counterexample_branches, counterexample_problem, locally_convex_exact,
                      locally_convex_problem, pde_exact, pde_problem, quadratic_toy_problem,
                      reference_solve, stability_set_1d)
from .harness import (bifurcation_scan, compare_schemes, compute_eoc, run_convergence_study,
                      sup_error)
from .problem import LumpedProblem, Problem, ScalarProblem
from .stepper import (PhysicalSolution, StepOptions, Trajectory, artificial_interpolants,
                      evaluate, filter_progress, run_global, run_local)
from .subproblem import certify, solve_global_step, solve_local_step

__version__ = "0.1.0"
