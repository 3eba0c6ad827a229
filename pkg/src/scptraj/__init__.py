"""Sequential convex programming for continuous-time optimal control.

Core pipeline: define a control-affine problem (`problems`), transcribe
linearized convex subproblems on a time grid (`transcription`), solve them
with an operator-splitting QP solver that also returns dual multipliers
(`qp`), and iterate with a shrinking trust region (`scp`). The first-order
optimality machinery lives in `pmp`, the indirect shooting accelerator in
`shooting`, manifold-constraint support in `manifold`, and the randomized
benchmark suite in `study`.
"""

from .errors import ConfigurationError, DivergenceError
from .fields import BoundaryMap, ControlCost, ScalarField, VectorField
from .manifold import ManifoldSpec, check_tangency, geometric_extremal_residual, project_costate
from .pmp import (Extremal, PmpResidual, adjoint_rhs, hamiltonian,
                  maximize_hamiltonian, pmp_residual)
from .problems import (ControlSet, ObstacleSpec, OcpProblem, PenaltyConfig,
                       make_dubins, make_lqr, make_sphere_rotation,
                       penalize_state_constraints)
from .qp import SolverSettings, SolverSolution, extract_initial_costate, solve
from .scp import (ScpConfig, ScpHistory, check_convergence, check_strict_trust,
                  run_scp, straight_line_guess, update_radius)
from .shooting import (ShootingProblem, ShootingResult, ShootingSettings,
                       integrate_state_costate, run_accelerated_scp,
                       shooting_function, solve_shooting)
from .study import Scenario, StudySummary, run_study, sample_scenario
from .transcription import (ConvexSubproblem, DiscreteTrajectory, TimeGrid,
                            linearize_cost, linearize_dynamics,
                            rescale_free_time, transcribe)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
