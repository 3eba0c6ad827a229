"""Outer loop: transcribe, solve, shrink the trust region, test convergence.

Each iteration linearizes about the current iterate, solves the convex
subproblem, always accepts the solution, and shrinks the trust radius
geometrically so the radii form a decreasing sequence with limit zero.
Convergence requires the control change of the last two iterations,

    integral ||u_{k+1} - u_k||^2 + ||u_k - u_{k-1}||^2 ds <= conv_tol,

and additionally that the true boundary map (not its linearization) is met
at the final node, which guards against declaring a stalled but infeasible
iterate converged. A declared state bound is asserted on every iterate as a
cheap surrogate for the compact-support hypothesis behind the boundedness
guarantee.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np

from . import qp
from .errors import ConfigurationError
from .problems import OcpProblem
from .transcription import (ConvexSubproblem, DiscreteTrajectory, Scheme,
                            TimeGrid, evaluate_cost, l2_control_gap,
                            l2_state_gap, locp_objective, transcribe,
                            trajectory_from_solution, true_defects)

ScpStatus = Literal["converged", "max_iter", "subproblem_infeasible",
                    "unbounded", "hook_stop"]

STRICT_MARGIN = 1e-9

UpdateRule = Callable[[DiscreteTrajectory, DiscreteTrajectory, float, int], float]


@dataclass(frozen=True)
class ScpConfig:
    """Knobs of the outer loop.

    ``shrink`` must lie strictly inside (0, 1) so the radii tend to zero,
    which the convergence guarantee requires. ``update_rule``, when given,
    receives (previous iterate, current iterate, current radius, iteration)
    and returns the next radius, replacing the geometric default.
    """

    delta0: float = 3.0
    shrink: float = 0.95
    conv_tol: float = 1e-3
    max_iterations: int = 100
    scheme: Scheme = "trapezoidal"
    node_count: int = 51
    state_bound: float | None = None
    boundary_tol: float = 1e-5
    solver: qp.SolverSettings = field(default_factory=qp.SolverSettings)
    update_rule: UpdateRule | None = None
    retry_on_infeasible: bool = True

    def __post_init__(self):
        if not self.delta0 > 0.0:
            raise ConfigurationError("initial trust radius must be positive")
        if not 0.0 < self.shrink < 1.0:
            raise ConfigurationError(
                "shrink factor must lie in (0, 1): the radii must tend to zero")
        if self.node_count < 2:
            raise ConfigurationError("node count must be at least 2")
        if self.max_iterations < 1:
            raise ConfigurationError("at least one iteration is required")


@dataclass
class ScpHistory:
    """Per-iteration record of the run; index 0 of iterates is the guess."""

    iterates: list[DiscreteTrajectory] = field(default_factory=list)
    radii: list[float] = field(default_factory=list)
    duals: list[np.ndarray | None] = field(default_factory=list)
    strict_flags: list[bool] = field(default_factory=list)
    control_gaps: list[float] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)
    defects: list[float] = field(default_factory=list)
    boundary_residuals: list[float] = field(default_factory=list)
    solver_statuses: list[str] = field(default_factory=list)
    solver_iterations: list[int] = field(default_factory=list)

    @property
    def iteration_count(self) -> int:
        return len(self.radii)

    def write_log(self, stream) -> None:
        """One JSON record per iteration (line-delimited)."""
        for k in range(self.iteration_count):
            rec = {
                "k": k,
                "radius": self.radii[k],
                "cost": self.costs[k],
                "control_gap": self.control_gaps[k],
                "defect": self.defects[k],
                "strict": self.strict_flags[k],
                "boundary_residual": self.boundary_residuals[k],
                "solver_status": self.solver_statuses[k],
                "solver_iterations": self.solver_iterations[k],
            }
            stream.write(json.dumps(rec) + "\n")


def update_radius(config: ScpConfig, k: int) -> float:
    """Radius for the subproblem after iteration k under the geometric rule."""
    return config.delta0 * config.shrink ** (k + 1)


def check_strict_trust(prev: DiscreteTrajectory, curr: DiscreteTrajectory,
                       radius: float) -> bool:
    """True iff both trust constraints hold strictly (with a small margin)."""
    if prev.grid.node_count != curr.grid.node_count:
        raise ConfigurationError("iterates must share a grid")
    if abs(curr.final_time - prev.final_time) >= radius - STRICT_MARGIN:
        return False
    return l2_state_gap(prev, curr) < radius - STRICT_MARGIN


def check_convergence(history: ScpHistory, conv_tol: float) -> bool:
    """Control-gap criterion over the last two recorded iterations."""
    if len(history.iterates) < 3 or len(history.control_gaps) < 2:
        return False
    return history.control_gaps[-1] + history.control_gaps[-2] <= conv_tol


def straight_line_guess(problem: OcpProblem, tf_guess: float,
                        node_count: int,
                        final_state: np.ndarray | None = None) -> DiscreteTrajectory:
    """State interpolation from x0 toward the target, zero controls.

    The target defaults to the problem's componentwise endpoint values; free
    components hold their initial value.
    """
    x0 = problem.initial_state
    if final_state is None:
        if problem.final_state_targets is None:
            raise ConfigurationError(
                "an explicit final state is required for this boundary map")
        final_state = np.array([x0[i] if t is None else t
                                for i, t in enumerate(problem.final_state_targets)])
    final_state = np.asarray(final_state, dtype=float)
    grid = TimeGrid(node_count)
    alphas = grid.nodes[:, None]
    states = (1.0 - alphas) * x0[None, :] + alphas * final_state[None, :]
    controls = np.zeros((node_count, problem.control_dim))
    tf = problem.fixed_final_time if problem.fixed_final_time is not None \
        else tf_guess
    return DiscreteTrajectory(grid=grid, states=states, controls=controls,
                              final_time=float(tf))


def run_scp(problem: OcpProblem, initial_guess: DiscreteTrajectory,
            config: ScpConfig,
            iteration_hook: Callable[[int, DiscreteTrajectory,
                                      np.ndarray | None], bool] | None = None,
            ) -> tuple[ScpHistory, DiscreteTrajectory, ScpStatus]:
    """Run the outer loop from a (possibly infeasible) guess.

    Returns the history, the last accepted iterate, and a status. The guess
    does not need to satisfy the dynamics or the boundary condition. When
    ``iteration_hook`` returns True the loop stops with status "hook_stop"
    (the acceleration layer uses this to stop at the first shooting success).
    """
    if initial_guess.states.shape[1] != problem.state_dim:
        raise ConfigurationError("guess state dimension mismatch")
    if initial_guess.controls.shape[1] != problem.control_dim:
        raise ConfigurationError("guess control dimension mismatch")
    bound = config.state_bound if config.state_bound is not None \
        else problem.state_bound

    history = ScpHistory()
    history.iterates.append(initial_guess)
    traj = initial_guess
    delta = config.delta0
    warm = None
    status: ScpStatus = "max_iter"

    for k in range(config.max_iterations):
        sub = transcribe(problem, traj, delta, config.scheme)
        sol = qp.solve(sub, config.solver, warm_start=warm)
        if sol.status == "infeasible" and config.retry_on_infeasible:
            # Numerical infeasibility near an active trust region is usually
            # transient; one widening retry before giving up.
            sub = transcribe(problem, traj, 2.0 * delta, config.scheme)
            sol = qp.solve(sub, config.solver, warm_start=None)
        if sol.status == "infeasible":
            status = "subproblem_infeasible"
            break
        warm = sol

        new_traj = trajectory_from_solution(sub, sol.primal)
        gamma0 = None
        if sol.status == "optimal":
            gamma0 = qp.extract_initial_costate(sol, sub)

        history.radii.append(delta)
        history.duals.append(gamma0)
        history.control_gaps.append(l2_control_gap(traj, new_traj))
        history.strict_flags.append(check_strict_trust(traj, new_traj, delta))
        history.costs.append(evaluate_cost(problem, new_traj))
        defects = true_defects(problem, new_traj, config.scheme)
        history.defects.append(float(np.max(np.abs(defects))) if defects.size else 0.0)
        g_end = np.asarray(problem.boundary.value(new_traj.states[-1]), dtype=float)
        history.boundary_residuals.append(float(np.max(np.abs(g_end))))
        history.solver_statuses.append(sol.status)
        history.solver_iterations.append(sol.iterations)
        history.iterates.append(new_traj)

        norms = np.linalg.norm(new_traj.states, axis=1)
        if float(norms.max()) > bound:
            status = "unbounded"
            traj = new_traj
            break

        traj = new_traj

        if iteration_hook is not None and iteration_hook(k, new_traj, gamma0):
            status = "hook_stop"
            break

        if check_convergence(history, config.conv_tol) and \
                history.boundary_residuals[-1] <= config.boundary_tol:
            status = "converged"
            break

        if config.update_rule is not None:
            delta = float(config.update_rule(history.iterates[-2], new_traj,
                                             delta, k))
            if not delta > 0.0:
                raise ConfigurationError("update rule produced a nonpositive radius")
        else:
            delta = update_radius(config, k)

    return history, traj, status
