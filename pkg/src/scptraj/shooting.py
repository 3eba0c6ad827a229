"""Indirect shooting: integrate the extremal flow and root-find its endpoint.

The two-point boundary value problem of the first-order conditions is solved
by integrating state and costate jointly under the Hamiltonian-maximizing
control and driving a residual vector to zero over the unknowns (p(0), tf).
Residual rows are, per final-state component, either the endpoint error (for
pinned components) or the final costate component (transversality for free
components); a free final time adds the condition max_v H(tf) = 0 while a
fixed final time drops that row so the system stays square.

The accelerated outer loop runs one shooting attempt after every convex
iteration, warm-started with the multiplier of the x(0) = x0 rows and the
iterate's final time, and stops at the first success. Failed attempts are
cheap and never fatal.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import pmp, qp, scp
from .errors import ConfigurationError, DivergenceError
from .problems import OcpProblem
from .transcription import DiscreteTrajectory

MIN_SHOOT_TIME = 1e-3


@dataclass(frozen=True)
class ShootingSettings:
    tol: float = 1e-10
    max_iter: int = 50
    jacobian_fd_step: float = 1e-7
    stall_window: int = 8
    initial_radius: float = 1.0


@dataclass(frozen=True)
class ShootingProblem:
    """Root-finding problem over the initial costate (and free final time).

    ``final_state_targets`` holds one entry per state component: a number
    pins the component at the final time, None leaves it free (its costate
    must then vanish). The number of residual rows always equals the number
    of unknowns.
    """

    problem: OcpProblem
    p0_guess: np.ndarray
    tf_guess: float
    integrator_steps: int = 200
    final_state_targets: tuple[float | None, ...] = ()
    free_final_time: bool = True

    def __post_init__(self):
        object.__setattr__(self, "p0_guess",
                           np.asarray(self.p0_guess, dtype=float))
        if self.p0_guess.shape != (self.problem.state_dim,):
            raise ConfigurationError("initial costate guess has wrong dimension")
        if len(self.final_state_targets) != self.problem.state_dim:
            raise ConfigurationError("one target entry per state component is required")
        if not self.tf_guess > 0.0:
            raise ConfigurationError("final-time guess must be positive")

    @property
    def unknown_count(self) -> int:
        return self.problem.state_dim + (1 if self.free_final_time else 0)


@dataclass(frozen=True)
class ShootingResult:
    converged: bool
    p0: np.ndarray
    tf: float
    residual_norm: float
    iterations: int
    trajectory: pmp.Extremal | None
    message: str = ""


def shooting_problem_from(problem: OcpProblem, p0_guess: np.ndarray,
                          tf_guess: float,
                          integrator_steps: int = 200) -> ShootingProblem:
    """Build the shooting problem matching a problem's componentwise endpoint."""
    if problem.final_state_targets is None:
        raise ConfigurationError(
            "shooting requires a componentwise boundary description "
            "(final_state_targets)")
    return ShootingProblem(
        problem=problem,
        p0_guess=np.asarray(p0_guess, dtype=float),
        tf_guess=float(problem.fixed_final_time)
        if problem.fixed_final_time is not None else float(tf_guess),
        integrator_steps=integrator_steps,
        final_state_targets=problem.final_state_targets,
        free_final_time=problem.free_final_time,
    )


def integrate_state_costate(problem: OcpProblem, p0: np.ndarray, tf: float,
                            steps: int = 200,
                            abnormal: float = -1.0):
    """Jointly integrate x and p under u = argmax H by fourth-order steps.

    Returns (x(tf), p(tf), extremal) where the extremal carries all sampled
    nodes. Raises DivergenceError when the state leaves the declared bound
    (the guess is far outside the basin).
    """
    times, xs, ps, us = pmp.rk4_extremal_flow(problem, problem.initial_state,
                                              p0, tf, steps, p0=abnormal,
                                              bound=problem.state_bound)
    extremal = pmp.Extremal(final_time=tf, times=times, states=xs, costates=ps,
                            controls=us, abnormal_multiplier=abnormal)
    return xs[-1], ps[-1], extremal


def shooting_function(sp: ShootingProblem, p0: np.ndarray,
                      tf: float) -> np.ndarray:
    """Residual rows of the boundary value problem at the given unknowns."""
    x_end, p_end, _ = integrate_state_costate(sp.problem, p0, tf,
                                              sp.integrator_steps)
    rows = np.empty(sp.unknown_count)
    for i, target in enumerate(sp.final_state_targets):
        rows[i] = x_end[i] - target if target is not None else p_end[i]
    if sp.free_final_time:
        u_best = pmp.maximize_hamiltonian(sp.problem, tf, x_end, p_end, -1.0)
        rows[-1] = pmp.hamiltonian(sp.problem, tf, x_end, p_end, -1.0, u_best)
    return rows


def _dogleg_step(jac: np.ndarray, fval: np.ndarray, radius: float) -> np.ndarray:
    """Powell dogleg step for min ||J s + F|| within ||s|| <= radius."""
    grad = jac.T @ fval
    try:
        gn = np.linalg.solve(jac.T @ jac + 1e-14 * np.eye(jac.shape[1]), -grad)
    except np.linalg.LinAlgError:
        gn, *_ = np.linalg.lstsq(jac, -fval, rcond=None)
    if np.linalg.norm(gn) <= radius:
        return gn
    jg = jac @ grad
    denom = float(jg @ jg)
    if denom <= 0.0:
        return -radius * grad / max(np.linalg.norm(grad), 1e-300)
    t = float(grad @ grad) / denom
    sd = -t * grad
    if np.linalg.norm(sd) >= radius:
        return -radius * grad / np.linalg.norm(grad)
    diff = gn - sd
    a = float(diff @ diff)
    b = 2.0 * float(sd @ diff)
    c = float(sd @ sd) - radius * radius
    disc = max(b * b - 4.0 * a * c, 0.0)
    s = (-b + np.sqrt(disc)) / (2.0 * a)
    return sd + s * diff


def solve_shooting(sp: ShootingProblem,
                   settings: ShootingSettings | None = None) -> ShootingResult:
    """Damped Newton with forward-difference Jacobian and a dogleg trust region.

    Converged means ||F||_inf <= tol within the iteration budget. Failure is
    fast and explicit: divergent integrations, a collapsed trust radius, or
    a stall all abort with a diagnostic message in the result.
    """
    settings = settings or ShootingSettings()
    if settings.max_iter <= 0:
        return ShootingResult(converged=False, p0=sp.p0_guess.copy(),
                              tf=sp.tf_guess, residual_norm=np.inf,
                              iterations=0, trajectory=None,
                              message="shooting disabled")
    n = sp.problem.state_dim

    def unpack(v: np.ndarray) -> tuple[np.ndarray, float]:
        if sp.free_final_time:
            return v[:n], float(v[n])
        return v, float(sp.tf_guess)

    def residual(v: np.ndarray) -> np.ndarray:
        p0, tf = unpack(v)
        if tf < MIN_SHOOT_TIME or tf > sp.problem.horizon_cap:
            raise DivergenceError("final-time unknown left its admissible window")
        return shooting_function(sp, p0, tf)

    v = np.append(sp.p0_guess, sp.tf_guess) if sp.free_final_time \
        else sp.p0_guess.copy()
    try:
        fval = residual(v)
    except DivergenceError as exc:
        return ShootingResult(converged=False, p0=sp.p0_guess.copy(),
                              tf=sp.tf_guess, residual_norm=np.inf,
                              iterations=0, trajectory=None, message=str(exc))

    radius = settings.initial_radius
    norm_history = [float(np.max(np.abs(fval)))]
    iterations = 0
    message = "iteration budget exhausted"

    for it in range(settings.max_iter):
        fnorm = float(np.max(np.abs(fval)))
        if fnorm <= settings.tol:
            message = "converged"
            break
        iterations = it + 1

        jac = np.empty((fval.size, v.size))
        try:
            for j in range(v.size):
                h = settings.jacobian_fd_step * max(1.0, abs(v[j]))
                pert = v.copy()
                pert[j] += h
                jac[:, j] = (residual(pert) - fval) / h
        except DivergenceError as exc:
            message = f"divergent integration in the Jacobian: {exc}"
            break

        improved = False
        for _shrink in range(30):
            step = _dogleg_step(jac, fval, radius)
            if not np.all(np.isfinite(step)):
                message = "singular Jacobian"
                break
            trial = v + step
            try:
                ftrial = residual(trial)
            except DivergenceError:
                radius *= 0.25
                continue
            pred = float(fval @ fval) - float((fval + jac @ step) @ (fval + jac @ step))
            act = float(fval @ fval) - float(ftrial @ ftrial)
            ratio = act / pred if pred > 0.0 else (1.0 if act > 0.0 else -1.0)
            if act > 0.0 and ratio > 1e-4:
                v, fval = trial, ftrial
                improved = True
                if ratio > 0.75 and np.linalg.norm(step) > 0.8 * radius:
                    radius = min(2.0 * radius, 1e6)
                elif ratio < 0.25:
                    radius = max(0.25 * np.linalg.norm(step), 1e-14)
                break
            radius = max(0.25 * np.linalg.norm(step), radius * 0.25)
            if radius < 1e-13:
                break
        if message.startswith("singular"):
            break
        if not improved:
            message = "trust radius collapsed without progress"
            break
        norm_history.append(float(np.max(np.abs(fval))))
        if len(norm_history) > settings.stall_window and \
                norm_history[-1] > 0.99 * norm_history[-settings.stall_window - 1]:
            message = "stalled"
            break

    p0, tf = unpack(v)
    fnorm = float(np.max(np.abs(fval)))
    converged = fnorm <= settings.tol
    trajectory = None
    if converged:
        _, _, trajectory = integrate_state_costate(sp.problem, p0, tf,
                                                   sp.integrator_steps)
        message = "converged"
    return ShootingResult(converged=converged, p0=p0, tf=tf,
                          residual_norm=fnorm, iterations=iterations,
                          trajectory=trajectory, message=message)


@dataclass
class ShootingAttempt:
    iteration: int
    converged: bool
    residual_norm: float
    newton_iterations: int
    wall_time: float


def run_accelerated_scp(problem: OcpProblem, guess: DiscreteTrajectory,
                        scp_config: scp.ScpConfig,
                        shooting_settings: ShootingSettings | None = None,
                        integrator_steps: int = 200,
                        ) -> tuple[scp.ScpHistory, ShootingResult | None,
                                   scp.ScpStatus, list[ShootingAttempt]]:
    """Interleave one shooting attempt per convex iteration (Algorithm 2).

    Each attempt is warm-started with the initial-condition multiplier and
    the iterate's final time. Stops at the first shooting success, otherwise
    behaves exactly like the plain loop (a disabled root finder with
    max_iter = 0 reproduces it). The reported iteration count of the run is
    the number of convex iterations executed.
    """
    shooting_settings = shooting_settings or ShootingSettings()
    attempts: list[ShootingAttempt] = []
    found: dict = {}

    def hook(k: int, iterate: DiscreteTrajectory,
             gamma0: np.ndarray | None) -> bool:
        if shooting_settings.max_iter <= 0 or gamma0 is None:
            return False
        start = time.perf_counter()
        try:
            sp_def = shooting_problem_from(problem, gamma0, iterate.final_time,
                                           integrator_steps)
            result = solve_shooting(sp_def, shooting_settings)
        except ConfigurationError:
            return False
        attempts.append(ShootingAttempt(
            iteration=k, converged=result.converged,
            residual_norm=result.residual_norm,
            newton_iterations=result.iterations,
            wall_time=time.perf_counter() - start))
        if result.converged:
            found["result"] = result
            return True
        return False

    history, final, status = scp.run_scp(problem, guess, scp_config,
                                         iteration_hook=hook)
    result = found.get("result")
    if status == "hook_stop":
        status = "converged"
    return history, result, status, attempts
