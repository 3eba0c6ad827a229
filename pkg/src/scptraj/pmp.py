"""Pontryagin machinery: Hamiltonian, adjoint, maximizer, and residual scoring.

The Hamiltonian of a problem is H(s, x, p, p0, u) = p.f(s, x, u) + p0 *
f0(s, x, u) with f0 the running-cost integrand. A candidate tuple
(tf, x, p, p0, u) is scored by how nearly it satisfies the first-order
conditions: the adjoint equation, pointwise Hamiltonian maximality over the
control box, endpoint transversality against the boundary Jacobian, and the
free-final-time condition max_v H(tf) = 0. All misfits are reported as
nonnegative residuals; nothing raises on a bad candidate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .problems import OcpProblem

TIME_CAP_SLACK = 1e-9


@dataclass(frozen=True)
class Extremal:
    """Sampled candidate extremal: states, costates and controls on a grid.

    ``abnormal_multiplier`` is the constant p0 <= 0 (normal extremals use
    -1). ``boundary_multiplier`` stores the endpoint multiplier when one has
    been fitted.
    """

    final_time: float
    times: np.ndarray
    states: np.ndarray
    costates: np.ndarray
    controls: np.ndarray
    abnormal_multiplier: float = -1.0
    boundary_multiplier: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "costates", np.asarray(self.costates, dtype=float))
        object.__setattr__(self, "controls",
                           np.atleast_2d(np.asarray(self.controls, dtype=float)))
        if self.abnormal_multiplier > 0.0:
            raise ConfigurationError("abnormal multiplier must be nonpositive")
        if self.abnormal_multiplier == 0.0 and \
                np.max(np.abs(self.costates)) == 0.0:
            raise ConfigurationError("extremal is trivial: (p, p0) = 0")

    def normalized(self) -> "Extremal":
        """Scale (p, p0, boundary multiplier) so their terminal norm is one."""
        if self.boundary_multiplier is not None:
            scale = float(np.hypot(np.linalg.norm(self.boundary_multiplier),
                                   self.abnormal_multiplier))
        else:
            scale = float(np.hypot(np.linalg.norm(self.costates[-1]),
                                   self.abnormal_multiplier))
        if scale <= 0.0:
            raise ConfigurationError("cannot normalize a trivial extremal")
        mult = None if self.boundary_multiplier is None \
            else self.boundary_multiplier / scale
        return replace(self, costates=self.costates / scale,
                       abnormal_multiplier=self.abnormal_multiplier / scale,
                       boundary_multiplier=mult)


@dataclass(frozen=True)
class PmpResidual:
    """Nonnegative misfits of the first-order optimality conditions."""

    adjoint_defect: float
    maximality_gap: float
    transversality_endpoint: float
    transversality_time: float
    nontriviality_margin: float
    boundary_fit: np.ndarray


def control_hamiltonian_coeffs(problem: OcpProblem, s: float, x: np.ndarray,
                               p: np.ndarray, p0: float) -> np.ndarray:
    """Coefficients c with H(s,x,p,p0,u) = c.u + p0 G(s,u) + const."""
    m = problem.control_dim
    c = np.empty(m)
    for i in range(m):
        c[i] = float(p @ np.asarray(problem.control_fields[i].value(s, x))) \
            + p0 * float(problem.cost_mixed[i + 1].value(s, x))
    return c


def hamiltonian(problem: OcpProblem, s: float, x: np.ndarray, p: np.ndarray,
                p0: float, u: np.ndarray) -> float:
    """p' f(s, x, u) + p0 f0(s, x, u)."""
    return float(p @ problem.dynamics(s, x, u)) \
        + p0 * problem.running_cost(s, x, u)


def adjoint_rhs(problem: OcpProblem, s: float, x: np.ndarray, p: np.ndarray,
                p0: float, u: np.ndarray) -> np.ndarray:
    """-dH/dx assembled from the problem Jacobians and gradients."""
    jac = np.asarray(problem.drift.jacobian(s, x), dtype=float).copy()
    for i, fld in enumerate(problem.control_fields):
        jac += u[i] * np.asarray(fld.jacobian(s, x), dtype=float)
    grad = np.asarray(problem.cost_state.grad(s, x), dtype=float).copy()
    grad += np.asarray(problem.cost_mixed[0].grad(s, x), dtype=float)
    for i in range(problem.control_dim):
        grad += u[i] * np.asarray(problem.cost_mixed[i + 1].grad(s, x), dtype=float)
    return -(jac.T @ p) - p0 * grad


def maximize_hamiltonian(problem: OcpProblem, s: float, x: np.ndarray,
                         p: np.ndarray, p0: float) -> np.ndarray:
    """Argmax of the Hamiltonian over the control box.

    For quadratic control costs the unconstrained stationary point is
    clamped componentwise (exact for diagonal Hessians; refined by
    coordinate sweeps otherwise). With p0 = 0 the Hamiltonian is linear in
    u and ties are broken by the smallest-magnitude admissible value.
    """
    lo, hi = problem.control_set.lower, problem.control_set.upper
    m = problem.control_dim
    c = control_hamiltonian_coeffs(problem, s, x, p, p0)

    if abs(p0) < 1e-14:
        u = np.where(c > 0.0, hi, np.where(c < 0.0, lo, np.clip(0.0, lo, hi)))
        return u.astype(float)

    if problem.cost_control.quadratic:
        zero = np.zeros(m)
        g0 = np.asarray(problem.cost_control.grad(s, zero), dtype=float)
        hess = np.asarray(problem.cost_control.hess(s, zero), dtype=float)
        diag = np.diag(hess).copy()
        target = -c / p0 - g0
        off = hess - np.diag(diag)
        u = np.zeros(m)
        for i in range(m):
            u[i] = target[i] / diag[i] if diag[i] > 1e-14 else 0.0
        u = np.clip(u, lo, hi)
        if np.max(np.abs(off)) > 1e-14:
            for _ in range(200):
                changed = 0.0
                for i in range(m):
                    if diag[i] > 1e-14:
                        new = (target[i] - off[i] @ u) / diag[i]
                    else:
                        deriv = c[i] + p0 * (g0[i] + off[i] @ u)
                        new = hi[i] if deriv > 0.0 else lo[i] if deriv < 0.0 \
                            else np.clip(0.0, lo[i], hi[i])
                    new = min(max(new, lo[i]), hi[i])
                    changed = max(changed, abs(new - u[i]))
                    u[i] = new
                if changed < 1e-13:
                    break
        else:
            for i in range(m):
                if diag[i] <= 1e-14:
                    deriv = c[i] + p0 * g0[i]
                    u[i] = hi[i] if deriv > 0.0 else lo[i] if deriv < 0.0 \
                        else np.clip(0.0, lo[i], hi[i])
        return u

    # General convex cost: coordinate-wise bisection on the concave derivative.
    u = np.clip(np.zeros(m), lo, hi)
    for _ in range(100):
        changed = 0.0
        for i in range(m):
            def deriv(t, _i=i):
                trial = u.copy()
                trial[_i] = t
                return c[_i] + p0 * float(
                    np.asarray(problem.cost_control.grad(s, trial))[_i])
            a, b = lo[i], hi[i]
            if deriv(a) <= 0.0:
                new = a
            elif deriv(b) >= 0.0:
                new = b
            else:
                for _bi in range(60):
                    mid = 0.5 * (a + b)
                    if deriv(mid) > 0.0:
                        a = mid
                    else:
                        b = mid
                new = 0.5 * (a + b)
            changed = max(changed, abs(new - u[i]))
            u[i] = new
        if changed < 1e-12:
            break
    return u


def maximality_gap_along(problem: OcpProblem, candidate: Extremal) -> float:
    """Largest pointwise gap max_v H(..., v) - H(..., u(s)) along the samples."""
    p0 = candidate.abnormal_multiplier
    gap = 0.0
    for j in range(candidate.times.size):
        s = float(candidate.times[j])
        x = candidate.states[j]
        p = candidate.costates[j]
        u_best = maximize_hamiltonian(problem, s, x, p, p0)
        gap = max(gap, hamiltonian(problem, s, x, p, p0, u_best)
                  - hamiltonian(problem, s, x, p, p0, candidate.controls[j]))
    return max(gap, 0.0)


def rk4_extremal_flow(problem: OcpProblem, x0: np.ndarray, p0_vec: np.ndarray,
                      tf: float, steps: int, p0: float = -1.0,
                      bound: float | None = None):
    """Integrate the coupled state-costate system under the maximizing control.

    Classical fourth-order fixed-step scheme with ``steps`` steps on
    [0, tf]; the control is closed through the Hamiltonian maximizer at
    every stage. Returns (times, states, costates, controls) with controls
    sampled at the stored nodes. Raises DivergenceError when the state
    leaves the ball of radius ``bound``.
    """
    if steps < 2:
        raise ConfigurationError("at least two integration steps are required")
    if not tf > 0.0:
        raise ConfigurationError("final time must be positive")
    n = problem.state_dim
    h = tf / steps
    times = np.linspace(0.0, tf, steps + 1)
    xs = np.empty((steps + 1, n))
    ps = np.empty((steps + 1, n))
    us = np.empty((steps + 1, problem.control_dim))
    x = np.asarray(x0, dtype=float).copy()
    p = np.asarray(p0_vec, dtype=float).copy()

    def rhs(s, x, p):
        u = maximize_hamiltonian(problem, s, x, p, p0)
        return problem.dynamics(s, x, u), adjoint_rhs(problem, s, x, p, p0, u), u

    for j in range(steps + 1):
        xs[j] = x
        ps[j] = p
        s = float(times[j])
        fx, fp, u = rhs(s, x, p)
        us[j] = u
        if bound is not None and np.linalg.norm(x) > bound:
            raise DivergenceError(
                f"state norm {np.linalg.norm(x):.3e} exceeded bound {bound} "
                f"at t={s:.4f}")
        if j == steps:
            break
        k1x, k1p = fx, fp
        k2x, k2p, _ = rhs(s + 0.5 * h, x + 0.5 * h * k1x, p + 0.5 * h * k1p)
        k3x, k3p, _ = rhs(s + 0.5 * h, x + 0.5 * h * k2x, p + 0.5 * h * k2p)
        k4x, k4p, _ = rhs(s + h, x + h * k3x, p + h * k3p)
        x = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        p = p + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return times, xs, ps, us


def pmp_residual(problem: OcpProblem, candidate: Extremal,
                 grid_refinement: int = 4) -> PmpResidual:
    """Score a candidate extremal against the first-order conditions.

    The adjoint defect re-runs the maximized-control flow from the
    candidate's initial state and costate with a fourth-order integrator at
    ``grid_refinement`` times the candidate's sampling density, and reports
    the worst costate divergence at the candidate's own sample times (state
    divergence folds into the same number). The remaining components are
    evaluated pointwise on the candidate samples.
    """
    if grid_refinement < 1:
        raise ConfigurationError("grid refinement must be at least 1")
    p0 = candidate.abnormal_multiplier
    n_samples = candidate.times.size
    steps = grid_refinement * (n_samples - 1)
    try:
        _, xs, ps, _ = rk4_extremal_flow(problem, candidate.states[0],
                                         candidate.costates[0],
                                         candidate.final_time, steps, p0=p0)
        defect = 0.0
        for j in range(n_samples):
            defect = max(defect, float(np.max(np.abs(
                ps[j * grid_refinement] - candidate.costates[j]))))
    except DivergenceError:
        defect = np.inf

    gap = maximality_gap_along(problem, candidate)

    x_end = candidate.states[-1]
    p_end = candidate.costates[-1]
    dg = np.atleast_2d(np.asarray(problem.boundary.jacobian(x_end), dtype=float))
    fit, _, _, _ = np.linalg.lstsq(dg.T, p_end, rcond=None)
    trans_end = float(np.linalg.norm(dg.T @ fit - p_end))

    trans_time = 0.0
    if problem.free_final_time:
        u_best = maximize_hamiltonian(problem, float(candidate.final_time),
                                      x_end, p_end, p0)
        h_max = hamiltonian(problem, float(candidate.final_time), x_end, p_end,
                            p0, u_best)
        if candidate.final_time < problem.horizon_cap - TIME_CAP_SLACK:
            trans_time = abs(h_max)
        else:
            trans_time = max(0.0, -h_max)

    margin = float(np.hypot(np.linalg.norm(p_end), p0))
    return PmpResidual(adjoint_defect=defect, maximality_gap=gap,
                       transversality_endpoint=trans_end,
                       transversality_time=trans_time,
                       nontriviality_margin=margin,
                       boundary_fit=fit)
