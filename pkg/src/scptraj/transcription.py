"""Transcription of linearized subproblems onto a fixed time grid.

Each outer iteration linearizes all nonlinear dynamics terms and all
non-convex cost terms about the current iterate, then discretizes with a
time-linear scheme (trapezoid by default) into a convex quadratic program
with affine equalities, box bounds, and a single L2-ball trust region on the
state block. Free-final-time problems are first rewritten on the unit
interval with the final time as an extra state.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .fields import BoundaryMap, ControlCost, ScalarField, VectorField
from .problems import OcpProblem

Scheme = Literal["trapezoidal", "forward_euler"]

MIN_FINAL_TIME = 1e-3
EIG_FLOOR = -1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of normalized times 0 = s0 < ... < s_{N-1} = 1."""

    node_count: int

    def __post_init__(self):
        if self.node_count < 2:
            raise ConfigurationError("a grid needs at least two nodes")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.node_count)

    @property
    def spacing(self) -> float:
        return 1.0 / (self.node_count - 1)


@dataclass(frozen=True)
class DiscreteTrajectory:
    """State/control samples on a grid plus the final time: one SCP iterate."""

    grid: TimeGrid
    states: np.ndarray
    controls: np.ndarray
    final_time: float

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "controls",
                           np.atleast_2d(np.asarray(self.controls, dtype=float)))
        n_nodes = self.grid.node_count
        if self.states.shape[0] != n_nodes or self.controls.shape[0] != n_nodes:
            raise ConfigurationError("trajectory arrays must have one row per node")
        if not self.final_time > 0.0:
            raise ConfigurationError("final time must be positive")

    @property
    def times(self) -> np.ndarray:
        """Physical sample times in [0, final_time]."""
        return self.grid.nodes * self.final_time


@dataclass(frozen=True)
class DecisionLayout:
    """Index map of the stacked decision vector: states first, then controls."""

    node_count: int
    stacked_state_dim: int
    control_dim: int
    orig_state_dim: int
    free_time: bool

    @property
    def size(self) -> int:
        return self.node_count * (self.stacked_state_dim + self.control_dim)

    def state_slice(self, j: int) -> slice:
        ns = self.stacked_state_dim
        return slice(j * ns, (j + 1) * ns)

    def control_slice(self, j: int) -> slice:
        base = self.node_count * self.stacked_state_dim
        return slice(base + j * self.control_dim, base + (j + 1) * self.control_dim)

    def time_indices(self) -> np.ndarray:
        if not self.free_time:
            return np.empty(0, dtype=int)
        ns = self.stacked_state_dim
        return np.arange(self.node_count) * ns + self.orig_state_dim

    def states_from(self, z: np.ndarray) -> np.ndarray:
        ns = self.stacked_state_dim
        return z[: self.node_count * ns].reshape(self.node_count, ns)

    def controls_from(self, z: np.ndarray) -> np.ndarray:
        base = self.node_count * self.stacked_state_dim
        return z[base:].reshape(self.node_count, self.control_dim)


@dataclass(frozen=True)
class ConvexSubproblem:
    """Transcribed convex program: 0.5 z'Pz + q'z over equalities, box, ball.

    The ball set is sum_i ball_w[i] * (z[ball_idx[i]] - ball_center[i])^2
    <= ball_radius and covers the original-state block; the box covers
    controls and, for free-final-time problems, the time variable.
    """

    layout: DecisionLayout
    quadratic_cost: sp.csc_matrix
    linear_cost: np.ndarray
    cost_constant: float
    equality: sp.csc_matrix
    equality_rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    ball_idx: np.ndarray
    ball_w: np.ndarray
    ball_center: np.ndarray
    ball_radius: float
    linearization_point: DiscreteTrajectory
    scheme: Scheme
    initial_rows: slice
    boundary_rows: slice
    stage_times: np.ndarray
    quad_weights: np.ndarray
    cost_weights: np.ndarray
    work_problem: OcpProblem
    work_states: np.ndarray


@dataclass(frozen=True)
class AffineDynamics:
    """Affine-in-(x, u) right-hand side frozen at a linearization node."""

    constant: np.ndarray
    state_jac: np.ndarray
    control_matrix: np.ndarray
    x_ref: np.ndarray

    def evaluate(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return (self.constant + self.state_jac @ (np.asarray(x) - self.x_ref)
                + self.control_matrix @ np.asarray(u))


@dataclass(frozen=True)
class NodeCost:
    """Convex-in-(x, u) cost integrand frozen at a linearization node.

    value(x, u) = constant + lin_x.(x - x_ref) + lin_u.(u - u_ref)
                + 0.5 (x - x_ref)' quad_x (x - x_ref)
                + 0.5 (u - u_ref)' quad_u (u - u_ref)
    """

    constant: float
    lin_x: np.ndarray
    lin_u: np.ndarray
    quad_x: np.ndarray
    quad_u: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray

    def evaluate(self, x: np.ndarray, u: np.ndarray) -> float:
        dx = np.asarray(x) - self.x_ref
        du = np.asarray(u) - self.u_ref
        return float(self.constant + self.lin_x @ dx + self.lin_u @ du
                     + 0.5 * dx @ self.quad_x @ dx + 0.5 * du @ self.quad_u @ du)


def _stage_times(problem: OcpProblem, iterate: DiscreteTrajectory) -> np.ndarray:
    # Free-final-time problems are linearized on the normalized grid; the
    # bundled families are autonomous so the time argument is immaterial.
    if problem.fixed_final_time is not None:
        return iterate.grid.nodes * problem.fixed_final_time
    return iterate.grid.nodes


def linearize_dynamics(problem: OcpProblem, iterate: DiscreteTrajectory,
                       node_index: int) -> AffineDynamics:
    """Freeze the control-affine dynamics at a node of the iterate.

    The control keeps multiplying the fields evaluated at the reference
    state, and the state correction uses the Jacobian weighted by the
    reference control, so the map is tangent to the true dynamics at the
    reference point and exact in u there.
    """
    if not 0 <= node_index < iterate.grid.node_count:
        raise ConfigurationError("node index outside the grid")
    s = float(_stage_times(problem, iterate)[node_index])
    x_ref = iterate.states[node_index]
    u_ref = iterate.controls[node_index]
    constant = np.asarray(problem.drift.value(s, x_ref), dtype=float).copy()
    jac = np.asarray(problem.drift.jacobian(s, x_ref), dtype=float).copy()
    cols = []
    for i, fld in enumerate(problem.control_fields):
        cols.append(np.asarray(fld.value(s, x_ref), dtype=float))
        jac += u_ref[i] * np.asarray(fld.jacobian(s, x_ref), dtype=float)
    control_matrix = np.column_stack(cols)
    return AffineDynamics(constant=constant, state_jac=jac,
                          control_matrix=control_matrix, x_ref=x_ref.copy())


def _psd_clamp(matrix: np.ndarray, label: str, project: bool = False) -> np.ndarray:
    """Symmetrize and clamp to PSD.

    Convex-by-contract data (mode project=False) may only dip below zero by
    numerical noise; a genuinely indefinite Hessian raises. With project=True
    negative curvature is truncated to zero (the positive-part quadratic
    model used for non-quadratic state costs).
    """
    matrix = 0.5 * (matrix + matrix.T)
    if matrix.size == 0:
        return matrix
    vals, vecs = np.linalg.eigh(matrix)
    if vals.min() >= 0.0:
        return matrix
    if not project and vals.min() < EIG_FLOOR:
        raise ConfigurationError(
            f"{label} Hessian has eigenvalue {vals.min():.3e} below the PSD floor")
    vals = np.maximum(vals, 0.0)
    return (vecs * vals) @ vecs.T


def linearize_cost(problem: OcpProblem, iterate: DiscreteTrajectory,
                   node_index: int,
                   state_expansion: np.ndarray | None = None) -> NodeCost:
    """Convexify the running cost at a node of the iterate.

    G and H are kept through a second-order expansion (exact for quadratic
    costs; otherwise the Hessian is projected to its positive part and the
    outer loop refines the expansion point); the L-terms are frozen and
    linearized, leaving a map affine in x, convex in u, and tangent to the
    true integrand at the reference.

    ``state_expansion`` optionally relocates the expansion point of the
    state cost (successive quadratic models of a kept-intact term); the
    L-term freezing always uses the iterate itself.
    """
    if not 0 <= node_index < iterate.grid.node_count:
        raise ConfigurationError("node index outside the grid")
    s = float(_stage_times(problem, iterate)[node_index])
    x_ref = iterate.states[node_index].copy()
    u_ref = iterate.controls[node_index].copy()
    n, m = x_ref.size, u_ref.size
    x_exp = x_ref if state_expansion is None else \
        np.asarray(state_expansion, dtype=float).copy()

    g_val = float(problem.cost_control.value(s, u_ref))
    g_grad = np.asarray(problem.cost_control.grad(s, u_ref), dtype=float)
    g_hess = _psd_clamp(np.asarray(problem.cost_control.hess(s, u_ref), dtype=float),
                        "control cost")

    h_val = float(problem.cost_state.value(s, x_exp))
    h_grad = np.asarray(problem.cost_state.grad(s, x_exp), dtype=float)
    if problem.cost_state.hess is not None:
        h_hess = _psd_clamp(np.asarray(problem.cost_state.hess(s, x_exp), dtype=float),
                            "state cost", project=not problem.cost_state.quadratic)
    else:
        h_hess = np.zeros((n, n))

    l0 = problem.cost_mixed[0]
    l0_val = float(l0.value(s, x_ref))
    lin_x = np.asarray(l0.grad(s, x_ref), dtype=float).copy()
    lin_u = g_grad.copy()
    constant = g_val + l0_val
    for i in range(m):
        li = problem.cost_mixed[i + 1]
        li_val = float(li.value(s, x_ref))
        lin_u[i] += li_val
        lin_x += u_ref[i] * np.asarray(li.grad(s, x_ref), dtype=float)
        constant += u_ref[i] * li_val

    # Recenter the state-cost expansion at the iterate node so the stored
    # form keeps a single reference point.
    dx = x_ref - x_exp
    constant += h_val + float(h_grad @ dx) + 0.5 * float(dx @ h_hess @ dx)
    lin_x += h_grad + h_hess @ dx
    return NodeCost(constant=constant, lin_x=lin_x, lin_u=lin_u,
                    quad_x=h_hess, quad_u=g_hess, x_ref=x_ref, u_ref=u_ref)


def rescale_free_time(problem: OcpProblem,
                      iterate: DiscreteTrajectory) -> OcpProblem:
    """Rewrite a free-final-time problem on [0, 1] with the final time as a state.

    The extra state obeys tdot = 0 with a free initial value and multiplies
    the dynamics; the cost factor it would contribute is frozen at the
    iterate's final time so the integrand stays convex in the control. Inner
    evaluators receive normalized time, i.e. the fields are treated as
    autonomous under the change of variables (true of every bundled family).
    """
    if problem.fixed_final_time is not None:
        raise ValueError("time rescaling applies to free-final-time problems only")
    n = problem.state_dim
    tf_k = float(iterate.final_time)

    def lift_field(fld: VectorField) -> VectorField:
        def value(s, xa, _f=fld.value, _n=n):
            out = np.empty(_n + 1)
            out[:_n] = xa[_n] * np.asarray(_f(s, xa[:_n]), dtype=float)
            out[_n] = 0.0
            return out

        def jacobian(s, xa, _f=fld.value, _j=fld.jacobian, _n=n):
            out = np.zeros((_n + 1, _n + 1))
            x = xa[:_n]
            out[:_n, :_n] = xa[_n] * np.asarray(_j(s, x), dtype=float)
            out[:_n, _n] = np.asarray(_f(s, x), dtype=float)
            return out

        return VectorField(value=value, jacobian=jacobian, analytic=fld.analytic)

    def lift_scalar(fld: ScalarField) -> ScalarField:
        def value(s, xa, _f=fld.value, _n=n, _t=tf_k):
            return _t * _f(s, xa[:_n])

        def grad(s, xa, _g=fld.grad, _n=n, _t=tf_k):
            out = np.zeros(_n + 1)
            out[:_n] = _t * np.asarray(_g(s, xa[:_n]), dtype=float)
            return out

        hess = None
        if fld.hess is not None:
            def hess(s, xa, _h=fld.hess, _n=n, _t=tf_k):
                out = np.zeros((_n + 1, _n + 1))
                out[:_n, :_n] = _t * np.asarray(_h(s, xa[:_n]), dtype=float)
                return out

        return ScalarField(value=value, grad=grad, hess=hess,
                           analytic=fld.analytic, quadratic=fld.quadratic)

    cost_control = ControlCost(
        value=lambda s, u, _g=problem.cost_control.value, _t=tf_k: _t * _g(s, u),
        grad=lambda s, u, _g=problem.cost_control.grad, _t=tf_k:
            _t * np.asarray(_g(s, u), dtype=float),
        hess=lambda s, u, _h=problem.cost_control.hess, _t=tf_k:
            _t * np.asarray(_h(s, u), dtype=float),
        quadratic=problem.cost_control.quadratic,
    )

    dg_cols = problem.boundary_dim

    def boundary_value(xa, _g=problem.boundary.value, _n=n):
        return np.asarray(_g(xa[:_n]), dtype=float)

    def boundary_jac(xa, _j=problem.boundary.jacobian, _n=n, _rows=dg_cols):
        out = np.zeros((_rows, _n + 1))
        out[:, :_n] = np.atleast_2d(np.asarray(_j(xa[:_n]), dtype=float))
        return out

    return OcpProblem(
        state_dim=n + 1,
        control_dim=problem.control_dim,
        drift=lift_field(problem.drift),
        control_fields=tuple(lift_field(f) for f in problem.control_fields),
        cost_control=cost_control,
        cost_state=lift_scalar(problem.cost_state),
        cost_mixed=tuple(lift_scalar(f) for f in problem.cost_mixed),
        boundary=BoundaryMap(value=boundary_value, jacobian=boundary_jac,
                             codim=dg_cols),
        control_set=problem.control_set,
        horizon_cap=1.0,
        initial_state=np.append(problem.initial_state, tf_k),
        fixed_final_time=1.0,
        state_bound=problem.state_bound,
        time_rescaled=True,
        validate=False,
    )


def _augment_iterate(iterate: DiscreteTrajectory) -> DiscreteTrajectory:
    tf_col = np.full((iterate.grid.node_count, 1), iterate.final_time)
    return DiscreteTrajectory(grid=iterate.grid,
                              states=np.hstack([iterate.states, tf_col]),
                              controls=iterate.controls,
                              final_time=1.0)


def _trapezoid_weights(node_count: int, h: float) -> np.ndarray:
    w = np.full(node_count, h)
    w[0] = w[-1] = 0.5 * h
    return w


def transcribe(problem: OcpProblem, iterate: DiscreteTrajectory, radius: float,
               scheme: Scheme = "trapezoidal",
               state_cost_point: DiscreteTrajectory | None = None) -> ConvexSubproblem:
    """Build the convex subproblem about ``iterate`` with trust radius ``radius``.

    Equality rows stack, in order: dynamics defects per interval, the initial
    condition on the original state block, and the linearized boundary
    condition at the final node. The trust region on states becomes a
    quadrature-weighted L2 ball centered at the iterate; for a free final
    time, the window |tf - tf_k| <= radius becomes bounds on the time state.

    ``state_cost_point`` relocates the quadratic model of a non-quadratic
    state cost (inner refinement of the kept-intact term); everything else
    stays anchored at ``iterate``.
    """
    if not radius > 0.0:
        raise ConfigurationError("trust radius must be positive")
    if scheme not in ("trapezoidal", "forward_euler"):
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    if iterate.states.shape[1] != problem.state_dim or \
            iterate.controls.shape[1] != problem.control_dim:
        raise ConfigurationError("iterate dimensions do not match the problem")

    free_time = problem.free_final_time
    n = problem.state_dim
    if free_time:
        work = rescale_free_time(problem, iterate)
        traj = _augment_iterate(iterate)
        expansion = None if state_cost_point is None \
            else _augment_iterate(state_cost_point).states
        measure_scale = iterate.final_time
    else:
        work = problem
        traj = iterate
        expansion = None if state_cost_point is None else state_cost_point.states
        measure_scale = 1.0

    N = traj.grid.node_count
    ns = work.state_dim
    m = work.control_dim
    layout = DecisionLayout(node_count=N, stacked_state_dim=ns, control_dim=m,
                            orig_state_dim=n, free_time=free_time)
    stage = _stage_times(work, traj)
    h = float(stage[1] - stage[0])
    weights = _trapezoid_weights(N, h) * measure_scale

    lin_dyn = [linearize_dynamics(work, traj, j) for j in range(N)]
    lin_cost = [linearize_cost(work, traj, j,
                               None if expansion is None else expansion[j])
                for j in range(N)]

    # Quadratic cost assembly (block diagonal by node).
    p_rows, p_cols, p_vals = [], [], []
    q = np.zeros(layout.size)
    constant = 0.0
    cost_weights = weights if not free_time else _trapezoid_weights(N, h)
    for j in range(N):
        nc = lin_cost[j]
        w = cost_weights[j]
        xs = layout.state_slice(j)
        us = layout.control_slice(j)
        q[xs] += w * (nc.lin_x - nc.quad_x @ nc.x_ref)
        q[us] += w * (nc.lin_u - nc.quad_u @ nc.u_ref)
        constant += w * (nc.constant - nc.lin_x @ nc.x_ref - nc.lin_u @ nc.u_ref
                         + 0.5 * nc.x_ref @ nc.quad_x @ nc.x_ref
                         + 0.5 * nc.u_ref @ nc.quad_u @ nc.u_ref)
        for block, sl in ((nc.quad_x, xs), (nc.quad_u, us)):
            idx = np.arange(sl.start, sl.stop)
            for a in range(idx.size):
                for b in range(idx.size):
                    val = w * block[a, b]
                    if val != 0.0:
                        p_rows.append(idx[a])
                        p_cols.append(idx[b])
                        p_vals.append(val)
    P = sp.csc_matrix((p_vals, (p_rows, p_cols)),
                      shape=(layout.size, layout.size))

    # Equality rows: defects, initial condition, linearized boundary.
    a_rows, a_cols, a_vals = [], [], []
    n_defect = (N - 1) * ns
    x_end = traj.states[-1]
    g_val = np.atleast_1d(np.asarray(work.boundary.value(x_end), dtype=float))
    g_jac = np.atleast_2d(np.asarray(work.boundary.jacobian(x_end), dtype=float))
    lg = g_val.size
    n_rows = n_defect + n + lg
    b = np.zeros(n_rows)

    def put_block(r0: int, c0: int, block: np.ndarray):
        rows, cols = np.nonzero(block)
        a_rows.extend((r0 + rows).tolist())
        a_cols.extend((c0 + cols).tolist())
        a_vals.extend(block[rows, cols].tolist())

    eye_ns = np.eye(ns)
    for j in range(N - 1):
        r0 = j * ns
        dj, dj1 = lin_dyn[j], lin_dyn[j + 1]
        if scheme == "trapezoidal":
            put_block(r0, layout.state_slice(j).start, -eye_ns - 0.5 * h * dj.state_jac)
            put_block(r0, layout.state_slice(j + 1).start, eye_ns - 0.5 * h * dj1.state_jac)
            put_block(r0, layout.control_slice(j).start, -0.5 * h * dj.control_matrix)
            put_block(r0, layout.control_slice(j + 1).start, -0.5 * h * dj1.control_matrix)
            b[r0:r0 + ns] = 0.5 * h * (dj.constant - dj.state_jac @ dj.x_ref
                                       + dj1.constant - dj1.state_jac @ dj1.x_ref)
        else:
            put_block(r0, layout.state_slice(j).start, -eye_ns - h * dj.state_jac)
            put_block(r0, layout.state_slice(j + 1).start, eye_ns)
            put_block(r0, layout.control_slice(j).start, -h * dj.control_matrix)
            b[r0:r0 + ns] = h * (dj.constant - dj.state_jac @ dj.x_ref)

    init_rows = slice(n_defect, n_defect + n)
    for i in range(n):
        a_rows.append(n_defect + i)
        a_cols.append(layout.state_slice(0).start + i)
        a_vals.append(1.0)
    b[init_rows] = problem.initial_state

    boundary_rows = slice(n_defect + n, n_defect + n + lg)
    put_block(boundary_rows.start, layout.state_slice(N - 1).start, g_jac)
    b[boundary_rows] = g_jac @ x_end - g_val

    A = sp.csc_matrix((a_vals, (a_rows, a_cols)), shape=(n_rows, layout.size))

    # Box bounds: control set per node; time window in free mode.
    lower = np.full(layout.size, -np.inf)
    upper = np.full(layout.size, np.inf)
    for j in range(N):
        us = layout.control_slice(j)
        lower[us] = problem.control_set.lower
        upper[us] = problem.control_set.upper
    if free_time:
        t_idx = layout.time_indices()
        lower[t_idx] = max(MIN_FINAL_TIME, iterate.final_time - radius)
        upper[t_idx] = min(problem.horizon_cap, iterate.final_time + radius)

    # State trust region as a quadrature-weighted ball on the original block.
    ball_idx, ball_w, ball_center = [], [], []
    for j in range(N):
        base = layout.state_slice(j).start
        for i in range(n):
            ball_idx.append(base + i)
            ball_w.append(weights[j])
            ball_center.append(traj.states[j, i])

    return ConvexSubproblem(
        layout=layout,
        quadratic_cost=P,
        linear_cost=q,
        cost_constant=float(constant),
        equality=A,
        equality_rhs=b[:n_rows],
        lower=lower,
        upper=upper,
        ball_idx=np.asarray(ball_idx, dtype=int),
        ball_w=np.asarray(ball_w, dtype=float),
        ball_center=np.asarray(ball_center, dtype=float),
        ball_radius=float(radius),
        linearization_point=iterate,
        scheme=scheme,
        initial_rows=init_rows,
        boundary_rows=boundary_rows,
        stage_times=stage,
        quad_weights=weights,
        cost_weights=cost_weights,
        work_problem=work,
        work_states=traj.states.copy(),
    )


def locp_objective(subproblem: ConvexSubproblem, primal: np.ndarray) -> float:
    """Objective of the linearized subproblem with G and H kept intact.

    The quadratic program models a non-quadratic state cost by a local
    quadratic; this evaluates the underlying subproblem objective (true G
    and H, L-terms frozen/linearized at the reference) so an inner
    refinement can line-search against it.
    """
    work = subproblem.work_problem
    layout = subproblem.layout
    states = layout.states_from(primal)
    controls = layout.controls_from(primal)
    ref_states = subproblem.work_states
    ref_controls = subproblem.linearization_point.controls
    stage = subproblem.stage_times
    total = 0.0
    for j in range(layout.node_count):
        s = float(stage[j])
        x, u = states[j], controls[j]
        x_ref, u_ref = ref_states[j], ref_controls[j]
        val = work.cost_control.value(s, u) + work.cost_state.value(s, x)
        l0 = work.cost_mixed[0]
        val += l0.value(s, x_ref) + float(np.asarray(l0.grad(s, x_ref)) @ (x - x_ref))
        for i in range(layout.control_dim):
            li = work.cost_mixed[i + 1]
            val += u[i] * li.value(s, x_ref)
            val += u_ref[i] * float(np.asarray(li.grad(s, x_ref)) @ (x - x_ref))
        total += subproblem.cost_weights[j] * val
    return float(total)


def trajectory_from_solution(subproblem: ConvexSubproblem,
                             primal: np.ndarray) -> DiscreteTrajectory:
    """Unpack a solver primal vector into a trajectory in problem coordinates."""
    layout = subproblem.layout
    states = layout.states_from(primal)
    controls = layout.controls_from(primal)
    if layout.free_time:
        tf = float(states[:, layout.orig_state_dim].mean())
        states = states[:, : layout.orig_state_dim]
    else:
        tf = subproblem.linearization_point.final_time
    grid = subproblem.linearization_point.grid
    return DiscreteTrajectory(grid=grid, states=states.copy(),
                              controls=controls.copy(), final_time=tf)


def true_defects(problem: OcpProblem, traj: DiscreteTrajectory,
                 scheme: Scheme = "trapezoidal") -> np.ndarray:
    """Per-interval defects of the true nonlinear dynamics along a trajectory."""
    times = traj.times
    n = problem.state_dim
    rhs = np.empty((traj.grid.node_count, n))
    for j in range(traj.grid.node_count):
        rhs[j] = problem.dynamics(float(times[j]), traj.states[j], traj.controls[j])
    out = np.empty((traj.grid.node_count - 1, n))
    for j in range(traj.grid.node_count - 1):
        h = times[j + 1] - times[j]
        if scheme == "trapezoidal":
            out[j] = traj.states[j + 1] - traj.states[j] - 0.5 * h * (rhs[j] + rhs[j + 1])
        else:
            out[j] = traj.states[j + 1] - traj.states[j] - h * rhs[j]
    return out


def evaluate_cost(problem: OcpProblem, traj: DiscreteTrajectory) -> float:
    """Trapezoidal quadrature of the true running cost along a trajectory."""
    times = traj.times
    vals = np.array([problem.running_cost(float(times[j]), traj.states[j],
                                          traj.controls[j])
                     for j in range(traj.grid.node_count)])
    return float(np.trapz(vals, times))


def l2_control_gap(prev: DiscreteTrajectory, curr: DiscreteTrajectory) -> float:
    """Real-time quadrature of the squared control change between iterates."""
    if prev.grid.node_count != curr.grid.node_count:
        raise ConfigurationError("iterates must share a grid")
    diff = np.sum((curr.controls - prev.controls) ** 2, axis=1)
    return float(np.trapz(diff, curr.times))


def l2_state_gap(prev: DiscreteTrajectory, curr: DiscreteTrajectory) -> float:
    """Real-time quadrature of the squared state change, measured at prev's tf.

    This matches the ball constraint the convex subproblem enforced when it
    was linearized at ``prev``.
    """
    if prev.grid.node_count != curr.grid.node_count:
        raise ConfigurationError("iterates must share a grid")
    diff = np.sum((curr.states - prev.states) ** 2, axis=1)
    return float(np.trapz(diff, prev.times))


# ---------------------------------------------------------------------------
# Plain-text sparse dump (for cross-checking against external solvers)


def dump_subproblem(subproblem: ConvexSubproblem, stream: io.TextIOBase) -> None:
    """Write the subproblem as row/col/value triplets plus vectors."""
    lay = subproblem.layout
    stream.write("scptraj-subproblem v1\n")
    stream.write(f"meta nodes={lay.node_count} stacked_state={lay.stacked_state_dim} "
                 f"controls={lay.control_dim} free_time={int(lay.free_time)} "
                 f"scheme={subproblem.scheme}\n")
    coo = subproblem.quadratic_cost.tocoo()
    stream.write(f"P {subproblem.quadratic_cost.shape[0]} {coo.nnz}\n")
    for i, j, v in zip(coo.row, coo.col, coo.data):
        stream.write(f"{i} {j} {float(v)!r}\n")
    _dump_vector(stream, "q", subproblem.linear_cost)
    coo = subproblem.equality.tocoo()
    stream.write(f"A {subproblem.equality.shape[0]} {subproblem.equality.shape[1]} {coo.nnz}\n")
    for i, j, v in zip(coo.row, coo.col, coo.data):
        stream.write(f"{i} {j} {float(v)!r}\n")
    _dump_vector(stream, "b", subproblem.equality_rhs)
    _dump_vector(stream, "lb", subproblem.lower)
    _dump_vector(stream, "ub", subproblem.upper)
    stream.write(f"ball {subproblem.ball_idx.size} {subproblem.ball_radius!r}\n")
    for i, w, c in zip(subproblem.ball_idx, subproblem.ball_w, subproblem.ball_center):
        stream.write(f"{i} {float(w)!r} {float(c)!r}\n")
    stream.write(f"const {subproblem.cost_constant!r}\n")


def _dump_vector(stream, name: str, vec: np.ndarray) -> None:
    stream.write(f"{name} {vec.size}\n")
    for v in vec:
        stream.write(f"{float(v)!r}\n")


def load_subproblem_arrays(stream: io.TextIOBase) -> dict:
    """Parse a dump back into plain arrays (round-trip check helper)."""
    header = stream.readline().strip()
    if header != "scptraj-subproblem v1":
        raise ValueError(f"unrecognized dump header {header!r}")
    meta_line = stream.readline().split()
    meta = dict(item.split("=") for item in meta_line[1:])
    out: dict = {"meta": meta}

    def read_triplets(count):
        rows, cols, vals = [], [], []
        for _ in range(count):
            i, j, v = stream.readline().split()
            rows.append(int(i))
            cols.append(int(j))
            vals.append(float(v))
        return rows, cols, vals

    tag, size, nnz = stream.readline().split()
    assert tag == "P"
    rows, cols, vals = read_triplets(int(nnz))
    out["P"] = sp.csc_matrix((vals, (rows, cols)), shape=(int(size), int(size)))
    for name in ("q",):
        out[name] = _read_vector(stream, name)
    tag, nrows, ncols, nnz = stream.readline().split()
    assert tag == "A"
    rows, cols, vals = read_triplets(int(nnz))
    out["A"] = sp.csc_matrix((vals, (rows, cols)), shape=(int(nrows), int(ncols)))
    for name in ("b", "lb", "ub"):
        out[name] = _read_vector(stream, name)
    tag, count, radius = stream.readline().split()
    assert tag == "ball"
    idx, ws, cs = [], [], []
    for _ in range(int(count)):
        i, w, c = stream.readline().split()
        idx.append(int(i))
        ws.append(float(w))
        cs.append(float(c))
    out["ball"] = (np.array(idx), np.array(ws), np.array(cs), float(radius))
    tag, value = stream.readline().split()
    assert tag == "const"
    out["const"] = float(value)
    return out


def _read_vector(stream, name: str) -> np.ndarray:
    tag, size = stream.readline().split()
    assert tag == name, (tag, name)
    return np.array([float(stream.readline()) for _ in range(int(size))])
