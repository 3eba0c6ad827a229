"""Continuous-time optimal control problems in control-affine, cost-decomposed form.

A problem consists of dynamics ``xdot = f0(s, x) + sum_i u_i * f_i(s, x)``,
a running cost ``G(s, u) + H(s, x) + L0(s, x) + sum_i u_i * L_i(s, x)``,
an endpoint constraint ``g(x(tf)) = 0``, a compact box control set, and a
final time that is either fixed or free up to a horizon cap. State
constraints enter by penalization of the running cost only.

This module also bundles the example problem families used throughout the
test-suite and the command line: a planar car with turning-rate control and
obstacle penalties, linear-quadratic problems, and rigid rotations on the
unit sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError
from .fields import BoundaryMap, ControlCost, ScalarField, VectorField
from .manifold import ManifoldSpec

_CONVEXITY_SAMPLES = 25
_CONVEXITY_SLACK = 1e-10


@dataclass(frozen=True)
class ControlSet:
    """Axis-aligned box of admissible control values (convex and compact)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape:
            raise ConfigurationError("control bounds must share a shape")
        if not np.all(lower <= upper):
            raise ConfigurationError("control box is empty")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ConfigurationError("control box must be bounded")

    @property
    def dim(self) -> int:
        return self.lower.size

    def clamp(self, u: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(u, self.lower), self.upper)


@dataclass(frozen=True)
class ObstacleSpec:
    """Cylindrical obstacle in the plane: center and radius."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.center.shape != (2,):
            raise ConfigurationError("obstacle center must be a 2-vector")
        if not self.radius > 0.0:
            raise ConfigurationError("obstacle radius must be positive")


@dataclass(frozen=True)
class PenaltyConfig:
    """Weights and shape of the state-constraint penalty.

    The only supported penalty is the squared hinge h(z) = z^2 for z > 0 and
    0 otherwise, which is continuously differentiable at 0.
    """

    weights: np.ndarray
    penalty_fn: str = "squared_hinge"
    omega_max: float = 1e12

    def __post_init__(self):
        object.__setattr__(self, "weights",
                           np.atleast_1d(np.asarray(self.weights, dtype=float)))
        if self.penalty_fn != "squared_hinge":
            raise ConfigurationError(f"unknown penalty function {self.penalty_fn!r}")
        if np.any(self.weights < 0.0) or np.any(self.weights > self.omega_max):
            raise ConfigurationError("penalty weights must lie in [0, omega_max]")


def squared_hinge(z: float) -> float:
    return z * z if z > 0.0 else 0.0


def squared_hinge_deriv(z: float) -> float:
    return 2.0 * z if z > 0.0 else 0.0


@dataclass(frozen=True)
class OcpProblem:
    """Continuous-time control-affine problem data.

    Instances are immutable and safe to share between threads; all evaluators
    must be reentrant. ``fixed_final_time`` of None means the final time is a
    decision variable bounded by ``horizon_cap``.

    ``state_bound`` is a declared compact-support surrogate: algorithms abort
    with a diagnostic whenever an iterate leaves the ball of that radius.

    ``final_state_targets`` optionally describes a componentwise boundary map
    (entry = target value, or None for a free component). It is redundant
    with ``boundary`` but required by the shooting layer, which handles
    exactly this class of endpoint conditions.
    """

    state_dim: int
    control_dim: int
    drift: VectorField
    control_fields: tuple[VectorField, ...]
    cost_control: ControlCost
    cost_state: ScalarField
    cost_mixed: tuple[ScalarField, ...]
    boundary: BoundaryMap
    control_set: ControlSet
    horizon_cap: float
    initial_state: np.ndarray
    fixed_final_time: float | None = None
    state_bound: float = 1e3
    manifold: ManifoldSpec | None = None
    final_state_targets: tuple[float | None, ...] | None = None
    time_rescaled: bool = False
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "initial_state",
                           np.asarray(self.initial_state, dtype=float))
        object.__setattr__(self, "control_fields", tuple(self.control_fields))
        object.__setattr__(self, "cost_mixed", tuple(self.cost_mixed))
        if not self.validate:
            return
        n, m = self.state_dim, self.control_dim
        if n <= 0 or m <= 0:
            raise ConfigurationError("state and control dimensions must be positive")
        if self.initial_state.shape != (n,):
            raise ConfigurationError("initial state has wrong dimension")
        if len(self.control_fields) != m:
            raise ConfigurationError(f"expected {m} control fields")
        if len(self.cost_mixed) != m + 1:
            raise ConfigurationError(f"expected {m + 1} state-cost terms")
        if self.control_set.dim != m:
            raise ConfigurationError("control set dimension mismatch")
        if not self.horizon_cap > 0.0:
            raise ConfigurationError("horizon cap must be positive")
        if self.fixed_final_time is not None:
            if not 0.0 < self.fixed_final_time <= self.horizon_cap:
                raise ConfigurationError("fixed final time must lie in (0, horizon]")
        if not self.state_bound > 0.0:
            raise ConfigurationError("state bound must be positive")
        # A trivial-final-time solution only threatens free-final-time
        # problems, so the nondegeneracy requirement g(x0) != 0 is enforced
        # in that mode only.
        if self.fixed_final_time is None:
            g0 = np.asarray(self.boundary.value(self.initial_state), dtype=float)
            if np.linalg.norm(g0) <= 1e-12:
                raise ConfigurationError(
                    "boundary map vanishes at the initial state; "
                    "a free-final-time problem would admit tf = 0")
        self._spot_check_control_convexity()

    @property
    def free_final_time(self) -> bool:
        return self.fixed_final_time is None

    @property
    def boundary_dim(self) -> int:
        return np.asarray(self.boundary.value(self.initial_state)).size

    def dynamics(self, s: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Full control-affine right-hand side f(s, x, u)."""
        out = np.asarray(self.drift.value(s, x), dtype=float).copy()
        for i, fi in enumerate(self.control_fields):
            out += u[i] * np.asarray(fi.value(s, x), dtype=float)
        return out

    def running_cost(self, s: float, x: np.ndarray, u: np.ndarray) -> float:
        """Running cost integrand G + H + L0 + sum_i u_i L_i."""
        val = self.cost_control.value(s, u) + self.cost_state.value(s, x)
        val += self.cost_mixed[0].value(s, x)
        for i in range(self.control_dim):
            val += u[i] * self.cost_mixed[i + 1].value(s, x)
        return float(val)

    def _spot_check_control_convexity(self):
        rng = np.random.default_rng(0x5EED)
        lo, hi = self.control_set.lower, self.control_set.upper
        span = np.where(hi > lo, hi - lo, 1.0)
        for _ in range(_CONVEXITY_SAMPLES):
            s = float(rng.uniform(0.0, self.horizon_cap))
            u1 = lo + rng.uniform(-0.5, 1.5, self.control_dim) * span
            u2 = lo + rng.uniform(-0.5, 1.5, self.control_dim) * span
            th = float(rng.uniform(0.0, 1.0))
            mid = self.cost_control.value(s, th * u1 + (1.0 - th) * u2)
            chord = th * self.cost_control.value(s, u1) \
                + (1.0 - th) * self.cost_control.value(s, u2)
            if mid > chord + _CONVEXITY_SLACK * max(1.0, abs(chord)):
                raise ConfigurationError("control cost failed the convexity spot check")


def penalize_state_constraints(problem: OcpProblem,
                               constraints: Sequence[ScalarField],
                               config: PenaltyConfig) -> OcpProblem:
    """Fold penalized state constraints c_i(s, x) <= 0 into the running cost.

    Returns a new problem identical to ``problem`` except that the pure-state
    running cost term is replaced by
    ``L0(s, x) + sum_i w_i * h(c_i(s, x))`` with the squared-hinge h.
    Gradients are assembled by the chain rule, so the result stays
    continuously differentiable.
    """
    constraints = tuple(constraints)
    if config.weights.size != len(constraints):
        raise ConfigurationError("one penalty weight per constraint is required")
    base = problem.cost_mixed[0]
    weights = config.weights.copy()

    def value(s, x, _base=base, _cons=constraints, _w=weights):
        total = _base.value(s, x)
        for w, c in zip(_w, _cons):
            total += w * squared_hinge(c.value(s, x))
        return total

    def grad(s, x, _base=base, _cons=constraints, _w=weights):
        total = np.asarray(_base.grad(s, x), dtype=float).copy()
        for w, c in zip(_w, _cons):
            slope = squared_hinge_deriv(c.value(s, x))
            if slope != 0.0:
                total += w * slope * np.asarray(c.grad(s, x), dtype=float)
        return total

    penalized = ScalarField(value=value, grad=grad,
                            analytic=base.analytic and all(c.analytic for c in constraints))
    mixed = (penalized,) + problem.cost_mixed[1:]
    return replace(problem, cost_mixed=mixed, validate=False)


# ---------------------------------------------------------------------------
# Dubins car with obstacle penalties


def obstacle_potential(obstacle: ObstacleSpec, r: np.ndarray) -> float:
    """Smooth interior potential: (||r - ri||^2 - eps^2)^2 inside, 0 outside."""
    d = r - obstacle.center
    gap = float(d @ d) - obstacle.radius ** 2
    return gap * gap if gap < 0.0 else 0.0


def obstacle_potential_grad(obstacle: ObstacleSpec, r: np.ndarray) -> np.ndarray:
    d = r - obstacle.center
    gap = float(d @ d) - obstacle.radius ** 2
    if gap < 0.0:
        return 4.0 * gap * d
    return np.zeros(2)


def obstacle_potential_hess(obstacle: ObstacleSpec, r: np.ndarray) -> np.ndarray:
    d = r - obstacle.center
    gap = float(d @ d) - obstacle.radius ** 2
    if gap < 0.0:
        return 4.0 * gap * np.eye(2) + 8.0 * np.outer(d, d)
    return np.zeros((2, 2))


def make_dubins(v: float, k: float, u_bar: float,
                obstacles: Sequence[ObstacleSpec],
                omega: float,
                x0: np.ndarray,
                target_position: np.ndarray,
                final_angle: float | None = None,
                horizon_cap: float = 50.0,
                state_bound: float = 100.0) -> OcpProblem:
    """Planar constant-speed car with turning-rate control and soft obstacles.

    State (r_x, r_y, theta); dynamics (v cos theta, v sin theta, k u) with
    |u| <= u_bar. Running cost u^2 plus omega times the summed obstacle
    potentials. Free final time. The endpoint pins the final position and,
    when ``final_angle`` is given, the final heading too.

    The weighted potential is registered in the state-cost slot (the term
    the subproblems keep rather than linearize), with its true Hessian, and
    flagged non-quadratic so the outer loop refines its quadratic model.
    Linearizing it instead makes iterates ping-pong across blocking
    obstacles at the trust boundary.
    """
    if not (v > 0.0 and k > 0.0 and u_bar > 0.0):
        raise ConfigurationError("speed, curvature and control bound must be positive")
    if omega < 0.0:
        raise ConfigurationError("penalty weight must be nonnegative")
    obstacles = tuple(obstacles)
    x0 = np.asarray(x0, dtype=float)
    target_position = np.asarray(target_position, dtype=float)
    if x0.shape != (3,) or target_position.shape != (2,):
        raise ConfigurationError("x0 must be a 3-vector, target a 2-vector")

    def drift_value(s, x, _v=v):
        return np.array([_v * math.cos(x[2]), _v * math.sin(x[2]), 0.0])

    def drift_jac(s, x, _v=v):
        sin_t, cos_t = math.sin(x[2]), math.cos(x[2])
        return np.array([[0.0, 0.0, -_v * sin_t],
                         [0.0, 0.0, _v * cos_t],
                         [0.0, 0.0, 0.0]])

    turn = np.array([0.0, 0.0, k])
    zero33 = np.zeros((3, 3))
    turn_field = VectorField(value=lambda s, x, _t=turn: _t,
                             jacobian=lambda s, x, _z=zero33: _z)

    def potential_value(s, x, _obs=obstacles, _w=omega):
        r = x[:2]
        return _w * sum(obstacle_potential(o, r) for o in _obs)

    def potential_grad(s, x, _obs=obstacles, _w=omega):
        g = np.zeros(3)
        r = x[:2]
        for o in _obs:
            g[:2] += obstacle_potential_grad(o, r)
        g[:2] *= _w
        return g

    def potential_hess(s, x, _obs=obstacles, _w=omega):
        h = np.zeros((3, 3))
        r = x[:2]
        for o in _obs:
            h[:2, :2] += obstacle_potential_hess(o, r)
        h[:2, :2] *= _w
        return h

    potential = ScalarField(value=potential_value, grad=potential_grad,
                            hess=potential_hess, quadratic=not obstacles)

    cost_control = ControlCost(value=lambda s, u: float(u[0] * u[0]),
                               grad=lambda s, u: 2.0 * np.asarray(u, dtype=float),
                               hess=lambda s, u: np.array([[2.0]]))

    if final_angle is None:
        g_matrix = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        g_offset = -target_position
        targets: tuple[float | None, ...] = (float(target_position[0]),
                                             float(target_position[1]), None)
    else:
        g_matrix = np.eye(3)
        g_offset = -np.array([target_position[0], target_position[1], final_angle])
        targets = (float(target_position[0]), float(target_position[1]),
                   float(final_angle))

    return OcpProblem(
        state_dim=3,
        control_dim=1,
        drift=VectorField(value=drift_value, jacobian=drift_jac),
        control_fields=(turn_field,),
        cost_control=cost_control,
        cost_state=potential,
        cost_mixed=(ScalarField.zero(3), ScalarField.zero(3)),
        boundary=BoundaryMap.affine(g_matrix, g_offset),
        control_set=ControlSet(lower=np.array([-u_bar]), upper=np.array([u_bar])),
        horizon_cap=horizon_cap,
        initial_state=x0,
        fixed_final_time=None,
        state_bound=state_bound,
        final_state_targets=targets,
    )


# ---------------------------------------------------------------------------
# Linear-quadratic problems (exact-linearization oracle)


def make_lqr(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
             x0: np.ndarray, xf: np.ndarray, t_f: float,
             control_box: float = 50.0,
             state_bound: float = 1e3) -> OcpProblem:
    """Fixed-final-time linear dynamics with quadratic cost u'Ru + x'Qx.

    Every linearization of this problem is exact, which makes it the
    workhorse oracle: the first convex subproblem coincides with the full
    problem. Q must be positive semidefinite and R positive definite.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    xf = np.asarray(xf, dtype=float)
    n, m = A.shape[0], B.shape[1]
    if A.shape != (n, n) or B.shape != (n, m) or Q.shape != (n, n) or R.shape != (m, m):
        raise ConfigurationError("inconsistent LQR matrix dimensions")
    if x0.shape != (n,) or xf.shape != (n,):
        raise ConfigurationError("endpoint dimension mismatch")
    if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-12:
        raise ConfigurationError("Q must be positive semidefinite")
    if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0.0:
        raise ConfigurationError("R must be positive definite")

    fields = tuple(
        VectorField(value=lambda s, x, _c=B[:, i].copy(): _c,
                    jacobian=lambda s, x, _z=np.zeros((n, n)): _z)
        for i in range(m))
    zero = ScalarField.zero(n)
    return OcpProblem(
        state_dim=n,
        control_dim=m,
        drift=VectorField(value=lambda s, x, _A=A: _A @ x,
                          jacobian=lambda s, x, _A=A: _A),
        control_fields=fields,
        cost_control=ControlCost(value=lambda s, u, _R=R: float(u @ _R @ u),
                                 grad=lambda s, u, _R=R: 2.0 * (_R @ u),
                                 hess=lambda s, u, _R=R: 2.0 * _R),
        cost_state=ScalarField(value=lambda s, x, _Q=Q: float(x @ _Q @ x),
                               grad=lambda s, x, _Q=Q: 2.0 * (_Q @ x),
                               hess=lambda s, x, _Q=Q: 2.0 * _Q),
        cost_mixed=(zero,) * (m + 1),
        boundary=BoundaryMap.affine(np.eye(n), -xf),
        control_set=ControlSet(lower=-control_box * np.ones(m),
                               upper=control_box * np.ones(m)),
        horizon_cap=t_f,
        initial_state=x0,
        fixed_final_time=t_f,
        state_bound=state_bound,
        final_state_targets=tuple(float(val) for val in xf),
    )


# ---------------------------------------------------------------------------
# Rotations on the unit sphere (manifold-constrained example)


def _skew(a: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -a[2], a[1]],
                     [a[2], 0.0, -a[0]],
                     [-a[1], a[0], 0.0]])


def make_sphere_rotation(x0: np.ndarray, xf: np.ndarray,
                         axes: Sequence[np.ndarray], t_f: float = 1.0,
                         control_box: float = 10.0,
                         state_bound: float = 10.0) -> OcpProblem:
    """Rigid rotation of a point on the unit sphere by body-axis rates.

    Drift is zero; each control field is a cross product a_i x x, which is
    tangent to every sphere about the origin, so trajectories started on the
    unit sphere stay on it. Cost is ||u||^2 over a fixed horizon.
    """
    x0 = np.asarray(x0, dtype=float)
    xf = np.asarray(xf, dtype=float)
    if x0.shape != (3,) or xf.shape != (3,):
        raise ConfigurationError("sphere states are 3-vectors")
    if abs(np.linalg.norm(x0) - 1.0) > 1e-9:
        raise ConfigurationError("initial state must lie on the unit sphere")
    mats = tuple(_skew(np.asarray(a, dtype=float)) for a in axes)
    m = len(mats)
    if m == 0:
        raise ConfigurationError("at least one rotation axis is required")

    fields = tuple(
        VectorField(value=lambda s, x, _S=S: _S @ x,
                    jacobian=lambda s, x, _S=S: _S)
        for S in mats)
    zero = ScalarField.zero(3)

    def sphere_sampler(rng: np.random.Generator) -> np.ndarray:
        vec = rng.normal(size=3)
        return vec / np.linalg.norm(vec)

    manifold = ManifoldSpec(
        defining_map=lambda x: np.array([float(x @ x) - 1.0]),
        jacobian=lambda x: 2.0 * np.asarray(x, dtype=float).reshape(1, 3),
        dim=2,
        sampler=sphere_sampler,
    )
    return OcpProblem(
        state_dim=3,
        control_dim=m,
        drift=VectorField(value=lambda s, x: np.zeros(3),
                          jacobian=lambda s, x: np.zeros((3, 3))),
        control_fields=fields,
        cost_control=ControlCost(value=lambda s, u: float(u @ u),
                                 grad=lambda s, u: 2.0 * np.asarray(u, dtype=float),
                                 hess=lambda s, u, _I=2.0 * np.eye(m): _I),
        cost_state=zero,
        cost_mixed=(zero,) * (m + 1),
        boundary=BoundaryMap.affine(np.eye(3), -xf),
        control_set=ControlSet(lower=-control_box * np.ones(m),
                               upper=control_box * np.ones(m)),
        horizon_cap=t_f,
        initial_state=x0,
        fixed_final_time=t_f,
        state_bound=state_bound,
        manifold=manifold,
        final_state_targets=tuple(float(val) for val in xf),
    )
