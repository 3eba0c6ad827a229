"""Manifold-type state constraints: tangency validation and costate projection.

A manifold is given in submersion form, M = {x : m(x) = 0} with 0 a regular
value. When every vector field of a problem is tangent to M, trajectories
started on M remain on M, so the constraint can simply be dropped from the
transcription; this module supplies the checks that justify doing so and the
orthogonal costate projection that upgrades the resulting ambient extremal to
a geometrically consistent one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .errors import ConfigurationError

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, hints only
    from .pmp import Extremal
    from .problems import OcpProblem

ON_MANIFOLD_TOL = 1e-8
RANK_TOL = 1e-8


@dataclass(frozen=True)
class ManifoldSpec:
    """Submanifold of R^n described by a defining map and its Jacobian.

    ``defining_map`` sends x to R^(n-d); the manifold is its zero set and
    ``dim`` = d. ``sampler`` optionally draws random points on the manifold
    and is required by :func:`check_tangency`. An empty defining map (zero
    rows) describes the trivial manifold M = R^n.
    """

    defining_map: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    dim: int
    sampler: Callable[[np.random.Generator], np.ndarray] | None = None

    def codim(self, x: np.ndarray) -> int:
        return np.atleast_1d(np.asarray(self.defining_map(x))).size

    def tangent_basis(self, x: np.ndarray) -> np.ndarray:
        """Orthonormal basis of T_x M as columns, via the SVD null space.

        The right singular vectors spanning the null space of the defining
        Jacobian are passed through one Gram-Schmidt sweep in index order so
        the basis is a deterministic function of x.
        """
        x = np.asarray(x, dtype=float)
        jac = np.atleast_2d(np.asarray(self.jacobian(x), dtype=float))
        if jac.shape[0] == 0:
            return np.eye(x.size)
        _, svals, vt = np.linalg.svd(jac)
        rank = int(np.sum(svals > RANK_TOL * max(1.0, svals[0] if svals.size else 1.0)))
        if rank < jac.shape[0]:
            raise ConfigurationError(
                "defining map is not a submersion at the given point")
        basis = vt[rank:].T
        if basis.shape[1] != self.dim:
            raise ConfigurationError(
                f"tangent space has dimension {basis.shape[1]}, expected {self.dim}")
        return _gram_schmidt(basis)


def _gram_schmidt(columns: np.ndarray) -> np.ndarray:
    out = np.array(columns, dtype=float, copy=True)
    for j in range(out.shape[1]):
        for i in range(j):
            out[:, j] -= (out[:, i] @ out[:, j]) * out[:, i]
        norm = np.linalg.norm(out[:, j])
        if norm < 1e-14:
            raise ConfigurationError("degenerate tangent basis")
        out[:, j] /= norm
    return out


@dataclass(frozen=True)
class TangencyReport:
    """Worst observed normal components of the problem vector fields on M."""

    samples: int
    worst_violation: float
    worst_point: np.ndarray | None
    worst_field: int | None
    worst_time: float | None
    passed: bool


def check_tangency(problem: "OcpProblem", manifold: ManifoldSpec,
                   samples: int = 100, tol: float = ON_MANIFOLD_TOL,
                   seed: int = 0) -> TangencyReport:
    """Verify that all vector fields are tangent to M at random samples.

    For random (s, x) with x on M, asserts ||Dm(x) f_i(s, x)|| <= tol for the
    drift and every control field. Raises when a violation exceeds tol, with
    the offending sample in the message.
    """
    rng = np.random.default_rng(seed)
    if manifold.codim(problem.initial_state) == 0:
        return TangencyReport(samples=0, worst_violation=0.0, worst_point=None,
                              worst_field=None, worst_time=None, passed=True)
    if manifold.sampler is None:
        raise ConfigurationError("tangency check requires a manifold sampler")
    fields = (problem.drift,) + problem.control_fields
    worst = -1.0
    worst_point = worst_field = worst_time = None
    for _ in range(samples):
        x = np.asarray(manifold.sampler(rng), dtype=float)
        s = float(rng.uniform(0.0, problem.horizon_cap))
        jac = np.atleast_2d(manifold.jacobian(x))
        for i, fld in enumerate(fields):
            violation = float(np.linalg.norm(jac @ np.asarray(fld.value(s, x))))
            if violation > worst:
                worst, worst_point, worst_field, worst_time = violation, x, i, s
    passed = worst <= tol
    report = TangencyReport(samples=samples, worst_violation=max(worst, 0.0),
                            worst_point=worst_point, worst_field=worst_field,
                            worst_time=worst_time, passed=passed)
    if not passed:
        raise ConfigurationError(
            f"vector field {worst_field} leaves the tangent space at "
            f"x={worst_point}, s={worst_time}: normal component {worst:.3e}")
    return report


def project_costate(manifold: ManifoldSpec, x: np.ndarray,
                    p: np.ndarray) -> np.ndarray:
    """Orthogonally project an ambient costate onto T_x M.

    Returns the ambient representative sum_j (p . e_j) e_j over an
    orthonormal tangent basis {e_j}; the result is independent of the basis
    choice. ``x`` must lie on the manifold to tolerance.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    residual = np.linalg.norm(np.atleast_1d(manifold.defining_map(x)))
    if residual > ON_MANIFOLD_TOL:
        raise ConfigurationError(
            f"point is off the manifold by {residual:.3e} (tolerance {ON_MANIFOLD_TOL})")
    basis = manifold.tangent_basis(x)
    return basis @ (basis.T @ p)


@dataclass(frozen=True)
class GeometricResidual:
    """Checkable conditions certifying a geometric extremal on M."""

    manifold_drift: float
    pairing_residual: float
    transversality_residual: float
    nontriviality_margin: float
    maximality_gap: float
    projected_final_costate: np.ndarray


def geometric_extremal_residual(problem: "OcpProblem", manifold: ManifoldSpec,
                                candidate: "Extremal") -> GeometricResidual:
    """Score how nearly a candidate extremal is geometrically consistent.

    Reports (i) the worst manifold drift max_s ||m(x(s))||, (ii) the pairing
    identity |<lambda(tf), v> - p(tf)' v| over a tangent basis at the final
    state, (iii) the projected transversality residual over directions
    tangent to both M and the boundary set, (iv) the non-triviality margin
    ||(lambda(tf), p0)||, and (v) the ambient maximality gap re-checked along
    the trajectory. Failures show up as large residuals, never exceptions.
    """
    from . import pmp  # local import to avoid a module cycle

    xs = np.asarray(candidate.states, dtype=float)
    drift = 0.0
    if manifold.codim(xs[0]) > 0:
        drift = max(float(np.linalg.norm(np.atleast_1d(manifold.defining_map(x))))
                    for x in xs)

    x_end = xs[-1]
    p_end = np.asarray(candidate.costates, dtype=float)[-1]
    basis = manifold.tangent_basis(x_end)
    lam = basis @ (basis.T @ p_end)

    pairing = 0.0
    for j in range(basis.shape[1]):
        v = basis[:, j]
        pairing = max(pairing, abs(float(lam @ v) - float(p_end @ v)))

    # Directions tangent to both M and the boundary zero set at the endpoint.
    dg = np.atleast_2d(np.asarray(problem.boundary.jacobian(x_end), dtype=float))
    reduced = dg @ basis
    _, svals, vt = np.linalg.svd(reduced) if reduced.size else (None, np.empty(0), np.empty((0, basis.shape[1])))
    rank = int(np.sum(svals > RANK_TOL)) if svals.size else 0
    null_coords = vt[rank:].T if vt.size else np.eye(basis.shape[1])
    transversality = 0.0
    for j in range(null_coords.shape[1]):
        v = basis @ null_coords[:, j]
        transversality = max(transversality, abs(float(lam @ v)))

    margin = float(np.hypot(np.linalg.norm(lam), candidate.abnormal_multiplier))

    gap = pmp.maximality_gap_along(problem, candidate)

    return GeometricResidual(
        manifold_drift=drift,
        pairing_residual=pairing,
        transversality_residual=transversality,
        nontriviality_margin=margin,
        maximality_gap=gap,
        projected_final_costate=lam,
    )
