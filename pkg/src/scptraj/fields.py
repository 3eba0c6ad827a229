"""Evaluator wrappers for the maps that define a continuous-time problem.

A problem is assembled from small callable bundles: vector fields with
Jacobians, scalar fields with gradients, the control-cost with gradient and
Hessian, and the boundary map. Analytic derivatives are expected; a central
finite-difference fallback is available but flagged, since derivative quality
drives the behavior of the outer algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FD_STEP = 1e-6


def fd_jacobian(fun: Callable[[float, np.ndarray], np.ndarray], s: float,
                x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite-difference Jacobian of ``fun(s, x)`` with respect to x."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(s, x), dtype=float))
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        hi = np.atleast_1d(np.asarray(fun(s, x + e), dtype=float))
        lo = np.atleast_1d(np.asarray(fun(s, x - e), dtype=float))
        jac[:, j] = (hi - lo) / (2.0 * step)
    return jac


def fd_gradient(fun: Callable[[float, np.ndarray], float], s: float,
                x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient of a scalar map ``fun(s, x)``."""
    x = np.asarray(x, dtype=float)
    grad = np.empty(x.size)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        grad[j] = (fun(s, x + e) - fun(s, x - e)) / (2.0 * step)
    return grad


@dataclass(frozen=True)
class VectorField:
    """A map (s, x) -> R^n together with its state Jacobian.

    ``analytic`` is False when the Jacobian is the finite-difference
    fallback; callers may warn or reject in accuracy-critical paths.
    """

    value: Callable[[float, np.ndarray], np.ndarray]
    jacobian: Callable[[float, np.ndarray], np.ndarray]
    analytic: bool = True

    @classmethod
    def from_value(cls, value: Callable[[float, np.ndarray], np.ndarray]) -> "VectorField":
        """Wrap a bare evaluator with a finite-difference Jacobian (flagged)."""
        return cls(value=value, jacobian=lambda s, x: fd_jacobian(value, s, x),
                   analytic=False)


@dataclass(frozen=True)
class ScalarField:
    """A scalar map (s, x) -> R with gradient and optional Hessian in x.

    ``quadratic`` marks maps whose Hessian is constant; quadratic state
    costs transcribe exactly, anything else is handled by successive
    quadratic models.
    """

    value: Callable[[float, np.ndarray], float]
    grad: Callable[[float, np.ndarray], np.ndarray]
    hess: Callable[[float, np.ndarray], np.ndarray] | None = None
    analytic: bool = True
    quadratic: bool = True

    @classmethod
    def zero(cls, dim: int) -> "ScalarField":
        return cls(value=lambda s, x: 0.0,
                   grad=lambda s, x: np.zeros(dim),
                   hess=lambda s, x: np.zeros((dim, dim)))

    @classmethod
    def from_value(cls, value: Callable[[float, np.ndarray], float]) -> "ScalarField":
        return cls(value=value, grad=lambda s, x: fd_gradient(value, s, x),
                   analytic=False)


@dataclass(frozen=True)
class ControlCost:
    """Convex-in-u running cost term with gradient and Hessian in u.

    ``quadratic`` marks costs whose Hessian is constant in u; the Hamiltonian
    maximizer exploits this with a closed-form stationary point.
    """

    value: Callable[[float, np.ndarray], float]
    grad: Callable[[float, np.ndarray], np.ndarray]
    hess: Callable[[float, np.ndarray], np.ndarray]
    quadratic: bool = True


@dataclass(frozen=True)
class BoundaryMap:
    """Endpoint constraint g(x) = 0 with Jacobian, g: R^n -> R^lg."""

    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    codim: int = field(default=0)

    @classmethod
    def affine(cls, matrix: np.ndarray, offset: np.ndarray) -> "BoundaryMap":
        """g(x) = matrix @ x + offset."""
        matrix = np.asarray(matrix, dtype=float)
        offset = np.asarray(offset, dtype=float)
        return cls(value=lambda x: matrix @ x + offset,
                   jacobian=lambda x: matrix,
                   codim=matrix.shape[0])
