"""Operator-splitting solver for the transcribed convex subproblems.

Solves  min 0.5 z'Pz + q'z  subject to  A z = b,  lb <= z <= ub,  and one
quadrature-weighted L2 ball on a subset of variables. The splitting solves an
equality-constrained proximal step by a cached sparse KKT factorization and
projects onto the box-times-ball set in closed form (the reason the trust
region is kept as a single ball: its projection is exact and cheap).

Dual variables are reported with the stationarity convention

    P z + q + A' y + nu = 0,

where nu collects the box multipliers and the ball multiplier mu >= 0 via
nu_ball = 2 mu w (z - c). A polish step re-solves the KKT system on the
identified active set to sharpen the duals, which downstream code feeds to a
root finder as a warm start.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError
from .transcription import ConvexSubproblem

Status = Literal["optimal", "max_iter", "infeasible"]

# Multiplier of the initial-condition rows mapped to the initial costate;
# pinned by the linear-quadratic calibration test (p0 = -1 normalization).
INITIAL_COSTATE_SIGN = 1.0


@dataclass(frozen=True)
class QpData:
    """Standalone problem data for the solver (adapter for subproblems)."""

    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    ball_idx: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    ball_w: np.ndarray = field(default_factory=lambda: np.empty(0))
    ball_center: np.ndarray = field(default_factory=lambda: np.empty(0))
    ball_radius: float = 0.0
    constant: float = 0.0

    def __post_init__(self):
        if self.ball_idx.size:
            finite = np.isfinite(self.lower[self.ball_idx]) | \
                np.isfinite(self.upper[self.ball_idx])
            if np.any(finite):
                raise ConfigurationError(
                    "ball variables must not carry box bounds (projection "
                    "onto the product set would not be exact)")


@dataclass(frozen=True)
class SolverSettings:
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    max_iter: int = 20000
    rho: float = 1.0
    sigma: float = 1e-6
    alpha: float = 1.6
    adapt_interval: int = 50
    polish: bool = True


@dataclass(frozen=True)
class SolverSolution:
    """Primal/dual outcome of one solve.

    ``duals_box`` is a full-length vector, nonzero only at active box
    entries; ``duals_ball`` is the scalar ball multiplier. ``residuals`` is
    (primal, stationarity) in the sup norm.
    """

    primal: np.ndarray
    duals_equality: np.ndarray
    duals_box: np.ndarray
    duals_ball: float
    objective: float
    status: Status
    iterations: int
    residuals: tuple[float, float]


def as_qp_data(subproblem: Union[ConvexSubproblem, QpData]) -> QpData:
    if isinstance(subproblem, QpData):
        return subproblem
    return QpData(
        P=subproblem.quadratic_cost.tocsc(),
        q=subproblem.linear_cost,
        A=subproblem.equality.tocsc(),
        b=subproblem.equality_rhs,
        lower=subproblem.lower,
        upper=subproblem.upper,
        ball_idx=subproblem.ball_idx,
        ball_w=subproblem.ball_w,
        ball_center=subproblem.ball_center,
        ball_radius=subproblem.ball_radius,
        constant=subproblem.cost_constant,
    )


def _consensus_maps(data: QpData) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal map M and offset m with consensus variable w ~ M z + m.

    Ball entries are scaled by sqrt(weight) and centered, which turns the
    weighted ball into a Euclidean one so its projection (radial scaling)
    is exact; box entries pass through unchanged.
    """
    scale = np.ones(data.q.size)
    offset = np.zeros(data.q.size)
    if data.ball_idx.size:
        root = np.sqrt(data.ball_w)
        scale[data.ball_idx] = root
        offset[data.ball_idx] = -root * data.ball_center
    return scale, offset


def _project_consensus(data: QpData, scale: np.ndarray, offset: np.ndarray,
                       v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a consensus vector onto box times ball."""
    out = np.clip(v, scale * data.lower + offset, scale * data.upper + offset)
    if data.ball_idx.size:
        ball = out[data.ball_idx]
        val = float(ball @ ball)
        if val > data.ball_radius:
            out[data.ball_idx] = ball * np.sqrt(data.ball_radius / val)
    return out


def _ball_value(data: QpData, z: np.ndarray) -> float:
    if not data.ball_idx.size:
        return 0.0
    d = z[data.ball_idx] - data.ball_center
    return float(np.sum(data.ball_w * d * d))


def _box_clip(data: QpData, z: np.ndarray) -> np.ndarray:
    return np.clip(z, data.lower, data.upper)


def _factor(data: QpData, scale: np.ndarray, rho: float, sigma: float):
    nz = data.q.size
    ne = data.b.size
    diag = rho * scale * scale + sigma
    if ne == 0:
        kkt = (data.P + sp.diags(diag)).tocsc()
    else:
        kkt = sp.bmat(
            [[data.P + sp.diags(diag), data.A.T],
             [data.A, -1e-10 * sp.eye(ne)]], format="csc")
    return spla.splu(kkt)


def _support_of_set(data: QpData, nu: np.ndarray) -> float:
    """Support function of the box-times-ball set at nu (+inf if unbounded)."""
    total = 0.0
    ball_mask = np.zeros(nu.size, dtype=bool)
    ball_mask[data.ball_idx] = True
    for i in range(nu.size):
        if ball_mask[i] or nu[i] == 0.0:
            continue
        bound = data.upper[i] if nu[i] > 0.0 else data.lower[i]
        if not np.isfinite(bound):
            return np.inf
        total += nu[i] * bound
    if data.ball_idx.size:
        nub = nu[data.ball_idx]
        total += float(nub @ data.ball_center)
        total += np.sqrt(data.ball_radius) * float(
            np.sqrt(np.sum(nub * nub / data.ball_w)))
    return total


def solve(subproblem: Union[ConvexSubproblem, QpData],
          settings: SolverSettings | None = None,
          warm_start: SolverSolution | None = None) -> SolverSolution:
    """Solve the subproblem to the requested absolute KKT tolerances.

    Returns status "optimal" with both residuals at or below ``eps_abs``
    (possibly after polishing), "max_iter" with the best iterate otherwise,
    or "infeasible" when a divergence certificate is detected.
    """
    settings = settings or SolverSettings()
    data = as_qp_data(subproblem)
    nz = data.q.size
    ne = data.b.size
    eps = settings.eps_abs
    rho = settings.rho
    sigma = settings.sigma
    alpha = settings.alpha
    cmap, coff = _consensus_maps(data)

    if warm_start is not None and warm_start.primal.size == nz:
        z = warm_start.primal.copy()
        y = warm_start.duals_equality.copy() if ne else np.empty(0)
        nu = warm_start.duals_box.copy()
        if data.ball_idx.size and warm_start.duals_ball:
            d = z[data.ball_idx] - data.ball_center
            nu[data.ball_idx] += 2.0 * warm_start.duals_ball * data.ball_w * d
        w = _project_consensus(data, cmap, coff, cmap * z + coff)
        ud = nu / (rho * cmap)
    else:
        z = np.zeros(nz)
        y = np.zeros(ne)
        w = _project_consensus(data, cmap, coff, cmap * z + coff)
        ud = np.zeros(nz)

    lu = _factor(data, cmap, rho, sigma)
    rhs = np.empty(nz + ne)
    At = data.A.T.tocsc() if ne else None

    best = None
    best_score = np.inf
    cert_y, cert_nu = y.copy(), rho * cmap * ud
    status: Status = "max_iter"
    iterations = settings.max_iter
    nu = rho * cmap * ud
    r_prim = r_stat = np.inf

    for it in range(1, settings.max_iter + 1):
        rhs[:nz] = sigma * z - data.q + rho * cmap * (w - ud - coff)
        if ne:
            rhs[nz:] = data.b
        sol = lu.solve(rhs)
        z = sol[:nz]
        if ne:
            y = sol[nz:]
        cz = cmap * z + coff
        cz_relax = alpha * cz + (1.0 - alpha) * w
        w = _project_consensus(data, cmap, coff, cz_relax + ud)
        ud = ud + cz_relax - w

        nu = rho * cmap * ud
        r_prim = float(np.max(np.abs(cz - w))) if nz else 0.0
        if ne:
            r_prim = max(r_prim, float(np.max(np.abs(data.A @ z - data.b))))
        grad = data.P @ z + data.q + nu
        if ne:
            grad = grad + At @ y
        r_stat = float(np.max(np.abs(grad)))

        score = max(r_prim, r_stat)
        if score < best_score:
            best_score = score
            best = (z.copy(), y.copy(), nu.copy())

        if r_prim <= eps and r_stat <= eps:
            status = "optimal"
            iterations = it
            break

        span = max(1.0, float(np.max(np.abs(z))), float(np.max(np.abs(w))))
        near = max(100.0 * eps, 1e-5)
        if settings.polish and it % 25 == 0 and r_prim <= near * span \
                and r_stat <= near * span:
            polished = _polish(data, z, _box_clip(data, z), nu, y, eps)
            if polished is not None:
                z, y, nu, r_prim, r_stat = polished
                status = "optimal"
                iterations = it
                break

        if it % settings.adapt_interval == 0:
            # Infeasibility certificate from the drift of the dual variables.
            dy = y - cert_y
            dnu = nu - cert_nu
            cert_y, cert_nu = y.copy(), nu.copy()
            dual_norm = max(float(np.max(np.abs(dy))) if ne else 0.0,
                            float(np.max(np.abs(dnu))) if nz else 0.0)
            if dual_norm > 1e-7:
                drift = dnu if not ne else (At @ dy + dnu)
                if float(np.max(np.abs(drift))) <= 1e-6 * dual_norm:
                    gain = (float(data.b @ dy) if ne else 0.0) \
                        + _support_of_set(data, dnu)
                    if gain < -1e-8 * dual_norm:
                        status = "infeasible"
                        iterations = it
                        break
            # Residual balancing for the step size.
            if r_prim > 10.0 * r_stat or r_stat > 10.0 * r_prim:
                new_rho = float(np.clip(rho * np.sqrt((r_prim + 1e-16)
                                                      / (r_stat + 1e-16)),
                                        1e-6, 1e6))
                if new_rho / rho > 5.0 or rho / new_rho > 5.0:
                    ud *= rho / new_rho
                    rho = new_rho
                    lu = _factor(data, cmap, rho, sigma)

    if status == "max_iter" and best is not None:
        z, y, nu = best
        if settings.polish:
            polished = _polish(data, z, _box_clip(data, z), nu, y, eps)
            if polished is not None:
                z, y, nu, r_prim, r_stat = polished
                status = "optimal"
        if status == "max_iter":
            grad = data.P @ z + data.q + nu
            if ne:
                grad = grad + At @ y
            r_stat = float(np.max(np.abs(grad)))
            cz = cmap * z + coff
            r_prim = float(np.max(np.abs(
                cz - _project_consensus(data, cmap, coff, cz))))
            if ne:
                r_prim = max(r_prim, float(np.max(np.abs(data.A @ z - data.b))))

    duals_box, mu = _split_multipliers(data, z, nu)
    objective = float(0.5 * z @ (data.P @ z) + data.q @ z + data.constant)
    if status == "infeasible":
        return SolverSolution(primal=z, duals_equality=y, duals_box=duals_box,
                              duals_ball=mu, objective=objective, status=status,
                              iterations=iterations, residuals=(np.inf, np.inf))
    return SolverSolution(primal=z, duals_equality=y, duals_box=duals_box,
                          duals_ball=mu, objective=objective, status=status,
                          iterations=iterations, residuals=(r_prim, r_stat))


def _split_multipliers(data: QpData, z: np.ndarray,
                       nu: np.ndarray) -> tuple[np.ndarray, float]:
    """Split nu into the box part and the scalar ball multiplier."""
    duals_box = nu.copy()
    mu = 0.0
    if data.ball_idx.size:
        d = z[data.ball_idx] - data.ball_center
        grad = 2.0 * data.ball_w * d
        gnorm = float(grad @ grad)
        if gnorm > 1e-16:
            mu = max(0.0, float(nu[data.ball_idx] @ grad) / gnorm)
        # The leftover on ball entries (solver tolerance noise) stays in the
        # box slot so nu reconstructs exactly for warm starts.
        duals_box[data.ball_idx] -= mu * grad
    return duals_box, mu


def _polish(data: QpData, z: np.ndarray, w: np.ndarray, nu: np.ndarray,
            y: np.ndarray, eps: float):
    """Re-solve the KKT system on the identified active set.

    Returns (z, y, nu, r_prim, r_stat) when the polished point is feasible
    and meets the tolerance, else None. The active set is refined
    iteratively: bounds violated at the polished point are added, and
    constraints whose multiplier comes out with the wrong sign are dropped.
    An active ball is relinearized between solves (Newton refinement), and
    a tiny proximal term anchored at the splitting iterate resolves
    cost-flat directions without biasing the reported residuals.
    """
    nz = data.q.size
    ne = data.b.size
    span = max(1.0, float(np.max(np.abs(w))) if nz else 1.0)
    atol = 1e-6 * span
    prox = 1e-10
    anchor = z
    lower_active = set(np.where(w - data.lower <= atol)[0].tolist())
    upper_active = set(np.where(data.upper - w <= atol)[0].tolist())
    ball_active = bool(data.ball_idx.size) and \
        _ball_value(data, w) >= data.ball_radius * (1.0 - 1e-7)
    mu_est = _split_multipliers(data, z, nu)[1] if ball_active else 0.0

    z_new = z.copy()
    for _attempt in range(10):
        rows = [("lo", i) for i in sorted(lower_active)] \
            + [("hi", i) for i in sorted(upper_active)]
        total = ne + len(rows) + (1 if ball_active else 0)
        if total == 0:
            try:
                z_new = spla.spsolve(data.P + prox * sp.eye(nz),
                                     -data.q + prox * anchor)
            except RuntimeError:
                return None
            lam = np.empty(0)
        else:
            lam = None
            for _newton in range(6 if ball_active else 1):
                g_rows, g_cols, g_vals = [], [], []
                rhs2 = np.zeros(total)
                if ne:
                    acoo = data.A.tocoo()
                    g_rows.extend(acoo.row.tolist())
                    g_cols.extend(acoo.col.tolist())
                    g_vals.extend(acoo.data.tolist())
                    rhs2[:ne] = data.b
                for r, (kind, i) in enumerate(rows):
                    g_rows.append(ne + r)
                    g_cols.append(int(i))
                    g_vals.append(1.0)
                    rhs2[ne + r] = data.lower[i] if kind == "lo" else data.upper[i]
                rhs_top = -data.q + prox * anchor
                hess = data.P + prox * sp.eye(nz)
                if ball_active:
                    d = z_new[data.ball_idx] - data.ball_center
                    grad = 2.0 * data.ball_w * d
                    r = ne + len(rows)
                    g_rows.extend([r] * data.ball_idx.size)
                    g_cols.extend(data.ball_idx.tolist())
                    g_vals.extend(grad.tolist())
                    rhs2[r] = float(grad @ z_new[data.ball_idx]) \
                        + data.ball_radius - _ball_value(data, z_new)
                    # Lagrangian curvature of the ball makes this a true
                    # Newton step on the KKT system (quadratic convergence).
                    curv = np.zeros(nz)
                    curv[data.ball_idx] = 2.0 * max(mu_est, 0.0) * data.ball_w
                    hess = hess + sp.diags(curv)
                    rhs_top = rhs_top.copy()
                    rhs_top[data.ball_idx] += 2.0 * max(mu_est, 0.0) \
                        * data.ball_w * data.ball_center
                G = sp.csc_matrix((g_vals, (g_rows, g_cols)), shape=(total, nz))
                kkt = sp.bmat([[hess, G.T],
                               [G, -1e-12 * sp.eye(total)]], format="csc")
                try:
                    lu = spla.splu(kkt)
                except RuntimeError:
                    return None
                sol = lu.solve(np.concatenate([rhs_top, rhs2]))
                if not np.all(np.isfinite(sol)):
                    return None
                z_new = sol[:nz]
                lam = sol[nz:]
                if not ball_active:
                    break
                prev_mu = mu_est
                mu_est = float(lam[-1])
                if abs(_ball_value(data, z_new) - data.ball_radius) < 1e-14 \
                        and abs(mu_est - prev_mu) < 1e-12 * max(1.0, abs(mu_est)):
                    break

        y_new = lam[:ne] if ne else np.empty(0)
        nu_new = np.zeros(nz)
        changed = False
        for r, (kind, i) in enumerate(rows):
            mult = lam[ne + r]
            if kind == "lo":
                if mult > 1e-9:
                    lower_active.discard(i)
                    changed = True
                else:
                    nu_new[i] += mult
            else:
                if mult < -1e-9:
                    upper_active.discard(i)
                    changed = True
                else:
                    nu_new[i] += mult
        mu_new = 0.0
        if ball_active:
            mu_new = float(lam[-1])
            if mu_new < -1e-9:
                ball_active = False
                changed = True
                mu_new = 0.0
            else:
                d = z_new[data.ball_idx] - data.ball_center
                nu_new[data.ball_idx] += 2.0 * mu_new * data.ball_w * d

        # Bounds the polished point walked through become active rows.
        ftol = 1e-11 * span
        viol_lo = np.where(data.lower - z_new > ftol)[0]
        viol_hi = np.where(z_new - data.upper > ftol)[0]
        for i in viol_lo:
            if i not in lower_active:
                lower_active.add(int(i))
                changed = True
        for i in viol_hi:
            if i not in upper_active:
                upper_active.add(int(i))
                changed = True
        if not ball_active and data.ball_idx.size and \
                _ball_value(data, z_new) > data.ball_radius * (1.0 + 1e-11):
            ball_active = True
            changed = True
        if changed:
            continue

        r_prim = float(np.max(np.abs(data.A @ z_new - data.b))) if ne else 0.0
        r_prim = max(r_prim,
                     float(np.max(data.lower - z_new, initial=0.0)),
                     float(np.max(z_new - data.upper, initial=0.0)))
        if data.ball_idx.size:
            r_prim = max(r_prim, _ball_value(data, z_new) - data.ball_radius)
        grad = data.P @ z_new + data.q + nu_new
        if ne:
            grad = grad + data.A.T @ y_new
        r_stat = float(np.max(np.abs(grad)))
        if r_prim <= eps and r_stat <= eps:
            return z_new, y_new, nu_new, r_prim, r_stat
        return None
    return None


def extract_initial_costate(solution: SolverSolution,
                            subproblem: ConvexSubproblem) -> np.ndarray:
    """Multiplier slice of the rows pinning x(0), mapped to a costate estimate.

    The returned vector approximates the initial costate of the extremal
    associated with the subproblem under the normalization p0 = -1; the sign
    convention is pinned by the linear-quadratic calibration test.
    """
    if solution.status != "optimal":
        raise ValueError("initial-costate extraction requires an optimal solution")
    return INITIAL_COSTATE_SIGN * solution.duals_equality[subproblem.initial_rows].copy()
