"""Randomized planar-car study: scenario sampling, batch runs, aggregation.

Scenarios draw start pose, goal, obstacles and a final-time guess from the
distributions used throughout the experiments; every draw flows from one
seeded generator so a scenario is a pure function of its seed. The study
runs each scenario under the requested endpoint modes (final heading free or
fixed) and methods (plain outer loop, shooting-accelerated) with shared
seeds so paired comparisons are valid, then writes per-record CSV, aggregate
JSON, and iteration histograms.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import pmp, scp, shooting
from .problems import ObstacleSpec, make_dubins
from .transcription import DiscreteTrajectory, evaluate_cost

OBSTACLE_RADIUS = 0.4
OBSTACLE_COUNT = 2
ENDPOINT_MARGIN = 8.0 * OBSTACLE_RADIUS
HIST_BINS = range(1, 21)


@dataclass(frozen=True)
class Scenario:
    """One randomized problem instance; a pure function of its seed."""

    seed: int
    x0: tuple[float, float, float]
    target_position: tuple[float, float]
    final_angle: float
    obstacles: tuple[tuple[float, float], ...]
    tf_guess: float

    def obstacle_specs(self) -> tuple[ObstacleSpec, ...]:
        return tuple(ObstacleSpec(center=np.array(c), radius=OBSTACLE_RADIUS)
                     for c in self.obstacles)


def _band_uniform(rng: np.random.Generator, a: float, b: float) -> float:
    """Sample the obstacle-center band between two endpoint coordinates.

    The band is [min+8*eps, max-8*eps] in affine form lo + (hi-lo)*U(0,1),
    which stays well-defined when the margins cross (the draw then lands in
    the reversed interval around the midpoint, keeping centers clear of both
    endpoints).
    """
    lo = min(a, b) + ENDPOINT_MARGIN
    hi = max(a, b) - ENDPOINT_MARGIN
    return lo + (hi - lo) * float(rng.uniform())


def sample_scenario(rng_seed) -> Scenario:
    """Draw one scenario; identical seeds give identical scenarios."""
    rng = np.random.default_rng(rng_seed)
    rx0 = float(rng.uniform(-1.0, 1.0))
    ry0 = float(rng.uniform(-1.0, 1.0))
    th0 = float(rng.uniform(-math.pi, math.pi))
    th_xy = float(rng.uniform(th0 - math.pi / 4.0, th0 + math.pi / 4.0))
    thf = float(rng.uniform(th0 - math.pi / 4.0, th0 + math.pi / 4.0))
    dist = 4.0 + float(rng.uniform(0.0, 3.0))
    rxf = rx0 + dist * math.cos(th_xy)
    ryf = ry0 + dist * math.sin(th_xy)
    obstacles = tuple(
        (_band_uniform(rng, rx0, rxf), _band_uniform(rng, ry0, ryf))
        for _ in range(OBSTACLE_COUNT))
    tf_guess = float(rng.uniform(4.0, 6.0))
    seed_repr = rng_seed if isinstance(rng_seed, int) else int(rng_seed[-1])
    return Scenario(seed=seed_repr, x0=(rx0, ry0, th0),
                    target_position=(rxf, ryf), final_angle=thf,
                    obstacles=obstacles, tf_guess=tf_guess)


@dataclass(frozen=True)
class StudyParams:
    """Everything a worker needs to rebuild and run one scenario."""

    speed: float = 1.0
    curvature: float = 2.0
    u_bar: float = 0.25
    omega: float = 5000.0
    node_count: int = 51
    delta0: float = 3.0
    shrink: float = 0.95
    conv_tol: float = 1e-3
    max_iterations: int = 60
    state_bound: float = 100.0
    horizon_cap: float = 50.0
    integrator_steps: int = 200
    shooting_tol: float = 1e-10
    shooting_max_iter: int = 50
    pmp_refinement: int = 4


def _scenario_problem(scenario: Scenario, theta_mode: str, params: StudyParams):
    final_angle = scenario.final_angle if theta_mode == "fixed" else None
    return make_dubins(
        v=params.speed, k=params.curvature, u_bar=params.u_bar,
        obstacles=scenario.obstacle_specs(), omega=params.omega,
        x0=np.array(scenario.x0),
        target_position=np.array(scenario.target_position),
        final_angle=final_angle,
        horizon_cap=params.horizon_cap,
        state_bound=params.state_bound)


def _scenario_guess(scenario: Scenario, problem, params: StudyParams):
    final_state = np.array([scenario.target_position[0],
                            scenario.target_position[1],
                            scenario.final_angle])
    return scp.straight_line_guess(problem, scenario.tf_guess,
                                   params.node_count, final_state=final_state)


def _record_pmp(problem, extremal, params: StudyParams, record: dict) -> None:
    res = pmp.pmp_residual(problem, extremal,
                           grid_refinement=params.pmp_refinement)
    record["adjoint_defect"] = res.adjoint_defect
    record["maximality_gap"] = res.maximality_gap
    record["transversality_endpoint"] = res.transversality_endpoint
    record["hamiltonian_final"] = res.transversality_time
    g_end = np.asarray(problem.boundary.value(extremal.states[-1]), dtype=float)
    record["extremal_boundary_residual"] = float(np.max(np.abs(g_end)))


def run_single(scenario: Scenario, theta_mode: str, method: str,
               params: StudyParams) -> dict:
    """Run one (scenario, endpoint mode, method) combination and summarize it."""
    problem = _scenario_problem(scenario, theta_mode, params)
    guess = _scenario_guess(scenario, problem, params)
    config = scp.ScpConfig(delta0=params.delta0, shrink=params.shrink,
                           conv_tol=params.conv_tol,
                           max_iterations=params.max_iterations,
                           node_count=params.node_count,
                           state_bound=params.state_bound)
    shoot_settings = shooting.ShootingSettings(tol=params.shooting_tol,
                                               max_iter=params.shooting_max_iter)
    record: dict = {
        "seed": scenario.seed, "theta_mode": theta_mode, "method": method,
        "adjoint_defect": float("nan"), "maximality_gap": float("nan"),
        "transversality_endpoint": float("nan"),
        "hamiltonian_final": float("nan"),
        "extremal_boundary_residual": float("nan"),
        "shooting_success_iteration": -1,
        "shooting_fail_time_mean": float("nan"),
    }

    start = time.perf_counter()
    if method == "accelerated":
        history, shoot_result, status, attempts = shooting.run_accelerated_scp(
            problem, guess, config, shoot_settings,
            integrator_steps=params.integrator_steps)
    else:
        history, _, status = scp.run_scp(problem, guess, config)
        shoot_result, attempts = None, []
    scp_time = time.perf_counter() - start

    final = history.iterates[-1]
    record.update({
        "status": status,
        "converged": status == "converged",
        "iterations": history.iteration_count,
        "strict_final": bool(history.strict_flags[-1]) if history.strict_flags else False,
        "cost": evaluate_cost(problem, final),
        "tf": final.final_time,
        "boundary_residual": history.boundary_residuals[-1]
        if history.boundary_residuals else float("nan"),
        "defect": history.defects[-1] if history.defects else float("nan"),
        "scp_time": scp_time,
    })

    fail_times = [a.wall_time for a in attempts if not a.converged]
    if fail_times:
        record["shooting_fail_time_mean"] = float(np.mean(fail_times))
    if attempts and attempts[-1].converged:
        record["shooting_success_iteration"] = attempts[-1].iteration

    # Certify the output with an extremal: the accelerated run already holds
    # one; a converged plain run reconstructs it from the final multiplier.
    extremal = shoot_result.trajectory if shoot_result is not None else None
    if extremal is None and status == "converged":
        gamma0 = next((g for g in reversed(history.duals) if g is not None), None)
        if gamma0 is not None:
            sp_def = shooting.shooting_problem_from(problem, gamma0,
                                                    final.final_time,
                                                    params.integrator_steps)
            post = shooting.solve_shooting(sp_def, shoot_settings)
            if post.converged:
                extremal = post.trajectory
    if extremal is not None:
        _record_pmp(problem, extremal, params, record)
        record["extremal_cost"] = float(np.trapz(
            [problem.running_cost(float(t), x, u) for t, x, u in
             zip(extremal.times, extremal.states, extremal.controls)],
            extremal.times))
        record["extremal_tf"] = extremal.final_time
    return record


def _worker(task) -> list[dict]:
    master_seed, index, theta_modes, methods, params = task
    scenario = sample_scenario([master_seed, index])
    out = []
    for mode in theta_modes:
        for method in methods:
            out.append(run_single(scenario, mode, method, params))
    return out


@dataclass
class StudySummary:
    """Per-record data plus aggregates recomputable from the records."""

    records: list[dict]
    aggregates: dict = field(default_factory=dict)
    params: StudyParams = field(default_factory=StudyParams)
    master_seed: int = 0

    def recompute(self) -> dict:
        groups: dict = {}
        for rec in self.records:
            key = f"{rec['theta_mode']}_{rec['method']}"
            groups.setdefault(key, []).append(rec)
        out = {}
        for key, recs in sorted(groups.items()):
            iters = [r["iterations"] for r in recs if r["converged"]]
            fails = [r["shooting_fail_time_mean"] for r in recs
                     if not math.isnan(r["shooting_fail_time_mean"])]
            out[key] = {
                "count": len(recs),
                "converged": sum(r["converged"] for r in recs),
                "convergence_rate": sum(r["converged"] for r in recs) / len(recs),
                "mean_iterations": float(np.mean(iters)) if iters else float("nan"),
                "median_iterations": float(np.median(iters)) if iters else float("nan"),
                "strict_rate": (sum(r["strict_final"] for r in recs if r["converged"])
                                / max(1, sum(r["converged"] for r in recs))),
                "mean_scp_time": float(np.mean([r["scp_time"] for r in recs])),
                "mean_shoot_fail_time": float(np.mean(fails)) if fails else float("nan"),
                "histogram": {str(b): sum(1 for r in recs
                                          if r["converged"] and r["iterations"] == b)
                              for b in HIST_BINS},
            }
        return out

    def verify(self) -> bool:
        return self.aggregates == self.recompute()


def run_study(n_scenarios: int,
              theta_modes: Sequence[str] = ("free", "fixed"),
              methods: Sequence[str] = ("plain", "accelerated"),
              params: StudyParams | None = None,
              master_seed: int = 0,
              out_dir: str | None = None,
              jobs: int = 1,
              save_trajectories: bool = False) -> StudySummary:
    """Execute the randomized suite; scenario failures never abort the run."""
    if n_scenarios < 1:
        raise ValueError("at least one scenario is required")
    params = params or StudyParams()
    tasks = [(master_seed, i, tuple(theta_modes), tuple(methods), params)
             for i in range(n_scenarios)]
    records: list[dict] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for recs in pool.map(_worker, tasks):
                records.extend(recs)
    else:
        for task in tasks:
            records.extend(_worker(task))

    summary = StudySummary(records=records, params=params,
                           master_seed=master_seed)
    summary.aggregates = summary.recompute()
    if out_dir is not None:
        write_outputs(summary, out_dir, theta_modes, methods,
                      save_trajectories=save_trajectories)
    return summary


RECORD_COLUMNS = [
    "seed", "theta_mode", "method", "status", "converged", "iterations",
    "strict_final", "cost", "tf", "boundary_residual", "defect",
    "adjoint_defect", "maximality_gap", "transversality_endpoint",
    "hamiltonian_final", "extremal_boundary_residual",
    "shooting_success_iteration", "shooting_fail_time_mean", "scp_time",
]


def write_outputs(summary: StudySummary, out_dir: str,
                  theta_modes: Iterable[str], methods: Iterable[str],
                  save_trajectories: bool = False) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "records.csv"), "w") as fh:
        fh.write(",".join(RECORD_COLUMNS) + "\n")
        for rec in summary.records:
            fh.write(",".join(_fmt(rec.get(col)) for col in RECORD_COLUMNS) + "\n")
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump({"master_seed": summary.master_seed,
                   "params": asdict(summary.params),
                   "aggregates": summary.aggregates}, fh, indent=2)
    keys = [f"{mode}_{method}" for mode in theta_modes for method in methods]
    with open(os.path.join(out_dir, "hist_iters.csv"), "w") as fh:
        fh.write("iterations," + ",".join(keys) + "\n")
        for b in HIST_BINS:
            row = [str(b)]
            for key in keys:
                agg = summary.aggregates.get(key, {})
                row.append(str(agg.get("histogram", {}).get(str(b), 0)))
            fh.write(",".join(row) + "\n")
    if save_trajectories:
        _write_trajectories(summary, out_dir)


def _write_trajectories(summary: StudySummary, out_dir: str) -> None:
    params = summary.params
    seen = set()
    for rec in summary.records:
        seed = rec["seed"]
        if seed in seen or not rec["converged"]:
            continue
        seen.add(seed)
        # Scenario seeds are the per-study counter, so they rebuild directly.
        scenario = sample_scenario([summary.master_seed, seed])
        problem = _scenario_problem(scenario, rec["theta_mode"], params)
        guess = _scenario_guess(scenario, problem, params)
        config = scp.ScpConfig(delta0=params.delta0, shrink=params.shrink,
                               conv_tol=params.conv_tol,
                               max_iterations=params.max_iterations,
                               node_count=params.node_count,
                               state_bound=params.state_bound)
        history, final, status = scp.run_scp(problem, guess, config)
        if status != "converged":
            continue
        write_trajectory_csv(os.path.join(out_dir, f"traj_{seed}.csv"), final)


def write_trajectory_csv(path: str, traj: DiscreteTrajectory,
                         costates: np.ndarray | None = None) -> None:
    """Columns: normalized time, physical time, r_x, r_y, theta, u (+ costates)."""
    header = "stilde,t,r_x,r_y,theta,u"
    if costates is not None:
        header += ",p_x,p_y,p_theta"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        nodes = traj.grid.nodes
        for j in range(traj.grid.node_count):
            row = [nodes[j], nodes[j] * traj.final_time, traj.states[j, 0],
                   traj.states[j, 1], traj.states[j, 2], traj.controls[j, 0]]
            if costates is not None:
                row.extend(costates[j])
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float) or isinstance(value, np.floating):
        return repr(float(value))
    return str(value)
