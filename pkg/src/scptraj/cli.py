"""Command line front end: batch studies, single solves, residual checks."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import pmp, scp, shooting, study
from .configio import load_config
from .manifold import geometric_extremal_residual
from .transcription import DiscreteTrajectory, TimeGrid, evaluate_cost, true_defects


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scptraj",
        description="Sequential convex trajectory optimization with "
                    "shooting acceleration and optimality residual checks")
    sub = parser.add_subparsers(dest="command", required=True)

    p_study = sub.add_parser("study", help="run the randomized planar-car suite")
    p_study.add_argument("--n", type=int, default=100, help="number of scenarios")
    p_study.add_argument("--theta-mode", choices=["free", "fixed", "both"],
                         default="both")
    p_study.add_argument("--accelerate", action="store_true",
                         help="run only the shooting-accelerated method")
    p_study.add_argument("--plain-only", action="store_true",
                         help="run only the plain method")
    p_study.add_argument("--seed", type=int, default=0)
    p_study.add_argument("--out-dir", default="study_out")
    p_study.add_argument("--jobs", type=int, default=max(1, os.cpu_count() or 1))
    p_study.add_argument("--save-trajs", action="store_true")

    p_solve = sub.add_parser("solve", help="solve a single problem config")
    p_solve.add_argument("config", help="YAML problem configuration")
    p_solve.add_argument("--out", default="trajectory.csv")
    p_solve.add_argument("--report", default=None,
                         help="write the residual report JSON here")

    p_check = sub.add_parser("check", help="score a trajectory CSV against "
                                           "the optimality conditions")
    p_check.add_argument("config", help="YAML problem configuration")
    p_check.add_argument("trajectory", help="trajectory CSV from 'solve'")

    args = parser.parse_args(argv)
    if args.command == "study":
        return _cmd_study(args)
    if args.command == "solve":
        return _cmd_solve(args)
    return _cmd_check(args)


def _cmd_study(args) -> int:
    modes = ("free", "fixed") if args.theta_mode == "both" else (args.theta_mode,)
    if args.accelerate and args.plain_only:
        print("choose at most one of --accelerate/--plain-only", file=sys.stderr)
        return 2
    methods = ("accelerated",) if args.accelerate else \
        ("plain",) if args.plain_only else ("plain", "accelerated")
    summary = study.run_study(args.n, theta_modes=modes, methods=methods,
                              master_seed=args.seed, out_dir=args.out_dir,
                              jobs=args.jobs,
                              save_trajectories=args.save_trajs)
    for key, agg in summary.aggregates.items():
        print(f"{key}: converged {agg['converged']}/{agg['count']}, "
              f"mean iterations {agg['mean_iterations']:.2f}, "
              f"strict at convergence {agg['strict_rate']:.0%}")
    print(f"outputs written to {args.out_dir}")
    return 0


def _cmd_solve(args) -> int:
    loaded = load_config(args.config)
    problem = loaded.problem
    guess = scp.straight_line_guess(problem, loaded.tf_guess,
                                    loaded.scp_config.node_count,
                                    final_state=loaded.final_state)
    shoot_settings = shooting.ShootingSettings()
    if loaded.accelerate:
        history, shoot_result, status, _ = shooting.run_accelerated_scp(
            problem, guess, loaded.scp_config, shoot_settings)
    else:
        history, _, status = scp.run_scp(problem, guess, loaded.scp_config)
        shoot_result = None

    final = history.iterates[-1]
    print(f"status: {status} after {history.iteration_count} iterations, "
          f"cost {evaluate_cost(problem, final):.6g}, tf {final.final_time:.6g}")

    extremal = shoot_result.trajectory if shoot_result else None
    if extremal is None and status == "converged":
        gamma0 = next((g for g in reversed(history.duals) if g is not None), None)
        if gamma0 is not None and problem.final_state_targets is not None:
            sp_def = shooting.shooting_problem_from(problem, gamma0,
                                                    final.final_time)
            post = shooting.solve_shooting(sp_def, shoot_settings)
            if post.converged:
                extremal = post.trajectory

    if extremal is not None:
        traj = _extremal_as_trajectory(extremal)
        study.write_trajectory_csv(args.out, traj, costates=extremal.costates)
    else:
        study.write_trajectory_csv(args.out, final)
    print(f"trajectory written to {args.out}")

    report = {"status": status, "iterations": history.iteration_count,
              "cost": evaluate_cost(problem, final), "tf": final.final_time,
              "boundary_residual": history.boundary_residuals[-1]
              if history.boundary_residuals else None}
    if extremal is not None:
        res = pmp.pmp_residual(problem, extremal)
        report["pmp"] = _residual_dict(res)
        if problem.manifold is not None:
            geo = geometric_extremal_residual(problem, problem.manifold, extremal)
            report["geometric"] = {
                "manifold_drift": geo.manifold_drift,
                "pairing_residual": geo.pairing_residual,
                "transversality_residual": geo.transversality_residual,
                "nontriviality_margin": geo.nontriviality_margin,
                "maximality_gap": geo.maximality_gap,
            }
    text = json.dumps(report, indent=2)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0 if status == "converged" else 1


def _cmd_check(args) -> int:
    loaded = load_config(args.config)
    problem = loaded.problem
    rows = []
    with open(args.trajectory) as fh:
        reader = csv.DictReader(fh)
        has_costates = "p_x" in (reader.fieldnames or [])
        for row in reader:
            rows.append(row)
    if not rows:
        print("empty trajectory file", file=sys.stderr)
        return 2
    times = np.array([float(r["t"]) for r in rows])
    states = np.array([[float(r["r_x"]), float(r["r_y"]), float(r["theta"])]
                       for r in rows])
    controls = np.array([[float(r["u"])] for r in rows])
    tf = float(times[-1])
    traj = DiscreteTrajectory(grid=TimeGrid(len(rows)), states=states,
                              controls=controls, final_time=tf)

    defects = true_defects(problem, traj)
    g_end = np.asarray(problem.boundary.value(states[-1]), dtype=float)
    report = {
        "dynamics_defect": float(np.max(np.abs(defects))),
        "boundary_residual": float(np.max(np.abs(g_end))),
        "cost": evaluate_cost(problem, traj),
        "tf": tf,
    }
    if has_costates:
        costates = np.array([[float(r["p_x"]), float(r["p_y"]),
                              float(r["p_theta"])] for r in rows])
        extremal = pmp.Extremal(final_time=tf, times=times, states=states,
                                costates=costates, controls=controls)
        report["pmp"] = _residual_dict(pmp.pmp_residual(problem, extremal))
        if problem.manifold is not None:
            geo = geometric_extremal_residual(problem, problem.manifold, extremal)
            report["geometric"] = {
                "manifold_drift": geo.manifold_drift,
                "pairing_residual": geo.pairing_residual,
                "transversality_residual": geo.transversality_residual,
                "nontriviality_margin": geo.nontriviality_margin,
                "maximality_gap": geo.maximality_gap,
            }
    else:
        report["pmp"] = "no costate columns in the file; run 'solve' to produce them"
    print(json.dumps(report, indent=2))
    return 0


def _residual_dict(res: pmp.PmpResidual) -> dict:
    return {
        "adjoint_defect": res.adjoint_defect,
        "maximality_gap": res.maximality_gap,
        "transversality_endpoint": res.transversality_endpoint,
        "transversality_time": res.transversality_time,
        "nontriviality_margin": res.nontriviality_margin,
    }


def _extremal_as_trajectory(extremal: pmp.Extremal) -> DiscreteTrajectory:
    return DiscreteTrajectory(grid=TimeGrid(extremal.times.size),
                              states=extremal.states,
                              controls=extremal.controls,
                              final_time=extremal.final_time)


if __name__ == "__main__":
    raise SystemExit(main())
