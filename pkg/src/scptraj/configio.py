"""Declarative problem configuration: YAML key/value files to problem objects.

The built-in families (dubins, lqr, sphere) are constructible from a config
file; custom problems are code-only. A config also carries the outer-loop
settings and, for the car family, the final-time guess.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

from . import scp
from .errors import ConfigurationError
from .problems import (ObstacleSpec, OcpProblem, make_dubins, make_lqr,
                       make_sphere_rotation)


@dataclass(frozen=True)
class LoadedConfig:
    problem: OcpProblem
    scp_config: scp.ScpConfig
    tf_guess: float
    final_state: np.ndarray | None
    accelerate: bool
    raw: dict


def load_config(path: str) -> LoadedConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict) or "problem" not in raw:
        raise ConfigurationError("config must be a mapping with a 'problem' key")
    family = raw["problem"]
    section = raw.get(family, {})
    if family == "dubins":
        problem, tf_guess, final_state = _load_dubins(section)
    elif family == "lqr":
        problem, tf_guess, final_state = _load_lqr(section)
    elif family == "sphere":
        problem, tf_guess, final_state = _load_sphere(section)
    else:
        raise ConfigurationError(f"unknown problem family {family!r}")

    scp_raw = dict(raw.get("scp", {}))
    scp_config = scp.ScpConfig(
        delta0=float(scp_raw.get("delta0", 3.0)),
        shrink=float(scp_raw.get("shrink", 0.95)),
        conv_tol=float(scp_raw.get("conv_tol", 1e-3)),
        max_iterations=int(scp_raw.get("max_iterations", 60)),
        scheme=scp_raw.get("scheme", "trapezoidal"),
        node_count=int(scp_raw.get("node_count", 51)),
        state_bound=scp_raw.get("state_bound"),
        boundary_tol=float(scp_raw.get("boundary_tol", 1e-5)),
    )
    return LoadedConfig(problem=problem, scp_config=scp_config,
                        tf_guess=tf_guess, final_state=final_state,
                        accelerate=bool(raw.get("accelerate", False)), raw=raw)


def _load_dubins(section: dict):
    obstacles = tuple(
        ObstacleSpec(center=np.asarray(o["center"], dtype=float),
                     radius=float(o["radius"]))
        for o in section.get("obstacles", []))
    final_angle = section.get("final_angle")
    problem = make_dubins(
        v=float(section.get("v", 1.0)),
        k=float(section.get("curvature", 2.0)),
        u_bar=float(section.get("u_bar", 0.25)),
        obstacles=obstacles,
        omega=float(section.get("omega", 5000.0)),
        x0=np.asarray(section.get("x0", [0.0, 0.0, 0.0]), dtype=float),
        target_position=np.asarray(section["target"], dtype=float),
        final_angle=None if final_angle is None else float(final_angle),
        horizon_cap=float(section.get("horizon_cap", 50.0)),
        state_bound=float(section.get("state_bound", 100.0)))
    tf_guess = float(section.get("tf_guess", 5.0))
    theta_goal = float(final_angle) if final_angle is not None \
        else float(section.get("guess_final_angle", problem.initial_state[2]))
    final_state = np.array([section["target"][0], section["target"][1],
                            theta_goal])
    return problem, tf_guess, final_state


def _load_lqr(section: dict):
    problem = make_lqr(
        A=np.asarray(section["A"], dtype=float),
        B=np.asarray(section["B"], dtype=float),
        Q=np.asarray(section["Q"], dtype=float),
        R=np.asarray(section["R"], dtype=float),
        x0=np.asarray(section["x0"], dtype=float),
        xf=np.asarray(section["xf"], dtype=float),
        t_f=float(section["t_f"]),
        control_box=float(section.get("control_box", 50.0)),
        state_bound=float(section.get("state_bound", 1e3)))
    return problem, float(section["t_f"]), np.asarray(section["xf"], dtype=float)


def _load_sphere(section: dict):
    problem = make_sphere_rotation(
        x0=np.asarray(section["x0"], dtype=float),
        xf=np.asarray(section["xf"], dtype=float),
        axes=[np.asarray(a, dtype=float) for a in section["axes"]],
        t_f=float(section.get("t_f", 1.0)),
        control_box=float(section.get("control_box", 10.0)),
        state_bound=float(section.get("state_bound", 10.0)))
    return problem, float(section.get("t_f", 1.0)), \
        np.asarray(section["xf"], dtype=float)
