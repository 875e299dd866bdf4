"""Command-line driver: ``plan``, ``bench`` and ``track``.

Each subcommand reads one YAML file, applies ``--section.key=value``
overrides and rejects any key it does not know. ``--help`` lists every key
with its default. Exit codes: 0 success, 2 optimizer did not converge,
1 error.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import bench as bench_mod
from . import tracksim
from .penalties import FovModel
from .splines import PiecewisePoly
from .traversal import Keyframe, SolverOptions, Weights, problem_from_keyframes, solve_traversal
from .yawparam import YawLimits, heading_rates

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

REQUIRED = object()


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending field."""


_LIMITS = {
    "v_psi_max": (3.0, "max yaw rate [rad/s]"),
    "a_psi_max": (6.0, "max yaw acceleration [rad/s^2]"),
    "v_s_max": (10.0, "max virtual velocity norm"),
    "a_s_max": (20.0, "max virtual acceleration norm"),
    "r_min": (0.5, "min virtual radius"),
}
_WEIGHTS_PLAN = {
    "effort_position": (1.0, "position control effort"),
    "effort_yaw": (1.0, "virtual yaw control effort"),
    "fov": (0.0, "relaxed field-of-view cost"),
    "velocity_alignment": (0.0, "velocity inside the heading cone"),
    "image_velocity": (0.0, "apparent target speed"),
    "yaw_dynamics": (0.0, "yaw rate and acceleration bounds"),
    "virtual_bounds": (0.0, "virtual radius, speed and acceleration bounds"),
    "position_limits": (0.0, "position speed and acceleration bounds"),
    "waypoint_attraction": (0.0, "soft keyframe positions"),
    "heading_attraction": (0.0, "soft keyframe headings"),
}
_FOV = {
    "theta_deg": (87.0, "camera aperture [deg]"),
    "theta_r_deg": (45.0, "velocity cone half-angle [deg]"),
    "camera_yaw_deg": (0.0, "optical axis yaw in the body frame [deg]"),
    "sign": (1, "+1: robot-to-target direction, -1: target-to-robot"),
}
_SOLVER = {
    "memory": (8, "L-BFGS memory"),
    "g_tol": (1e-6, "relative gradient tolerance"),
    "max_iters": (500, "iteration cap"),
    "quadrature_n": (8, "penalty samples per segment"),
}

SCHEMA: dict[str, dict[str, dict[str, tuple[Any, str]]]] = {
    "plan": {
        "problem": {
            "keyframes": (REQUIRED, "list of {position: [x,y,z], yaw_deg | heading: [hx,hy], radius, time}"),
            "durations": (None, "segment durations [s]; null allocates them"),
            "start_velocity": ([0.0, 0.0, 0.0], "start velocity [m/s]"),
            "end_velocity": ([0.0, 0.0, 0.0], "end velocity [m/s]"),
            "start_omega": (0.0, "start yaw rate [rad/s]"),
            "end_omega": (0.0, "end yaw rate [rad/s]"),
            "v_nominal": (1.0, "nominal speed for time allocation [m/s]"),
            "omega_nominal": (1.0, "nominal yaw rate for time allocation [rad/s]"),
            "hard_positions": (False, "interpolate keyframe positions exactly"),
            "hard_headings": (False, "pin interior virtual waypoints to keyframes"),
            "target": (None, "static target [x,y,z] for the FOV costs, or null"),
            "target_velocity": ([0.0, 0.0, 0.0], "target velocity [m/s]"),
            "v_max": (2.0, "max speed [m/s]"),
            "a_max": (5.0, "max acceleration [m/s^2]"),
            "v_w_max": (1.0, "max apparent target speed"),
        },
        "limits": _LIMITS,
        "weights": _WEIGHTS_PLAN,
        "fov": _FOV,
        "solver": _SOLVER,
        "output": {
            "path": ("plan.csv", "sampled trajectory CSV"),
            "summary": ("plan_summary.txt", "key-value summary"),
            "rate": (100.0, "sample rate [Hz]"),
        },
    },
    "bench": {
        "bench": {
            "n": (100, "number of instances"),
            "seed": (1, "master seed"),
            "methods": (list(bench_mod.METHODS), "subset of virtual, unwrapped, wrapped"),
            "box": ([20.0, 20.0, 5.0], "waypoint box [m]"),
            "min_waypoints": (4, "fewest waypoints per instance"),
            "max_waypoints": (8, "most waypoints per instance"),
            "v_nominal": (2.0, "nominal speed for time allocation [m/s]"),
            "omega_nominal": (1.0, "nominal yaw rate for time allocation [rad/s]"),
            "n_check": (10, "bound checks per segment"),
        },
        "limits": _LIMITS,
        "output": {"path": ("bench.csv", "results CSV")},
    },
    "track": {
        "target": {
            "kind": (REQUIRED, "static | line | circle | waypoint-path"),
            "center": ([0.0, 0.0, 1.0], "static point, line start or circle center [m]"),
            "radius": (2.0, "circle radius [m]"),
            "speed": (0.5, "target speed [m/s]"),
            "direction": ([1.0, 0.0, 0.0], "line direction"),
            "waypoints": ([], "polyline for waypoint-path"),
            "v_target_max": (0.5, "target speed bound [m/s]"),
        },
        "tracking": {
            "d_des": (2.0, "standoff distance [m]"),
            "d_tol": (0.3, "standoff tolerance [m]"),
            "replan_hz": (10.0, "replanning rate [Hz]"),
            "horizon": (2.0, "planning horizon [s]"),
            "n_keyframes": (4, "keyframes per plan"),
            "v_max": (1.0, "max quad speed [m/s]"),
            "a_max": (2.0, "max quad acceleration [m/s^2]"),
            "duration": (60.0, "simulated time [s]"),
            "quadrature_n": (8, "penalty samples per segment"),
            "max_iters": (100, "iteration cap per plan"),
            "seed": (0, "seed (the loop itself is deterministic)"),
            "log_rate": (100.0, "log sample rate [Hz], a multiple of replan_hz"),
        },
        "limits": _LIMITS,
        "weights": {
            **_WEIGHTS_PLAN,
            "fov": (10.0, _WEIGHTS_PLAN["fov"][1]),
            "yaw_dynamics": (1.0, _WEIGHTS_PLAN["yaw_dynamics"][1]),
            "virtual_bounds": (10.0, _WEIGHTS_PLAN["virtual_bounds"][1]),
            "position_limits": (10.0, _WEIGHTS_PLAN["position_limits"][1]),
            "waypoint_attraction": (10.0, _WEIGHTS_PLAN["waypoint_attraction"][1]),
        },
        "fov": _FOV,
        "output": {
            "dir": (".", "output directory"),
            "log": ("track_log.csv", "log file name"),
            "metrics": ("track_metrics.txt", "key-value metrics file name"),
        },
    },
}


def schema_keys(command: str) -> dict[str, Any]:
    """Flat ``section.key -> default`` map of one subcommand."""
    return {
        f"{section}.{key}": default
        for section, entries in SCHEMA[command].items()
        for key, (default, _) in entries.items()
    }


def _describe(command: str) -> str:
    lines = ["configuration keys (override with --section.key=value):"]
    for section, entries in SCHEMA[command].items():
        for key, (default, text) in entries.items():
            shown = "REQUIRED" if default is REQUIRED else json.dumps(default)
            lines.append(f"  {section}.{key} = {shown}  ({text})")
    return "\n".join(lines)


def load_config(command: str, path: str | None, overrides: Sequence[str]) -> dict[str, dict[str, Any]]:
    """Defaults, then the YAML file, then dotted overrides; unknown keys raise."""
    cfg = {
        section: {key: default if default is REQUIRED else copy.deepcopy(default) for key, (default, _) in entries.items()}
        for section, entries in SCHEMA[command].items()
    }
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping of sections")
        for section, entries in data.items():
            if section not in cfg:
                raise ConfigError(f"unknown config section '{section}'")
            if not isinstance(entries, dict):
                raise ConfigError(f"section '{section}' must be a mapping")
            for key, value in entries.items():
                _set(cfg, f"{section}.{key}", value)
    for item in overrides:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"cannot parse override '{item}'; use --section.key=value")
        dotted, raw = item[2:].split("=", 1)
        try:
            value = yaml.safe_load(raw) if raw else ""
        except yaml.YAMLError as exc:
            raise ConfigError(f"{dotted}: cannot parse value {raw!r}") from exc
        _set(cfg, dotted, value)
    for section, entries in cfg.items():
        for key, value in entries.items():
            if value is REQUIRED:
                raise ConfigError(f"missing required field '{section}.{key}'")
    return cfg


def _set(cfg: dict[str, dict[str, Any]], dotted: str, value: Any) -> None:
    if dotted.count(".") != 1:
        raise ConfigError(f"config key '{dotted}' must look like section.key")
    section, key = dotted.split(".")
    if section not in cfg or key not in cfg[section]:
        raise ConfigError(f"unknown config key '{dotted}'")
    cfg[section][key] = value


def _num(cfg: dict, dotted: str) -> float:
    section, key = dotted.split(".")
    value = cfg[section][key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{dotted}: expected a number, got {value!r}")
    return float(value)


def _int(cfg: dict, dotted: str) -> int:
    value = _num(cfg, dotted)
    if value != int(value):
        raise ConfigError(f"{dotted}: expected an integer, got {value!r}")
    return int(value)


def _vec(value: Any, n: int, where: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: expected {n} numbers, got {value!r}") from exc
    if arr.shape != (n,) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{where}: expected {n} finite numbers, got {value!r}")
    return arr


def _wrap(fn, *args, where: str):
    """Re-raise model validation errors with the config section in front."""
    try:
        return fn(*args)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


def build_limits(cfg: dict) -> YawLimits:
    values = {k: _num(cfg, f"limits.{k}") for k in cfg["limits"]}
    return _wrap(lambda: YawLimits(**values), where="limits")


def build_weights(cfg: dict) -> Weights:
    values = {k: _num(cfg, f"weights.{k}") for k in cfg["weights"]}
    return _wrap(lambda: Weights(**values), where="weights")


def build_fov(cfg: dict) -> FovModel:
    yaw = np.deg2rad(_num(cfg, "fov.camera_yaw_deg"))
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return _wrap(
        lambda: FovModel(
            np.deg2rad(_num(cfg, "fov.theta_deg")),
            np.deg2rad(_num(cfg, "fov.theta_r_deg")),
            rot,
            _int(cfg, "fov.sign"),
        ),
        where="fov",
    )


def _keyframe(entry: Any, i: int, r_min: float) -> Keyframe:
    where = f"problem.keyframes[{i}]"
    if not isinstance(entry, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = set(entry) - {"position", "yaw_deg", "heading", "radius", "time"}
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    if "position" not in entry:
        raise ConfigError(f"{where}.position: missing")
    position = _vec(entry["position"], 3, f"{where}.position")
    if ("yaw_deg" in entry) == ("heading" in entry):
        raise ConfigError(f"{where}: give exactly one of yaw_deg or heading")
    if "yaw_deg" in entry:
        yaw = np.deg2rad(float(entry["yaw_deg"]))
        heading = np.array([np.cos(yaw), np.sin(yaw)])
    else:
        heading = _vec(entry["heading"], 2, f"{where}.heading")
        if np.linalg.norm(heading) == 0:
            raise ConfigError(f"{where}.heading: must be nonzero")
    radius = float(entry.get("radius", max(1.0, r_min)))
    time = entry.get("time")
    return _wrap(
        lambda: Keyframe(position, heading, radius, None if time is None else float(time)),
        where=where,
    )


def build_plan_problem(cfg: dict):
    limits = build_limits(cfg)
    pc = cfg["problem"]
    if not isinstance(pc["keyframes"], list) or len(pc["keyframes"]) < 2:
        raise ConfigError("problem.keyframes: need a list of at least two keyframes")
    keyframes = [_keyframe(e, i, limits.r_min) for i, e in enumerate(pc["keyframes"])]
    durations = None
    if pc["durations"] is not None:
        durations = _vec(pc["durations"], len(keyframes) - 1, "problem.durations")
    reference = None
    if pc["target"] is not None:
        target = _vec(pc["target"], 3, "problem.target")
        velocity = _vec(pc["target_velocity"], 3, "problem.target_velocity")
        reference = (target, velocity)
    for flag in ("hard_positions", "hard_headings"):
        if not isinstance(pc[flag], bool):
            raise ConfigError(f"problem.{flag}: expected true or false")

    def make():
        problem = problem_from_keyframes(
            keyframes,
            durations=durations,
            start_velocity=_vec(pc["start_velocity"], 3, "problem.start_velocity"),
            end_velocity=_vec(pc["end_velocity"], 3, "problem.end_velocity"),
            start_omega=_num(cfg, "problem.start_omega"),
            end_omega=_num(cfg, "problem.end_omega"),
            v_nominal=_num(cfg, "problem.v_nominal"),
            omega_nominal=_num(cfg, "problem.omega_nominal"),
            limits=limits,
            v_max=_num(cfg, "problem.v_max"),
            a_max=_num(cfg, "problem.a_max"),
            v_w_max=_num(cfg, "problem.v_w_max"),
            fov=build_fov(cfg),
            weights=build_weights(cfg),
            hard_positions=pc["hard_positions"],
            hard_headings=pc["hard_headings"],
            quadrature_n=_int(cfg, "solver.quadrature_n"),
        )
        if reference is None:
            return problem
        ref = PiecewisePoly(np.stack(reference)[None], np.array([problem.total_duration]))
        return replace(problem, timed_reference=ref)

    return _wrap(make, where="problem")


def cmd_plan(cfg: dict) -> int:
    problem = build_plan_problem(cfg)
    options = _wrap(
        lambda: SolverOptions(
            memory=_int(cfg, "solver.memory"),
            g_tol=_num(cfg, "solver.g_tol"),
            max_iters=_int(cfg, "solver.max_iters"),
        ),
        where="solver",
    )
    rate = _num(cfg, "output.rate")
    if not rate > 0:
        raise ConfigError("output.rate: must be positive")
    sol = solve_traversal(problem, None, options)

    T = sol.position_traj.total_duration
    ts = np.linspace(0.0, T, int(np.floor(T * rate + 1e-9)) + 1)
    p = sol.position_traj.eval(ts)
    yaw = sol.virtual_yaw_traj
    psi, omega, alpha = heading_rates(yaw.eval(ts), yaw.eval(ts, 1), yaw.eval(ts, 2))
    angle = np.arctan2(psi[:, 1], psi[:, 0])
    with open(cfg["output"]["path"], "w") as fh:
        fh.write("t,px,py,pz,yaw,omega,alpha\n")
        for row in zip(ts, p[:, 0], p[:, 1], p[:, 2], angle, omega, alpha):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")

    # Disabled terms are listed with a zero contribution.
    breakdown = {f.name: float(sol.breakdown.get(f.name, 0.0)) for f in fields(Weights)}
    summary = {
        "final_cost": sol.final_cost,
        "converged": int(sol.converged),
        "iterations": sol.iterations,
        **{f"cost.{k}": v for k, v in breakdown.items()},
    }
    with open(cfg["output"]["summary"], "w") as fh:
        for k, v in summary.items():
            fh.write(f"{k}={v!r}\n")
    print(f"final cost {sol.final_cost:.6g} after {sol.iterations} iterations ({sol.message})")
    for k, v in breakdown.items():
        print(f"  {k:<22}{v:>14.6g}")
    print(f"converged: {sol.converged}")
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def cmd_bench(cfg: dict) -> int:
    bc = cfg["bench"]
    methods = bc["methods"]
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",") if m.strip()]
    if not isinstance(methods, list) or not methods:
        raise ConfigError("bench.methods: expected a non-empty list")
    for m in methods:
        if m not in bench_mod.METHODS:
            raise ConfigError(f"bench.methods: unknown method {m!r}")
    n = _int(cfg, "bench.n")
    if n < 1:
        raise ConfigError("bench.n: must be >= 1")
    config = _wrap(
        lambda: bench_mod.BenchConfig(
            box=tuple(_vec(bc["box"], 3, "bench.box")),
            min_waypoints=_int(cfg, "bench.min_waypoints"),
            max_waypoints=_int(cfg, "bench.max_waypoints"),
            v_nominal=_num(cfg, "bench.v_nominal"),
            omega_nominal=_num(cfg, "bench.omega_nominal"),
            limits=build_limits(cfg),
            n_check=_int(cfg, "bench.n_check"),
        ),
        where="bench",
    )
    instances = bench_mod.gen_instances(_int(cfg, "bench.seed"), n, config)
    results = bench_mod.run_benchmark(instances, methods)
    bench_mod.write_results(results, cfg["output"]["path"])
    print(bench_mod.format_summary(results))
    return EXIT_OK


def build_tracking(cfg: dict) -> tuple[tracksim.TargetModel, tracksim.TrackingConfig]:
    tc = cfg["target"]
    waypoints = np.asarray(tc["waypoints"], dtype=float).reshape(-1, 3) if tc["waypoints"] else np.zeros((0, 3))
    model = _wrap(
        lambda: tracksim.TargetModel(
            kind=str(tc["kind"]),
            center=_vec(tc["center"], 3, "target.center"),
            radius=_num(cfg, "target.radius"),
            speed=_num(cfg, "target.speed"),
            direction=_vec(tc["direction"], 3, "target.direction"),
            waypoints=waypoints,
            v_target_max=_num(cfg, "target.v_target_max"),
        ),
        where="target",
    )
    config = _wrap(
        lambda: tracksim.TrackingConfig(
            d_des=_num(cfg, "tracking.d_des"),
            d_tol=_num(cfg, "tracking.d_tol"),
            replan_hz=_num(cfg, "tracking.replan_hz"),
            horizon=_num(cfg, "tracking.horizon"),
            n_keyframes=_int(cfg, "tracking.n_keyframes"),
            fov=build_fov(cfg),
            v_max=_num(cfg, "tracking.v_max"),
            a_max=_num(cfg, "tracking.a_max"),
            limits=build_limits(cfg),
            weights=build_weights(cfg),
            duration=_num(cfg, "tracking.duration"),
            quadrature_n=_int(cfg, "tracking.quadrature_n"),
            max_iters=_int(cfg, "tracking.max_iters"),
            seed=_int(cfg, "tracking.seed"),
            log_rate=_num(cfg, "tracking.log_rate"),
        ),
        where="tracking",
    )
    return model, config


def cmd_track(cfg: dict) -> int:
    model, config = build_tracking(cfg)
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    metrics, log = tracksim.run_tracking(model, config)
    tracksim.write_log_csv(log, out / cfg["output"]["log"])
    tracksim.write_metrics(metrics, out / cfg["output"]["metrics"])
    print(tracksim.format_summary(metrics))
    return EXIT_OK


COMMANDS = {"plan": cmd_plan, "bench": cmd_bench, "track": cmd_track}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="globalyaw", description="Global yaw trajectory planning tools.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("plan", "optimize one joint position and yaw trajectory"),
        ("bench", "compare yaw planners on random instances"),
        ("track", "simulate receding-horizon target tracking"),
    ):
        p = sub.add_parser(
            name, help=text, description=text, epilog=_describe(name),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--out", help="output file (directory for track)")
        if name in ("bench", "track"):
            p.add_argument("--seed", type=int, help="seed override")
        if name == "bench":
            p.add_argument("-n", type=int, help="number of instances")
            p.add_argument("--methods", help="comma-separated methods")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    overrides = []
    it = iter(extra)
    for item in it:
        if item.startswith("--") and "=" not in item and "." in item:
            # Accept "--section.key value" as well.
            overrides.append(f"{item}={next(it, '')}")
        else:
            overrides.append(item)
    try:
        cfg = load_config(args.command, args.config, overrides)
        if args.out is not None:
            cfg["output"]["dir" if args.command == "track" else "path"] = args.out
            if args.command == "plan":
                cfg["output"]["summary"] = str(Path(args.out).with_suffix("")) + "_summary.txt"
        if getattr(args, "seed", None) is not None:
            cfg["bench" if args.command == "bench" else "tracking"]["seed"] = args.seed
        if getattr(args, "n", None) is not None:
            cfg["bench"]["n"] = args.n
        if getattr(args, "methods", None) is not None:
            cfg["bench"]["methods"] = args.methods
        return COMMANDS[args.command](cfg)
    except (OSError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
