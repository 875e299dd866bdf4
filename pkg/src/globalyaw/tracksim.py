"""Receding-horizon target tracking in simulation.

A scripted ground target moves in the plane. At every replan tick the
planner fits a constant-velocity model to the last second of target
observations, places timed keyframes at a standoff distance on the near
side of the predicted target, solves a timed traversal problem warm-started
from the previous plan and executes one replan period of it exactly.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .penalties import FovModel
from .splines import BoundaryState, PiecewisePoly
from .traversal import (
    Keyframe,
    SolverOptions,
    TraversalProblem,
    TraversalSolution,
    Weights,
    solve_traversal,
)
from .yawparam import InfeasibleError, SingularityError, YawLimits, boundary_virtual, heading_rates

TARGET_KINDS = ("static", "line", "circle", "waypoint-path")
PREDICTION_WINDOW = 1.0
LOG_RATE = 100.0
LOG_COLUMNS = ("t", "px", "py", "pz", "yaw", "omega", "wx", "wy", "wz", "deviation", "distance", "in_fov")


@dataclass(frozen=True, eq=False)
class TargetModel:
    """Scripted target motion.

    ``center`` is the static position, the line start, or the circle center;
    ``direction`` orients a line; ``waypoints`` define a polyline traversed at
    ``speed`` and then held at its last point.
    """

    kind: str = "circle"
    center: NDArray[np.float64] = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    radius: float = 2.0
    speed: float = 0.5
    direction: NDArray[np.float64] = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    waypoints: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 3)))
    v_target_max: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"target.kind must be one of {TARGET_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "waypoints", np.asarray(self.waypoints, dtype=float).reshape(-1, 3))
        direction = np.asarray(self.direction, dtype=float).reshape(3)
        n = np.linalg.norm(direction)
        if self.kind == "line" and n == 0:
            raise ValueError("target.direction must be nonzero")
        object.__setattr__(self, "direction", direction / n if n > 0 else direction)
        if not 0 <= self.speed <= self.v_target_max:
            raise ValueError(f"target.speed must lie in [0, v_target_max={self.v_target_max}]")
        if self.kind == "circle" and not self.radius > 0:
            raise ValueError("target.radius must be positive")
        if self.kind == "waypoint-path" and len(self.waypoints) < 1:
            raise ValueError("target.waypoints needs at least one point")


def target_state(model: TargetModel, t: float) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Position and velocity of the target at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    zero = np.zeros(3)
    if model.kind == "static" or model.speed == 0:
        if model.kind == "waypoint-path":
            return model.waypoints[0].copy(), zero
        if model.kind == "circle":
            return model.center + np.array([model.radius, 0.0, 0.0]), zero
        return model.center.copy(), zero
    if model.kind == "line":
        return model.center + model.speed * t * model.direction, model.speed * model.direction
    if model.kind == "circle":
        rate = model.speed / model.radius
        c, s = np.cos(rate * t), np.sin(rate * t)
        return (
            model.center + model.radius * np.array([c, s, 0.0]),
            model.speed * np.array([-s, c, 0.0]),
        )
    legs = np.diff(model.waypoints, axis=0)
    lengths = np.linalg.norm(legs, axis=1)
    travelled = model.speed * t
    for start, leg, length in zip(model.waypoints[:-1], legs, lengths):
        if length == 0:
            continue
        if travelled < length:
            unit = leg / length
            return start + travelled * unit, model.speed * unit
        travelled -= length
    return model.waypoints[-1].copy(), zero


def predict_target(
    history: Sequence[tuple[float, ArrayLike]], horizon: float, window: float = PREDICTION_WINDOW
) -> PiecewisePoly:
    """Constant-velocity forecast starting at the newest sample.

    Fits ``w = a + b (t - t_last)`` by least squares to the samples of the
    last ``window`` seconds and returns it as a degree-1 curve on
    ``[0, horizon]`` in plan time.
    """
    if len(history) < 2:
        raise ValueError("prediction needs at least two history samples")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    ts = np.array([h[0] for h in history], dtype=float)
    ws = np.array([np.asarray(h[1], dtype=float) for h in history]).reshape(-1, 3)
    recent = ts >= ts[-1] - window - 1e-12
    if recent.sum() < 2:
        recent[-2:] = True
    tau = ts[recent] - ts[-1]
    A = np.stack([np.ones_like(tau), tau], axis=1)
    coef, *_ = np.linalg.lstsq(A, ws[recent], rcond=None)
    return PiecewisePoly(coef[None, :, :], np.array([horizon]))


@dataclass(frozen=True, eq=False)
class TrackingConfig:
    """Tracking loop settings; ``duration`` is the simulated time in seconds."""

    d_des: float = 2.0
    d_tol: float = 0.3
    replan_hz: float = 10.0
    horizon: float = 2.0
    n_keyframes: int = 4
    fov: FovModel = field(default_factory=FovModel)
    v_max: float = 1.0
    a_max: float = 2.0
    limits: YawLimits = field(default_factory=YawLimits)
    weights: Weights = field(
        default_factory=lambda: Weights(
            fov=10.0,
            yaw_dynamics=1.0,
            virtual_bounds=10.0,
            position_limits=10.0,
            waypoint_attraction=10.0,
        )
    )
    duration: float = 60.0
    quadrature_n: int = 8
    max_iters: int = 100
    seed: int = 0
    log_rate: float = LOG_RATE

    def __post_init__(self) -> None:
        if not self.d_des > self.d_tol > 0:
            raise ValueError("need d_des > d_tol > 0")
        if not self.replan_hz > 0:
            raise ValueError("replan_hz must be positive")
        if not self.horizon >= 2.0 / self.replan_hz:
            raise ValueError("horizon must cover at least two replan periods")
        if self.n_keyframes < 1:
            raise ValueError("n_keyframes must be >= 1")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        steps = self.log_rate / self.replan_hz
        if not (steps >= 1 and abs(steps - round(steps)) < 1e-9):
            raise ValueError("log_rate must be a positive multiple of replan_hz")

    @property
    def period(self) -> float:
        return 1.0 / self.replan_hz


@dataclass(frozen=True)
class TrackingMetrics:
    out_of_fov_pct: float
    deviation_mean: float
    deviation_std: float
    body_rate_mean: float
    body_rate_std: float
    distance_mean: float
    distance_std: float
    replan_count: int
    failure_count: int
    mean_solve_time: float

    def as_dict(self, include_timing: bool = True) -> dict[str, float | int]:
        out = {
            "out_of_fov_pct": self.out_of_fov_pct,
            "deviation_mean": self.deviation_mean,
            "deviation_std": self.deviation_std,
            "body_rate_mean": self.body_rate_mean,
            "body_rate_std": self.body_rate_std,
            "distance_mean": self.distance_mean,
            "distance_std": self.distance_std,
            "replan_count": self.replan_count,
            "failure_count": self.failure_count,
        }
        if include_timing:
            out["mean_solve_time"] = self.mean_solve_time
        return out


def _horizontal_unit(v: NDArray, fallback: NDArray) -> NDArray:
    flat = np.array([v[0], v[1], 0.0])
    n = np.linalg.norm(flat)
    return flat / n if n > 1e-9 else fallback


def generate_tracking_keyframes(
    pred: PiecewisePoly,
    quad_position: ArrayLike,
    config: TrackingConfig,
    fallback: ArrayLike = (1.0, 0.0, 0.0),
) -> list[Keyframe]:
    """Timed standoff keyframes on the near side of the predicted target.

    ``fallback`` is the unit offset used when the quad sits above the target.
    """
    n = config.n_keyframes
    if pred.total_duration < config.horizon - 1e-12:
        raise ValueError("prediction does not cover the horizon")
    quad = np.asarray(quad_position, dtype=float)
    u_prev = np.asarray(fallback, dtype=float)
    out = []
    for k in range(1, n + 1):
        t_k = k * config.horizon / n
        w = pred.eval(t_k)
        u = _horizontal_unit(quad - w, u_prev)
        position = w + config.d_des * u
        out.append(Keyframe(position, -u[:2], time=t_k))
        u_prev = u
    return out


@dataclass(frozen=True, eq=False)
class TrackingLog:
    """Logged rows plus the plan executed during each tick as ``(t0, plan_age, plan)``."""

    rows: NDArray[np.float64]
    failures: int
    executed: tuple[tuple[float, float, TraversalSolution], ...] = ()

    def column(self, name: str) -> NDArray[np.float64]:
        return self.rows[:, LOG_COLUMNS.index(name)]


def _build_problem(
    config: TrackingConfig,
    keyframes: list[Keyframe],
    p: NDArray,
    v: NDArray,
    s: NDArray,
    s_dot: NDArray,
    pred: PiecewisePoly,
) -> TraversalProblem:
    dt = config.horizon / config.n_keyframes
    last = keyframes[-1]
    if len(keyframes) > 1:
        a, b = keyframes[-2].heading, last.heading
        end_omega = float(np.arctan2(a[0] * b[1] - a[1] * b[0], a @ b)) / dt
    else:
        end_omega = 0.0
    end_velocity = pred.eval(config.horizon, 1)
    return TraversalProblem(
        BoundaryState(np.stack([p, v])),
        BoundaryState(np.stack([last.position, end_velocity])),
        BoundaryState(np.stack([s, s_dot])),
        boundary_virtual(last.heading, end_omega, 1.0),
        keyframes[:-1],
        np.full(config.n_keyframes, dt),
        timed_reference=pred,
        limits=config.limits,
        v_max=config.v_max,
        a_max=config.a_max,
        fov=config.fov,
        weights=config.weights,
        quadrature_n=config.quadrature_n,
    )


def _warm_start(previous: TraversalSolution, shift: float, problem: TraversalProblem) -> NDArray:
    """Previous plan evaluated at the new interior knot times."""
    knots = np.cumsum(problem.durations)[:-1] + shift
    knots = np.minimum(knots, previous.position_traj.total_duration)
    P = previous.position_traj.eval(knots).reshape(-1, 3)
    S = previous.virtual_yaw_traj.eval(knots).reshape(-1, 2)
    r = np.linalg.norm(S, axis=1)
    # Keep the seed away from the origin.
    S = np.where((r < problem.limits.r_min)[:, None], S / np.maximum(r, 1e-12)[:, None] * problem.limits.r_min, S)
    return np.concatenate([P, S], axis=1).reshape(-1)


def _log_rows(
    pos: PiecewisePoly,
    yaw: PiecewisePoly,
    local: NDArray,
    t0: float,
    model: TargetModel,
    fov: FovModel,
) -> NDArray:
    local = np.minimum(local, pos.total_duration)
    p = pos.eval(local)
    psi, omega, _ = heading_rates(yaw.eval(local, 0), yaw.eval(local, 1), yaw.eval(local, 2))
    rows = []
    half = 0.5 * fov.theta
    for i, tl in enumerate(local):
        t = t0 + (tl - local[0])
        w, _ = target_state(model, t)
        d = w - p[i]
        dist = float(np.linalg.norm(d))
        axis = fov.axis_yaw @ psi[i]
        cos_dev = float(np.dot(axis, d[:2])) / dist if dist > 0 else 1.0
        deviation = float(np.arccos(np.clip(cos_dev, -1.0, 1.0)))
        in_fov = 1.0 if deviation <= half else 0.0
        yaw_angle = float(np.arctan2(psi[i, 1], psi[i, 0]))
        rows.append([t, *p[i], yaw_angle, omega[i], *w, deviation, dist, in_fov])
    return np.asarray(rows)


def run_tracking(model: TargetModel, config: TrackingConfig) -> tuple[TrackingMetrics, TrackingLog]:
    """Simulate the replanning loop with perfect trajectory tracking.

    The quad starts hovering at the target's initial position offset by the
    standoff distance toward the circle center (or -x otherwise), facing
    the target. Each tick executes ``1 / replan_hz`` seconds of the newest
    plan and logs it at ``config.log_rate`` (100 Hz by default).
    """
    period = config.period
    n_ticks = int(round(config.duration * config.replan_hz))
    per_tick = int(round(config.log_rate * period))
    local = np.arange(per_tick) / config.log_rate
    options = SolverOptions(max_iters=config.max_iters)

    w0, _ = target_state(model, 0.0)
    if model.kind == "circle":
        toward = _horizontal_unit(model.center - w0, np.array([-1.0, 0.0, 0.0]))
    else:
        toward = np.array([-1.0, 0.0, 0.0])
    p = w0 + config.d_des * toward
    v = np.zeros(3)
    s = -toward[:2].copy()
    s_dot = np.zeros(2)
    u_prev = toward

    history: list[tuple[float, NDArray]] = []
    plan: TraversalSolution | None = None
    plan_age = 0.0
    failures = 0
    solve_times: list[float] = []
    blocks = []
    executed = []
    for tick in range(n_ticks):
        t = tick * period
        w, _ = target_state(model, t)
        history.append((t, w))
        if len(history) >= 2:
            pred = predict_target(history, config.horizon)
        else:
            pred = PiecewisePoly(np.stack([w, np.zeros(3)])[None], np.array([config.horizon]))
        keyframes = generate_tracking_keyframes(pred, p, config, u_prev)
        u_prev = np.append(-keyframes[0].heading, 0.0)
        problem = _build_problem(config, keyframes, p, v, s, s_dot, pred)
        x0 = None if plan is None else _warm_start(plan, period, problem)
        start = time.perf_counter()
        try:
            new_plan = solve_traversal(problem, x0, options)
            solve_times.append(time.perf_counter() - start)
            plan, plan_age = new_plan, 0.0
        except (SingularityError, InfeasibleError, ValueError, np.linalg.LinAlgError):
            solve_times.append(time.perf_counter() - start)
            failures += 1
            if plan is None:
                raise
        executed.append((t, plan_age, plan))
        blocks.append(_log_rows(plan.position_traj, plan.virtual_yaw_traj, plan_age + local, t, model, config.fov))
        plan_age += period
        t_next = min(plan_age, plan.position_traj.total_duration)
        p = plan.position_traj.eval(t_next)
        v = plan.position_traj.eval(t_next, 1)
        s = plan.virtual_yaw_traj.eval(t_next)
        s_dot = plan.virtual_yaw_traj.eval(t_next, 1)

    rows = np.concatenate(blocks) if blocks else np.zeros((0, len(LOG_COLUMNS)))
    log = TrackingLog(rows, failures, tuple(executed))
    return compute_metrics(log, n_ticks, float(np.mean(solve_times)) if solve_times else 0.0), log


def compute_metrics(log: TrackingLog, replan_count: int, mean_solve_time: float = 0.0) -> TrackingMetrics:
    if len(log.rows) == 0:
        raise ValueError("empty log")
    dev = log.column("deviation")
    rate = np.abs(log.column("omega"))
    dist = log.column("distance")
    return TrackingMetrics(
        out_of_fov_pct=float(100.0 * (1.0 - np.mean(log.column("in_fov")))),
        deviation_mean=float(np.mean(dev)),
        deviation_std=float(np.std(dev)),
        body_rate_mean=float(np.mean(rate)),
        body_rate_std=float(np.std(rate)),
        distance_mean=float(np.mean(dist)),
        distance_std=float(np.std(dist)),
        replan_count=replan_count,
        failure_count=log.failures,
        mean_solve_time=mean_solve_time,
    )


def write_log_csv(log: TrackingLog, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for row in log.rows:
            writer.writerow([repr(float(v)) for v in row[:-1]] + [int(row[-1])])


def write_metrics(metrics: TrackingMetrics, path: str | Path) -> None:
    """Key-value file; wall-clock timing is left out so reruns match bit for bit."""
    with open(path, "w") as fh:
        for key, value in metrics.as_dict(include_timing=False).items():
            fh.write(f"{key}={value!r}\n")


def format_summary(metrics: TrackingMetrics) -> str:
    lines = [
        f"{'metric':<28}{'mean':>10}{'std':>10}",
        f"{'out of FOV (%)':<28}{metrics.out_of_fov_pct:>10.2f}{'':>10}",
        f"{'deviation angle (rad)':<28}{metrics.deviation_mean:>10.3f}{metrics.deviation_std:>10.3f}",
        f"{'z body rate (rad/s)':<28}{metrics.body_rate_mean:>10.3f}{metrics.body_rate_std:>10.3f}",
        f"{'relative distance (m)':<28}{metrics.distance_mean:>10.3f}{metrics.distance_std:>10.3f}",
        f"replans {metrics.replan_count}, failures {metrics.failure_count}, "
        f"mean solve {1e3 * metrics.mean_solve_time:.1f} ms",
    ]
    return "\n".join(lines)
