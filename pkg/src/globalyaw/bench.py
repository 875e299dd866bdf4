"""Randomized comparison of the virtual-yaw planner against two angle baselines.

Each instance draws position waypoints in a box and independent yaw angles,
allocates segment times once and hands the same durations to every method.
Costs are the integral of squared yaw acceleration of the realized heading,
so all three representations are compared on the same footing.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .splines import BoundaryState, PiecewisePoly, solve_min_control
from .traversal import Keyframe, allocate_times
from .yawparam import SingularityError, YawLimits, angle_to_heading
from .yawqp import (
    N_CHECK,
    Status,
    YawPlanRequest,
    YawTrajectory,
    plan_virtual_yaw,
    plan_yaw_unwrapped_baseline,
    plan_yaw_wrapped_baseline,
    yaw_acceleration_cost,
    yaw_distance,
)

METHODS = ("virtual", "unwrapped", "wrapped")
RESULT_COLUMNS = (
    "instance",
    "seed",
    "method",
    "success",
    "status",
    "num_waypoints",
    "total_duration",
    "control_cost",
    "distance",
    "average_speed",
)


@dataclass(frozen=True)
class BenchConfig:
    box: tuple[float, float, float] = (20.0, 20.0, 5.0)
    min_waypoints: int = 4
    max_waypoints: int = 8
    v_nominal: float = 2.0
    omega_nominal: float = 1.0
    limits: YawLimits = field(default_factory=YawLimits)
    n_check: int = N_CHECK

    def __post_init__(self) -> None:
        if not 2 <= self.min_waypoints <= self.max_waypoints:
            raise ValueError("need 2 <= min_waypoints <= max_waypoints")
        if not all(b > 0 for b in self.box):
            raise ValueError("box sides must be positive")


@dataclass(frozen=True, eq=False)
class BenchInstance:
    index: int
    seed: int
    waypoints: NDArray[np.float64]
    position_traj: PiecewisePoly
    angles: NDArray[np.float64]
    durations: NDArray[np.float64]
    limits: YawLimits
    n_check: int = N_CHECK


@dataclass(frozen=True)
class BenchRow:
    instance: int
    seed: int
    method: str
    success: bool
    status: str
    num_waypoints: int
    total_duration: float
    control_cost: float
    distance: float
    average_speed: float
    solve_time: float


@dataclass(frozen=True)
class MethodSummary:
    method: str
    runs: int
    success_rate: float
    median_cost: float
    mean_cost: float
    median_distance: float
    mean_distance: float
    median_speed: float


@dataclass(frozen=True, eq=False)
class BenchResults:
    rows: tuple[BenchRow, ...]
    methods: tuple[str, ...]

    def for_method(self, method: str) -> list[BenchRow]:
        return [r for r in self.rows if r.method == method]

    def summary(self) -> list[MethodSummary]:
        out = []
        for method in self.methods:
            rows = self.for_method(method)
            ok = [r for r in rows if r.success]
            cost = np.array([r.control_cost for r in ok])
            dist = np.array([r.distance for r in ok])
            speed = np.array([r.average_speed for r in ok])
            nan = float("nan")
            out.append(
                MethodSummary(
                    method,
                    len(rows),
                    len(ok) / len(rows) if rows else nan,
                    float(np.median(cost)) if len(ok) else nan,
                    float(np.mean(cost)) if len(ok) else nan,
                    float(np.median(dist)) if len(ok) else nan,
                    float(np.mean(dist)) if len(ok) else nan,
                    float(np.median(speed)) if len(ok) else nan,
                )
            )
        return out


def gen_instances(master_seed: int, n: int, config: BenchConfig = BenchConfig()) -> list[BenchInstance]:
    """Draw ``n`` reproducible instances; instance ``i`` depends only on (master_seed, i)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seeds = np.random.SeedSequence(master_seed).generate_state(n, dtype=np.uint64)
    out = []
    for i, seed in enumerate(seeds):
        rng = np.random.default_rng(int(seed))
        k = int(rng.integers(config.min_waypoints, config.max_waypoints + 1))
        points = rng.uniform(0.0, 1.0, size=(k, 3)) * np.asarray(config.box)
        # pi - U[0, 2pi) lands in (-pi, pi].
        angles = np.pi - rng.uniform(0.0, 2.0 * np.pi, size=k)
        keyframes = [Keyframe(p, angle_to_heading(a)) for p, a in zip(points, angles)]
        durations = allocate_times(keyframes, config.v_nominal, config.omega_nominal)
        position = solve_min_control(
            BoundaryState.at_rest(points[0], 2),
            BoundaryState.at_rest(points[-1], 2),
            points[1:-1],
            durations,
        )
        out.append(BenchInstance(i, int(seed), points, position, angles, durations, config.limits, config.n_check))
    return out


def branch_gap_fraction(instances: Sequence[BenchInstance]) -> float:
    """Share of adjacent angle pairs whose raw branch difference exceeds pi."""
    gaps = np.concatenate([np.abs(np.diff(inst.angles)) for inst in instances])
    return float(np.mean(gaps > np.pi))


def plan_method(inst: BenchInstance, method: str) -> YawTrajectory:
    if method == "virtual":
        req = YawPlanRequest.from_angles(inst.angles, inst.durations, inst.limits, n_check=inst.n_check)
        return plan_virtual_yaw(req)
    if method == "unwrapped":
        return plan_yaw_unwrapped_baseline(inst.angles, inst.durations, limits=inst.limits, n_check=inst.n_check)
    if method == "wrapped":
        return plan_yaw_wrapped_baseline(inst.angles, inst.durations, limits=inst.limits, n_check=inst.n_check)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def run_benchmark(instances: Sequence[BenchInstance], methods: Sequence[str] = METHODS) -> BenchResults:
    methods = tuple(methods)
    if not methods:
        raise ValueError("methods must be non-empty")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    rows = []
    for inst in instances:
        total = float(np.sum(inst.durations))
        for method in methods:
            start = time.perf_counter()
            traj = plan_method(inst, method)
            elapsed = time.perf_counter() - start
            try:
                cost = yaw_acceleration_cost(traj)
                dist = yaw_distance(traj)
            except SingularityError:
                cost = dist = float("nan")
            rows.append(
                BenchRow(
                    inst.index, inst.seed, method, traj.status is Status.SUCCESS, traj.status.value,
                    len(inst.angles), total, cost, dist, dist / total, elapsed,
                )
            )
    return BenchResults(tuple(rows), methods)


def _fmt(value: object) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_results(results: BenchResults, path: str | Path) -> None:
    """One CSV row per (instance, method), then ``# ``-prefixed summary lines.

    Wall-clock solve times stay out of the file so equal seeds give equal bytes.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in results.rows:
            writer.writerow([_fmt(getattr(row, c)) for c in RESULT_COLUMNS])
        if results.rows:
            for s in results.summary():
                fh.write(
                    f"# summary method={s.method} runs={s.runs} success_rate={s.success_rate!r} "
                    f"median_cost={s.median_cost!r} median_distance={s.median_distance!r} "
                    f"median_speed={s.median_speed!r}\n"
                )


def format_summary(results: BenchResults) -> str:
    header = f"{'method':<11}{'success':>9}{'med cost':>12}{'med dist':>11}{'med speed':>11}{'mean time ms':>14}"
    lines = [header]
    for s in results.summary():
        times = [r.solve_time for r in results.for_method(s.method)]
        lines.append(
            f"{s.method:<11}{s.success_rate:>9.2f}{s.median_cost:>12.4g}"
            f"{s.median_distance:>11.4g}{s.median_speed:>11.4g}{1e3 * np.mean(times):>14.2f}"
        )
    return "\n".join(lines)
