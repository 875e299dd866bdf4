"""Yaw-only planners for a fixed time allocation.

Three generators share one container and one sampling interface so their
metrics are comparable:

* :func:`plan_virtual_yaw` splines the virtual variable through the keyframe
  headings (convex, closed form, keyframe insertion near the origin);
* :func:`plan_yaw_wrapped_baseline` splines raw branch angles in (-pi, pi];
* :func:`plan_yaw_unwrapped_baseline` splines a nearest-equivalent unwrapped
  angle sequence.

Inequality bounds are not optimized over; they are verified on a grid after
the equality-constrained solve, and a violation is reported as a failed plan.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .splines import BoundaryState, PiecewisePoly, solve_min_control
from .yawparam import (
    EPS_SINGULAR,
    InfeasibleError,
    accumulated_yaw_distance,
    SingularityError,
    YawLimits,
    angle_to_heading,
    boundary_virtual,
    heading_rates,
    heading_to_angle,
    heading_to_virtual,
    insert_keyframes_until_regular,
    normalize_heading,
    wrap_angle,
)

N_CHECK = 10


class Status(str, enum.Enum):
    SUCCESS = "success"
    BOUND_VIOLATION = "bound-violation"
    SINGULARITY = "singularity"


@dataclass(frozen=True)
class YawBoundary:
    """Heading, yaw rate and virtual radius at one end of the plan."""

    heading: NDArray[np.float64]
    omega: float = 0.0
    radius: float = 1.0
    r_dot: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", normalize_heading(self.heading))

    @classmethod
    def from_angle(cls, angle: float, omega: float = 0.0, radius: float = 1.0) -> "YawBoundary":
        return cls(angle_to_heading(angle), omega, radius)

    @property
    def angle(self) -> float:
        return float(heading_to_angle(self.heading))


@dataclass(frozen=True)
class YawPlanRequest:
    keyframe_headings: NDArray[np.float64]
    radii: NDArray[np.float64]
    durations: NDArray[np.float64]
    start: YawBoundary
    end: YawBoundary
    limits: YawLimits = field(default_factory=YawLimits)
    n_check: int = N_CHECK

    def __post_init__(self) -> None:
        headings = np.asarray(self.keyframe_headings, dtype=float).reshape(-1, 2)
        radii = np.asarray(self.radii, dtype=float).reshape(-1)
        durations = np.asarray(self.durations, dtype=float).reshape(-1)
        if len(durations) != len(headings) + 1:
            raise ValueError("need exactly one more duration than interior headings")
        if len(radii) != len(headings):
            raise ValueError("need one radius per interior heading")
        if np.any(radii < self.limits.r_min):
            raise ValueError(f"radii must be >= r_min={self.limits.r_min}")
        object.__setattr__(self, "keyframe_headings", normalize_heading(headings) if len(headings) else headings)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "durations", durations)

    @classmethod
    def from_angles(
        cls,
        angles: Sequence[float],
        durations: Sequence[float],
        limits: YawLimits | None = None,
        radius: float = 1.0,
        n_check: int = N_CHECK,
    ) -> "YawPlanRequest":
        """Boundary-inclusive angle list, zero boundary rates, equal radii."""
        angles = list(angles)
        return cls(
            angle_to_heading(angles[1:-1]).reshape(-1, 2),
            np.full(len(angles) - 2, radius),
            durations,
            YawBoundary.from_angle(angles[0], radius=radius),
            YawBoundary.from_angle(angles[-1], radius=radius),
            limits or YawLimits(),
            n_check,
        )


@dataclass(frozen=True)
class YawTrajectory:
    """Planner output. ``kind`` is ``"virtual"`` (d=2 curve) or ``"angle"`` (d=1)."""

    kind: str
    curve: PiecewisePoly
    limits: YawLimits
    status: Status
    method: str
    knot_times: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    message: str = ""

    @property
    def success(self) -> bool:
        return self.status is Status.SUCCESS

    @property
    def total_duration(self) -> float:
        return self.curve.total_duration


def sample_yaw(traj: YawTrajectory, t: ArrayLike) -> tuple[NDArray, NDArray, NDArray]:
    """Yaw angle in (-pi, pi], yaw rate and yaw acceleration at time(s) t."""
    c = traj.curve
    if traj.kind == "virtual":
        psi, omega, alpha = heading_rates(c.eval(t, 0), c.eval(t, 1), c.eval(t, 2))
        return heading_to_angle(psi), omega, alpha
    return wrap_angle(c.eval(t, 0)[..., 0]), c.eval(t, 1)[..., 0], c.eval(t, 2)[..., 0]


def check_grid(curve: PiecewisePoly, n_check: int) -> NDArray[np.float64]:
    """n_check points per segment, both segment ends included."""
    knots = curve.knots
    return np.unique(
        np.concatenate(
            [np.linspace(knots[i], knots[i + 1], n_check) for i in range(curve.num_segments)]
        )
    )


def _rate_violations(omega: NDArray, alpha: NDArray, limits: YawLimits) -> list[str]:
    tol = 1e-9
    found = []
    if np.max(np.abs(omega), initial=0.0) > limits.v_psi_max + tol:
        found.append(f"|yaw rate| {np.max(np.abs(omega)):.3g} > {limits.v_psi_max:g}")
    if np.max(np.abs(alpha), initial=0.0) > limits.a_psi_max + tol:
        found.append(f"|yaw accel| {np.max(np.abs(alpha)):.3g} > {limits.a_psi_max:g}")
    return found


def plan_virtual_yaw(req: YawPlanRequest) -> YawTrajectory:
    """Minimum-acceleration spline of the virtual variable through the keyframes."""
    limits = req.limits
    bc0 = boundary_virtual(req.start.heading, req.start.omega, req.start.radius, req.start.r_dot)
    bcM = boundary_virtual(req.end.heading, req.end.omega, req.end.radius, req.end.r_dot)
    try:
        reg = insert_keyframes_until_regular(
            req.keyframe_headings, req.radii, req.durations, bc0, bcM, limits
        )
    except (InfeasibleError, SingularityError) as exc:
        waypoints = [heading_to_virtual(h, r) for h, r in zip(req.keyframe_headings, req.radii)]
        curve = solve_min_control(bc0, bcM, np.reshape(waypoints, (-1, 2)), req.durations)
        return YawTrajectory("virtual", curve, limits, Status.SINGULARITY, "virtual", message=str(exc))

    curve = reg.s_traj
    ts = check_grid(curve, req.n_check)
    s, s_dot, s_ddot = (curve.eval(ts, k) for k in range(3))
    problems = []
    radius = np.linalg.norm(s, axis=-1)
    if np.min(radius) < limits.r_min - 1e-9:
        return YawTrajectory(
            "virtual", curve, limits, Status.SINGULARITY, "virtual",
            message=f"radius {np.min(radius):.3g} < r_min",
        )
    if np.max(np.linalg.norm(s_dot, axis=-1)) > limits.v_s_max + 1e-9:
        problems.append(f"|s'| > v_s_max={limits.v_s_max:g}")
    if np.max(np.linalg.norm(s_ddot, axis=-1)) > limits.a_s_max + 1e-9:
        problems.append(f"|s''| > a_s_max={limits.a_s_max:g}")
    _, omega, alpha = heading_rates(s, s_dot, s_ddot)
    problems += _rate_violations(omega, alpha, limits)

    # Knot times of the requested keyframes inside the (possibly refined) curve.
    knot_times = np.cumsum(req.durations)[:-1]
    status = Status.BOUND_VIOLATION if problems else Status.SUCCESS
    return YawTrajectory(
        "virtual", curve, limits, status, "virtual", knot_times, "; ".join(problems)
    )


def _plan_angles(
    values: NDArray, durations: NDArray, start: YawBoundary, end: YawBoundary,
    limits: YawLimits, n_check: int, method: str,
) -> YawTrajectory:
    bc0 = BoundaryState([[values[0]], [start.omega]])
    bcM = BoundaryState([[values[-1]], [end.omega]])
    curve = solve_min_control(bc0, bcM, np.reshape(values[1:-1], (-1, 1)), durations)
    ts = check_grid(curve, n_check)
    problems = _rate_violations(curve.eval(ts, 1)[:, 0], curve.eval(ts, 2)[:, 0], limits)
    status = Status.BOUND_VIOLATION if problems else Status.SUCCESS
    return YawTrajectory(
        "angle", curve, limits, status, method, np.cumsum(durations)[:-1], "; ".join(problems)
    )


def plan_yaw_wrapped_baseline(
    angles: Sequence[float],
    durations: Sequence[float],
    start_omega: float = 0.0,
    end_omega: float = 0.0,
    limits: YawLimits | None = None,
    n_check: int = N_CHECK,
) -> YawTrajectory:
    """Spline the branch values in (-pi, pi] exactly as given, boundary included."""
    values = np.asarray(angles, dtype=float)
    if np.any(values <= -np.pi) or np.any(values > np.pi):
        raise ValueError("wrapped baseline expects every angle in (-pi, pi]")
    limits = limits or YawLimits()
    return _plan_angles(
        values, np.asarray(durations, dtype=float),
        YawBoundary.from_angle(values[0], start_omega), YawBoundary.from_angle(values[-1], end_omega),
        limits, n_check, "wrapped",
    )


def unwrap_nearest(angles: Sequence[float]) -> NDArray[np.float64]:
    """Replace each angle by its 2*pi-equivalent closest to the previous one.

    Exact ties go to the smaller candidate.
    """
    angles = np.asarray(angles, dtype=float)
    out = np.empty_like(angles)
    if len(angles) == 0:
        return out
    out[0] = angles[0]
    two_pi = 2.0 * np.pi
    for i in range(1, len(angles)):
        prev = out[i - 1]
        k = np.floor((prev - angles[i]) / two_pi)
        lower = angles[i] + k * two_pi
        upper = lower + two_pi
        out[i] = lower if prev - lower <= upper - prev else upper
    return out


def plan_yaw_unwrapped_baseline(
    angles: Sequence[float],
    durations: Sequence[float],
    start_omega: float = 0.0,
    end_omega: float = 0.0,
    limits: YawLimits | None = None,
    n_check: int = N_CHECK,
) -> YawTrajectory:
    """Spline the nearest-equivalent unwrapped sequence."""
    values = unwrap_nearest(angles)
    limits = limits or YawLimits()
    return _plan_angles(
        values, np.asarray(durations, dtype=float),
        YawBoundary.from_angle(values[0], start_omega), YawBoundary.from_angle(values[-1], end_omega),
        limits, n_check, "unwrapped",
    )


def yaw_distance(traj: YawTrajectory) -> float:
    """Accumulated |yaw rate| over the plan, for either representation."""
    if traj.kind == "virtual":
        return accumulated_yaw_distance(traj.curve)
    return _angle_variation(traj.curve)


def _angle_variation(curve: PiecewisePoly) -> float:
    """Total variation of a scalar polynomial curve via its rate roots."""
    total = 0.0
    deriv = curve.derivative()
    for c, c_dot, dt in zip(curve.coeffs[:, :, 0], deriv.coeffs[:, :, 0], curve.durations):
        roots = np.roots(c_dot[::-1]) if np.any(c_dot) else np.array([])
        cuts = sorted(
            float(r.real) for r in np.atleast_1d(roots)
            if abs(r.imag) < 1e-12 and 0.0 < r.real < dt
        )
        ts = np.array([0.0] + cuts + [dt])
        vals = np.polynomial.polynomial.polyval(ts, c)
        total += float(np.sum(np.abs(np.diff(vals))))
    return total


def yaw_acceleration_cost(traj: YawTrajectory, points: int = 32) -> float:
    """Integral of squared yaw acceleration by Gauss-Legendre quadrature per segment."""
    nodes, weights = np.polynomial.legendre.leggauss(points)
    knots = traj.curve.knots
    total = 0.0
    for i, dt in enumerate(traj.curve.durations):
        ts = knots[i] + 0.5 * dt * (nodes + 1.0)
        _, _, alpha = sample_yaw(traj, ts)
        total += 0.5 * float(dt) * float(np.dot(weights, alpha**2))
    return total


__all__ = [
    "EPS_SINGULAR",
    "N_CHECK",
    "Status",
    "YawBoundary",
    "YawPlanRequest",
    "YawTrajectory",
    "check_grid",
    "plan_virtual_yaw",
    "plan_yaw_unwrapped_baseline",
    "plan_yaw_wrapped_baseline",
    "sample_yaw",
    "unwrap_nearest",
    "yaw_acceleration_cost",
    "yaw_distance",
]
