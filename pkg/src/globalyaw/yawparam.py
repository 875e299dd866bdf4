"""Global yaw parameterization through an unnormalized planar virtual variable.

A heading on the unit circle is represented by any nonzero point ``s`` in the
plane; normalization ``s / |s|`` recovers the heading. Splining ``s`` instead
of the yaw angle removes the branch cut at +-pi, leaving the origin as the only
singular point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import minimize_scalar

from .splines import BoundaryState, PiecewisePoly, solve_min_control

EPS_SINGULAR = 1e-6
SAMPLES_PER_SEGMENT = 100


class SingularityError(ArithmeticError):
    """The virtual variable came closer to the origin than ``EPS_SINGULAR``."""

    def __init__(self, radius: float, t: float | None = None, hint: str = "") -> None:
        where = "" if t is None else f" at t={t:.6g}"
        hint = f"; {hint}" if hint else ""
        super().__init__(f"virtual yaw radius {radius:.3g} below {EPS_SINGULAR:g}{where}{hint}")
        self.radius = radius
        self.t = t


class InfeasibleError(RuntimeError):
    """Keyframe insertion could not lift the virtual curve off the origin."""


@dataclass(frozen=True)
class YawLimits:
    """Dynamic bounds on the heading and on the virtual variable.

    Attributes:
        v_psi_max: max yaw rate [rad/s].
        a_psi_max: max yaw acceleration [rad/s^2].
        v_s_max: max virtual velocity norm.
        a_s_max: max virtual acceleration norm.
        r_min: lower bound on the virtual radius.
    """

    v_psi_max: float = 3.0
    a_psi_max: float = 6.0
    v_s_max: float = 10.0
    a_s_max: float = 20.0
    r_min: float = 0.5

    def __post_init__(self) -> None:
        for name in ("v_psi_max", "a_psi_max", "v_s_max", "a_s_max", "r_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class VirtualYawState:
    s: NDArray[np.float64]
    s_dot: NDArray[np.float64]
    s_ddot: NDArray[np.float64]

    def __post_init__(self) -> None:
        for name in ("s", "s_dot", "s_ddot"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))


def angle_to_heading(angle: ArrayLike) -> NDArray[np.float64]:
    angle = np.asarray(angle, dtype=float)
    return np.stack([np.cos(angle), np.sin(angle)], axis=-1)


def heading_to_angle(psi: ArrayLike) -> NDArray[np.float64] | float:
    psi = np.asarray(psi, dtype=float)
    return np.arctan2(psi[..., 1], psi[..., 0])


def wrap_angle(angle: ArrayLike) -> NDArray[np.float64]:
    """Reduce to the branch (-pi, pi]."""
    angle = np.asarray(angle, dtype=float)
    out = np.mod(angle + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def _check_radius(r: NDArray, t: ArrayLike | None = None) -> None:
    bad = r < EPS_SINGULAR
    if np.any(bad):
        i = int(np.argmax(bad)) if np.ndim(r) else 0
        t_bad = None if t is None else float(np.ravel(t)[i])
        raise SingularityError(float(np.ravel(r)[i]), t_bad)


def normalize_heading(s: ArrayLike) -> NDArray[np.float64]:
    """Heading vector s / |s|; works row-wise on (n, 2) input."""
    s = np.asarray(s, dtype=float)
    r = np.linalg.norm(s, axis=-1)
    _check_radius(r)
    return s / r[..., None]


def heading_to_virtual(psi: ArrayLike, r: float) -> NDArray[np.float64]:
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    return float(r) * np.asarray(psi, dtype=float)


def _cross(a: NDArray, b: NDArray) -> NDArray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def heading_rates(
    s: ArrayLike, s_dot: ArrayLike, s_ddot: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Heading, signed yaw rate and yaw acceleration of ``s(t)/|s(t)|``.

    All arguments may be stacked as (n, 2); the rates then have shape (n,).
    """
    s = np.asarray(s, dtype=float)
    s_dot = np.asarray(s_dot, dtype=float)
    s_ddot = np.asarray(s_ddot, dtype=float)
    r2 = np.sum(s * s, axis=-1)
    _check_radius(np.sqrt(r2))
    cross_v = _cross(s, s_dot)
    omega = cross_v / r2
    alpha = _cross(s, s_ddot) / r2 - 2.0 * np.sum(s * s_dot, axis=-1) * cross_v / r2**2
    return s / np.sqrt(r2)[..., None], omega, alpha


def state_rates(state: VirtualYawState) -> tuple[NDArray, float, float]:
    psi, omega, alpha = heading_rates(state.s, state.s_dot, state.s_ddot)
    return psi, float(omega), float(alpha)


def boundary_virtual(
    psi: ArrayLike, omega: float, r: float, r_dot: float = 0.0
) -> BoundaryState:
    """Virtual (value, rate) pair whose heading and yaw rate are ``psi``, ``omega``."""
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    psi = np.asarray(psi, dtype=float)
    perp = np.array([-psi[1], psi[0]])
    return BoundaryState(np.stack([r * psi, r_dot * psi + r * omega * perp]))


def _grid(pp: PiecewisePoly, per_segment: int) -> NDArray[np.float64]:
    knots = pp.knots
    pieces = [
        np.linspace(knots[i], knots[i + 1], per_segment + 1)[:-1]
        for i in range(pp.num_segments)
    ]
    return np.concatenate(pieces + [[knots[-1]]])


def accumulated_yaw_distance(
    s_traj: PiecewisePoly, per_segment: int = SAMPLES_PER_SEGMENT
) -> float:
    """Integral of |yaw rate| over the whole curve.

    Summed as absolute heading increments between consecutive grid points,
    i.e. the exact integral of the yaw rate on each sub-interval; the result
    is exact whenever the rate keeps its sign inside each sub-interval.
    """
    ts = _grid(s_traj, per_segment)
    s = s_traj.eval(ts)
    r = np.linalg.norm(s, axis=-1)
    _check_radius(r, ts)
    psi = s / r[:, None]
    steps = np.arctan2(_cross(psi[:-1], psi[1:]), np.sum(psi[:-1] * psi[1:], axis=-1))
    return float(np.sum(np.abs(steps)))


def min_radius(
    s_traj: PiecewisePoly, per_segment: int = SAMPLES_PER_SEGMENT
) -> tuple[float, float]:
    """Smallest |s(t)| and where it occurs; grid search plus golden refinement."""
    ts = _grid(s_traj, per_segment)
    r = np.linalg.norm(s_traj.eval(ts), axis=-1)
    i = int(np.argmin(r))
    best_r, best_t = float(r[i]), float(ts[i])
    lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, len(ts) - 1)]
    if hi > lo:
        res = minimize_scalar(
            lambda t: float(np.linalg.norm(s_traj.eval(t))),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-10},
        )
        if res.fun < best_r:
            best_r, best_t = float(res.fun), float(res.x)
    return best_r, best_t


def spherical_midpoint(psi_a: ArrayLike, psi_b: ArrayLike) -> NDArray[np.float64]:
    """Midpoint on the circle; antipodal pairs resolve counter-clockwise from ``psi_a``."""
    psi_a = np.asarray(psi_a, dtype=float)
    mid = psi_a + np.asarray(psi_b, dtype=float)
    n = np.linalg.norm(mid)
    if n < 1e-9:
        return np.array([-psi_a[1], psi_a[0]])
    return mid / n


@dataclass(frozen=True)
class RegularizedYaw:
    headings: NDArray[np.float64]
    radii: NDArray[np.float64]
    durations: NDArray[np.float64]
    s_traj: PiecewisePoly
    insertions: int


def insert_keyframes_until_regular(
    headings: Sequence[ArrayLike],
    radii: Sequence[float],
    durations: Sequence[float],
    bc0: BoundaryState,
    bcM: BoundaryState,
    limits: YawLimits,
    max_insertions: int | None = None,
) -> RegularizedYaw:
    """Split segments whose virtual curve dips below ``r_min`` until none does.

    ``headings``/``radii`` are the interior keyframes; the end headings come
    from the boundary states. Each round inserts the circle midpoint of the
    first offending segment's end headings, at the mean of their radii, in the
    middle of that segment.
    """
    headings = [np.asarray(h, dtype=float) for h in headings]
    radii = [float(r) for r in radii]
    durations = [float(d) for d in durations]
    if len(durations) != len(headings) + 1 or len(radii) != len(headings):
        raise ValueError("need one more duration than interior headings, one radius each")
    if any(r < limits.r_min for r in radii):
        raise ValueError("keyframe radii must be at least r_min")
    if max_insertions is None:
        max_insertions = 3 * len(durations)

    end_s = [bc0.derivatives[0], bcM.derivatives[0]]
    inserted = 0
    while True:
        waypoints = [heading_to_virtual(h, r) for h, r in zip(headings, radii)]
        s_traj = solve_min_control(bc0, bcM, np.reshape(waypoints, (-1, 2)), durations)
        offending = None
        for i in range(len(durations)):
            segment = PiecewisePoly(s_traj.coeffs[i : i + 1], s_traj.durations[i : i + 1])
            if min_radius(segment)[0] < limits.r_min:
                offending = i
                break
        if offending is None:
            return RegularizedYaw(
                np.reshape(headings, (-1, 2)), np.asarray(radii), np.asarray(durations), s_traj, inserted
            )
        if inserted >= max_insertions:
            raise InfeasibleError(
                f"segment {offending} still below r_min={limits.r_min} after {inserted} insertions"
            )
        nodes = [end_s[0]] + waypoints + [end_s[1]]
        a, b = nodes[offending], nodes[offending + 1]
        ra, rb = np.linalg.norm(a), np.linalg.norm(b)
        _check_radius(np.array([ra, rb]))
        headings.insert(offending, spherical_midpoint(a / ra, b / rb))
        radii.insert(offending, max(0.5 * (ra + rb), limits.r_min))
        half = 0.5 * durations[offending]
        durations[offending : offending + 1] = [half, half]
        inserted += 1
