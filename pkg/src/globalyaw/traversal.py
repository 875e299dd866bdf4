"""Joint position and virtual-yaw trajectory optimization.

The decision vector holds the interior waypoints, five numbers per knot
(position x, y, z and virtual yaw s_x, s_y). Both curves are the closed-form
minimum-acceleration cubic splines through those waypoints, so the spline
coefficients are affine in the decision vector. The objective adds weighted
control effort to penalty integrals evaluated by a midpoint rule, and its
gradient flows back through that affine map. A limited-memory BFGS loop
with a strong-Wolfe line search minimizes it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import block_diag

from . import penalties as pen
from .splines import (
    BoundaryState,
    MinControlSystem,
    PiecewisePoly,
    basis_row,
    control_effort,
    effort_matrix,
)
from .yawparam import (
    EPS_SINGULAR,
    SingularityError,
    YawLimits,
    boundary_virtual,
    heading_to_virtual,
    min_radius,
    normalize_heading,
)

log = logging.getLogger(__name__)

KAPPA = 2
T_FLOOR = 0.1


@dataclass(frozen=True, eq=False)
class Keyframe:
    """A position paired with a heading; ``time`` is only set for timed problems."""

    position: NDArray[np.float64]
    heading: NDArray[np.float64]
    radius_hint: float = 1.0
    time: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "heading", normalize_heading(np.asarray(self.heading, dtype=float)))
        if not self.radius_hint > 0:
            raise ValueError("radius_hint must be positive")

    @classmethod
    def from_angle(cls, position: ArrayLike, yaw: float, **kw) -> "Keyframe":
        return cls(position, np.array([np.cos(yaw), np.sin(yaw)]), **kw)


@dataclass(frozen=True)
class Weights:
    effort_position: float = 1.0
    effort_yaw: float = 1.0
    fov: float = 0.0
    velocity_alignment: float = 0.0
    image_velocity: float = 0.0
    yaw_dynamics: float = 0.0
    virtual_bounds: float = 0.0
    position_limits: float = 0.0
    waypoint_attraction: float = 0.0
    heading_attraction: float = 0.0

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"weights.{f.name} must be a finite non-negative number, got {value}")


PENALTY_NAMES = (
    "fov",
    "velocity_alignment",
    "image_velocity",
    "yaw_dynamics",
    "virtual_bounds",
    "position_limits",
)


@dataclass(frozen=True, eq=False)
class TraversalProblem:
    """Everything the joint optimizer needs besides the decision vector.

    ``keyframes`` are the interior keyframes, one per interior knot; the
    start and end are fixed by the boundary states. ``timed_reference`` is a
    target path w(t) in plan time, consumed by the FOV and image-velocity
    costs.
    """

    start_position: BoundaryState
    end_position: BoundaryState
    start_yaw: BoundaryState
    end_yaw: BoundaryState
    keyframes: Sequence[Keyframe]
    durations: NDArray[np.float64]
    timed_reference: PiecewisePoly | None = None
    limits: YawLimits = field(default_factory=YawLimits)
    v_max: float = 2.0
    a_max: float = 5.0
    v_w_max: float = 1.0
    fov: pen.FovModel = field(default_factory=pen.FovModel)
    weights: Weights = field(default_factory=Weights)
    hard_positions: bool = False
    hard_headings: bool = False
    quadrature_n: int = 8

    def __post_init__(self) -> None:
        durations = np.asarray(self.durations, dtype=float).reshape(-1)
        object.__setattr__(self, "durations", durations)
        object.__setattr__(self, "keyframes", tuple(self.keyframes))
        if np.any(~np.isfinite(durations)) or np.any(durations <= 0):
            raise ValueError("durations must be strictly positive")
        if len(self.keyframes) != len(durations) - 1:
            raise ValueError(
                f"{len(durations)} segments need {len(durations) - 1} interior keyframes"
            )
        for kf in self.keyframes:
            if kf.radius_hint < self.limits.r_min:
                raise ValueError("keyframe radius_hint below r_min")
        if self.quadrature_n < 1:
            raise ValueError("quadrature_n must be >= 1")
        if self.timed_reference is not None and self.timed_reference.dim != 3:
            raise ValueError("timed_reference must be a 3-D curve")

    @property
    def num_segments(self) -> int:
        return len(self.durations)

    @property
    def total_duration(self) -> float:
        return float(np.sum(self.durations))


def problem_from_keyframes(
    keyframes: Sequence[Keyframe],
    durations: Sequence[float] | None = None,
    start_velocity: ArrayLike = (0.0, 0.0, 0.0),
    end_velocity: ArrayLike = (0.0, 0.0, 0.0),
    start_omega: float = 0.0,
    end_omega: float = 0.0,
    v_nominal: float = 1.0,
    omega_nominal: float = 1.0,
    **kw,
) -> TraversalProblem:
    """First and last keyframes become the boundary states; the rest are interior."""
    if len(keyframes) < 2:
        raise ValueError("need at least two keyframes")
    first, last = keyframes[0], keyframes[-1]
    if durations is None:
        if all(k.time is not None for k in keyframes):
            durations = np.diff([k.time for k in keyframes])
        else:
            durations = allocate_times(keyframes, v_nominal, omega_nominal)
    return TraversalProblem(
        BoundaryState(np.stack([first.position, np.asarray(start_velocity, float)])),
        BoundaryState(np.stack([last.position, np.asarray(end_velocity, float)])),
        boundary_virtual(first.heading, start_omega, first.radius_hint),
        boundary_virtual(last.heading, end_omega, last.radius_hint),
        keyframes[1:-1],
        np.asarray(durations, dtype=float),
        **kw,
    )


def allocate_times(
    keyframes: Sequence[Keyframe], v_nominal: float = 1.0, omega_nominal: float = 1.0
) -> NDArray[np.float64]:
    """Per-segment max(distance / v_nominal, heading gap / omega_nominal, 0.1 s)."""
    if not (v_nominal > 0 and omega_nominal > 0):
        raise ValueError("nominal rates must be positive")
    if len(keyframes) < 2:
        raise ValueError("need at least two keyframes")
    out = []
    for a, b in zip(keyframes[:-1], keyframes[1:]):
        dist = float(np.linalg.norm(b.position - a.position))
        gap = float(np.arccos(np.clip(np.dot(a.heading, b.heading), -1.0, 1.0)))
        out.append(max(dist / v_nominal, gap / omega_nominal, T_FLOOR))
    return np.asarray(out)


def pack_decision(problem: TraversalProblem) -> NDArray[np.float64]:
    """Keyframe initialization: keyframe positions and virtual points at radius_hint."""
    rows = [
        np.concatenate([kf.position, heading_to_virtual(kf.heading, kf.radius_hint)])
        for kf in problem.keyframes
    ]
    return np.asarray(rows, dtype=float).reshape(-1)


def unpack_decision(
    x: ArrayLike, num_segments: int
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Split x into (M-1, 3) positions and (M-1, 2) virtual waypoints."""
    x = np.asarray(x, dtype=float)
    if x.shape != (5 * (num_segments - 1),):
        raise ValueError(f"decision vector must have length {5 * (num_segments - 1)}, got {x.shape}")
    grid = x.reshape(num_segments - 1, 5)
    return grid[:, :3].copy(), grid[:, 3:].copy()


def free_mask(problem: TraversalProblem) -> NDArray[np.bool_]:
    mask = np.ones((problem.num_segments - 1, 5), dtype=bool)
    if problem.hard_positions:
        mask[:, :3] = False
    if problem.hard_headings:
        mask[:, 3:] = False
    return mask.reshape(-1)


class TraversalObjective:
    """Cost and gradient of one problem; precomputes every x-independent piece."""

    def __init__(self, problem: TraversalProblem) -> None:
        self.problem = problem
        M = problem.num_segments
        self.system = MinControlSystem(problem.durations, KAPPA)
        n_coef = self.system.degree + 1
        size = self.system.size

        # Sensitivity of the coefficients to each interior waypoint.
        select = np.zeros((size, M - 1))
        for i in range(M - 1):
            r0, r1 = self.system.waypoint_rows(i)
            select[r0, i] = select[r1, i] = 1.0
        self.sens = self.system.solve(select) if M > 1 else np.zeros((size, 0))
        empty3, empty2 = np.zeros((M - 1, 3)), np.zeros((M - 1, 2))
        self.base_p = self.system.solve(
            self.system.rhs(problem.start_position, problem.end_position, empty3)
        )
        self.base_s = self.system.solve(self.system.rhs(problem.start_yaw, problem.end_yaw, empty2))
        self.Q = block_diag(*[effort_matrix(dt, self.system.degree, KAPPA) for dt in problem.durations])

        n = problem.quadrature_n
        local = (np.arange(n) + 0.5) / n
        knots = np.concatenate([[0.0], np.cumsum(problem.durations)])
        self.times = np.concatenate([knots[i] + local * dt for i, dt in enumerate(problem.durations)])
        self.qweights = np.repeat(problem.durations / n, n)
        self.basis = []
        for k in range(4):
            B = np.zeros((M * n, size))
            for i, dt in enumerate(problem.durations):
                B[i * n : (i + 1) * n, i * n_coef : (i + 1) * n_coef] = basis_row(local * dt, self.system.degree, k)
            self.basis.append(B)
        # Sample maps straight from waypoints, and the boundary-only offsets.
        self.samp_sens = [B @ self.sens for B in self.basis]
        self.samp_base_p = [B @ self.base_p for B in self.basis]
        self.samp_base_s = [B @ self.base_s for B in self.basis]
        self.eff_sens = self.sens.T @ self.Q

        if problem.timed_reference is not None:
            ref = problem.timed_reference
            tt = np.clip(self.times, 0.0, ref.total_duration)
            self.target = ref.eval(tt, 0)
            self.target_dot = ref.eval(tt, 1)
        else:
            self.target = self.target_dot = None
        self.kf_positions = np.array([kf.position for kf in problem.keyframes]).reshape(-1, 3)
        self.kf_headings = np.array([kf.heading for kf in problem.keyframes]).reshape(-1, 2)

    def coefficients(self, x: ArrayLike) -> tuple[NDArray, NDArray]:
        P, S = unpack_decision(x, self.problem.num_segments)
        return self.base_p + self.sens @ P, self.base_s + self.sens @ S

    def trajectories(self, x: ArrayLike) -> tuple[PiecewisePoly, PiecewisePoly]:
        cp, cs = self.coefficients(x)
        return self.system.to_poly(cp), self.system.to_poly(cs)

    def flat_samples(self, x: ArrayLike) -> pen.FlatState:
        P, S = unpack_decision(x, self.problem.num_segments)
        pk = [b + A @ P for b, A in zip(self.samp_base_p, self.samp_sens)]
        sk = [b + A @ S for b, A in zip(self.samp_base_s, self.samp_sens[:3])]
        return pen.FlatState(pk[0], pk[1], pk[2], sk[0], sk[1], sk[2], pk[3])

    def penalty_terms(self, state: pen.FlatState) -> dict[str, pen.CostGrad]:
        prob, w = self.problem, self.problem.weights
        terms: dict[str, pen.CostGrad] = {}
        if w.fov > 0 and self.target is not None:
            terms["fov"] = pen.fov_relaxed_cost(state, self.target, prob.fov, w.fov)
        if w.velocity_alignment > 0:
            terms["velocity_alignment"] = pen.velocity_alignment_cost(state, prob.fov, w.velocity_alignment)
        if w.image_velocity > 0 and self.target is not None:
            terms["image_velocity"] = pen.image_velocity_cost(
                state, self.target, self.target_dot, prob.v_w_max, w.image_velocity
            )
        if w.yaw_dynamics > 0:
            terms["yaw_dynamics"] = pen.yaw_dynamics_cost(state, prob.limits, w.yaw_dynamics)
        if w.virtual_bounds > 0:
            terms["virtual_bounds"] = pen.virtual_bounds_cost(state, prob.limits, w.virtual_bounds)
        if w.position_limits > 0:
            terms["position_limits"] = pen.position_limits_cost(state, prob.v_max, prob.a_max, w.position_limits)
        return terms

    def evaluate(self, x: ArrayLike) -> tuple[float, NDArray[np.float64], dict[str, float]]:
        """Objective, gradient and per-term breakdown."""
        x = np.asarray(x, dtype=float)
        prob, w = self.problem, self.problem.weights
        M = prob.num_segments
        P, S = unpack_decision(x, M)
        radius = np.linalg.norm(S, axis=-1)
        if np.any(radius < EPS_SINGULAR):
            raise SingularityError(float(np.min(radius)))

        cp = self.base_p + self.sens @ P
        cs = self.base_s + self.sens @ S
        Qcp, Qcs = self.Q @ cp, self.Q @ cs
        breakdown = {
            "effort_position": w.effort_position * float(np.sum(cp * Qcp)),
            "effort_yaw": w.effort_yaw * float(np.sum(cs * Qcs)),
        }
        gP = 2.0 * w.effort_position * (self.sens.T @ Qcp)
        gS = 2.0 * w.effort_yaw * (self.sens.T @ Qcs)

        state = self.flat_samples(x)
        terms = self.penalty_terms(state)
        if terms:
            qw = self.qweights
            total = pen.CostGrad.zeros(state.batch_shape)
            for name, term in terms.items():
                breakdown[name] = float(np.dot(qw, term.value))
                total += term
            qwc = qw[:, None]
            A0, A1, A2, A3 = self.samp_sens
            gP += A0.T @ (qwc * total.d_p) + A1.T @ (qwc * total.d_v)
            gP += A2.T @ (qwc * total.d_a) + A3.T @ (qwc * total.d_j)
            gS += A0.T @ (qwc * total.d_s) + A1.T @ (qwc * total.d_s_dot) + A2.T @ (qwc * total.d_s_ddot)

        if w.waypoint_attraction > 0 and M > 1:
            diff = P - self.kf_positions
            breakdown["waypoint_attraction"] = w.waypoint_attraction * float(np.sum(diff**2))
            gP += 2.0 * w.waypoint_attraction * diff
        if w.heading_attraction > 0 and M > 1:
            psi = S / radius[:, None]
            diff = psi - self.kf_headings
            breakdown["heading_attraction"] = w.heading_attraction * float(np.sum(diff**2))
            g_psi = 2.0 * w.heading_attraction * diff
            g_psi -= np.sum(g_psi * psi, axis=-1, keepdims=True) * psi
            gS += g_psi / radius[:, None]

        grad = np.concatenate([gP, gS], axis=1).reshape(-1)
        return float(sum(breakdown.values())), grad, breakdown

    def quadratic_minimizer(self) -> NDArray[np.float64]:
        """Decision vector minimizing the effort terms alone (closed form)."""
        w = self.problem.weights
        M = self.problem.num_segments
        H = self.sens.T @ self.Q @ self.sens
        P = -np.linalg.solve(H, self.eff_sens @ self.base_p) if M > 1 else np.zeros((0, 3))
        S = -np.linalg.solve(H, self.eff_sens @ self.base_s) if M > 1 else np.zeros((0, 2))
        if w.effort_position == 0:
            P = self.kf_positions.copy()
        if w.effort_yaw == 0:
            S = self.kf_headings.copy()
        return np.concatenate([P, S], axis=1).reshape(-1)


def objective_and_gradient(problem: TraversalProblem, x: ArrayLike) -> tuple[float, NDArray[np.float64]]:
    J, g, _ = TraversalObjective(problem).evaluate(x)
    return J, g


def finite_diff_check(
    problem: TraversalProblem, x: ArrayLike, h: float = 1e-6, objective: TraversalObjective | None = None
) -> float:
    """Worst gradient component error against central differences.

    Errors are measured relative to the largest finite-difference component,
    floored at 1e-4 so that near-zero gradients are judged on an absolute
    1e-8 scale at the usual 1e-4 tolerance.
    """
    if not h > 0:
        raise ValueError("step must be positive")
    obj = objective or TraversalObjective(problem)
    x = np.asarray(x, dtype=float)
    _, g, _ = obj.evaluate(x)
    fd = np.zeros_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd[i] = (obj.evaluate(xp)[0] - obj.evaluate(xm)[0]) / (2.0 * h)
    if len(x) == 0:
        return 0.0
    return float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-4))


@dataclass(frozen=True, eq=False)
class TraversalSolution:
    position_traj: PiecewisePoly
    virtual_yaw_traj: PiecewisePoly
    final_cost: float
    iterations: int
    converged: bool
    breakdown: dict[str, float]
    x: NDArray[np.float64]
    cost_history: tuple[float, ...] = ()
    message: str = ""

    @property
    def durations(self) -> NDArray[np.float64]:
        return self.position_traj.durations


@dataclass(frozen=True)
class SolverOptions:
    memory: int = 8
    c1: float = 1e-4
    c2: float = 0.9
    g_tol: float = 1e-6
    max_iters: int = 500


def strong_wolfe(
    phi: Callable[[float], tuple[float, float]],
    f0: float,
    d0: float,
    alpha: float = 1.0,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_evals: int = 40,
) -> tuple[float, float] | None:
    """Step satisfying the strong Wolfe conditions, by bracketing then zoom.

    ``phi(a)`` returns value and directional derivative at step ``a``; a
    non-finite value rejects the trial. When zoom runs out of evaluations the
    best sufficient-decrease step is returned; None means no decrease found.
    """
    evals = 0

    def zoom(lo, f_lo, d_lo, hi, f_hi):
        nonlocal evals
        while evals < max_evals:
            width = hi - lo
            a = lo + 0.5 * width
            if np.isfinite(f_hi):
                denom = 2.0 * (f_hi - f_lo - d_lo * width)
                if denom > 0:
                    cand = lo - d_lo * width * width / denom
                    if min(lo, hi) + 0.1 * abs(width) < cand < max(lo, hi) - 0.1 * abs(width):
                        a = cand
            f_a, d_a = phi(a)
            evals += 1
            if not np.isfinite(f_a) or f_a > f0 + c1 * a * d0 or f_a >= f_lo:
                hi, f_hi = a, f_a
            else:
                if abs(d_a) <= -c2 * d0:
                    return a, f_a
                if d_a * (hi - lo) >= 0:
                    hi, f_hi = lo, f_lo
                lo, f_lo, d_lo = a, f_a, d_a
            if abs(hi - lo) <= 1e-14 * max(1.0, abs(lo)):
                break
        return (lo, f_lo) if lo > 0 else None

    a_prev, f_prev, d_prev = 0.0, f0, d0
    while evals < max_evals:
        f_a, d_a = phi(alpha)
        evals += 1
        if not np.isfinite(f_a) or f_a > f0 + c1 * alpha * d0 or (a_prev > 0 and f_a >= f_prev):
            return zoom(a_prev, f_prev, d_prev, alpha, f_a)
        if abs(d_a) <= -c2 * d0:
            return alpha, f_a
        if d_a >= 0:
            return zoom(alpha, f_a, d_a, a_prev, f_prev)
        a_prev, f_prev, d_prev = alpha, f_a, d_a
        alpha *= 2.0
    return (a_prev, f_prev) if a_prev > 0 else None


def lbfgs(
    fun: Callable[[NDArray], tuple[float, NDArray]],
    x0: NDArray[np.float64],
    opts: SolverOptions = SolverOptions(),
) -> tuple[NDArray, float, NDArray, int, bool, list[float], str]:
    """Two-loop L-BFGS with a strong-Wolfe line search.

    Returns (x, f, g, iterations, converged, history, message). Trial points
    where ``fun`` raises a singularity are treated as infinitely expensive.
    """

    def evaluate(x: NDArray) -> tuple[float, NDArray]:
        try:
            f, g = fun(x)
        except SingularityError:
            return np.inf, np.full_like(x, np.nan)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, np.full_like(x, np.nan)
        return f, g

    def converged(f: float, g: NDArray) -> bool:
        return bool(np.max(np.abs(g), initial=0.0) <= opts.g_tol * max(1.0, abs(f)))

    x = np.asarray(x0, dtype=float).copy()
    f, g = evaluate(x)
    if not np.isfinite(f):
        raise SingularityError(0.0)
    history = [f]
    s_hist: list[NDArray] = []
    y_hist: list[NDArray] = []
    for it in range(opts.max_iters):
        if converged(f, g):
            return x, f, g, it, True, history, "gradient tolerance reached"
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            a = np.dot(s, q) / np.dot(y, s)
            alphas.append(a)
            q -= a * y
        if s_hist:
            q *= np.dot(s_hist[-1], y_hist[-1]) / np.dot(y_hist[-1], y_hist[-1])
        for (s, y), a in zip(zip(s_hist, y_hist), reversed(alphas)):
            q += s * (a - np.dot(y, q) / np.dot(y, s))
        direction = -q
        if not s_hist or np.dot(direction, g) >= 0:
            # No curvature yet: unit-length steepest-descent step.
            direction = -g / max(np.linalg.norm(g), 1e-300)
            s_hist.clear()
            y_hist.clear()

        trial: dict[float, tuple[float, NDArray]] = {}

        def phi(a: float) -> tuple[float, float]:
            trial[a] = evaluate(x + a * direction)
            fa, ga = trial[a]
            return fa, float(np.dot(ga, direction)) if np.isfinite(fa) else np.nan

        found = strong_wolfe(phi, f, float(np.dot(g, direction)), 1.0, opts.c1, opts.c2)
        if found is None and s_hist:
            s_hist.clear()
            y_hist.clear()
            direction = -g / max(np.linalg.norm(g), 1e-300)
            trial.clear()
            found = strong_wolfe(phi, f, float(np.dot(g, direction)), 1.0, opts.c1, opts.c2)
        if found is None:
            return x, f, g, it, False, history, "line search failed"
        step, _ = found
        x_new = x + step * direction
        f_new, g_new = trial[step]
        s, y = x_new - x, g_new - g
        if np.dot(s, y) > 1e-12 * np.dot(y, y):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > opts.memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        history.append(f)
    return x, f, g, opts.max_iters, converged(f, g), history, "iteration limit"


def solve_traversal(
    problem: TraversalProblem,
    x0: ArrayLike | None = None,
    options: SolverOptions = SolverOptions(),
) -> TraversalSolution:
    """Minimize the joint objective over the free interior waypoints."""
    obj = TraversalObjective(problem)
    x_full = pack_decision(problem) if x0 is None else np.asarray(x0, dtype=float).copy()
    if x0 is not None:
        # Hard coordinates always sit on their keyframe values.
        hard = ~free_mask(problem)
        x_full[hard] = pack_decision(problem)[hard]
    mask = free_mask(problem)
    _, S0 = unpack_decision(x_full, problem.num_segments)
    if len(S0) and np.min(np.linalg.norm(S0, axis=-1)) < EPS_SINGULAR:
        raise SingularityError(
            float(np.min(np.linalg.norm(S0, axis=-1))),
            hint="re-initialize the virtual waypoints with a larger radius",
        )

    def fun(z: NDArray) -> tuple[float, NDArray]:
        xx = x_full.copy()
        xx[mask] = z
        J, g, _ = obj.evaluate(xx)
        return J, g[mask]

    if mask.any():
        z, f, g, iters, converged, history, msg = lbfgs(fun, x_full[mask], options)
        x_full[mask] = z
    else:
        f, _, _ = obj.evaluate(x_full)
        iters, converged, history, msg = 0, True, [f], "no free variables"

    f, _, breakdown = obj.evaluate(x_full)
    pos, yaw = obj.trajectories(x_full)
    if converged and problem.weights.virtual_bounds > 0:
        r, t = min_radius(yaw)
        if r < problem.limits.r_min - 1e-6:
            converged = False
            msg = f"virtual radius {r:.4g} < r_min at t={t:.3g}"
    return TraversalSolution(pos, yaw, f, iters, converged, breakdown, x_full, tuple(history), msg)


def with_weights(problem: TraversalProblem, **changes: float) -> TraversalProblem:
    return replace(problem, weights=replace(problem.weights, **changes))
