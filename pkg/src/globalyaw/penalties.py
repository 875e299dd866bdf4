"""Penalty functionals coupling position and virtual yaw.

Every cost maps a :class:`FlatState` to a :class:`CostGrad` holding the value
and its analytic gradient with respect to each state component. States may be
stacked along leading axes (one row per quadrature sample); values and
gradients then carry the same leading shape.

Inequality violations ``raw > 0`` are penalized through the cubic hinge
``max(raw, 0)**3``, which is C2 and exactly zero on the feasible side.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .yawparam import EPS_SINGULAR, SingularityError, YawLimits

GRAVITY = 9.81
E3 = np.array([0.0, 0.0, 1.0])
ROTATION_STEP = 1e-20


def _arr(x: ArrayLike, n: int) -> NDArray[np.float64]:
    a = np.asarray(x, dtype=float)
    if a.shape[-1] != n:
        raise ValueError(f"expected trailing dimension {n}, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class FlatState:
    """Position and virtual-yaw derivatives at one or more instants.

    ``j`` (jerk) is only consumed by the image-velocity cost, which needs the
    attitude rate.
    """

    p: NDArray[np.float64]
    v: NDArray[np.float64]
    a: NDArray[np.float64]
    s: NDArray[np.float64]
    s_dot: NDArray[np.float64]
    s_ddot: NDArray[np.float64]
    j: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        for name, n in (("p", 3), ("v", 3), ("a", 3), ("s", 2), ("s_dot", 2), ("s_ddot", 2)):
            object.__setattr__(self, name, _arr(getattr(self, name), n))
        jerk = np.zeros_like(self.a) if self.j is None else _arr(self.j, 3)
        object.__setattr__(self, "j", jerk)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.p.shape[:-1]

    @classmethod
    def hover(cls, p: ArrayLike = (0.0, 0.0, 0.0), s: ArrayLike = (1.0, 0.0)) -> "FlatState":
        z3, z2 = np.zeros(3), np.zeros(2)
        return cls(np.asarray(p, float), z3, z3, np.asarray(s, float), z2, z2)


@dataclass(frozen=True, eq=False)
class FovModel:
    """Horizontal camera aperture and velocity-deviation threshold [rad].

    ``sign=+1`` measures the target direction robot-to-target, ``-1`` uses
    the position-minus-target convention. Only the yaw of the optical axis
    in ``camera_to_body`` affects the cone test; the apparent target speed is
    invariant to a fixed camera mounting.
    """

    theta: float = np.deg2rad(87.0)
    theta_r: float = np.pi / 4.0
    camera_to_body: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    sign: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "camera_to_body", np.asarray(self.camera_to_body, dtype=float))
        if not 0.0 < self.theta < 2.0 * np.pi:
            raise ValueError("theta must lie in (0, 2*pi)")
        if not 0.0 < self.theta_r < np.pi:
            raise ValueError("theta_r must lie in (0, pi)")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    @property
    def axis_yaw(self) -> NDArray[np.float64]:
        """2x2 rotation taking the body heading to the optical axis heading."""
        axis = self.camera_to_body[:, 0]
        ang = np.arctan2(axis[1], axis[0])
        c, s = np.cos(ang), np.sin(ang)
        return np.array([[c, -s], [s, c]])


@dataclass
class CostGrad:
    value: NDArray[np.float64]
    d_p: NDArray[np.float64]
    d_v: NDArray[np.float64]
    d_a: NDArray[np.float64]
    d_s: NDArray[np.float64]
    d_s_dot: NDArray[np.float64]
    d_s_ddot: NDArray[np.float64]
    d_j: NDArray[np.float64]

    @classmethod
    def zeros(cls, batch: tuple[int, ...]) -> "CostGrad":
        z3, z2 = np.zeros(batch + (3,)), np.zeros(batch + (2,))
        return cls(np.zeros(batch), z3, z3.copy(), z3.copy(), z2, z2.copy(), z2.copy(), z3.copy())

    def __iadd__(self, other: "CostGrad") -> "CostGrad":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def scaled(self, factor: float | NDArray) -> "CostGrad":
        factor = np.asarray(factor, dtype=float)
        out = {}
        for f in fields(self):
            g = getattr(self, f.name)
            out[f.name] = g * (factor if g.ndim == factor.ndim else factor[..., None])
        return CostGrad(**out)

    def total(self) -> float:
        return float(np.sum(self.value))


def hinge_cubic(x: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """max(x, 0)**3 and its derivative."""
    pos = np.maximum(np.asarray(x, dtype=float), 0.0)
    return pos**3, 3.0 * pos**2


def _require_radius(s: NDArray) -> NDArray:
    r = np.linalg.norm(s, axis=-1)
    if np.any(r < EPS_SINGULAR):
        raise SingularityError(float(np.min(r)))
    return r


def _heading_and_jacobian(s: NDArray) -> tuple[NDArray, NDArray]:
    """psi = s/|s| and d psi / d s = (I - psi psi^T)/|s|."""
    r = _require_radius(s)
    psi = s / r[..., None]
    jac = (np.eye(2) - psi[..., :, None] * psi[..., None, :]) / r[..., None, None]
    return psi, jac


def _skew(x: NDArray) -> NDArray:
    out = np.zeros(x.shape[:-1] + (3, 3), dtype=x.dtype)
    out[..., 0, 1], out[..., 0, 2] = -x[..., 2], x[..., 1]
    out[..., 1, 0], out[..., 1, 2] = x[..., 2], -x[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -x[..., 1], x[..., 0]
    return out


def _norm(x: NDArray) -> NDArray:
    # sqrt of the sum of squares stays analytic for complex-step input
    return np.sqrt(np.sum(x * x, axis=-1))


class DegenerateAttitudeError(ArithmeticError):
    """Thrust direction undefined (free fall) or heading parallel to thrust."""


def rotation_with_jacobian(a: ArrayLike, s: ArrayLike) -> tuple[NDArray, NDArray, NDArray]:
    """Body rotation from acceleration and (unnormalized) heading plus Jacobians.

    Returns R (..., 3, 3) and dR/da (..., 3, 3, 3), dR/ds (..., 3, 3, 2).
    Complex inputs are accepted for complex-step differentiation.
    """
    a = np.asarray(a)
    s = np.asarray(s)
    thrust = a + GRAVITY * E3
    n = _norm(thrust)
    if np.any(n.real < 1e-6):
        raise DegenerateAttitudeError("zero thrust: attitude undefined")
    if np.any(_norm(s).real < EPS_SINGULAR):
        raise SingularityError(float(np.min(_norm(s).real)))
    eye = np.eye(3)
    z = thrust / n[..., None]
    proj_z = eye - z[..., :, None] * z[..., None, :]
    dz_da = proj_z / n[..., None, None]

    xc = np.concatenate([s, np.zeros(s.shape[:-1] + (1,), dtype=s.dtype)], axis=-1)
    zx = np.sum(z * xc, axis=-1)
    q = xc - zx[..., None] * z
    m = _norm(q)
    if np.any(m.real < 1e-9):
        raise DegenerateAttitudeError("heading parallel to thrust axis")
    x = q / m[..., None]
    dx_dq = (eye - x[..., :, None] * x[..., None, :]) / m[..., None, None]
    dq_dz = -(z[..., :, None] * xc[..., None, :] + zx[..., None, None] * eye)
    dx_da = dx_dq @ dq_dz @ dz_da
    dx_ds = (dx_dq @ proj_z)[..., :, :2]

    y = np.cross(z, x)
    dy_da = -_skew(x) @ dz_da + _skew(z) @ dx_da
    dy_ds = _skew(z) @ dx_ds

    R = np.stack([x, y, z], axis=-1)
    dR_da = np.stack([dx_da, dy_da, dz_da], axis=-2)
    dR_ds = np.stack([dx_ds, dy_ds, np.zeros_like(dx_ds)], axis=-2)
    return R, dR_da, dR_ds


def rotation_from_flat(a: ArrayLike, psi: ArrayLike) -> NDArray[np.float64]:
    """Body-to-world rotation: z along thrust, x the heading projected off z."""
    return rotation_with_jacobian(np.asarray(a, dtype=float), np.asarray(psi, dtype=float))[0]


def fov_relaxed_cost(state: FlatState, w: ArrayLike, fov: FovModel, weight: float) -> CostGrad:
    """Cone-membership penalty: cos(theta/2)|d| - <[psi; 0], d>."""
    w = np.asarray(w, dtype=float)
    d = fov.sign * (w - state.p)
    dn = np.linalg.norm(d, axis=-1)
    if np.any(dn < 1e-6):
        raise ValueError("target coincides with the robot position")
    psi, jac = _heading_and_jacobian(state.s)
    axis = fov.axis_yaw
    psi = psi @ axis.T
    jac = axis @ jac
    c = np.cos(0.5 * fov.theta)
    raw = c * dn - np.sum(psi * d[..., :2], axis=-1)
    value, slope = hinge_cubic(raw)
    out = CostGrad.zeros(state.batch_shape)
    out.value = weight * value
    g = weight * slope
    d_raw_dd = c * d / dn[..., None]
    d_raw_dd[..., :2] -= psi
    out.d_p = -fov.sign * g[..., None] * d_raw_dd
    out.d_s = g[..., None] * np.einsum("...i,...ij->...j", -d[..., :2], jac)
    return out


def velocity_alignment_cost(state: FlatState, fov: FovModel, weight: float) -> CostGrad:
    """Keep the heading within theta_r of the horizontal velocity."""
    vh = state.v[..., :2]
    speed = np.linalg.norm(vh, axis=-1)
    psi, jac = _heading_and_jacobian(state.s)
    c = np.cos(fov.theta_r)
    raw = c * speed - np.sum(psi * vh, axis=-1)
    value, slope = hinge_cubic(raw)
    out = CostGrad.zeros(state.batch_shape)
    out.value = weight * value
    g = weight * slope
    safe = np.where(speed > 0.0, speed, 1.0)
    unit = np.where((speed > 0.0)[..., None], vh / safe[..., None], 0.0)
    out.d_v[..., :2] = g[..., None] * (c * unit - psi)
    out.d_s = g[..., None] * np.einsum("...i,...ij->...j", -vh, jac)
    return out


def image_velocity_cost(
    state: FlatState,
    w: ArrayLike,
    w_dot: ArrayLike,
    v_w_max: float,
    weight: float,
    step: float = ROTATION_STEP,
) -> CostGrad:
    """Penalize the target's apparent speed in the body frame above ``v_w_max``.

    The body-frame target is R^T (w - p). Its rate needs dR/dt along the
    trajectory, taken as a complex step of ``step`` seconds through
    (a, s) -> R, which is free of subtractive cancellation; the same step
    differentiates the attitude Jacobians for the gradient.
    """
    w = np.asarray(w, dtype=float)
    w_dot = np.asarray(w_dot, dtype=float)
    h = step
    Rc, dRa_c, dRs_c = rotation_with_jacobian(
        state.a + 1j * h * state.j, state.s + 1j * h * state.s_dot
    )
    R0, dR0_da, dR0_ds = Rc.real, dRa_c.real, dRs_c.real
    R_dot, dRdot_da, dRdot_ds = Rc.imag / h, dRa_c.imag / h, dRs_c.imag / h
    d = w - state.p
    d_dot = w_dot - state.v
    u = np.einsum("...ij,...i->...j", R_dot, d) + np.einsum("...ij,...i->...j", R0, d_dot)
    raw = np.sum(u * u, axis=-1) - v_w_max**2
    value, slope = hinge_cubic(raw)
    out = CostGrad.zeros(state.batch_shape)
    out.value = weight * value
    gu = (weight * slope)[..., None] * 2.0 * u

    out.d_p = -np.einsum("...ij,...j->...i", R_dot, gu)
    out.d_v = -np.einsum("...ij,...j->...i", R0, gu)
    G0 = d_dot[..., :, None] * gu[..., None, :]
    G1 = d[..., :, None] * gu[..., None, :]
    out.d_a = np.einsum("...ij,...ijk->...k", G0, dR0_da) + np.einsum(
        "...ij,...ijk->...k", G1, dRdot_da
    )
    out.d_j = np.einsum("...ij,...ijk->...k", G1, dR0_da)
    out.d_s = np.einsum("...ij,...ijk->...k", G0, dR0_ds) + np.einsum(
        "...ij,...ijk->...k", G1, dRdot_ds
    )
    out.d_s_dot = np.einsum("...ij,...ijk->...k", G1, dR0_ds)
    return out


def _rates_with_gradients(s: NDArray, sd: NDArray, sdd: NDArray):
    r2 = np.sum(s * s, axis=-1)
    if np.any(r2 < EPS_SINGULAR**2):
        raise SingularityError(float(np.sqrt(np.min(r2))))
    cross_v = s[..., 0] * sd[..., 1] - s[..., 1] * sd[..., 0]
    cross_a = s[..., 0] * sdd[..., 1] - s[..., 1] * sdd[..., 0]
    dot_v = np.sum(s * sd, axis=-1)
    omega = cross_v / r2
    alpha = cross_a / r2 - 2.0 * dot_v * cross_v / r2**2

    def perp(x):  # gradient of cross(s, x) w.r.t. s
        return np.stack([x[..., 1], -x[..., 0]], axis=-1)

    def perp_s(x):  # gradient of cross(x, b) w.r.t. b
        return np.stack([-x[..., 1], x[..., 0]], axis=-1)

    r2e, r4e, r6e = r2[..., None], (r2**2)[..., None], (r2**3)[..., None]
    cv, ca, dv = cross_v[..., None], cross_a[..., None], dot_v[..., None]
    d_omega_s = perp(sd) / r2e - 2.0 * cv * s / r4e
    d_omega_sd = perp_s(s) / r2e
    d_alpha_s = (
        perp(sdd) / r2e
        - 2.0 * ca * s / r4e
        - 2.0 * (sd * cv + dv * perp(sd)) / r4e
        + 8.0 * dv * cv * s / r6e
    )
    d_alpha_sd = -2.0 * (s * cv + dv * perp_s(s)) / r4e
    d_alpha_sdd = perp_s(s) / r2e
    return omega, alpha, (d_omega_s, d_omega_sd), (d_alpha_s, d_alpha_sd, d_alpha_sdd)


def yaw_dynamics_cost(state: FlatState, limits: YawLimits, weight: float) -> CostGrad:
    """Hinges on omega^2 - v_psi_max^2 and alpha^2 - a_psi_max^2."""
    omega, alpha, d_om, d_al = _rates_with_gradients(state.s, state.s_dot, state.s_ddot)
    v1, g1 = hinge_cubic(omega**2 - limits.v_psi_max**2)
    v2, g2 = hinge_cubic(alpha**2 - limits.a_psi_max**2)
    out = CostGrad.zeros(state.batch_shape)
    out.value = weight * (v1 + v2)
    k1 = (weight * g1 * 2.0 * omega)[..., None]
    k2 = (weight * g2 * 2.0 * alpha)[..., None]
    out.d_s = k1 * d_om[0] + k2 * d_al[0]
    out.d_s_dot = k1 * d_om[1] + k2 * d_al[1]
    out.d_s_ddot = k2 * d_al[2]
    return out


def virtual_bounds_cost(state: FlatState, limits: YawLimits, weight: float) -> CostGrad:
    """Radius floor plus virtual velocity and acceleration ceilings."""
    s, sd, sdd = state.s, state.s_dot, state.s_ddot
    v0, g0 = hinge_cubic(limits.r_min**2 - np.sum(s * s, axis=-1))
    v1, g1 = hinge_cubic(np.sum(sd * sd, axis=-1) - limits.v_s_max**2)
    v2, g2 = hinge_cubic(np.sum(sdd * sdd, axis=-1) - limits.a_s_max**2)
    out = CostGrad.zeros(state.batch_shape)
    out.value = weight * (v0 + v1 + v2)
    out.d_s = -(weight * g0 * 2.0)[..., None] * s
    out.d_s_dot = (weight * g1 * 2.0)[..., None] * sd
    out.d_s_ddot = (weight * g2 * 2.0)[..., None] * sdd
    return out


def position_limits_cost(state: FlatState, v_max: float, a_max: float, weight: float) -> CostGrad:
    v1, g1 = hinge_cubic(np.sum(state.v**2, axis=-1) - v_max**2)
    v2, g2 = hinge_cubic(np.sum(state.a**2, axis=-1) - a_max**2)
    out = CostGrad.zeros(state.batch_shape)
    out.value = weight * (v1 + v2)
    out.d_v = (weight * g1 * 2.0)[..., None] * state.v
    out.d_a = (weight * g2 * 2.0)[..., None] * state.a
    return out
