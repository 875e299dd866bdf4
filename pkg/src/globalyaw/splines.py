"""Piecewise polynomial curves and closed-form minimum-control splines.

Every planner in the package stores trajectories as :class:`PiecewisePoly`,
an M-segment polynomial in d dimensions with monomial coefficients in
ascending degree and segment-local time.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import solve_banded


class DomainError(ValueError):
    """Raised when a curve is evaluated outside its time domain."""


def _falling(n: int, k: int) -> float:
    """n (n-1) ... (n-k+1); zero when k > n."""
    if k > n:
        return 0.0
    return float(factorial(n) // factorial(n - k))


def basis_row(t: float | NDArray, degree: int, k: int = 0) -> NDArray[np.float64]:
    """Row(s) of the k-th derivative of the monomial basis [1, t, ..., t^N]."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (degree + 1,))
    for j in range(k, degree + 1):
        out[..., j] = _falling(j, k) * t ** (j - k)
    return out


@dataclass(frozen=True)
class PiecewisePoly:
    """M-segment polynomial curve.

    Attributes:
        coeffs: (M, N+1, d) monomial coefficients, ascending degree, per segment.
            A 1-D array is one scalar segment, a 2-D array M scalar segments.
        durations: (M,) segment durations, all strictly positive.
    """

    coeffs: NDArray[np.float64]
    durations: NDArray[np.float64]

    def __post_init__(self) -> None:
        coeffs = np.array(self.coeffs, dtype=float)
        durations = np.array(self.durations, dtype=float).reshape(-1)
        if coeffs.ndim == 1:
            coeffs = coeffs[None, :, None]
        elif coeffs.ndim == 2:
            coeffs = coeffs[:, :, None]
        if coeffs.ndim != 3:
            raise ValueError(f"coeffs must be (M, N+1, d), got shape {coeffs.shape}")
        if coeffs.shape[0] != len(durations):
            raise ValueError(
                f"{coeffs.shape[0]} coefficient blocks but {len(durations)} durations"
            )
        if len(durations) == 0:
            raise ValueError("a curve needs at least one segment")
        if np.any(~np.isfinite(durations)) or np.any(durations <= 0.0):
            raise ValueError(f"durations must be strictly positive, got {durations}")
        coeffs.setflags(write=False)
        durations.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "durations", durations)

    @property
    def num_segments(self) -> int:
        return self.coeffs.shape[0]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.coeffs.shape[2]

    @property
    def knots(self) -> NDArray[np.float64]:
        """Global knot times [0, t_1, ..., t_M]."""
        return np.concatenate([[0.0], np.cumsum(self.durations)])

    @property
    def total_duration(self) -> float:
        return float(np.sum(self.durations))

    def locate(self, t: ArrayLike) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
        """Segment index and local time for global time(s) t.

        Interior knots belong to the right-hand segment, the final instant to
        the last segment.
        """
        t = np.asarray(t, dtype=float)
        total = self.total_duration
        tol = 1e-12 * max(1.0, total)
        if np.any(t < -tol) or np.any(t > total + tol):
            raise DomainError(f"t outside [0, {total}]")
        knots = self.knots
        idx = np.searchsorted(knots, t, side="right") - 1
        idx = np.clip(idx, 0, self.num_segments - 1)
        local = np.clip(t - knots[idx], 0.0, self.durations[idx])
        return idx, local

    def eval(self, t: ArrayLike, k: int = 0) -> NDArray[np.float64]:
        """k-th time derivative at time(s) t; shape (d,) for scalar t, (n, d) otherwise."""
        if k < 0:
            raise ValueError("derivative order must be non-negative")
        idx, local = self.locate(t)
        rows = basis_row(local, self.degree, k)
        return np.einsum("...j,...jd->...d", rows, self.coeffs[idx])

    def sample(self, rate: float, max_order: int = 2) -> tuple[NDArray, list[NDArray]]:
        """Uniform samples at ``rate`` Hz including both end points."""
        n = int(np.floor(self.total_duration * rate + 1e-9)) + 1
        ts = np.arange(n) / rate
        if ts[-1] < self.total_duration - 1e-12:
            ts = np.append(ts, self.total_duration)
        return ts, [self.eval(ts, k) for k in range(max_order + 1)]

    def derivative(self) -> "PiecewisePoly":
        if self.degree == 0:
            return PiecewisePoly(np.zeros_like(self.coeffs), self.durations)
        j = np.arange(1, self.degree + 1, dtype=float)
        return PiecewisePoly(self.coeffs[:, 1:, :] * j[None, :, None], self.durations)

    def __add__(self, other: "PiecewisePoly") -> "PiecewisePoly":
        _require_same_grid(self, other)
        return PiecewisePoly(self.coeffs + other.coeffs, self.durations)

    def scaled(self, factor: float) -> "PiecewisePoly":
        return PiecewisePoly(self.coeffs * factor, self.durations)


def _require_same_grid(a: PiecewisePoly, b: PiecewisePoly) -> None:
    if a.coeffs.shape != b.coeffs.shape or not np.array_equal(a.durations, b.durations):
        raise ValueError("curves must share degree, dimension and durations")


@dataclass(frozen=True)
class BoundaryState:
    """Value and the first kappa-1 derivatives of a curve at one end."""

    derivatives: NDArray[np.float64]

    def __post_init__(self) -> None:
        d = np.atleast_2d(np.array(self.derivatives, dtype=float))
        d.setflags(write=False)
        object.__setattr__(self, "derivatives", d)

    @property
    def order(self) -> int:
        return self.derivatives.shape[0]

    @property
    def dim(self) -> int:
        return self.derivatives.shape[1]

    @classmethod
    def at_rest(cls, value: ArrayLike, order: int = 2) -> "BoundaryState":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        rows = [value] + [np.zeros_like(value)] * (order - 1)
        return cls(np.stack(rows))


class MinControlSystem:
    """Banded linear system of the minimum-control spline for fixed durations.

    Unknowns are the monomial coefficients stacked segment by segment. Rows
    are ordered start conditions, then 2*kappa rows per interior knot (left
    value, right value, continuity of derivatives 1..2*kappa-2), then end
    conditions, which keeps the lower and upper bandwidth at 3*kappa - 1.
    Continuity up to order 2*kappa-2 at the knots is the optimality condition
    of the integral of the squared kappa-th derivative, so the solution is
    the unique minimizer.
    """

    def __init__(self, durations: Sequence[float], kappa: int = 2) -> None:
        durations = np.asarray(durations, dtype=float).reshape(-1)
        if kappa < 1:
            raise ValueError("kappa must be >= 1")
        if len(durations) == 0 or np.any(~np.isfinite(durations)) or np.any(durations <= 0):
            raise ValueError(f"durations must be strictly positive, got {durations}")
        self.durations = durations
        self.kappa = kappa
        self.degree = 2 * kappa - 1
        self.num_segments = len(durations)
        self.size = 2 * kappa * self.num_segments
        self.bandwidth = 3 * kappa - 1
        self._banded = self._build()
        self._banded_t = self._transpose_band(self._banded)

    def _build(self) -> NDArray[np.float64]:
        kappa, n, width = self.kappa, self.degree + 1, self.bandwidth
        dense = np.zeros((self.size, self.size))
        for k in range(kappa):
            dense[k, 0:n] = basis_row(0.0, self.degree, k)
        row = kappa
        for i in range(self.num_segments - 1):
            left = slice(i * n, (i + 1) * n)
            right = slice((i + 1) * n, (i + 2) * n)
            dense[row, left] = basis_row(self.durations[i], self.degree, 0)
            dense[row + 1, right] = basis_row(0.0, self.degree, 0)
            for k in range(1, 2 * kappa - 1):
                dense[row + 1 + k, left] = basis_row(self.durations[i], self.degree, k)
                dense[row + 1 + k, right] = -basis_row(0.0, self.degree, k)
            row += 2 * kappa
        last = slice((self.num_segments - 1) * n, self.num_segments * n)
        for k in range(kappa):
            dense[row + k, last] = basis_row(self.durations[-1], self.degree, k)
        banded = np.zeros((2 * width + 1, self.size))
        for j in range(self.size):
            lo, hi = max(0, j - width), min(self.size, j + width + 1)
            banded[width + lo - j : width + hi - j, j] = dense[lo:hi, j]
        return banded

    def _transpose_band(self, ab: NDArray) -> NDArray:
        w = self.bandwidth
        out = np.zeros_like(ab)
        for j in range(self.size):
            for i in range(max(0, j - w), min(self.size, j + w + 1)):
                out[w + j - i, i] = ab[w + i - j, j]
        return out

    def dense(self) -> NDArray[np.float64]:
        """Full matrix, unpacked from band storage."""
        w = self.bandwidth
        out = np.zeros((self.size, self.size))
        for j in range(self.size):
            lo, hi = max(0, j - w), min(self.size, j + w + 1)
            out[lo:hi, j] = self._banded[w + lo - j : w + hi - j, j]
        return out

    def waypoint_rows(self, i: int) -> tuple[int, int]:
        """The two right-hand-side rows holding interior waypoint i (0-based)."""
        base = self.kappa + 2 * self.kappa * i
        return base, base + 1

    def rhs(
        self, bc0: BoundaryState, bcM: BoundaryState, waypoints: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        kappa = self.kappa
        d = bc0.dim
        b = np.zeros((self.size, d))
        b[:kappa] = bc0.derivatives
        for i, w in enumerate(waypoints):
            r0, r1 = self.waypoint_rows(i)
            b[r0] = w
            b[r1] = w
        b[self.size - kappa :] = bcM.derivatives
        return b

    def solve(self, rhs: NDArray) -> NDArray[np.float64]:
        w = self.bandwidth
        return solve_banded((w, w), self._banded, rhs)

    def solve_transposed(self, rhs: NDArray) -> NDArray[np.float64]:
        w = self.bandwidth
        return solve_banded((w, w), self._banded_t, rhs)

    def to_poly(self, flat: NDArray) -> PiecewisePoly:
        return PiecewisePoly(
            flat.reshape(self.num_segments, self.degree + 1, -1), self.durations
        )


def solve_min_control(
    bc0: BoundaryState,
    bcM: BoundaryState,
    waypoints: ArrayLike,
    durations: Sequence[float],
    kappa: int = 2,
) -> PiecewisePoly:
    """Unique minimizer of the integrated squared kappa-th derivative.

    The curve attains ``bc0`` at t=0 and ``bcM`` at the end, passes through
    each interior waypoint at its knot and has degree 2*kappa - 1.

    Args:
        bc0: start state with ``kappa`` rows (value and derivatives).
        bcM: end state, same shape as ``bc0``.
        waypoints: (M-1, d) interior waypoints.
        durations: (M,) segment durations.
        kappa: order of the penalized derivative.
    """
    durations = np.asarray(durations, dtype=float).reshape(-1)
    if np.any(durations <= 0) or np.any(~np.isfinite(durations)):
        raise ValueError(f"durations must be strictly positive, got {durations}")
    if bc0.order != kappa or bcM.order != kappa:
        raise ValueError(f"boundary states must carry {kappa} rows")
    if bc0.dim != bcM.dim:
        raise ValueError("boundary states differ in dimension")
    waypoints = np.asarray(waypoints, dtype=float).reshape(-1, bc0.dim)
    if len(waypoints) != len(durations) - 1:
        raise ValueError(
            f"{len(durations)} segments need {len(durations) - 1} waypoints, got {len(waypoints)}"
        )
    system = MinControlSystem(durations, kappa)
    return system.to_poly(system.solve(system.rhs(bc0, bcM, waypoints)))


def effort_matrix(duration: float, degree: int, kappa: int) -> NDArray[np.float64]:
    """Q with c^T Q c = integral over [0, duration] of (c^(kappa))^2 for one segment."""
    q = np.zeros((degree + 1, degree + 1))
    for i in range(kappa, degree + 1):
        for j in range(kappa, degree + 1):
            p = i + j - 2 * kappa + 1
            q[i, j] = _falling(i, kappa) * _falling(j, kappa) * duration**p / p
    return q


def control_effort(pp: PiecewisePoly, kappa: int = 2) -> float:
    """Exact integral of the squared norm of the kappa-th derivative."""
    total = 0.0
    for c, dt in zip(pp.coeffs, pp.durations):
        q = effort_matrix(dt, pp.degree, kappa)
        total += float(np.einsum("id,ij,jd->", c, q, c))
    return total


def continuity_report(pp: PiecewisePoly, up_to: int) -> float:
    """Largest mismatch of derivatives 0..up_to across interior knots."""
    worst = 0.0
    for i in range(pp.num_segments - 1):
        for k in range(up_to + 1):
            left = basis_row(pp.durations[i], pp.degree, k) @ pp.coeffs[i]
            right = basis_row(0.0, pp.degree, k) @ pp.coeffs[i + 1]
            worst = max(worst, float(np.max(np.abs(left - right))))
    return worst


def time_scale(pp: PiecewisePoly, factor: float) -> PiecewisePoly:
    """Same geometric path with every duration multiplied by ``factor``."""
    if not factor > 0:
        raise ValueError(f"time scale factor must be positive, got {factor}")
    powers = float(factor) ** -np.arange(pp.degree + 1, dtype=float)
    return PiecewisePoly(pp.coeffs * powers[None, :, None], pp.durations * factor)


def write_samples_csv(pp: PiecewisePoly, path, rate: float, max_order: int = 1, names: Sequence[str] | None = None) -> None:
    """Dump ``t,<values>,<first derivatives>,...`` sampled at ``rate`` Hz."""
    names = list(names) if names is not None else [f"x{i}" for i in range(pp.dim)]
    ts, derivs = pp.sample(rate, max_order)
    header = ["t"]
    for k in range(max_order + 1):
        header += [n if k == 0 else f"{n}_d{k}" for n in names]
    table = np.column_stack([ts] + derivs)
    np.savetxt(path, table, delimiter=",", header=",".join(header), comments="", fmt="%.10g")
