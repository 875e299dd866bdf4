from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from globalyaw.penalties import FovModel
from globalyaw.splines import BoundaryState, PiecewisePoly, control_effort, solve_min_control
from globalyaw.traversal import (
    PENALTY_NAMES,
    Keyframe,
    SolverOptions,
    TraversalObjective,
    Weights,
    allocate_times,
    finite_diff_check,
    free_mask,
    objective_and_gradient,
    pack_decision,
    problem_from_keyframes,
    solve_traversal,
    unpack_decision,
    with_weights,
)
from globalyaw.yawparam import SingularityError, YawLimits, heading_to_virtual, min_radius, normalize_heading
from oracles import random_joint_problem

ZERO_PENALTIES = Weights()


def line_keyframes(M: int, seed: int = 0) -> list[Keyframe]:
    rng = np.random.default_rng(seed)
    return [
        Keyframe.from_angle([float(i), rng.normal(), 1.0], rng.uniform(-np.pi, np.pi)) for i in range(M + 1)
    ]


class TestAllocateTimes:
    def test_distance_rule(self):
        kfs = [Keyframe.from_angle([0, 0, 0], 0.3), Keyframe.from_angle([2, 0, 0], 0.3)]
        np.testing.assert_allclose(allocate_times(kfs, 1.0, 1.0), [2.0])

    def test_angle_rule(self):
        kfs = [Keyframe.from_angle([0, 0, 0], 0.0), Keyframe.from_angle([0, 0, 0], np.pi)]
        np.testing.assert_allclose(allocate_times(kfs, 1.0, 1.0), [np.pi])

    def test_floor(self):
        kfs = [Keyframe.from_angle([1, 1, 1], 0.0)] * 2
        np.testing.assert_allclose(allocate_times(kfs), [0.1])

    def test_rejects_bad_rates(self):
        with pytest.raises(ValueError):
            allocate_times(line_keyframes(2), v_nominal=0.0)


class TestDecisionVector:
    def test_no_interior(self):
        prob = problem_from_keyframes(line_keyframes(1))
        assert pack_decision(prob).shape == (0,)

    def test_round_trip(self):
        x = np.random.default_rng(1).normal(size=20)
        P, S = unpack_decision(x, 5)
        np.testing.assert_array_equal(np.concatenate([P, S], axis=1).reshape(-1), x)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            unpack_decision(np.zeros(7), 3)

    def test_initialization(self):
        kfs = [Keyframe.from_angle([i, 0, 0], 0.5 * i, radius_hint=2.0) for i in range(4)]
        P, S = unpack_decision(pack_decision(problem_from_keyframes(kfs)), 3)
        np.testing.assert_array_equal(P, [k.position for k in kfs[1:-1]])
        np.testing.assert_allclose(S, [heading_to_virtual(k.heading, 2.0) for k in kfs[1:-1]])

    def test_free_mask(self):
        prob = problem_from_keyframes(line_keyframes(3), hard_positions=True)
        np.testing.assert_array_equal(free_mask(prob).reshape(2, 5), [[False] * 3 + [True] * 2] * 2)


class TestObjective:
    def test_gradient_vanishes_at_effort_minimizer(self):
        obj = TraversalObjective(problem_from_keyframes(line_keyframes(5)))
        _, g, _ = obj.evaluate(obj.quadratic_minimizer())
        assert np.linalg.norm(g) <= 1e-8

    def test_quadratic_only_gradient_exact(self):
        prob = problem_from_keyframes(line_keyframes(4), weights=Weights(waypoint_attraction=2.0, heading_attraction=1.0))
        x = pack_decision(prob) + 0.3 * np.random.default_rng(2).normal(size=15)
        assert finite_diff_check(prob, x) <= 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_full_penalty_gradient(self, seed):
        prob, x = random_joint_problem(np.random.default_rng(seed))
        assert finite_diff_check(prob, x) <= 1e-4

    def test_large_step_degrades(self):
        prob, x = random_joint_problem(np.random.default_rng(3))
        assert finite_diff_check(prob, x, h=1e-1) > 10 * finite_diff_check(prob, x, h=1e-6)

    def test_rejects_nonpositive_step(self):
        prob, x = random_joint_problem(np.random.default_rng(0))
        with pytest.raises(ValueError):
            finite_diff_check(prob, x, h=0.0)

    @pytest.mark.parametrize("name", PENALTY_NAMES + ("waypoint_attraction",))
    def test_weight_doubling(self, name):
        prob, x = random_joint_problem(np.random.default_rng(4))
        _, _, base = TraversalObjective(prob).evaluate(x)
        doubled = with_weights(prob, **{name: 2.0 * getattr(prob.weights, name)})
        _, _, after = TraversalObjective(doubled).evaluate(x)
        assert after[name] == pytest.approx(2.0 * base[name], rel=1e-12, abs=1e-300)
        for other in base:
            if other != name:
                assert after[other] == base[other]

    def test_breakdown_sums_to_total(self):
        prob, x = random_joint_problem(np.random.default_rng(5))
        J, _, parts = TraversalObjective(prob).evaluate(x)
        assert J == pytest.approx(sum(parts.values()), rel=1e-14)

    def test_functional_form(self):
        prob, x = random_joint_problem(np.random.default_rng(6))
        J, g = objective_and_gradient(prob, x)
        J2, g2, _ = TraversalObjective(prob).evaluate(x)
        assert J == J2
        np.testing.assert_array_equal(g, g2)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), a=st.floats(-2.0, 3.0))
    def test_coefficients_affine(self, seed, a):
        rng = np.random.default_rng(seed)
        prob, x1 = random_joint_problem(rng)
        x2 = x1 + rng.normal(size=x1.shape)
        obj = TraversalObjective(prob)
        mix = obj.coefficients(a * x1 + (1 - a) * x2)
        for c, c1, c2 in zip(mix, obj.coefficients(x1), obj.coefficients(x2)):
            np.testing.assert_allclose(c, a * c1 + (1 - a) * c2, atol=1e-10 * max(1.0, np.max(np.abs(c))))

    def test_problem_validation(self):
        with pytest.raises(ValueError):
            problem_from_keyframes(line_keyframes(3), durations=[1.0, 1.0])
        with pytest.raises(ValueError):
            Weights(fov=-1.0)
        with pytest.raises(ValueError):
            Keyframe.from_angle([0, 0, 0], 0.0, radius_hint=0.0)


class TestSolve:
    def test_convex_core_matches_closed_form(self):
        kfs = line_keyframes(4, seed=3)
        prob = problem_from_keyframes(kfs, weights=ZERO_PENALTIES, hard_positions=True, hard_headings=True)
        sol = solve_traversal(prob)
        pos = solve_min_control(
            prob.start_position, prob.end_position, [k.position for k in kfs[1:-1]], prob.durations
        )
        yaw = solve_min_control(
            prob.start_yaw, prob.end_yaw, [heading_to_virtual(k.heading, 1.0) for k in kfs[1:-1]], prob.durations
        )
        np.testing.assert_allclose(sol.position_traj.coeffs, pos.coeffs, atol=1e-9)
        np.testing.assert_allclose(sol.virtual_yaw_traj.coeffs, yaw.coeffs, atol=1e-9)
        assert sol.final_cost == pytest.approx(control_effort(pos) + control_effort(yaw), rel=1e-12)
        assert sol.converged

    def test_soft_quadratic_problem_reaches_minimizer(self):
        prob = problem_from_keyframes(line_keyframes(4, seed=8), weights=ZERO_PENALTIES)
        sol = solve_traversal(prob)
        assert sol.converged
        np.testing.assert_allclose(sol.x, TraversalObjective(prob).quadratic_minimizer(), atol=1e-5)

    @pytest.mark.parametrize("seed", range(4))
    def test_monotone_history(self, seed):
        prob, x = random_joint_problem(np.random.default_rng(seed))
        sol = solve_traversal(prob, x, SolverOptions(max_iters=60))
        assert np.all(np.diff(sol.cost_history) <= 0.0)
        np.testing.assert_array_equal(sol.durations, sol.virtual_yaw_traj.durations)

    def test_converged_respects_radius(self):
        converged = 0
        for seed in range(10, 20):
            prob, x = random_joint_problem(np.random.default_rng(seed))
            sol = solve_traversal(prob, x, SolverOptions(max_iters=200))
            if sol.converged:
                converged += 1
                assert min_radius(sol.virtual_yaw_traj, per_segment=100)[0] >= prob.limits.r_min - 1e-6
            else:
                assert sol.message
        assert converged >= 3

    def test_behind_target_fov(self):
        # Start facing +x with the target behind; hard positions leave only yaw free.
        target = np.array([-3.0, 1.0, 1.0])
        n = 20
        pts = [np.array([0.1 * i, 0.0, 1.0]) for i in range(n + 1)]
        end_yaw = float(np.arctan2(*(target - pts[-1])[[1, 0]]))
        kfs = [Keyframe.from_angle(p, 0.0 if i == 0 else end_yaw) for i, p in enumerate(pts)]
        ref = PiecewisePoly(np.array([[target]]), [100.0])
        prob = problem_from_keyframes(
            kfs,
            durations=[1.0] * n,
            weights=Weights(fov=100.0, virtual_bounds=10.0, waypoint_attraction=1.0),
            timed_reference=ref,
            hard_positions=True,
        )
        sol = solve_traversal(prob)
        ts = np.linspace(0.0, sol.position_traj.total_duration, 1001)
        psi = normalize_heading(sol.virtual_yaw_traj.eval(ts))
        d = target - sol.position_traj.eval(ts)
        cos = np.sum(psi * d[:, :2], axis=1) / np.linalg.norm(d, axis=1)
        inside = np.arccos(np.clip(cos, -1.0, 1.0)) <= FovModel().theta / 2
        assert np.mean(inside) >= 0.95

    def test_tight_rate_limit_reports_residual(self):
        kfs = [Keyframe.from_angle([0, 0, 1], 0.0), Keyframe.from_angle([1, 0, 1], 2.0), Keyframe.from_angle([2, 0, 1], -1.0)]
        prob = problem_from_keyframes(
            kfs,
            durations=[1.0, 1.0],
            weights=Weights(yaw_dynamics=1.0, heading_attraction=10.0),
            limits=YawLimits(v_psi_max=0.05, a_psi_max=0.05),
        )
        sol = solve_traversal(prob)
        assert sol.breakdown["yaw_dynamics"] > 0.0

    def test_singular_initialization(self):
        prob = problem_from_keyframes(line_keyframes(3))
        x0 = pack_decision(prob)
        x0[3:5] = 0.0
        with pytest.raises(SingularityError, match="larger radius"):
            solve_traversal(prob, x0)

    def test_hard_coordinates_pinned(self):
        prob, x = random_joint_problem(np.random.default_rng(2))
        from dataclasses import replace

        prob = replace(prob, hard_positions=True)
        sol = solve_traversal(prob, x, SolverOptions(max_iters=30))
        P, _ = unpack_decision(sol.x, prob.num_segments)
        np.testing.assert_array_equal(P, [k.position for k in prob.keyframes])

    def test_timed_keyframes_set_durations(self):
        kfs = [Keyframe.from_angle([i, 0, 0], 0.0, time=t) for i, t in enumerate([0.0, 1.5, 4.0])]
        np.testing.assert_allclose(problem_from_keyframes(kfs).durations, [1.5, 2.5])

    def test_zero_interior_has_nothing_to_optimize(self):
        sol = solve_traversal(problem_from_keyframes(line_keyframes(1)))
        assert sol.iterations == 0 and sol.converged
        assert isinstance(sol.position_traj, PiecewisePoly)
        assert sol.position_traj.eval(0.0).shape == (3,)
        np.testing.assert_allclose(sol.position_traj.eval(0.0), line_keyframes(1)[0].position)


def test_boundary_state_shapes():
    prob = problem_from_keyframes(line_keyframes(2), start_velocity=[1.0, 0.0, 0.0], start_omega=0.5)
    assert isinstance(prob.start_position, BoundaryState)
    np.testing.assert_allclose(prob.start_position.derivatives[1], [1.0, 0.0, 0.0])
