from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from globalyaw.splines import PiecewisePoly
from globalyaw.tracksim import (
    LOG_COLUMNS,
    TargetModel,
    TrackingConfig,
    TrackingLog,
    compute_metrics,
    format_summary,
    generate_tracking_keyframes,
    predict_target,
    run_tracking,
    target_state,
    write_log_csv,
    write_metrics,
)
from globalyaw.yawparam import heading_rates, normalize_heading

CIRCLE = TargetModel("circle", center=[0.0, 0.0, 1.0], radius=2.0, speed=0.5)
STATIC = TargetModel("static", center=[2.0, 0.0, 1.0])
SHORT = TrackingConfig(duration=6.0)


def constant(w) -> PiecewisePoly:
    return PiecewisePoly(np.stack([np.asarray(w, float), np.zeros(3)])[None], [2.0])


class TestTargetState:
    def test_static(self):
        w, wd = target_state(STATIC, 3.7)
        np.testing.assert_array_equal(w, [2.0, 0.0, 1.0])
        np.testing.assert_array_equal(wd, 0.0)

    def test_circle_period(self):
        a, b = target_state(CIRCLE, 0.0), target_state(CIRCLE, 8 * np.pi)
        np.testing.assert_allclose(a[0], b[0], atol=1e-12)
        np.testing.assert_allclose(a[1], b[1], atol=1e-12)

    def test_line_displacement(self):
        line = TargetModel("line", center=[0, 0, 1], direction=[3.0, 4.0, 0.0], speed=0.5)
        d = target_state(line, 5.0)[0] - target_state(line, 3.0)[0]
        assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-12)

    def test_waypoint_path_holds_last(self):
        path = TargetModel("waypoint-path", waypoints=[[0, 0, 1], [1, 0, 1], [1, 1, 1]], speed=0.5)
        np.testing.assert_allclose(target_state(path, 3.0)[0], [1.0, 0.5, 1.0])
        w, wd = target_state(path, 100.0)
        np.testing.assert_allclose(w, [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(wd, 0.0)

    @settings(max_examples=60)
    @given(t=st.floats(0.0, 500.0), kind=st.sampled_from(["line", "circle", "waypoint-path"]))
    def test_speed_bounded(self, t, kind):
        model = TargetModel(kind, waypoints=[[0, 0, 1], [3, 0, 1], [3, 2, 1]], speed=0.5)
        assert np.linalg.norm(target_state(model, t)[1]) <= model.v_target_max + 1e-12

    def test_validation(self):
        with pytest.raises(ValueError):
            TargetModel("circle", speed=0.8)
        with pytest.raises(ValueError):
            TargetModel("spiral")
        with pytest.raises(ValueError):
            target_state(CIRCLE, -1.0)


class TestPredict:
    def test_stationary(self):
        pred = predict_target([(t, [1.0, 2.0, 3.0]) for t in (0.0, 0.1, 0.2)], 2.0)
        np.testing.assert_allclose(pred.eval(np.linspace(0, 2, 5)), [[1.0, 2.0, 3.0]] * 5, atol=1e-12)

    def test_linear_exact(self):
        v = np.array([0.3, -0.4, 0.0])
        hist = [(t, v * t) for t in np.arange(0, 3.0, 0.1)]
        pred = predict_target(hist, 2.0)
        taus = np.linspace(0, 2, 9)
        np.testing.assert_allclose(pred.eval(taus), (hist[-1][0] + taus)[:, None] * v, atol=1e-12)

    def test_circle_error_grows(self):
        hist = [(t, target_state(CIRCLE, t)[0]) for t in np.arange(0, 10.0, 0.1)]
        t_last = hist[-1][0]
        pred = predict_target(hist, 2.0)
        errs = [np.linalg.norm(pred.eval(h) - target_state(CIRCLE, t_last + h)[0]) for h in (0.5, 1.0, 1.5, 2.0)]
        assert np.all(np.diff(errs) > 0)
        ts = np.array([h[0] for h in hist])
        ws = np.array([h[1] for h in hist])
        recent = ts >= t_last - 1.0 - 1e-12
        oracle = [np.polyval(np.polyfit(ts[recent] - t_last, ws[recent, k], 1), 2.0) for k in range(3)]
        np.testing.assert_allclose(pred.eval(2.0), oracle, atol=1e-12)

    def test_window(self):
        # Only the last second is fitted, so an old jump is ignored.
        hist = [(t, [0.0 if t < 1.0 else 5.0, 0.0, 0.0]) for t in np.arange(0, 3.0, 0.1)]
        np.testing.assert_allclose(predict_target(hist, 1.0).eval(1.0), [5.0, 0.0, 0.0], atol=1e-12)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            predict_target([(0.0, [0.0, 0.0, 0.0])], 2.0)


class TestKeyframes:
    def test_already_on_standoff(self):
        kfs = generate_tracking_keyframes(constant([2, 0, 1]), [0, 0, 1], TrackingConfig())
        assert len(kfs) == 4
        for k in kfs:
            np.testing.assert_allclose(k.position, [0, 0, 1], atol=1e-12)
            np.testing.assert_allclose(k.heading, [1, 0], atol=1e-12)
        np.testing.assert_allclose([k.time for k in kfs], [0.5, 1.0, 1.5, 2.0])

    def test_standoff_distance(self):
        kfs = generate_tracking_keyframes(constant([2, 0, 1]), [2 + 3 * np.cos(1.0), 3 * np.sin(1.0), 1.0], TrackingConfig())
        for k in kfs:
            assert np.linalg.norm(k.position - [2, 0, 1]) == pytest.approx(2.0, abs=1e-9)

    def test_headings_point_at_prediction(self):
        pred = PiecewisePoly(np.array([[[2.0, 0.0, 1.0], [0.5, 0.0, 0.0]]]), [2.0])
        kfs = generate_tracking_keyframes(pred, [0, 1, 1], TrackingConfig())
        for k in kfs:
            d = pred.eval(k.time) - k.position
            np.testing.assert_allclose(k.heading, normalize_heading(d[:2]), atol=1e-12)

    def test_coincident_uses_fallback(self):
        kfs = generate_tracking_keyframes(constant([0, 0, 1]), [0, 0, 3], TrackingConfig(), fallback=[0, 1, 0])
        np.testing.assert_allclose(kfs[0].position, [0, 2, 1])

    def test_short_prediction_rejected(self):
        pred = PiecewisePoly(np.zeros((1, 2, 3)), [1.0])
        with pytest.raises(ValueError):
            generate_tracking_keyframes(pred, [1, 0, 0], TrackingConfig())


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ValueError):
            TrackingConfig(d_des=0.2, d_tol=0.3)
        with pytest.raises(ValueError):
            TrackingConfig(horizon=0.1)
        with pytest.raises(ValueError):
            TrackingConfig(log_rate=15.0)


class TestRun:
    def test_static_fixed_point(self):
        metrics, log = run_tracking(STATIC, SHORT)
        assert metrics.out_of_fov_pct == 0.0
        assert metrics.deviation_mean <= 1e-6
        assert metrics.distance_mean == pytest.approx(2.0, abs=1e-6)
        assert metrics.failure_count == 0

    def test_log_shape(self):
        _, log = run_tracking(CIRCLE, TrackingConfig(duration=1.0))
        assert log.rows.shape == (100, len(LOG_COLUMNS))
        np.testing.assert_allclose(np.diff(log.column("t")), 0.01, atol=1e-12)

    def test_deterministic(self, tmp_path):
        outs = []
        for i in range(2):
            metrics, log = run_tracking(CIRCLE, SHORT)
            write_log_csv(log, tmp_path / f"log{i}.csv")
            write_metrics(metrics, tmp_path / f"m{i}.txt")
            outs.append(((tmp_path / f"log{i}.csv").read_bytes(), (tmp_path / f"m{i}.txt").read_bytes()))
        assert outs[0] == outs[1]

    def test_fov_consistent_with_deviation(self):
        _, log = run_tracking(CIRCLE, SHORT)
        half = 0.5 * SHORT.fov.theta
        np.testing.assert_array_equal(log.column("in_fov"), (log.column("deviation") <= half).astype(float))

    def test_perfect_tracking(self):
        _, log = run_tracking(CIRCLE, SHORT)
        per_tick = int(SHORT.log_rate / SHORT.replan_hz)
        local = np.arange(per_tick) / SHORT.log_rate
        for i, (_, age, plan) in enumerate(log.executed):
            rows = log.rows[i * per_tick : (i + 1) * per_tick]
            tl = age + local
            np.testing.assert_allclose(rows[:, 1:4], plan.position_traj.eval(tl), atol=1e-9)
            _, omega, _ = heading_rates(*(plan.virtual_yaw_traj.eval(tl, k) for k in range(3)))
            np.testing.assert_allclose(rows[:, 5], omega, atol=1e-9)

    def test_plans_chain_continuously(self):
        _, log = run_tracking(CIRCLE, SHORT)
        for (_, age0, a), (_, age1, b) in zip(log.executed[:-1], log.executed[1:]):
            if age1 == 0.0:
                t_end = age0 + SHORT.period
                np.testing.assert_allclose(b.position_traj.eval(0.0), a.position_traj.eval(t_end), atol=1e-9)
                np.testing.assert_allclose(b.position_traj.eval(0.0, 1), a.position_traj.eval(t_end, 1), atol=1e-9)

    def test_log_rate_doubling(self):
        m1, _ = run_tracking(CIRCLE, SHORT)
        m2, _ = run_tracking(CIRCLE, TrackingConfig(duration=SHORT.duration, log_rate=200.0))
        for key in ("deviation_mean", "body_rate_mean", "distance_mean"):
            a, b = getattr(m1, key), getattr(m2, key)
            assert abs(a - b) <= 0.02 * abs(a)
        assert abs(m1.out_of_fov_pct - m2.out_of_fov_pct) <= 2.0


class TestMetricsIO:
    def test_compute(self):
        rows = np.zeros((4, len(LOG_COLUMNS)))
        rows[:, LOG_COLUMNS.index("in_fov")] = [1, 1, 0, 1]
        rows[:, LOG_COLUMNS.index("distance")] = [1, 2, 3, 2]
        rows[:, LOG_COLUMNS.index("omega")] = [-1, 1, -1, 1]
        m = compute_metrics(TrackingLog(rows, 0), replan_count=2)
        assert m.out_of_fov_pct == 25.0
        assert m.distance_mean == 2.0 and m.distance_std == pytest.approx(np.sqrt(0.5))
        assert m.body_rate_mean == 1.0 and m.body_rate_std == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            compute_metrics(TrackingLog(np.zeros((0, len(LOG_COLUMNS))), 0), 0)

    def test_writers(self, tmp_path):
        metrics, log = run_tracking(STATIC, TrackingConfig(duration=0.5))
        write_log_csv(log, tmp_path / "log.csv")
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == ",".join(LOG_COLUMNS)
        assert len(lines) == 51
        write_metrics(metrics, tmp_path / "m.txt")
        keys = [line.split("=")[0] for line in (tmp_path / "m.txt").read_text().splitlines()]
        assert "out_of_fov_pct" in keys and "mean_solve_time" not in keys
        assert "out of FOV" in format_summary(metrics)
