"""World stepping, actuation noise statistics, collisions, and metrics."""

import math
import warnings

import numpy as np
import pytest

from exploresim.grid_map import OccupancyGrid, P_MIN
from exploresim.localization import MotionInput
from exploresim.sensor import SensorSpec
from exploresim.sim import (
    NoiseSpec,
    SimWorld,
    metrics_map_error,
    metrics_translation,
    metrics_uncertainty_reduction,
    step_sim,
)


def quiet_spec(**kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return SensorSpec(**kw)


def boxed_world(size=20.0, res=0.2, **kw):
    n = int(size / res)
    g = OccupancyGrid.unknown(n, n, res)
    g.probs[:] = P_MIN
    g.probs[:2, :] = g.probs[-2:, :] = 1 - P_MIN
    g.probs[:, :2] = g.probs[:, -2:] = 1 - P_MIN
    defaults = dict(truth=g, true_pose=np.array([10.0, 10.0, 0.0]),
                    rng=np.random.default_rng(0),
                    spec=quiet_spec(n_beams=16, beam_noise_std=0.0),
                    noise=NoiseSpec(0.0, 0.0, 0.0))
    defaults.update(kw)
    return SimWorld(**defaults)


class TestStepSim:
    def test_zero_noise_odometry_equals_command(self):
        w = boxed_world()
        u = MotionInput(v=0.8, omega=0.4, dt=w.dt)
        out = step_sim(w, u)
        assert out.odom.v == pytest.approx(0.8)
        assert out.odom.omega == pytest.approx(0.4)
        assert not out.collided

    def test_exact_unicycle_advance(self):
        w = boxed_world()
        x0 = w.true_pose.copy()
        step_sim(w, MotionInput(v=1.0, omega=0.0, dt=w.dt))
        assert w.true_pose[0] == pytest.approx(x0[0] + 1.0 * w.dt)

    def test_wall_stops_motion_with_flag(self):
        w = boxed_world()
        # wall face at x = 19.6; drive hard toward it
        w.true_pose[:] = (19.0, 10.0, 0.0)
        collided = False
        for _ in range(200):
            out = step_sim(w, MotionInput(v=1.5, omega=0.0, dt=w.dt))
            collided = collided or out.collided
        assert collided
        assert w.true_pose[0] <= 19.6 - w.robot_radius + 1e-6
        cell = w.truth.world_to_cell(w.true_pose[0], w.true_pose[1])
        assert w.truth.probs[cell.row, cell.col] < 0.5

    def test_speed_caps_applied(self):
        w = boxed_world()
        x0 = w.true_pose[0]
        step_sim(w, MotionInput(v=99.0, omega=0.0, dt=w.dt))
        assert w.true_pose[0] - x0 <= w.v_max * w.dt + 1e-12

    def test_scan_on_lidar_steps_only(self):
        w = boxed_world()
        scans = [step_sim(w, MotionInput(v=0.0, omega=0.0, dt=w.dt)).scan
                 for _ in range(10)]
        have = [s is not None for s in scans]
        assert have == [False, False, False, False, True] * 2

    def test_translational_noise_statistics(self):
        """1e4 steps with the reference 0.05 intensity: the per-step
        displacement error std lands within 5% of 0.05 * sqrt(dt), i.e.
        dead-reckoning drift accumulates as 0.05 * sqrt(elapsed time)."""
        w = boxed_world(noise=NoiseSpec(trans_std=0.05, rot_std=0.0,
                                        heading_extra_std=0.0),
                        rng=np.random.default_rng(7))
        errs = []
        for _ in range(10_000):
            w.true_pose[:] = (10.0, 10.0, 0.0)  # stay away from walls
            out = step_sim(w, MotionInput(v=1.0, omega=0.0, dt=w.dt))
            errs.append(out.odom.v * w.dt - 1.0 * w.dt)
        std = float(np.std(errs))
        expected = 0.05 * math.sqrt(w.dt)
        assert abs(std - expected) / expected < 0.05

    def test_dead_reckoning_drift_scale(self):
        """Integrated odometry error over T seconds has std near
        trans_std * sqrt(T): the regime that makes uncorrected odometry
        drift by meters over long runs."""
        rng = np.random.default_rng(11)
        finals = []
        for _ in range(300):
            w = boxed_world(noise=NoiseSpec(0.05, 0.0, 0.0),
                            rng=np.random.default_rng(int(rng.integers(1 << 30))))
            err = 0.0
            for _ in range(500):  # 10 s
                w.true_pose[:] = (10.0, 10.0, 0.0)
                out = step_sim(w, MotionInput(v=0.5, omega=0.0, dt=w.dt))
                err += (out.odom.v - 0.5) * w.dt
            finals.append(err)
        drift = float(np.std(finals))
        assert abs(drift - 0.05 * math.sqrt(10.0)) / (0.05 * math.sqrt(10.0)) < 0.15

    def test_heading_extra_noise_only_on_scan_steps(self):
        w = boxed_world(noise=NoiseSpec(0.0, 0.0, heading_extra_std=0.01),
                        rng=np.random.default_rng(3))
        rots = []
        for _ in range(20):
            out = step_sim(w, MotionInput(v=0.0, omega=0.0, dt=w.dt))
            rots.append((out.odom.omega, out.scan is not None, out.odom.Q[2, 2]))
        for omega, scanned, q_rot in rots:
            if scanned:
                assert q_rot == pytest.approx(0.01 ** 2)
            else:
                assert omega == 0.0 and q_rot == 0.0

    def test_reproducibility_bitwise(self):
        def run(seed):
            w = boxed_world(noise=NoiseSpec(0.05, 0.02, 0.01),
                            rng=np.random.default_rng(seed))
            traj, ranges = [], []
            for _ in range(50):
                out = step_sim(w, MotionInput(v=0.7, omega=0.2, dt=w.dt))
                traj.append(w.true_pose.copy())
                if out.scan is not None:
                    ranges.append(out.scan.ranges.copy())
            return np.array(traj), np.concatenate(ranges)

        t1, r1 = run(42)
        t2, r2 = run(42)
        assert np.array_equal(t1, t2) and np.array_equal(r1, r2)

    def test_truth_never_mutated(self):
        w = boxed_world(noise=NoiseSpec(0.05, 0.02, 0.01))
        before = w.truth.probs.copy()
        for _ in range(100):
            step_sim(w, MotionInput(v=1.0, omega=0.5, dt=w.dt))
        assert np.array_equal(w.truth.probs, before)

    def test_pose_never_in_occupied_cell(self):
        w = boxed_world(noise=NoiseSpec(0.05, 0.02, 0.01),
                        rng=np.random.default_rng(5))
        w.true_pose[:] = (18.5, 18.5, 0.7)
        for _ in range(500):
            step_sim(w, MotionInput(v=1.2, omega=0.11, dt=w.dt))
            cell = w.truth.world_to_cell(w.true_pose[0], w.true_pose[1])
            assert w.truth.probs[cell.row, cell.col] < 0.5


class TestMetricsTranslation:
    def test_identical_trajectories(self):
        t = np.array([[0, 0, 0], [1, 1, 0.5]])
        assert metrics_translation(t, t) == (0.0, 0.0)

    def test_constant_offset(self):
        true = np.zeros((5, 3))
        est = true.copy()
        est[:, 0] += 0.3
        rmse, mae = metrics_translation(est, true)
        assert rmse == pytest.approx(0.3)
        assert mae == pytest.approx(0.3)

    def test_two_sample_values(self):
        true = np.zeros((2, 3))
        est = np.array([[0.1, 0, 0], [0.3, 0, 0]])
        rmse, mae = metrics_translation(est, true)
        assert rmse == pytest.approx(math.sqrt(0.05), abs=1e-9)
        assert mae == pytest.approx(0.2, abs=1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            metrics_translation(np.zeros((3, 3)), np.zeros((2, 3)))


class TestMetricsMapError:
    def _truth(self):
        g = OccupancyGrid.unknown(10, 10, 0.2)
        g.probs[:] = P_MIN
        g.probs[0, :] = 1 - P_MIN
        return g

    def test_perfect_estimate_hits_clamp_floor(self):
        truth = self._truth()
        est = truth.copy()
        err = metrics_map_error(est, truth)
        assert err == pytest.approx(100 * math.sqrt(2) * P_MIN, rel=1e-6)

    def test_all_unknown_estimate_returns_sentinel(self):
        truth = self._truth()
        est = OccupancyGrid.unknown(10, 10, 0.2)
        assert math.isnan(metrics_map_error(est, truth))

    def test_two_cell_example(self):
        truth = OccupancyGrid.unknown(2, 1, 0.2)
        truth.probs[0] = [1 - P_MIN, P_MIN]
        est = OccupancyGrid.unknown(2, 1, 0.2)
        est.probs[0] = [0.9, 0.1]
        err = metrics_map_error(est, truth)
        assert err == pytest.approx(100 * math.sqrt(0.01 + 0.01), rel=1e-9)

    def test_unknown_cells_excluded(self):
        truth = OccupancyGrid.unknown(3, 1, 0.2)
        truth.probs[0] = [1 - P_MIN, P_MIN, P_MIN]
        est = OccupancyGrid.unknown(3, 1, 0.2)
        est.probs[0] = [0.9, 0.5, 0.1]  # middle cell still unknown
        err = metrics_map_error(est, truth)
        assert err == pytest.approx(100 * math.sqrt(0.01 + 0.01), rel=1e-9)


class TestUncertaintyReduction:
    def test_constant_series_is_zero(self):
        assert metrics_uncertainty_reduction([5.0, 5.0, 5.0]) == 0.0

    def test_ln2_per_step_is_one_bit(self):
        series = [10.0 - k * math.log(2) for k in range(6)]
        assert metrics_uncertainty_reduction(series) == pytest.approx(1.0)

    def test_three_point_example(self):
        assert metrics_uncertainty_reduction([10.0, 8.0, 7.0]) == pytest.approx(
            1.5 / math.log(2), rel=1e-12)

    def test_window_averaging(self):
        series = [10.0, 9.0, 8.0, 7.0]
        assert metrics_uncertainty_reduction(series, dt_window=2) == pytest.approx(
            1.0 / math.log(2))
