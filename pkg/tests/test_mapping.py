"""Tempered occupancy updates: weights, projected variance, cell/scan
posteriors, conservatism under pose uncertainty, and the inverse baseline."""

import math
import warnings

import numpy as np
import pytest

from exploresim.grid_map import OccupancyGrid, P_MIN
from exploresim.localization import PoseBelief
from exploresim.mapping import (
    MapUpdateParams,
    inverse_update_scan,
    projected_variance,
    temper_weight,
    tempered_update_cell,
    tempered_update_scan,
)
from exploresim.sensor import BeamScan, SensorSpec, predict_scan


def quiet_spec(**kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return SensorSpec(**kw)


SPEC = quiet_spec(beam_noise_std=0.0)
PARAMS = MapUpdateParams()


class TestTemperWeight:
    def test_fresh_cell_occupied_weight_is_one(self):
        assert temper_weight(0, True, 3) == 1.0
        assert temper_weight(0, False, 3) == 0.0

    def test_saturated_cell_occupied_weight_is_zero(self):
        assert temper_weight(3, True, 3) == 0.0
        assert temper_weight(3, False, 3) == 1.0

    def test_single_hit_unoccupied_third(self):
        assert temper_weight(1, False, 3) == pytest.approx(1.0 / 3.0)

    def test_counts_clamp(self):
        assert temper_weight(99, True, 3) == 0.0
        assert temper_weight(-2, False, 3) == 0.0

    def test_params_validation(self):
        with pytest.raises(ValueError):
            MapUpdateParams(N_max=0)
        with pytest.raises(ValueError):
            MapUpdateParams(l_occ=-1.0)
        with pytest.raises(ValueError):
            MapUpdateParams(pass_cell_weighting="nope")


class TestProjectedVariance:
    def test_zero_covariance_returns_hypothesis_variance(self):
        H = np.array([1.0, 0.0, 0.0])
        assert projected_variance(np.zeros((3, 3)), H, True, SPEC) == SPEC.R_o
        assert projected_variance(np.zeros((3, 3)), H, False, SPEC) == SPEC.R_u

    def test_isotropic_adds_sigma_squared(self):
        H = np.array([0.6, 0.8, 0.0])  # unit position part
        cov = 0.04 * np.eye(3)
        assert projected_variance(cov, H, True, SPEC) == pytest.approx(0.04 + SPEC.R_o)

    def test_psd_growth_never_decreases(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a = rng.normal(size=(3, 3))
            cov = a @ a.T
            bump = rng.normal(size=(3, 3))
            bigger = cov + bump @ bump.T
            H = rng.normal(size=3)
            assert (projected_variance(bigger, H, True, SPEC)
                    >= projected_variance(cov, H, True, SPEC) - 1e-12)


def flat_belief(sigma2=0.0):
    return PoseBelief([0.0, 0.0, 0.0], sigma2 * np.eye(3))


class TestTemperedUpdateCell:
    H = np.array([1.0, 0.0, 0.0])

    def test_balanced_half_weights_zero_residual(self):
        """n = N_max/2 gives w = (1/2, 1/2): the posterior is the square
        -root-tempered ratio of the two zero-residual densities."""
        params = MapUpdateParams(N_max=2)
        post = tempered_update_cell(0.5, 5.0, 5.0, 1, flat_belief(), self.H,
                                    params, SPEC)
        lo, lu = 1.0229289, 0.1329808
        expected = math.sqrt(lo) * 0.5 / (math.sqrt(lo) * 0.5 + math.sqrt(lu) * 0.5)
        assert post == pytest.approx(expected, abs=1e-6)

    def test_ratio_value_at_unit_weights(self):
        """With unit weights on both branches and no pose uncertainty the
        zero-residual posterior is Lo / (Lo + Lu) = 0.8850."""
        big = MapUpdateParams(N_max=2)
        # emulate w = (1, 1) by computing through two half-weight updates:
        # (sqrt(L))^2 composes to L under the same prior odds algebra
        p1 = tempered_update_cell(0.5, 5.0, 5.0, 1, flat_belief(), self.H, big, SPEC)
        p2 = tempered_update_cell(p1, 5.0, 5.0, 1, flat_belief(), self.H, big, SPEC)
        assert p2 == pytest.approx(0.8850, abs=2e-4)

    def test_large_residual_clamps_to_floor(self):
        big = MapUpdateParams(N_max=2)
        p1 = tempered_update_cell(0.5, 7.0, 5.0, 1, flat_belief(), self.H, big, SPEC)
        p2 = tempered_update_cell(p1, 7.0, 5.0, 1, flat_belief(), self.H, big, SPEC)
        # residual 2.0: the exact two-sided ratio gives ~1.87e-5 -> floor
        assert p2 == P_MIN

    def test_zero_weights_keep_prior_exactly(self):
        """Both weights zero tempers both likelihoods to 1: the posterior
        is the prior, whatever the densities were."""
        from exploresim.mapping import _posterior_from_logs
        for p in (0.2, 0.5, 0.9):
            post = float(_posterior_from_logs(p, 0.0, -12.3, 0.0, 4.5))
            assert post == pytest.approx(p, abs=1e-12)

    def test_equal_tempered_likelihoods_keep_prior(self):
        """x^0-style neutrality: when both tempered likelihoods coincide
        the posterior equals the prior (zero residual, near-equal
        variances, balanced weights)."""
        post = tempered_update_cell(0.37, 5.0, 5.0, 1, flat_belief(), self.H,
                                    MapUpdateParams(N_max=2),
                                    quiet_spec(R_o=1.0, R_u=1.0 + 1e-9))
        assert post == pytest.approx(0.37, abs=1e-6)

    def test_pose_uncertainty_softens_update(self):
        tight = tempered_update_cell(0.5, 5.0, 5.0, 1, flat_belief(0.0), self.H,
                                     PARAMS, SPEC)
        loose = tempered_update_cell(0.5, 5.0, 5.0, 1, flat_belief(1.0), self.H,
                                     PARAMS, SPEC)
        assert abs(loose - 0.5) < abs(tight - 0.5)

    def test_output_always_clamped(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            post = tempered_update_cell(
                float(rng.uniform(P_MIN, 1 - P_MIN)),
                float(rng.uniform(0, 10)), float(rng.uniform(0.5, 9)),
                int(rng.integers(0, 4)), flat_belief(float(rng.uniform(0, 2))),
                self.H, PARAMS, SPEC)
            assert P_MIN <= post <= 1 - P_MIN


def open_grid(n=100, res=0.2, p0=0.5):
    g = OccupancyGrid.unknown(n, n, res)
    if p0 != 0.5:
        g.probs[:] = p0
    return g


def axis_scan(z, n_beams=4, z_max=10.0):
    spec = quiet_spec(n_beams=n_beams, z_max=z_max, beam_noise_std=0.0)
    return BeamScan(ranges=np.full(n_beams, z), angles=spec.beam_angles(),
                    z_max=z_max), spec


class TestTemperedUpdateScan:
    def test_max_range_scan_on_unknown_map_only_clears(self):
        """All-z_max beams over unknown space: traversed cells drop below
        0.5 and nothing rises above it (ambiguous tail cells are skipped)."""
        g = open_grid()
        scan, spec = axis_scan(spec_z := 10.0, n_beams=8, z_max=10.0)
        belief = PoseBelief([10.1, 10.1, 0.0], np.diag([0.0025, 0.0025, 1e-3]))
        tempered_update_scan(g, scan, belief, PARAMS, spec)
        assert not np.any(g.probs > 0.5 + 1e-12)
        # near cells along the +x beam clearly cleared
        row, col = g.world_to_cell(10.1, 10.1)
        near = g.probs[row, col + 1:col + 30]
        assert np.all(near < 0.5)

    def test_max_range_updates_match_per_cell_oracle(self):
        """Scan-level result equals per-cell arithmetic on the same sets."""
        g = open_grid()
        scan, spec = axis_scan(10.0, n_beams=1)
        scan.angles = np.array([0.0])
        belief = PoseBelief([10.1, 10.1, 0.0], np.diag([0.0025, 0.0025, 1e-3]))
        before = g.probs.copy()
        tempered_update_scan(g, scan, belief, PARAMS, spec)
        row, col0 = g.world_to_cell(10.1, 10.1)
        for col in range(col0 + 1, col0 + 40):
            cx, cy = g.cell_center((row, col))
            d = math.hypot(cx - 10.1, cy - 10.1)
            H = np.array([(10.1 - cx) / d, (10.1 - cy) / d, 0.0])
            expected = tempered_update_cell(before[row, col], 10.0, d, 0, belief,
                                            H, PARAMS, spec)
            if expected > before[row, col]:
                expected = before[row, col]  # skip rule: tail cells untouched
            assert g.probs[row, col] == pytest.approx(expected, rel=1e-9)

    def test_hit_increments_and_saturates_counts(self):
        g = open_grid()
        g.probs[50, 60] = 0.9  # wall cell at (x=12.1, y=10.1)
        z = 12.1 - 10.1
        scan, spec = axis_scan(z, n_beams=1)
        scan.angles = np.array([0.0])
        belief = PoseBelief([10.1, 10.1, 0.0], np.diag([1e-4, 1e-4, 1e-4]))
        for k in range(5):
            tempered_update_scan(g, scan, belief, PARAMS, spec)
            assert g.hit_counts[50, 60] == min(k + 1, PARAMS.N_max)
        assert g.hit_counts[50, 60] == PARAMS.N_max

    def test_saturated_cell_updates_through_unoccupied_branch_only(self):
        """Once the count caps, the occupied branch is frozen: the next
        posterior matches the w = (0, 1) arithmetic exactly."""
        g = open_grid()
        wall = (50, 60)
        g.probs[wall] = 0.9
        g.hit_counts[wall] = PARAMS.N_max  # pre-saturated
        z = 12.1 - 10.1
        scan, spec = axis_scan(z, n_beams=1)
        scan.angles = np.array([0.0])
        belief = PoseBelief([10.1, 10.1, 0.0], np.zeros((3, 3)))
        before = float(g.probs[wall])
        tempered_update_scan(g, scan, belief, PARAMS, spec)
        cx, cy = g.cell_center(wall)
        d = math.hypot(cx - 10.1, cy - 10.1)
        lo = math.exp(-0.5 * (z - d) ** 2 / spec.R_o) / math.sqrt(2 * math.pi * spec.R_o)
        lu = math.exp(-0.5 * (z - d) ** 2 / spec.R_u) / math.sqrt(2 * math.pi * spec.R_u)
        p_unocc = lu / (lo + lu)  # normalized unoccupied-hypothesis likelihood
        expected = before / (before + p_unocc * (1 - before))
        assert g.probs[wall] == pytest.approx(min(expected, 1 - P_MIN), rel=1e-9)

    def test_conservatism_under_pose_uncertainty(self):
        """Same short-range scan under Sigma and 100 Sigma: every touched
        cell moves strictly less in log odds under the larger covariance."""
        base_cov = np.diag([0.0025, 0.0025, 0.001])
        results = []
        for scale in (1.0, 100.0):
            g = open_grid()
            scan, spec = axis_scan(0.25, n_beams=4, z_max=10.0)
            belief = PoseBelief([10.1, 10.1, 0.0], scale * base_cov)
            tempered_update_scan(g, scan, belief, PARAMS, spec)
            results.append(g.probs.copy())
        tight, loose = results
        touched = (tight != 0.5) | (loose != 0.5)
        assert touched.sum() == 4  # one hit cell per axis beam
        lo_t = np.abs(np.log(tight[touched] / (1 - tight[touched])))
        lo_l = np.abs(np.log(loose[touched] / (1 - loose[touched])))
        assert np.all(lo_l < lo_t)

    def test_hit_cells_of_dense_scan_are_conservative(self):
        """Zero-residual hit cells of a realistic ring scan move less
        under inflated pose covariance."""
        n = 100
        base = open_grid(n)
        base.probs[:] = 0.5
        # circular wall at ~3 m around the center
        cy, cx = np.mgrid[0:n, 0:n]
        centers_x = (cx + 0.5) * 0.2
        centers_y = (cy + 0.5) * 0.2
        rad = np.hypot(centers_x - 10.1, centers_y - 10.1)
        wall = (rad >= 3.0) & (rad < 3.3)
        spec = quiet_spec(n_beams=36, beam_noise_std=0.0)
        deltas = {}
        for scale in (1.0, 100.0):
            g = base.copy()
            g_ray = base.copy()
            g_ray.probs[wall] = 0.9
            scan = predict_scan((10.1, 10.1, 0.0), g_ray, spec, occ_threshold=0.65)
            g.probs[wall] = 0.9
            belief = PoseBelief([10.1, 10.1, 0.0],
                                scale * np.diag([0.0025, 0.0025, 0.001]))
            before = g.probs.copy()
            tempered_update_scan(g, scan, belief, PARAMS, spec)
            hit_mask = g.hit_counts > 0
            lo = np.abs(np.log(g.probs / (1 - g.probs))
                        - np.log(before / (1 - before)))
            deltas[scale] = lo[hit_mask]
        assert deltas[1.0].shape == deltas[100.0].shape
        assert np.all(deltas[100.0] < deltas[1.0])

    def test_disjoint_beams_commute(self):
        """Two opposite beams touch disjoint cells: applying them in either
        order gives bit-identical maps."""
        spec = quiet_spec(n_beams=1, beam_noise_std=0.0)
        belief = PoseBelief([10.1, 10.1, 0.0], np.diag([1e-3, 1e-3, 1e-3]))

        def one_beam(angle, z):
            return BeamScan(ranges=[z], angles=[angle], z_max=spec.z_max)

        a = open_grid()
        tempered_update_scan(a, one_beam(0.0, 3.0), belief, PARAMS, spec)
        tempered_update_scan(a, one_beam(math.pi / 2, 4.0), belief, PARAMS, spec)
        b = open_grid()
        tempered_update_scan(b, one_beam(math.pi / 2, 4.0), belief, PARAMS, spec)
        tempered_update_scan(b, one_beam(0.0, 3.0), belief, PARAMS, spec)
        assert np.array_equal(a.probs, b.probs)
        assert np.array_equal(a.hit_counts, b.hit_counts)

    def test_untouched_cells_never_change(self):
        g = open_grid()
        scan, spec = axis_scan(3.0, n_beams=4)
        belief = PoseBelief([10.1, 10.1, 0.0], np.diag([1e-3, 1e-3, 1e-3]))
        before = g.probs.copy()
        tempered_update_scan(g, scan, belief, PARAMS, spec)
        changed = np.nonzero(g.probs != before)
        # every changed cell lies on one of the four axis rays
        row0, col0 = g.world_to_cell(10.1, 10.1)
        for r, c in zip(*changed):
            assert r == row0 or c == col0

    def test_forced_one_weighting_keeps_ratio_form_for_pass_cells(self):
        params = MapUpdateParams(pass_cell_weighting="forced_one")
        g = open_grid()
        scan, spec = axis_scan(5.0, n_beams=1)
        scan.angles = np.array([0.0])
        belief = PoseBelief([10.1, 10.1, 0.0], np.zeros((3, 3)))
        tempered_update_scan(g, scan, belief, params, spec)
        row, col0 = g.world_to_cell(10.1, 10.1)
        # a pass cell 2 m before the endpoint: residual 2.0, ratio form
        cell = (row, col0 + 15)
        cx, _ = g.cell_center(cell)
        d = cx - 10.1
        lo = math.exp(-0.5 * (5.0 - d) ** 2 / spec.R_o) / math.sqrt(2 * math.pi * spec.R_o)
        lu = math.exp(-0.5 * (5.0 - d) ** 2 / spec.R_u) / math.sqrt(2 * math.pi * spec.R_u)
        expected = max(lo * 0.5 / (lo * 0.5 + lu * 0.5), P_MIN)
        assert g.probs[cell] == pytest.approx(expected, rel=1e-9)


class TestInverseModel:
    def test_single_hit_logistic_value(self):
        g = open_grid()
        scan, _ = axis_scan(2.0, n_beams=1)
        scan.angles = np.array([0.0])
        inverse_update_scan(g, scan, (10.1, 10.1, 0.0), PARAMS)
        row, col = g.world_to_cell(12.1, 10.1)
        assert g.probs[row, col] == pytest.approx(0.7006, abs=1e-4)

    def test_single_pass_logistic_value(self):
        g = open_grid()
        scan, _ = axis_scan(2.0, n_beams=1)
        scan.angles = np.array([0.0])
        inverse_update_scan(g, scan, (10.1, 10.1, 0.0), PARAMS)
        row, col = g.world_to_cell(11.1, 10.1)  # mid-ray pass cell
        assert g.probs[row, col] == pytest.approx(0.4013, abs=1e-4)

    def test_hit_then_equal_free_returns_to_half(self):
        params = MapUpdateParams(l_occ=0.85, l_free=-0.85)
        g = open_grid()
        hit_scan, _ = axis_scan(2.0, n_beams=1)
        hit_scan.angles = np.array([0.0])
        inverse_update_scan(g, hit_scan, (10.1, 10.1, 0.0), params)
        # a longer beam now passes through the previous hit cell
        long_scan, _ = axis_scan(5.0, n_beams=1)
        long_scan.angles = np.array([0.0])
        inverse_update_scan(g, long_scan, (10.1, 10.1, 0.0), params)
        row, col = g.world_to_cell(12.1, 10.1)
        assert g.probs[row, col] == pytest.approx(0.5, abs=1e-9)
