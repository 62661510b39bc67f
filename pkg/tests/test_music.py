import math
import unittest
from dataclasses import replace

import numpy as np

from nfsense.core.errors import InvalidArgumentError
from nfsense.estimators.coarse import CoarseEstimate
from nfsense.estimators.music import (
    RefinementConfig,
    anchored_theta,
    apparent_sin,
    music_spectrum_1d,
    noise_subspace,
    refine_all,
    refine_location,
    refine_velocity,
    space_time_correlation,
    spatial_covariance,
    vectorized_spectrum,
)
from nfsense.model.geometry import ArrayConfig, TargetState, spatial_steering
from nfsense.model.synth import SpaceTimeSnapshot, clean_signal, complex_gaussian

CFG = ArrayConfig(num_elements=32, num_symbols=8)
STATIC = TargetState(0.2, 0.5)
MOVING = TargetState(0.15, 0.4, 4.0, 3.0)
WINDOWS = RefinementConfig(theta_window=0.02, range_window=0.1, vr_window=1.0, vtheta_window=2.0,
                           grid_points=256, passes=2)


def coarse_at(target: TargetState) -> CoarseEstimate:
    return CoarseEstimate(target.theta, target.range, target.v_r, abs(target.v_theta),
                          theta_step=0.016, range_step=0.05, vr_step=1.7, vtheta_step=1.0)


class TestNoiseSubspace(unittest.TestCase):

    def test_rank_one_covariance(self):
        a = spatial_steering(CFG, STATIC)
        r = np.outer(a, a.conj()) + 1e-6 * np.eye(CFG.num_elements)
        decomposition = noise_subspace(r)
        self.assertEqual(decomposition.signal_dim, 1)
        self.assertFalse(decomposition.degenerate)
        self.assertEqual(decomposition.noise_basis.shape, (32, 31))
        overlap = np.abs(decomposition.signal_basis[:, 0].conj() @ a)
        self.assertAlmostEqual(float(overlap), 1.0, places=6)
        self.assertTrue(np.all(np.diff(decomposition.eigenvalues) <= 0))

    def test_flat_covariance_is_degenerate(self):
        decomposition = noise_subspace(np.eye(8))
        self.assertTrue(decomposition.degenerate)
        self.assertEqual(decomposition.signal_dim, 1)

    def test_signal_dimension_is_capped(self):
        rng = np.random.default_rng(2)
        z = complex_gaussian(rng, 1.0, (16, 400))
        decomposition = noise_subspace(z @ z.conj().T / 400, energy_fraction=1.0, max_signal_dim=3)
        self.assertEqual(decomposition.signal_dim, 3)

    def test_rejects_bad_matrices(self):
        with self.assertRaises(InvalidArgumentError):
            noise_subspace(np.ones((3, 4)))
        m = np.eye(4, dtype=complex)
        m[0, 1] = 1j
        with self.assertRaises(InvalidArgumentError):
            noise_subspace(m)

    def test_spatial_covariance_is_hermitian(self):
        snapshot = clean_signal(CFG, MOVING)
        r = spatial_covariance(snapshot)
        np.testing.assert_allclose(r, r.conj().T, atol=1e-15)
        self.assertAlmostEqual(float(np.trace(r).real), float(np.sum(np.abs(snapshot.data) ** 2)) / CFG.num_symbols)


class TestSpectra(unittest.TestCase):

    def test_angle_spectrum_peaks_at_the_target(self):
        noise = noise_subspace(spatial_covariance(clean_signal(CFG, STATIC))).noise_basis
        grid = np.linspace(0.1, 0.3, 201)
        spectrum = music_spectrum_1d(noise, lambda th: spatial_steering(CFG, TargetState(th, STATIC.range)), grid)
        self.assertAlmostEqual(grid[int(np.argmax(spectrum))], STATIC.theta, places=9)

    def test_spectrum_grid_validation(self):
        noise = np.eye(4, dtype=complex)[:, 1:]
        with self.assertRaises(InvalidArgumentError):
            music_spectrum_1d(noise, lambda x: np.ones(4), [])
        with self.assertRaises(InvalidArgumentError):
            music_spectrum_1d(noise, lambda x: np.ones(5), [0.0])
        with self.assertRaises(InvalidArgumentError):
            music_spectrum_1d(noise, lambda x: np.zeros(4), [0.0])

    def test_correlation_is_one_at_the_truth(self):
        snapshot = clean_signal(CFG, MOVING)
        y_hat = snapshot.data / np.linalg.norm(snapshot.data)
        corr = space_time_correlation(CFG, y_hat, MOVING.theta, MOVING.range, MOVING.v_r, MOVING.v_theta)
        self.assertAlmostEqual(float(corr[0]), 1.0, places=10)
        off = space_time_correlation(CFG, y_hat, MOVING.theta, MOVING.range, MOVING.v_r + 3.0, MOVING.v_theta)
        self.assertLess(float(off[0]), 0.9)

    def test_vectorized_spectrum_of_zero_snapshot_is_flat(self):
        zero = SpaceTimeSnapshot(np.zeros((32, 8)), CFG)
        spectrum = vectorized_spectrum(zero, np.zeros(5), 0.5, 0.0, 0.0)
        np.testing.assert_array_equal(spectrum, np.ones(5))


class TestMotionAnchoring(unittest.TestCase):

    def test_anchoring_inverts_the_apparent_direction(self):
        for theta, r, v_theta in ((0.15, 0.4, 3.0), (-0.6, 0.3, -8.0), (0.9, 1.5, 12.0), (0.3, 2.0, 0.0)):
            s_app = apparent_sin(CFG, theta, r, v_theta)
            self.assertAlmostEqual(anchored_theta(CFG, s_app, r, v_theta), theta, places=10)

    def test_static_target_has_no_shift(self):
        self.assertEqual(apparent_sin(CFG, 0.4, 0.5, 0.0), math.sin(0.4))

    def test_positive_transverse_velocity_lowers_the_apparent_direction(self):
        self.assertLess(apparent_sin(CFG, 0.0, 0.4, 5.0), 0.0)


class TestRefinementConfig(unittest.TestCase):

    def test_validation(self):
        for kwargs in ({"grid_points": 2}, {"passes": 0}, {"window_steps": 0.0}, {"energy_fraction": 0.0},
                       {"energy_fraction": 1.5}, {"max_signal_dim": 0}, {"theta_window": -0.1},
                       {"range_window": math.inf}):
            with self.subTest(**kwargs):
                with self.assertRaises(InvalidArgumentError):
                    RefinementConfig(**kwargs)


class TestRefinement(unittest.TestCase):

    def test_static_noise_free_target(self):
        result = refine_all(clean_signal(CFG, STATIC), coarse_at(STATIC), WINDOWS)
        self.assertLess(abs(result.theta - STATIC.theta), 2e-4)
        self.assertLess(abs(result.range - STATIC.range), 2e-3)
        self.assertLess(abs(result.v_r), 0.05)
        self.assertLess(abs(result.v_theta), 0.1)
        self.assertNotIn("refinement_failed", result.flags)
        self.assertEqual(result.method, "MUSIC")
        self.assertEqual(result.diagnostics["passes"], 2)

    def test_moving_noise_free_target(self):
        result = refine_all(clean_signal(CFG, MOVING), coarse_at(MOVING), WINDOWS)
        self.assertLess(abs(result.theta - MOVING.theta), 0.02)
        self.assertLess(abs(result.range - MOVING.range), 0.04)
        self.assertLess(abs(result.v_r - MOVING.v_r), 0.5)
        self.assertLess(abs(result.v_theta - MOVING.v_theta), 1.5)

    def test_refinement_improves_on_an_offset_coarse_estimate(self):
        coarse = CoarseEstimate(STATIC.theta + 0.008, STATIC.range + 0.04, 0.5, 0.0,
                                theta_step=0.016, range_step=0.05, vr_step=1.7, vtheta_step=1.0)
        result = refine_all(clean_signal(CFG, STATIC), coarse, WINDOWS)
        self.assertLess(abs(result.theta - STATIC.theta), abs(coarse.theta - STATIC.theta))
        self.assertLess(abs(result.range - STATIC.range), abs(coarse.range - STATIC.range))
        self.assertLess(abs(result.v_r), abs(coarse.v_r))

    def test_narrow_window_is_flagged(self):
        coarse = CoarseEstimate(STATIC.theta - 0.03, STATIC.range, 0.0, 0.0,
                                theta_step=0.016, range_step=0.05, vr_step=1.7, vtheta_step=1.0)
        rcfg = RefinementConfig(theta_window=0.01, range_window=0.05, vr_window=1.0, vtheta_window=1.0,
                                grid_points=64, passes=1)
        result = refine_all(clean_signal(CFG, STATIC), coarse, rcfg)
        self.assertIn("window_saturated", result.flags)
        self.assertIn("theta", result.diagnostics["saturated"])

    def test_zero_snapshot_keeps_the_coarse_values(self):
        coarse = coarse_at(MOVING)
        result = refine_all(SpaceTimeSnapshot(np.zeros((32, 8)), CFG), coarse, WINDOWS)
        self.assertIn("refinement_failed", result.flags)
        self.assertIn("degenerate_spectrum", result.flags)
        self.assertEqual((result.theta, result.range, result.v_r, result.v_theta),
                         (coarse.theta, coarse.range, coarse.v_r, coarse.v_theta))

    def test_receding_transverse_motion_starts_from_the_apparent_angle(self):
        target = TargetState(MOVING.theta, MOVING.range, MOVING.v_r, -MOVING.v_theta)
        coarse = replace(coarse_at(target), ridge_velocity=-2.0,
                         apparent_theta=math.asin(apparent_sin(CFG, target.theta, target.range, target.v_theta)))
        result = refine_all(clean_signal(CFG, target), coarse, WINDOWS)
        self.assertLess(result.v_theta, 0.0)
        self.assertLess(abs(result.v_theta - target.v_theta), 1.5)
        self.assertLess(abs(result.theta - target.theta), 0.02)

    def test_zero_snapshot_keeps_the_coarse_angle_not_the_apparent_one(self):
        coarse = replace(coarse_at(MOVING), apparent_theta=MOVING.theta - 0.01)
        result = refine_all(SpaceTimeSnapshot(np.zeros((32, 8)), CFG), coarse, WINDOWS)
        self.assertEqual(result.theta, coarse.theta)

    def test_coarse_flags_are_carried(self):
        coarse = CoarseEstimate(STATIC.theta, STATIC.range, 0.0, 0.0, theta_step=0.016, range_step=0.05,
                                vr_step=1.7, vtheta_step=1.0, flags=frozenset({"range_extrapolated"}))
        result = refine_all(clean_signal(CFG, STATIC), coarse, WINDOWS)
        self.assertIn("range_extrapolated", result.flags)

    def test_stage_functions(self):
        snapshot = clean_signal(CFG, STATIC)
        coarse = coarse_at(STATIC)
        location = refine_location(snapshot, coarse, WINDOWS)
        theta, target_range = location
        self.assertLess(abs(theta - STATIC.theta), 2e-4)
        self.assertLess(abs(target_range - STATIC.range), 2e-3)
        self.assertAlmostEqual(location.apparent_sin, math.sin(theta))
        self.assertIn("theta", location.peaks)

        v_r, v_theta = refine_velocity(snapshot, location, coarse, WINDOWS)
        self.assertLess(abs(v_r), 0.05)
        self.assertLess(abs(v_theta), 0.1)

    def test_scaling_leaves_the_estimate_unchanged(self):
        snapshot = clean_signal(CFG, MOVING)
        noisy = SpaceTimeSnapshot(snapshot.data + complex_gaussian(np.random.default_rng(4), 0.05, snapshot.shape), CFG)
        a = refine_all(noisy, coarse_at(MOVING), WINDOWS)
        b = refine_all(noisy.scaled(0.3 - 2.1j), coarse_at(MOVING), WINDOWS)
        self.assertEqual(a.parameters(), b.parameters())


if __name__ == '__main__':
    unittest.main()
