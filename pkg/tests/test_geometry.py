import math
import unittest

import numpy as np

from nfsense.core.errors import InvalidArgumentError
from nfsense.model.geometry import (
    ArrayConfig,
    CalibrationProfile,
    TargetState,
    apply_calibration,
    approx_local_velocity,
    doppler_matrix,
    doppler_steering,
    element_indices,
    element_offsets,
    element_range,
    is_within_ebrd,
    ebrd_bound,
    local_velocity,
    sample_calibration,
    space_time_matrix,
    spatial_steering,
    spatial_steering_grid,
    taylor_range,
    target_snr,
)

DEFAULT_ARRAY = ArrayConfig()
SCENARIO = TargetState(math.pi / 12, 7.0, 10.0, 8.0)


class TestArrayConfig(unittest.TestCase):

    def test_default_rayleigh_distance_is_about_350_m(self):
        self.assertAlmostEqual(DEFAULT_ARRAY.rayleigh_distance, 350.0, delta=5.0)
        self.assertAlmostEqual(DEFAULT_ARRAY.element_spacing, DEFAULT_ARRAY.wavelength / 2)

    def test_rejects_invalid_values(self):
        with self.assertRaises(InvalidArgumentError):
            ArrayConfig(num_elements=1)
        with self.assertRaises(InvalidArgumentError):
            ArrayConfig(num_symbols=0)
        with self.assertRaises(InvalidArgumentError):
            ArrayConfig(carrier_freq=-1.0)
        with self.assertRaises(InvalidArgumentError):
            ArrayConfig(index_convention="zigzag")

    def test_fingerprint_tracks_every_field(self):
        self.assertEqual(ArrayConfig().fingerprint(), ArrayConfig().fingerprint())
        self.assertNotEqual(ArrayConfig().fingerprint(), ArrayConfig(num_symbols=16).fingerprint())
        self.assertNotEqual(ArrayConfig().fingerprint(), ArrayConfig(two_way_spatial=True).fingerprint())


class TestElementLayout(unittest.TestCase):

    def test_centered_convention_matches_symmetric_offsets(self):
        cfg = ArrayConfig(num_elements=2, carrier_freq=1e9, element_spacing=1.0, index_convention="centered")
        np.testing.assert_allclose(element_offsets(cfg), [-0.5, 0.5])
        cfg = ArrayConfig(num_elements=3, carrier_freq=1e9, element_spacing=0.5)
        np.testing.assert_allclose(element_offsets(cfg), [-0.5, 0.0, 0.5])

    def test_integer_convention_for_even_arrays(self):
        cfg = ArrayConfig(num_elements=4)
        np.testing.assert_array_equal(element_indices(cfg), [-2.0, -1.0, 0.0, 1.0])

    def test_span_matches_aperture(self):
        offsets = element_offsets(DEFAULT_ARRAY)
        self.assertAlmostEqual(offsets.max() - offsets.min(), DEFAULT_ARRAY.aperture)


class TestRanges(unittest.TestCase):

    def test_broadside_range(self):
        target = TargetState(0.0, 5.0)
        x = element_offsets(DEFAULT_ARRAY)
        np.testing.assert_allclose(element_range(DEFAULT_ARRAY, target), np.sqrt(25.0 + x * x), rtol=1e-14)

    def test_center_element_sits_at_target_range(self):
        self.assertEqual(float(element_range(DEFAULT_ARRAY, SCENARIO, 0)), SCENARIO.range)
        self.assertEqual(float(taylor_range(DEFAULT_ARRAY, SCENARIO, 0)), SCENARIO.range)

    def test_triangle_inequality(self):
        x = np.abs(element_offsets(DEFAULT_ARRAY))
        r_n = element_range(DEFAULT_ARRAY, SCENARIO)
        self.assertTrue(np.all(r_n >= np.abs(SCENARIO.range - x) - 1e-12))
        self.assertTrue(np.all(r_n <= SCENARIO.range + x + 1e-12))

    def test_taylor_expansion_converges(self):
        exact = element_range(DEFAULT_ARRAY, SCENARIO)
        approx = taylor_range(DEFAULT_ARRAY, SCENARIO)
        self.assertLess(np.max(np.abs(approx - exact) / exact), 0.01)
        for scale in (1.0, 10.0):
            far = TargetState(SCENARIO.theta, scale * DEFAULT_ARRAY.rayleigh_distance)
            rel = np.abs(taylor_range(DEFAULT_ARRAY, far) - element_range(DEFAULT_ARRAY, far)) / far.range
            self.assertLess(np.max(rel), 1e-4)


class TestSteering(unittest.TestCase):

    def test_unit_norm(self):
        self.assertAlmostEqual(float(np.linalg.norm(spatial_steering(DEFAULT_ARRAY, SCENARIO))), 1.0, places=12)

    def test_center_entry_has_zero_phase(self):
        a = spatial_steering(DEFAULT_ARRAY, SCENARIO)
        center = int(np.flatnonzero(element_indices(DEFAULT_ARRAY) == 0)[0])
        self.assertAlmostEqual(complex(a[center]), 1 / math.sqrt(DEFAULT_ARRAY.num_elements), places=14)

    def test_far_field_matches_planar_phase(self):
        target = TargetState(0.4, 100 * DEFAULT_ARRAY.rayleigh_distance)
        a = spatial_steering(DEFAULT_ARRAY, target) * math.sqrt(DEFAULT_ARRAY.num_elements)
        x = element_offsets(DEFAULT_ARRAY)
        planar = np.exp(1j * DEFAULT_ARRAY.wavenumber * x * math.sin(target.theta))
        deviation = float(np.max(np.abs(np.angle(a * planar.conj()))))
        # leading curvature term at the outermost element
        curvature = DEFAULT_ARRAY.wavenumber * np.max(x * x) * math.cos(target.theta) ** 2 / (2 * target.range)
        self.assertLess(deviation, 1.01 * curvature)
        self.assertLess(deviation, 4e-3)

    def test_grid_matches_single_vectors(self):
        thetas = np.array([-0.3, 0.1, 0.5])
        ranges = np.array([2.0, 7.0, 40.0])
        grid = spatial_steering_grid(DEFAULT_ARRAY, thetas, ranges)
        for i in range(3):
            np.testing.assert_allclose(grid[i], spatial_steering(DEFAULT_ARRAY, TargetState(thetas[i], ranges[i])),
                                       atol=1e-13)

    def test_two_way_doubles_the_phase(self):
        one_way = spatial_steering(DEFAULT_ARRAY, SCENARIO)
        two_way = spatial_steering(ArrayConfig(two_way_spatial=True), SCENARIO)
        scale = math.sqrt(DEFAULT_ARRAY.num_elements)
        np.testing.assert_allclose((one_way * scale) ** 2, two_way * scale, atol=1e-10)


class TestCalibration(unittest.TestCase):

    def test_identity_is_a_no_op(self):
        a = spatial_steering(DEFAULT_ARRAY, SCENARIO)
        np.testing.assert_array_equal(apply_calibration(CalibrationProfile.identity(256), a), a)

    def test_uniform_gain(self):
        a = spatial_steering(DEFAULT_ARRAY, SCENARIO)
        profile = CalibrationProfile(np.full(256, 2.0), np.zeros(256))
        np.testing.assert_allclose(apply_calibration(profile, a), 2 * a)

    def test_round_trip(self):
        a = spatial_steering(DEFAULT_ARRAY, SCENARIO)
        profile = sample_calibration(np.random.default_rng(1), num_elements=256)
        np.testing.assert_allclose(apply_calibration(profile, a) / profile.weights, a, atol=1e-15)

    def test_length_mismatch(self):
        with self.assertRaises(InvalidArgumentError):
            apply_calibration(CalibrationProfile.identity(3), np.ones(4))

    def test_sampling_bounds_and_mean(self):
        profile = sample_calibration(np.random.default_rng(2), math.pi / 36, 1.0, 100_000)
        self.assertTrue(np.all((profile.phi >= 0) & (profile.phi <= math.pi / 36)))
        self.assertTrue(np.all((profile.rho >= 1.0) & (profile.rho <= 10 ** (1 / 20))))
        self.assertAlmostEqual(float(profile.phi.mean()), math.pi / 72, delta=0.01 * math.pi / 72)

    def test_zero_bounds_give_identity(self):
        profile = sample_calibration(np.random.default_rng(3), 0.0, 0.0, 16)
        self.assertTrue(profile.is_identity)

    def test_negative_bounds(self):
        with self.assertRaises(InvalidArgumentError):
            sample_calibration(np.random.default_rng(0), -0.1, 1.0, 4)


class TestVelocities(unittest.TestCase):

    def test_center_element(self):
        v_r_n, v_theta_n = local_velocity(SCENARIO, DEFAULT_ARRAY, 0)
        self.assertAlmostEqual(float(v_r_n), SCENARIO.v_r)
        self.assertEqual(float(v_theta_n), 0.0)

    def test_far_field_limit(self):
        target = TargetState(SCENARIO.theta, 100 * DEFAULT_ARRAY.rayleigh_distance, 10.0, 8.0)
        v_r_n, v_theta_n = local_velocity(target, DEFAULT_ARRAY)
        self.assertLess(np.max(np.abs(v_r_n - target.v_r)), 1e-3 * abs(target.v_r))
        self.assertLess(np.max(np.abs(v_theta_n)), 1e-3 * abs(target.v_theta))

    def test_edge_element_formula(self):
        n = -128
        x = n * DEFAULT_ARRAY.element_spacing
        r_n = math.sqrt(7.0 ** 2 + x * x - 2 * 7.0 * x * math.sin(SCENARIO.theta))
        v_r_n, v_theta_n = local_velocity(SCENARIO, DEFAULT_ARRAY, n)
        self.assertAlmostEqual(float(v_r_n), 10.0 * (7.0 - x * math.sin(SCENARIO.theta)) / r_n, places=12)
        self.assertAlmostEqual(float(v_theta_n), 8.0 * x * math.cos(SCENARIO.theta) / r_n, places=12)

    def test_taylor_velocities_converge(self):
        far = TargetState(SCENARIO.theta, 10 * DEFAULT_ARRAY.rayleigh_distance, 10.0, 8.0)
        exact_r, exact_t = local_velocity(far, DEFAULT_ARRAY)
        for order in (1, 2):
            approx_r, approx_t = approx_local_velocity(DEFAULT_ARRAY, far, order)
            self.assertLess(np.max(np.abs(approx_r - exact_r)), 1e-3)
            self.assertLess(np.max(np.abs(approx_t - exact_t)), 1e-3)
        with self.assertRaises(InvalidArgumentError):
            approx_local_velocity(DEFAULT_ARRAY, far, 3)


class TestDopplerAndSpaceTime(unittest.TestCase):

    def test_static_target_gives_all_ones(self):
        static = TargetState(0.3, 5.0)
        np.testing.assert_allclose(doppler_steering(DEFAULT_ARRAY, static, 4), np.ones(256))
        np.testing.assert_allclose(doppler_steering(DEFAULT_ARRAY, SCENARIO, 0), np.ones(256))

    def test_center_element_doppler_phase(self):
        target = TargetState(0.0, 5.0, 10.0, 0.0)
        m = 3
        b = doppler_steering(DEFAULT_ARRAY, target, m)
        center = int(np.flatnonzero(element_indices(DEFAULT_ARRAY) == 0)[0])
        expected = np.exp(-1j * math.pi * m * 2 * 10.0 / DEFAULT_ARRAY.wavelength / DEFAULT_ARRAY.symbol_rate)
        self.assertAlmostEqual(complex(b[center]), complex(expected), places=10)

    def test_doppler_matrix_columns(self):
        matrix = doppler_matrix(DEFAULT_ARRAY, SCENARIO)
        self.assertEqual(matrix.shape, (256, 32))
        np.testing.assert_allclose(matrix[:, 4], doppler_steering(DEFAULT_ARRAY, SCENARIO, 5))

    def test_space_time_matrix(self):
        v = space_time_matrix(DEFAULT_ARRAY, SCENARIO, 2.5)
        self.assertAlmostEqual(float(np.sum(np.abs(v) ** 2)), 2.5 * 32, places=9)
        np.testing.assert_array_equal(space_time_matrix(DEFAULT_ARRAY, SCENARIO, 0.0), np.zeros((256, 32)))
        static = space_time_matrix(DEFAULT_ARRAY, TargetState(0.2, 9.0), 1.0)
        np.testing.assert_allclose(static, np.repeat(static[:, :1], 32, axis=1))
        with self.assertRaises(InvalidArgumentError):
            space_time_matrix(DEFAULT_ARRAY, SCENARIO, -1.0)


class TestRadarEquation(unittest.TestCase):

    def test_unit_inputs(self):
        self.assertAlmostEqual(target_snr(1, 1, 1, 1, 1), 1 / (4 * math.pi) ** 3)

    def test_inverse_fourth_power(self):
        self.assertAlmostEqual(target_snr(2, 3, 0.01, 1, 10) / target_snr(2, 3, 0.01, 1, 20), 16.0)

    def test_rejects_non_positive(self):
        with self.assertRaises(InvalidArgumentError):
            target_snr(0, 1, 1, 1, 1)

    def test_ebrd(self):
        self.assertAlmostEqual(ebrd_bound(DEFAULT_ARRAY, 0.0), DEFAULT_ARRAY.rayleigh_distance / 10)
        self.assertTrue(is_within_ebrd(DEFAULT_ARRAY, SCENARIO))
        self.assertFalse(is_within_ebrd(DEFAULT_ARRAY, TargetState(0.0, DEFAULT_ARRAY.rayleigh_distance)))


class TestTargetState(unittest.TestCase):

    def test_rejects_invalid(self):
        with self.assertRaises(InvalidArgumentError):
            TargetState(0.1, 0.0)
        with self.assertRaises(InvalidArgumentError):
            TargetState(math.pi / 2, 1.0)
        with self.assertRaises(InvalidArgumentError):
            TargetState(0.1, math.inf)


if __name__ == '__main__':
    unittest.main()
