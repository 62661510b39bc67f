import math
import os
import tempfile
import unittest

import numpy as np
from scipy.integrate import quad

from nfsense.analysis.spectrum import (
    ad_transform,
    analytic_angular_gain_fresnel,
    analytic_angular_gain_sum,
    analytic_doppler_gain,
    analytic_doppler_width,
    angle_grid,
    angular_profile,
    angular_spread,
    apparent_sin,
    doppler_profile,
    doppler_slope,
    doppler_spread,
    doppler_to_velocity,
    export_admap_csv,
    extract_3db_support,
    fresnel,
    ridge_slope,
    velocity_from_slope,
    velocity_to_doppler,
)
from nfsense.core.errors import DegenerateInputError, InvalidArgumentError
from nfsense.model.geometry import ArrayConfig, TargetState, element_offsets, spatial_steering
from nfsense.model.synth import SpaceTimeSnapshot, clean_signal, complex_gaussian

DEFAULT_ARRAY = ArrayConfig()
RD = DEFAULT_ARRAY.rayleigh_distance
SMALL = ArrayConfig(num_elements=32, num_symbols=8)


def spreads(target, cfg=DEFAULT_ARRAY):
    admap = ad_transform(clean_signal(cfg, target), 4, 4)
    return angular_spread(admap), doppler_spread(admap)


class TestADTransform(unittest.TestCase):

    def test_grids_and_normalization(self):
        admap = ad_transform(clean_signal(SMALL, TargetState(0.3, 2.0, 4.0, 1.0)), 4, 2)
        self.assertEqual(admap.power.shape, (128, 16))
        self.assertEqual(admap.power.max(), 1.0)
        self.assertTrue(np.all(admap.power >= 0))
        np.testing.assert_allclose(admap.angle_axis, angle_grid(128))
        self.assertEqual(admap.angle_axis[0], -1.0)
        self.assertAlmostEqual(admap.angle_step, 2 / 128)

    def test_far_field_static_target_is_a_single_bin(self):
        target = TargetState(0.0, 100 * RD)
        admap = ad_transform(clean_signal(DEFAULT_ARRAY, target), 1, 1)
        k, l = admap.peak_bin()
        self.assertEqual(admap.angle_axis[k], 0.0)
        self.assertEqual(admap.doppler_axis[l], 0.0)
        others = admap.power.copy()
        others[k, l] = 0.0
        self.assertLess(others.max(), 0.05)

    def test_parseval(self):
        y = complex_gaussian(np.random.default_rng(0), 1.0, SMALL_SHAPE)
        admap = ad_transform(SpaceTimeSnapshot(y, SMALL), 2, 3)
        expected = 2 * 3 * 32 * 8 * float(np.sum(np.abs(y) ** 2))
        self.assertLess(abs(admap.total_power - expected) / expected, 1e-9)

    def test_fft_and_codebook_paths_agree(self):
        snapshot = clean_signal(SMALL, TargetState(-0.4, 1.2, -5.0, 3.0))
        fft = ad_transform(snapshot, 4, 4, method="fft")
        codebook = ad_transform(snapshot, 4, 4, method="codebook")
        np.testing.assert_allclose(fft.power, codebook.power, atol=1e-9)

    def test_fft_path_needs_half_wavelength_phase(self):
        cfg = ArrayConfig(num_elements=32, num_symbols=8, two_way_spatial=True)
        snapshot = clean_signal(cfg, TargetState(0.1, 2.0))
        with self.assertRaises(InvalidArgumentError):
            ad_transform(snapshot, method="fft")
        self.assertEqual(ad_transform(snapshot).power.shape, (128, 32))

    def test_rejects_bad_oversampling(self):
        snapshot = clean_signal(SMALL, TargetState(0.1, 2.0))
        with self.assertRaises(InvalidArgumentError):
            ad_transform(snapshot, 0, 4)
        with self.assertRaises(InvalidArgumentError):
            ad_transform(snapshot, 4, 4, method="wavelet")

    def test_csv_export(self):
        admap = ad_transform(clean_signal(SMALL, TargetState(0.1, 2.0)), 1, 1)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "map.csv")
            export_admap_csv(path, admap)
            with open(path, encoding="utf-8") as f:
                lines = f.read().splitlines()
        self.assertEqual(lines[0], "sin_theta,omega,power")
        self.assertEqual(len(lines), 1 + 32 * 8)


SMALL_SHAPE = (SMALL.num_elements, SMALL.num_symbols)


class TestSpreadLaws(unittest.TestCase):

    def test_angular_center_tracks_the_angle(self):
        cases = [(theta, RD / 10) for theta in (-math.pi / 3, -math.pi / 6, 0.0, math.pi / 6, math.pi / 3)]
        # off broadside the half-power plateau of a close source is lopsided; the lookup
        # table carries that offset and TestAngleOffsets covers the corrected centers
        cases += [(0.0, r) for r in (RD / 100, RD / 50, RD / 20)]
        cases += [(theta, RD / 20) for theta in (-math.pi / 6, math.pi / 6)]
        for theta, r in cases:
            angular, _ = spreads(TargetState(theta, r))
            self.assertLessEqual(abs(angular.center - math.sin(theta)), angular.step + 1e-12,
                                 msg=f"theta={theta}, r={r}")

    def test_angular_width_shrinks_with_range(self):
        ranges = np.linspace(RD / 100, RD / 10, 12)
        widths = [spreads(TargetState(0.0, r))[0].width for r in ranges]
        self.assertTrue(all(a >= b for a, b in zip(widths, widths[1:])), msg=str(widths))
        self.assertGreater(widths[0], 5 * widths[-1])

    def test_near_field_plateau_is_one_support(self):
        angular, _ = spreads(TargetState(0.0, RD / 50))
        aperture = DEFAULT_ARRAY.aperture
        # geometric extent of local directions across the aperture is about D / r
        self.assertGreater(angular.width, 0.5 * aperture / (RD / 50))
        self.assertLess(angular.width, 1.5 * aperture / (RD / 50))

    def test_doppler_center_tracks_radial_velocity(self):
        for v_r in (-12.0, 0.0, 6.0, 15.0):
            _, doppler = spreads(TargetState(0.2, RD / 50, v_r, 0.0))
            self.assertLessEqual(abs(doppler.center - velocity_to_doppler(DEFAULT_ARRAY, v_r)), doppler.step + 1e-12)

    def test_doppler_width_grows_with_transverse_velocity(self):
        widths = [spreads(TargetState(0.0, RD / 50, 0.0, v))[1].width for v in (0.0, 8.0, 16.0)]
        self.assertTrue(all(a <= b for a, b in zip(widths, widths[1:])), msg=str(widths))
        self.assertLess(widths[0], widths[-1])

    def test_far_field_collapse(self):
        angular, doppler = spreads(TargetState(0.0, 2 * RD, 0.0, 10.0))
        self.assertLessEqual(angular.width / (2 / DEFAULT_ARRAY.num_elements), 2.0)
        self.assertLessEqual(doppler.width / (2 / DEFAULT_ARRAY.num_symbols), 2.0)

    def test_transverse_motion_scenario(self):
        target = TargetState(0.0, RD / 50, 0.0, 10.0)
        angular, doppler = spreads(target)
        # the whole map shifts to the CPI-average direction
        expected = apparent_sin(DEFAULT_ARRAY, 0.0, target.range, target.v_theta)
        self.assertLess(expected, -angular.step)
        self.assertLessEqual(abs(angular.center - expected), angular.step)
        self.assertLessEqual(abs(doppler.center), doppler.step)
        predicted = analytic_doppler_width(DEFAULT_ARRAY, target, 4)
        self.assertLessEqual(abs(predicted.width - doppler.width), 2 * doppler.step)


class TestRidgeSlope(unittest.TestCase):

    def velocity(self, target):
        admap = ad_transform(clean_signal(DEFAULT_ARRAY, target), 4, 4)
        return velocity_from_slope(DEFAULT_ARRAY, ridge_slope(admap, angular_spread(admap)), target.theta)

    def test_sign_and_size_of_transverse_velocity(self):
        for v_theta in (8.0, -8.0):
            estimate = self.velocity(TargetState(math.pi / 12, RD / 50, 10.0, v_theta))
            self.assertEqual(math.copysign(1.0, estimate), math.copysign(1.0, v_theta))
            self.assertLess(abs(estimate - v_theta), 4.0, msg=f"v_theta={v_theta}")

    def test_no_tilt_without_transverse_motion(self):
        self.assertLess(abs(self.velocity(TargetState(math.pi / 12, RD / 50, 10.0, 0.0))), 1.0)

    def test_too_few_rows(self):
        admap = ad_transform(clean_signal(SMALL, TargetState(0.0, 100 * SMALL.rayleigh_distance)), 1, 1)
        self.assertEqual(ridge_slope(admap, angular_spread(admap)), 0.0)

    def test_slope_conversion(self):
        self.assertEqual(velocity_from_slope(DEFAULT_ARRAY, 0.0, 0.3), 0.0)
        slope = -2 * 5.0 / (DEFAULT_ARRAY.wavelength * DEFAULT_ARRAY.symbol_rate)
        self.assertAlmostEqual(velocity_from_slope(DEFAULT_ARRAY, slope, 0.0), 5.0)


class TestExtract3dB(unittest.TestCase):

    def test_one_hot(self):
        axis = np.linspace(-1, 1, 9)
        spread = extract_3db_support(np.eye(9)[3], axis)
        self.assertEqual(spread.bin_count, 1)
        self.assertEqual(spread.center, axis[3])
        self.assertAlmostEqual(spread.width, 0.25)

    def test_triangle_centers_on_apex(self):
        spread = extract_3db_support([0.2, 0.6, 1.0, 0.6, 0.2], [0, 1, 2, 3, 4])
        self.assertEqual(spread.center, 2.0)
        self.assertEqual(spread.width, 3.0)

    def test_only_the_peak_run_counts(self):
        spread = extract_3db_support([1.0, 0.6, 0.4, 0.7], [0.0, 1.0, 2.0, 3.0])
        np.testing.assert_array_equal(spread.member_bins, [0.0, 1.0])
        self.assertEqual(spread.center, 0.5)
        self.assertEqual(spread.width, 2.0)

    def test_exactly_half_is_excluded(self):
        spread = extract_3db_support([0.5, 1.0, 0.5], [0.0, 1.0, 2.0])
        self.assertEqual(spread.bin_count, 1)

    def test_short_dips_are_bridged(self):
        profile = [0.1, 1.0, 0.4, 0.7, 0.1]
        axis = [0.0, 1.0, 2.0, 3.0, 4.0]
        bridged = extract_3db_support(profile, axis, max_gap=1)
        np.testing.assert_array_equal(bridged.member_bins, [1.0, 2.0, 3.0])
        self.assertEqual(bridged.center, 2.0)
        self.assertEqual(bridged.width, 3.0)
        strict = extract_3db_support(profile, axis)
        np.testing.assert_array_equal(strict.member_bins, [1.0])

    def test_long_dips_still_split(self):
        spread = extract_3db_support([1.0, 0.2, 0.2, 0.9], [0.0, 1.0, 2.0, 3.0], max_gap=1)
        np.testing.assert_array_equal(spread.member_bins, [0.0])

    def test_bad_gap(self):
        for gap in (-1, 1.5):
            with self.assertRaises(InvalidArgumentError):
                extract_3db_support([1.0, 0.2], [0.0, 1.0], max_gap=gap)

    def test_errors(self):
        with self.assertRaises(DegenerateInputError):
            extract_3db_support([0.0, 0.0], [0.0, 1.0])
        with self.assertRaises(InvalidArgumentError):
            extract_3db_support([1.0, -0.1], [0.0, 1.0])
        with self.assertRaises(InvalidArgumentError):
            extract_3db_support([], [])

    def test_profiles_of_a_separable_map(self):
        admap = ad_transform(clean_signal(SMALL, TargetState(0.0, 100 * SMALL.rayleigh_distance)), 1, 1)
        self.assertEqual(int(np.sum(angular_profile(admap) > 0.5)), 1)
        self.assertEqual(int(np.argmax(doppler_profile(admap))), SMALL.num_symbols // 2)


class TestFresnel(unittest.TestCase):

    def test_origin_and_asymptote(self):
        self.assertEqual(fresnel(0.0), fresnel(-0.0))
        self.assertEqual((fresnel(0.0).C, fresnel(0.0).S), (0.0, 0.0))
        far = fresnel(10.0)
        # the tails approach 1/2 like 1/(pi x)
        bound = 1 / (math.pi * 10.0) + 0.005
        self.assertLess(abs(far.C - 0.5), bound)
        self.assertLess(abs(far.S - 0.5), bound)
        self.assertGreater(abs(far.S - 0.5), 0.02)

    def test_odd_symmetry(self):
        for x in (0.3, 1.7, 4.2):
            self.assertEqual(fresnel(-x).C, -fresnel(x).C)
            self.assertEqual(fresnel(-x).S, -fresnel(x).S)

    def test_against_quadrature(self):
        for x in (0.5, 1.0, 2.0):
            c, _ = quad(lambda t: math.cos(math.pi * t * t / 2), 0, x, epsabs=1e-13)
            s, _ = quad(lambda t: math.sin(math.pi * t * t / 2), 0, x, epsabs=1e-13)
            self.assertAlmostEqual(fresnel(x).C, c, delta=1e-8)
            self.assertAlmostEqual(fresnel(x).S, s, delta=1e-8)


class TestAnalyticGains(unittest.TestCase):

    def test_planar_limit(self):
        self.assertGreaterEqual(float(analytic_angular_gain_sum(DEFAULT_ARRAY, 0.3, 1e6 * RD, 0.3)), 0.999)

    def test_sidelobe_is_low(self):
        self.assertLess(float(analytic_angular_gain_sum(DEFAULT_ARRAY, 0.0, RD / 50, math.asin(0.6))), 0.1)

    def test_direct_sum_matches_exact_inner_product(self):
        target = TargetState(0.0, RD / 50)
        sin_axis = angle_grid(1024)
        a = spatial_steering(DEFAULT_ARRAY, target)
        x = element_offsets(DEFAULT_ARRAY)
        beams = np.exp(1j * DEFAULT_ARRAY.wavenumber * np.outer(x, sin_axis)) / math.sqrt(DEFAULT_ARRAY.num_elements)
        exact = np.abs(beams.conj().T @ a) ** 2
        approx = analytic_angular_gain_sum(DEFAULT_ARRAY, 0.0, target.range, np.arcsin(sin_axis))
        self.assertLess(float(np.max(np.abs(exact - approx))), 0.05 * float(exact.max()))

    def test_fresnel_form_matches_direct_sum_on_the_main_lobe(self):
        for theta_u in (0.0, math.pi / 12, math.pi / 6):
            for r in (RD / 100, RD / 50, RD / 20):
                sin_axis = angle_grid(1024)
                thetas = np.arcsin(np.clip(sin_axis, -0.999999, 0.999999))
                direct = analytic_angular_gain_sum(DEFAULT_ARRAY, theta_u, r, thetas)
                fresnel_gain = analytic_angular_gain_fresnel(DEFAULT_ARRAY, theta_u, r, thetas)
                lobe = extract_3db_support(direct, sin_axis)
                mask = (sin_axis >= lobe.member_bins.min()) & (sin_axis <= lobe.member_bins.max())
                gap_db = np.abs(10 * np.log10(fresnel_gain[mask] / direct[mask]))
                self.assertLessEqual(float(gap_db.max()), 0.5, msg=f"theta={theta_u}, r={r}")

    def test_fresnel_symmetry_and_fallback(self):
        r = RD / 50
        self.assertAlmostEqual(float(analytic_angular_gain_fresnel(DEFAULT_ARRAY, 0.0, r, 0.05)),
                               float(analytic_angular_gain_fresnel(DEFAULT_ARRAY, 0.0, r, -0.05)), places=12)
        self.assertAlmostEqual(float(analytic_angular_gain_fresnel(DEFAULT_ARRAY, 0.2, math.inf, 0.2)), 1.0)

    def test_doppler_gain_peak_moves_with_transverse_velocity(self):
        slow = TargetState(0.2, RD / 50, 10.0, 4.0)
        fast = TargetState(0.2, RD / 50, 10.0, 8.0)
        self.assertAlmostEqual(doppler_slope(DEFAULT_ARRAY, fast), 2 * doppler_slope(DEFAULT_ARRAY, slow))
        for target in (slow, fast):
            matched = math.asin(3 * doppler_slope(DEFAULT_ARRAY, target) / DEFAULT_ARRAY.half_wavelength_ratio)
            self.assertAlmostEqual(float(analytic_doppler_gain(DEFAULT_ARRAY, target, matched, 3)), 1.0, places=9)

    def test_doppler_gain_without_transverse_motion(self):
        target = TargetState(0.2, RD / 50, 10.0, 0.0)
        self.assertAlmostEqual(float(analytic_doppler_gain(DEFAULT_ARRAY, target, 0.0)), 1.0, places=12)

    def test_velocity_axis_conversion(self):
        self.assertAlmostEqual(float(doppler_to_velocity(DEFAULT_ARRAY, velocity_to_doppler(DEFAULT_ARRAY, 7.5))), 7.5)


if __name__ == '__main__':
    unittest.main()
