"""
In-process invariant checks run by `nfsense selftest`.

Every check returns (ok, message) and uses a small array so the whole suite finishes quickly.
"""
import logging
import math

import numpy as np

from ..analysis.spectrum import ad_transform
from ..estimators.baselines import build_polar_codebook, polar_locate
from ..estimators.coarse import CoarseEstimate
from ..estimators.music import RefinementConfig, refine_all
from ..estimators.tables import build_angle_table, match_range
from ..model.geometry import ArrayConfig, TargetState, element_offsets, path_difference, spatial_steering
from ..model.synth import SpaceTimeSnapshot, clean_signal, complex_gaussian, processing_gain_db
from .harness import ExperimentConfig, run_trial, trial_seed

logger = logging.getLogger("nfsense.experiments.selftest")

SMALL_ARRAY = ArrayConfig(num_elements=32, num_symbols=8)


def check_steering_normalization() -> tuple[bool, str]:
    worst = 0.0
    for theta in (-1.2, -0.3, 0.0, 0.4, 1.1):
        for r in (0.5, 2.0, 50.0):
            a = spatial_steering(SMALL_ARRAY, TargetState(theta, r))
            worst = max(worst, abs(float(np.linalg.norm(a)) - 1.0))
    return worst < 1e-12, f"max | ||a|| - 1 | = {worst:.2e}"


def check_far_field_limit() -> tuple[bool, str]:
    cfg = SMALL_ARRAY
    target = TargetState(0.3, 1000 * cfg.rayleigh_distance)
    planar = -element_offsets(cfg) * math.sin(target.theta)
    error = float(np.max(np.abs(cfg.wavenumber * (path_difference(cfg, target) - planar))))
    return error < 1e-3, f"far-field phase deviation at 1000 r_RD: {error:.2e} rad"


def check_parseval() -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    y = complex_gaussian(rng, 1.0, (SMALL_ARRAY.num_elements, SMALL_ARRAY.num_symbols))
    admap = ad_transform(SpaceTimeSnapshot(y, SMALL_ARRAY), 4, 4)
    expected = 16 * SMALL_ARRAY.num_elements * SMALL_ARRAY.num_symbols * float(np.sum(np.abs(y) ** 2))
    rel = abs(admap.total_power - expected) / expected
    return rel < 1e-9, f"Parseval relative error {rel:.2e}"


def check_noise_statistics() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    z = complex_gaussian(rng, 2.0, (200, 200))
    power = float(np.mean(np.abs(z) ** 2))
    balance = float(np.var(z.real) / np.var(z.imag))
    ok = abs(power - 2.0) < 0.05 and abs(balance - 1.0) < 0.05 and abs(complex(np.mean(z))) < 0.02
    return ok, f"noise power {power:.4f} (want 2), re/im variance ratio {balance:.4f}"


def check_processing_gain() -> tuple[bool, str]:
    gain = processing_gain_db(ArrayConfig())
    return abs(gain - 39.1339) < 1e-3, f"processing gain for N=256, M=32: {gain:.4f} dB"


def check_table_round_trip() -> tuple[bool, str]:
    cfg = SMALL_ARRAY
    angles = np.arcsin(np.linspace(-0.5, 0.5, 3))
    ranges = 1.0 / np.linspace(1.0 / 0.5, 1.0 / 5.0, 6)
    table = build_angle_table(cfg, angles, ranges)
    misses = 0
    for i, theta in enumerate(angles):
        for j, r in enumerate(ranges):
            if match_range(table, theta, table.width[i, j]).value != r:
                misses += 1
    return misses == 0, f"{misses} of {table.width.size} angle-range cells failed to re-match"


def check_scale_invariance() -> tuple[bool, str]:
    cfg = SMALL_ARRAY
    target = TargetState(0.2, 1.0, 3.0, 2.0)
    snapshot = clean_signal(cfg, target)
    noise = complex_gaussian(np.random.default_rng(3), 0.01, snapshot.shape)
    noisy = SpaceTimeSnapshot(snapshot.data + noise, cfg)
    scaled = noisy.scaled(3.7 * np.exp(0.9j))

    coarse = CoarseEstimate(target.theta, target.range, target.v_r, abs(target.v_theta))
    rcfg = RefinementConfig(theta_window=0.02, range_window=0.2, vr_window=1.0, vtheta_window=2.0,
                            grid_points=64, passes=2)
    a = refine_all(noisy, coarse, rcfg).parameters()
    b = refine_all(scaled, coarse, rcfg).parameters()
    codebook = build_polar_codebook(cfg, 64)
    same_polar = polar_locate(noisy, codebook) == polar_locate(scaled, codebook)
    return a == b and same_polar, f"MUSIC argmax unchanged: {a == b}, polar argmax unchanged: {same_polar}"


def check_reproducibility() -> tuple[bool, str]:
    econfig = ExperimentConfig(array=SMALL_ARRAY, target=TargetState(0.2, 1.0, 3.0, 2.0),
                               snr_db=(0.0,), iterations=1, methods=("POLAR",), polar_points=64)
    first = run_trial(econfig, 0.0, trial_seed(5, 0, 0))
    second = run_trial(econfig, 0.0, trial_seed(5, 0, 0))
    same = first.results["POLAR"] == second.results["POLAR"]
    return same, "identical results for a repeated seed" if same else "results differ for a repeated seed"


CHECKS = (
    ("steering normalization", check_steering_normalization),
    ("far-field limit", check_far_field_limit),
    ("Parseval", check_parseval),
    ("noise statistics", check_noise_statistics),
    ("processing gain", check_processing_gain),
    ("table round trip", check_table_round_trip),
    ("scale invariance", check_scale_invariance),
    ("reproducibility", check_reproducibility),
)


def run_selftest() -> list[tuple[str, bool, str]]:
    outcomes = []
    for name, check in CHECKS:
        try:
            ok, message = check()
        except Exception as e:
            logger.error(f"Self-test '{name}' raised: {e}", exc_info=True)
            ok, message = False, f"raised {type(e).__name__}: {e}"
        outcomes.append((name, ok, message))
        logger.info(f"[{'PASS' if ok else 'FAIL'}] {name}: {message}")
    return outcomes
