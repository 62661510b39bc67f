"""
Angle-Doppler analysis of a space-time snapshot.

The spatial axis is the far-field DFT codebook, uniform in sin(theta) over [-1, 1). The
Doppler axis is the normalized frequency omega of the e^{-j pi m omega} symbol phase, uniform
over [-1, 1), so a bin converts to velocity as v = omega * lambda * f_r / 2.
"""
import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..core.errors import DegenerateInputError, InvalidArgumentError
from ..model.geometry import (
    ArrayConfig,
    TargetState,
    approx_local_velocity,
    element_indices,
    element_offsets,
)
from ..model.synth import SpaceTimeSnapshot
from .fresnel import (  # noqa: F401  re-exported for callers of the spectrum module
    FresnelPair,
    analytic_angular_gain_fresnel,
    dirichlet_power,
    fresnel,
    fresnel_cs,
)

logger = logging.getLogger("nfsense.analysis.spectrum")

TRANSFORM_METHODS = ("auto", "fft", "codebook")
# ripple dips narrower than this many beams do not split a spread
SPREAD_GAP_BEAMS = 8
SIN_LIMIT = math.sin(math.pi / 2 - 1e-6)


@dataclass(frozen=True)
class ADMap:
    """
    Normalized angle-Doppler power of a snapshot.

    Rows follow `angle_axis` (sin theta in [-1, 1)) and columns `doppler_axis` (normalized
    frequency in [-1, 1)); the peak is 1 unless the snapshot is all zeros.
    """
    power: np.ndarray
    angle_axis: np.ndarray
    doppler_axis: np.ndarray
    oversample_a: int
    oversample_d: int
    peak_power: float
    total_power: float

    @property
    def angle_step(self) -> float:
        return 2.0 / self.angle_axis.shape[0]

    @property
    def doppler_step(self) -> float:
        return 2.0 / self.doppler_axis.shape[0]

    def peak_bin(self) -> tuple[int, int]:
        k, l = np.unravel_index(int(np.argmax(self.power)), self.power.shape)
        return int(k), int(l)


@dataclass(frozen=True)
class SpreadMeasurement:
    """3-dB support along one axis of the map."""
    member_bins: np.ndarray
    center: float
    width: float
    step: float
    peak_value: float

    @property
    def bin_count(self) -> int:
        return int(self.member_bins.shape[0])

    @property
    def width_in_bins(self) -> float:
        return self.width / self.step if self.step > 0 else float(self.bin_count)


def doppler_to_velocity(cfg: ArrayConfig, omega):
    return np.asarray(omega) * cfg.wavelength * cfg.symbol_rate / 2


def velocity_to_doppler(cfg: ArrayConfig, velocity):
    return 2 * np.asarray(velocity) / (cfg.wavelength * cfg.symbol_rate)


def angle_grid(size: int) -> np.ndarray:
    return 2 * np.arange(size) / size - 1


def is_dft_compatible(cfg: ArrayConfig) -> bool:
    """True when beam k of the codebook coincides with FFT bin k (half-wavelength spatial phase)."""
    return abs(cfg.half_wavelength_ratio - 1.0) <= 1e-12


def _fft_power(y: np.ndarray, k_a: int, k_d: int) -> np.ndarray:
    n, m = y.shape
    # (-1)^(i+j) moves the grids from [0, 2) to [-1, 1)
    z = y * ((-1.0) ** np.arange(n))[:, None] * ((-1.0) ** np.arange(m))[None, :]
    spatial = np.fft.fft(z, n=k_a, axis=0)
    response = np.fft.ifft(spatial, n=k_d, axis=1) * k_d
    return np.abs(response) ** 2


def _codebook_power(y: np.ndarray, cfg: ArrayConfig, sin_axis: np.ndarray, omega_axis: np.ndarray) -> np.ndarray:
    x = element_offsets(cfg)
    kappa_nu = cfg.spatial_phase_factor * cfg.wavenumber
    spatial_codebook = np.exp(1j * kappa_nu * np.outer(x, sin_axis))
    m = np.arange(1, y.shape[1] + 1)
    temporal_codebook = np.exp(1j * math.pi * np.outer(m, omega_axis))
    response = spatial_codebook.conj().T @ y @ temporal_codebook
    return np.abs(response) ** 2


def ad_transform(snapshot: SpaceTimeSnapshot, oversample_a: int = 4, oversample_d: int = 4,
                 method: str = "auto") -> ADMap:
    """
    Zero-padded 2-D DFT of the snapshot onto the angle-Doppler grid, normalized to unit peak.

    `method="fft"` needs the half-wavelength spatial phase; `"codebook"` evaluates the
    explicit beam products and works for any spacing. `"auto"` picks the FFT when it applies.
    """
    if int(oversample_a) != oversample_a or int(oversample_d) != oversample_d \
            or oversample_a < 1 or oversample_d < 1:
        raise InvalidArgumentError(f"Oversampling factors must be integers >= 1, got {oversample_a}, {oversample_d}")
    if method not in TRANSFORM_METHODS:
        raise InvalidArgumentError(f"Unknown transform method '{method}', expected one of {TRANSFORM_METHODS}")
    y = snapshot.data
    if y.size == 0:
        raise InvalidArgumentError("Cannot transform an empty snapshot.")

    cfg = snapshot.config
    n, m = y.shape
    k_a, k_d = int(oversample_a) * n, int(oversample_d) * m
    sin_axis = angle_grid(k_a)
    omega_axis = angle_grid(k_d)

    if method == "auto":
        method = "fft" if is_dft_compatible(cfg) else "codebook"
    if method == "fft":
        if not is_dft_compatible(cfg):
            raise InvalidArgumentError("The FFT path needs a half-wavelength spatial phase per element.")
        raw = _fft_power(y, k_a, k_d)
    else:
        raw = _codebook_power(y, cfg, sin_axis, omega_axis)

    peak = float(raw.max())
    total = float(raw.sum())
    if peak > 0:
        power = raw / peak
    else:
        logger.warning("Angle-Doppler map of an all-zero snapshot; leaving the map unnormalized.")
        power = raw
    power.setflags(write=False)
    return ADMap(power, sin_axis, omega_axis, int(oversample_a), int(oversample_d), peak, total)


def _normalized(profile: np.ndarray) -> np.ndarray:
    peak = profile.max()
    return profile / peak if peak > 0 else profile


def angular_profile(admap: ADMap) -> np.ndarray:
    return _normalized(admap.power.max(axis=1))


def doppler_profile(admap: ADMap) -> np.ndarray:
    return _normalized(admap.power.max(axis=0))


def extract_3db_support(profile, axis, max_gap: int = 0) -> SpreadMeasurement:
    """
    Run of bins above half the global peak that contains the peak.

    Runs separated from it by at most `max_gap` sub-threshold bins are merged in, so a
    near-field plateau with Fresnel ripple dipping under the half-power line counts as one
    support. With the default of 0 only the strictly contiguous run is kept. Members are every
    grid value from the first to the last above-threshold bin of the merged run; the center
    is their median and the width their span plus one grid step.
    """
    profile = np.asarray(profile, dtype=float)
    axis = np.asarray(axis, dtype=float)
    if profile.ndim != 1 or profile.size == 0 or profile.shape != axis.shape:
        raise InvalidArgumentError(
            f"Profile and axis must be non-empty 1-D arrays of equal length, got {profile.shape} and {axis.shape}"
        )
    if not np.all(np.isfinite(profile)) or np.any(profile < 0):
        raise InvalidArgumentError("Profile values must be finite and non-negative.")
    if int(max_gap) != max_gap or max_gap < 0:
        raise InvalidArgumentError(f"max_gap must be a non-negative integer, got {max_gap}")

    peak_idx = int(np.argmax(profile))
    peak = float(profile[peak_idx])
    if peak <= 0:
        raise DegenerateInputError("Cannot extract a 3-dB support from an all-zero profile.")

    above = np.flatnonzero(profile > 0.5 * peak)
    breaks = np.flatnonzero(np.diff(above) > int(max_gap) + 1)
    runs = np.split(above, breaks + 1)
    run = next(r for r in runs if r[0] <= peak_idx <= r[-1])
    lo, hi = int(run[0]), int(run[-1])

    members = axis[lo:hi + 1].copy()
    step = float(np.min(np.abs(np.diff(axis)))) if axis.size > 1 else 0.0
    # (max - min) + one step, counted in bins so equal runs give bit-equal widths
    width = (hi - lo + 1) * step
    members.setflags(write=False)
    return SpreadMeasurement(members, float(np.median(members)), width, step, peak)


def angular_spread(admap: ADMap) -> SpreadMeasurement:
    """Angular 3-dB support of a map with ripple dips up to SPREAD_GAP_BEAMS beams bridged."""
    return extract_3db_support(angular_profile(admap), admap.angle_axis, SPREAD_GAP_BEAMS * admap.oversample_a)


def doppler_spread(admap: ADMap) -> SpreadMeasurement:
    return extract_3db_support(doppler_profile(admap), admap.doppler_axis, SPREAD_GAP_BEAMS * admap.oversample_d)


def _span_indices(axis: np.ndarray, spread: SpreadMeasurement) -> np.ndarray:
    tol = 0.5 * spread.step
    return np.flatnonzero((axis >= spread.member_bins[0] - tol) & (axis <= spread.member_bins[-1] + tol))


def ridge_slope(admap: ADMap, angular: SpreadMeasurement) -> float:
    """
    Weighted least-squares slope d(omega)/d(sin theta) of the angle-Doppler ridge.

    Every angle row inside the angular support whose peak reaches half the map peak gives
    the power-weighted Doppler centroid of its own half-power lobe; rows are weighted by
    their peak. Returns 0 when fewer than two rows qualify.
    """
    limit = 0.5 * float(admap.power.max())
    sins, centroids, weights = [], [], []
    for k in _span_indices(admap.angle_axis, angular):
        row = admap.power[k]
        row_peak = float(row.max())
        if row_peak <= 0 or row_peak < limit:
            continue
        cols = _span_indices(admap.doppler_axis, extract_3db_support(row, admap.doppler_axis))
        w = row[cols]
        sins.append(admap.angle_axis[k])
        centroids.append(float(np.sum(w * admap.doppler_axis[cols]) / np.sum(w)))
        weights.append(row_peak)
    if len(sins) < 2:
        return 0.0
    slope, _ = np.polyfit(sins, centroids, 1, w=np.sqrt(weights))
    return float(slope)


def velocity_from_slope(cfg: ArrayConfig, slope: float, theta: float) -> float:
    """
    Transverse velocity that tilts the ridge by `slope`.

    Element x sees the local direction sin(theta) - x cos^2(theta) / r and the Doppler
    omega_r + 2 v_theta x cos(theta) / (r lambda f_r), so the ridge falls with
    -2 v_theta / (cos(theta) lambda f_r) whatever the range.
    """
    return -slope * math.cos(theta) * cfg.wavelength * cfg.symbol_rate / 2


def export_admap_csv(path: str, admap: ADMap) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["sin_theta", "omega", "power"])
        for k, s in enumerate(admap.angle_axis):
            row = admap.power[k]
            for l, w in enumerate(admap.doppler_axis):
                writer.writerow([f"{s:.10g}", f"{w:.10g}", f"{row[l]:.10g}"])
    logger.info(f"Angle-Doppler map ({admap.power.shape[0]}x{admap.power.shape[1]}) written to '{path}'.")


def analytic_angular_gain_sum(cfg: ArrayConfig, theta_u: float, r_f: float, theta_n) -> np.ndarray:
    """
    Quadratic-phase direct sum for the normalized DFT gain of a source at (theta_u, r_f)
    seen by the far-field beam at theta_n.

    The exponent is pi*q*(n^2 d cos^2(theta_u) / (2 r_f) - n (sin theta_u - sin theta_n)),
    with q the spatial phase ratio (q = 1 for one-way half-wavelength spacing).
    """
    if not r_f > 0:
        raise InvalidArgumentError(f"r_f must be positive, got {r_f}")
    n = element_indices(cfg)
    q = cfg.half_wavelength_ratio
    quad = 0.0 if math.isinf(r_f) else cfg.element_spacing * math.cos(theta_u) ** 2 / (2 * r_f)
    shape = np.shape(theta_n)
    delta = math.sin(theta_u) - np.sin(np.atleast_1d(np.asarray(theta_n, dtype=float)))
    phase = math.pi * q * (quad * (n * n)[:, None] - np.outer(n, delta))
    total = np.exp(-1j * phase).sum(axis=0)
    return (np.abs(total) ** 2 / cfg.num_elements ** 2).reshape(shape)


def analytic_doppler_gain(cfg: ArrayConfig, target: TargetState, theta_n, symbol_index: int = 1) -> np.ndarray:
    """
    Normalized spatial-DFT gain of the Doppler phase profile of one symbol.

    Uses the first-order local velocities, so element n carries omega_r + beta*n with
    beta = 2 v_theta d cos(theta) / (r lambda f_r). The constant radial term drops out of
    |.|^2 and the gain peaks where q sin(theta_n) = symbol_index * beta.
    """
    n = element_indices(cfg)
    v_r_n, v_theta_n = approx_local_velocity(cfg, target, order=1)
    omega_n = 2 * (v_r_n + v_theta_n) / (cfg.wavelength * cfg.symbol_rate)
    q = cfg.half_wavelength_ratio
    shape = np.shape(theta_n)
    sin_n = np.sin(np.atleast_1d(np.asarray(theta_n, dtype=float)))
    phase = math.pi * (symbol_index * omega_n[:, None] - q * np.outer(n, sin_n))
    total = np.exp(-1j * phase).sum(axis=0)
    return (np.abs(total) ** 2 / cfg.num_elements ** 2).reshape(shape)


def doppler_slope(cfg: ArrayConfig, target: TargetState) -> float:
    """beta: per-element increment of the first-order normalized Doppler."""
    return (2 * target.v_theta * cfg.element_spacing * math.cos(target.theta)
            / (target.range * cfg.wavelength * cfg.symbol_rate))


def apparent_sin(cfg: ArrayConfig, theta: float, target_range: float, v_theta: float) -> float:
    """CPI-average direction sin(theta) - m_bar * beta / q seen through transverse motion."""
    m_bar = (cfg.num_symbols + 1) / 2
    beta = doppler_slope(cfg, TargetState(theta, target_range, 0.0, v_theta))
    return math.sin(theta) - m_bar * beta / cfg.half_wavelength_ratio


def anchored_theta(cfg: ArrayConfig, sin_app: float, target_range: float, v_theta: float,
                   iterations: int = 8) -> float:
    """True angle whose apparent direction is `sin_app` for the given range and transverse velocity."""
    m_bar = (cfg.num_symbols + 1) / 2
    gain = m_bar * 2 * v_theta * cfg.element_spacing / (
        target_range * cfg.wavelength * cfg.symbol_rate * cfg.half_wavelength_ratio)
    s = min(SIN_LIMIT, max(-SIN_LIMIT, sin_app))
    for _ in range(iterations):
        s = min(SIN_LIMIT, max(-SIN_LIMIT, sin_app + gain * math.sqrt(1 - s * s)))
    return math.asin(s)


def analytic_doppler_width(cfg: ArrayConfig, target: TargetState, oversample_d: int = 4) -> SpreadMeasurement:
    """
    Predicted Doppler 3-dB support: envelope over elements of the M-symbol Doppler kernel
    centered at each element's first-order Doppler.
    """
    v_r_n, v_theta_n = approx_local_velocity(cfg, target, order=1)
    omega_n = 2 * (v_r_n + v_theta_n) / (cfg.wavelength * cfg.symbol_rate)
    axis = angle_grid(oversample_d * cfg.num_symbols)
    kernel = dirichlet_power(axis[:, None] - omega_n[None, :], cfg.num_symbols)
    return extract_3db_support(kernel.max(axis=1), axis)
