"""
Spherical-wavefront geometry of a uniform linear array and the steering models built on it.

Coordinates are measured from the array center. The target sits at angle theta (from
broadside) and range r, moving with radial velocity v_r and transverse velocity v_theta.
"""
import hashlib
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from ..core.errors import InvalidArgumentError

logger = logging.getLogger("nfsense.model.geometry")

INDEX_CONVENTIONS = ("integer", "centered")


@dataclass(frozen=True)
class ArrayConfig:
    """
    Uniform linear array and waveform parameters.

    Element spacing defaults to half a wavelength. `two_way_spatial` doubles the spatial phase
    for monostatic round trips, which takes the map off the plain DFT grid.
    """
    num_elements: int = 256
    carrier_freq: float = 28e9
    symbol_rate: float = 5e3
    num_symbols: int = 32
    element_spacing: float | None = None
    two_way_spatial: bool = False
    index_convention: str = "integer"

    def __post_init__(self):
        if int(self.num_elements) != self.num_elements or self.num_elements < 2:
            raise InvalidArgumentError(f"num_elements must be an integer >= 2, got {self.num_elements}")
        if int(self.num_symbols) != self.num_symbols or self.num_symbols < 1:
            raise InvalidArgumentError(f"num_symbols must be an integer >= 1, got {self.num_symbols}")
        if not (math.isfinite(self.carrier_freq) and self.carrier_freq > 0):
            raise InvalidArgumentError(f"carrier_freq must be positive, got {self.carrier_freq}")
        if not (math.isfinite(self.symbol_rate) and self.symbol_rate > 0):
            raise InvalidArgumentError(f"symbol_rate must be positive, got {self.symbol_rate}")
        if self.index_convention not in INDEX_CONVENTIONS:
            raise InvalidArgumentError(
                f"index_convention must be one of {INDEX_CONVENTIONS}, got '{self.index_convention}'"
            )
        object.__setattr__(self, "num_elements", int(self.num_elements))
        object.__setattr__(self, "num_symbols", int(self.num_symbols))
        if self.element_spacing is None:
            object.__setattr__(self, "element_spacing", self.wavelength / 2)
        elif not (math.isfinite(self.element_spacing) and self.element_spacing > 0):
            raise InvalidArgumentError(f"element_spacing must be positive, got {self.element_spacing}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def symbol_period(self) -> float:
        return 1.0 / self.symbol_rate

    @property
    def aperture(self) -> float:
        return (self.num_elements - 1) * self.element_spacing

    @property
    def rayleigh_distance(self) -> float:
        return 2 * self.aperture ** 2 / self.wavelength

    @property
    def spatial_phase_factor(self) -> int:
        return 2 if self.two_way_spatial else 1

    @property
    def half_wavelength_ratio(self) -> float:
        """Spatial phase per element and per unit sin(theta), in units of pi (1 for one-way lambda/2)."""
        return 2 * self.spatial_phase_factor * self.element_spacing / self.wavelength

    def fingerprint(self) -> int:
        canonical = repr(tuple((f.name, getattr(self, f.name)) for f in fields(self)))
        digest = hashlib.blake2b(canonical.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class TargetState:
    """Point target: angle from broadside (rad), range (m), radial and transverse velocity (m/s)."""
    theta: float
    range: float
    v_r: float = 0.0
    v_theta: float = 0.0

    def __post_init__(self):
        values = (self.theta, self.range, self.v_r, self.v_theta)
        if not all(math.isfinite(v) for v in values):
            raise InvalidArgumentError(f"Target parameters must be finite, got {values}")
        if not self.range > 0:
            raise InvalidArgumentError(f"Target range must be positive, got {self.range}")
        if not abs(self.theta) < math.pi / 2:
            raise InvalidArgumentError(f"Target angle must lie inside (-pi/2, pi/2), got {self.theta}")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.range, self.v_r, self.v_theta], dtype=float)


@dataclass(frozen=True)
class CalibrationProfile:
    """Per-element gain rho and phase phi applied to the spatial steering."""
    rho: np.ndarray
    phi: np.ndarray = field(default=None)

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        phi = np.zeros_like(rho) if self.phi is None else np.asarray(self.phi, dtype=float)
        if rho.ndim != 1 or rho.shape != phi.shape:
            raise InvalidArgumentError(f"rho and phi must be 1-D of equal length, got {rho.shape} and {phi.shape}")
        if not np.all(rho > 0) or not np.all(np.isfinite(phi)):
            raise InvalidArgumentError("Calibration amplitudes must be positive and phases finite.")
        rho.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def identity(cls, num_elements: int) -> "CalibrationProfile":
        return cls(np.ones(num_elements), np.zeros(num_elements))

    @property
    def weights(self) -> np.ndarray:
        return self.rho * np.exp(1j * self.phi)

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.rho == 1.0) and np.all(self.phi == 0.0))

    def __len__(self):
        return self.rho.shape[0]


def element_indices(cfg: ArrayConfig) -> np.ndarray:
    n = cfg.num_elements
    if cfg.index_convention == "centered":
        return np.arange(n) - (n - 1) / 2
    return (np.arange(n) - n // 2).astype(float)


def element_offsets(cfg: ArrayConfig) -> np.ndarray:
    return element_indices(cfg) * cfg.element_spacing


def _coordinates(cfg: ArrayConfig, n) -> np.ndarray:
    if n is None:
        return element_offsets(cfg)
    return np.asarray(n, dtype=float) * cfg.element_spacing


def path_difference(cfg: ArrayConfig, target: TargetState, n=None) -> np.ndarray:
    """r^(n) - r, computed without cancellation for far targets."""
    x = _coordinates(cfg, n)
    r = target.range
    r_n = np.sqrt(r * r + x * x - 2 * r * x * math.sin(target.theta))
    return (x * x - 2 * r * x * math.sin(target.theta)) / (r_n + r)


def element_range(cfg: ArrayConfig, target: TargetState, n=None) -> np.ndarray:
    """Exact distance from the target to element index n (all elements when n is None)."""
    x = _coordinates(cfg, n)
    r = target.range
    return np.sqrt(r * r + x * x - 2 * r * x * math.sin(target.theta))


def taylor_range(cfg: ArrayConfig, target: TargetState, n=None) -> np.ndarray:
    x = _coordinates(cfg, n)
    r = target.range
    return r - x * math.sin(target.theta) + (x * math.cos(target.theta)) ** 2 / (2 * r)


def spatial_steering(cfg: ArrayConfig, target: TargetState) -> np.ndarray:
    phase = cfg.spatial_phase_factor * cfg.wavenumber * path_difference(cfg, target)
    return np.exp(-1j * phase) / math.sqrt(cfg.num_elements)


def spatial_steering_grid(cfg: ArrayConfig, thetas, ranges) -> np.ndarray:
    """Unit-norm spatial steering vectors, one row per broadcast (theta, range) pair."""
    thetas, ranges = np.broadcast_arrays(np.asarray(thetas, dtype=float), np.asarray(ranges, dtype=float))
    x = element_offsets(cfg)
    s = np.sin(thetas)[..., None]
    r = ranges[..., None]
    r_n = np.sqrt(r * r + x * x - 2 * r * x * s)
    diff = (x * x - 2 * r * x * s) / (r_n + r)
    return np.exp(-1j * cfg.spatial_phase_factor * cfg.wavenumber * diff) / math.sqrt(cfg.num_elements)


def apply_calibration(profile: CalibrationProfile, a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.shape[0] != len(profile):
        raise InvalidArgumentError(
            f"Calibration profile has {len(profile)} elements but the vector has {a.shape[0]}"
        )
    w = profile.weights
    if a.ndim == 2:
        return w[:, None] * a
    return w * a


def sample_calibration(rng: np.random.Generator, max_phase: float = math.pi / 36,
                       max_amp_db: float = 1.0, num_elements: int = 256) -> CalibrationProfile:
    if max_phase < 0 or max_amp_db < 0:
        raise InvalidArgumentError(f"Calibration bounds must be non-negative, got {max_phase}, {max_amp_db}")
    phi = rng.uniform(0.0, max_phase, num_elements)
    amp_db = rng.uniform(0.0, max_amp_db, num_elements)
    return CalibrationProfile(10.0 ** (amp_db / 20.0), phi)


def local_velocity(target: TargetState, cfg: ArrayConfig, n=None) -> tuple[np.ndarray, np.ndarray]:
    x = _coordinates(cfg, n)
    r_n = element_range(cfg, target, n)
    v_r_n = target.v_r * (target.range - x * math.sin(target.theta)) / r_n
    v_theta_n = target.v_theta * x * math.cos(target.theta) / r_n
    return v_r_n, v_theta_n


def approx_local_velocity(cfg: ArrayConfig, target: TargetState, order: int = 2,
                          n=None) -> tuple[np.ndarray, np.ndarray]:
    """Taylor forms of the local velocities in x/r (order 1 or 2)."""
    if order not in (1, 2):
        raise InvalidArgumentError(f"order must be 1 or 2, got {order}")
    x = _coordinates(cfg, n)
    r = target.range
    s, c = math.sin(target.theta), math.cos(target.theta)
    if order == 1:
        return np.full_like(x, target.v_r), target.v_theta * x * c / r
    v_r_n = target.v_r * (1 + (x * c) ** 2 / (2 * r * r))
    v_theta_n = target.v_theta * (x * c / r + x * x * s * c / (r * r))
    return v_r_n, v_theta_n


def normalized_doppler(cfg: ArrayConfig, target: TargetState) -> np.ndarray:
    """Per-element normalized Doppler omega^(n) = 2 v^(n) / (lambda f_r)."""
    v_r_n, v_theta_n = local_velocity(target, cfg)
    return 2 * (v_r_n + v_theta_n) / (cfg.wavelength * cfg.symbol_rate)


def doppler_steering(cfg: ArrayConfig, target: TargetState, m: int) -> np.ndarray:
    if not 0 <= m <= cfg.num_symbols:
        raise InvalidArgumentError(f"Symbol index must lie in [0, {cfg.num_symbols}], got {m}")
    return np.exp(-1j * math.pi * m * normalized_doppler(cfg, target))


def doppler_matrix(cfg: ArrayConfig, target: TargetState) -> np.ndarray:
    """N x M matrix whose column m-1 is the Doppler steering vector of symbol m."""
    m = np.arange(1, cfg.num_symbols + 1)
    return np.exp(-1j * math.pi * np.outer(normalized_doppler(cfg, target), m))


def space_time_matrix(cfg: ArrayConfig, target: TargetState, xi_t: float = 1.0) -> np.ndarray:
    if not xi_t >= 0:
        raise InvalidArgumentError(f"xi_t must be non-negative, got {xi_t}")
    a = spatial_steering(cfg, target)
    return math.sqrt(xi_t) * a[:, None] * doppler_matrix(cfg, target)


def target_snr(transmit_power: float, antenna_gain: float, wavelength: float,
               rcs: float, target_range: float) -> float:
    """Radar-equation echo SNR: P_T G^2 lambda^2 sigma / ((4 pi)^3 r^4)."""
    inputs = (transmit_power, antenna_gain, wavelength, rcs, target_range)
    if not all(math.isfinite(v) and v > 0 for v in inputs):
        raise InvalidArgumentError(f"Radar-equation inputs must be positive, got {inputs}")
    return (transmit_power * antenna_gain ** 2 * wavelength ** 2 * rcs
            / ((4 * math.pi) ** 3 * target_range ** 4))


def ebrd_bound(cfg: ArrayConfig, theta: float) -> float:
    return cfg.rayleigh_distance * math.cos(theta) ** 2 / 10


def is_within_ebrd(cfg: ArrayConfig, target: TargetState) -> bool:
    return target.range < ebrd_bound(cfg, target.theta)
