"""Noise-free space-time snapshots, additive noise and the SNR conventions."""
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..core.errors import InvalidArgumentError
from .geometry import (
    ArrayConfig,
    CalibrationProfile,
    TargetState,
    apply_calibration,
    space_time_matrix,
)

logger = logging.getLogger("nfsense.model.synth")


@dataclass(frozen=True)
class SpaceTimeSnapshot:
    """One CPI of received echoes: rows are antennas, columns are symbols."""
    data: np.ndarray
    config: ArrayConfig

    def __post_init__(self):
        data = np.array(self.data, dtype=complex)
        expected = (self.config.num_elements, self.config.num_symbols)
        if data.shape != expected:
            raise InvalidArgumentError(f"Snapshot shape {data.shape} does not match the array config {expected}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("Snapshot entries must be finite.")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def scaled(self, factor: complex) -> "SpaceTimeSnapshot":
        return SpaceTimeSnapshot(self.data * factor, self.config)


@dataclass(frozen=True)
class TransmitPlan:
    """Known transmit symbols; column m-1 holds the per-element symbol vector s(m)."""
    symbols: np.ndarray

    def __post_init__(self):
        symbols = np.array(self.symbols, dtype=complex)
        if symbols.ndim != 2:
            raise InvalidArgumentError(f"Transmit symbols must be an N x M matrix, got shape {symbols.shape}")
        symbols.setflags(write=False)
        object.__setattr__(self, "symbols", symbols)

    @classmethod
    def pilots(cls, cfg: ArrayConfig) -> "TransmitPlan":
        return cls(np.ones((cfg.num_elements, cfg.num_symbols), dtype=complex))

    @classmethod
    def random_unit_modulus(cls, cfg: ArrayConfig, rng: np.random.Generator) -> "TransmitPlan":
        """QPSK-like symbols drawn from {1, j, -1, -j}."""
        k = rng.integers(0, 4, size=(cfg.num_elements, cfg.num_symbols))
        return cls(np.exp(0.5j * math.pi * k))

    @property
    def unit_modulus(self) -> bool:
        return bool(np.allclose(np.abs(self.symbols), 1.0, rtol=0, atol=1e-12))


@dataclass(frozen=True)
class NoiseSpec:
    """Variance of the circular complex Gaussian noise added per sample."""
    sigma2: float

    def __post_init__(self):
        if not (self.sigma2 >= 0 and math.isfinite(self.sigma2)):
            raise InvalidArgumentError(f"Noise variance must be finite and non-negative, got {self.sigma2}")


def clean_signal(cfg: ArrayConfig, target: TargetState, calib: CalibrationProfile | None = None,
                 xi_t: float = 1.0, plan: TransmitPlan | None = None) -> SpaceTimeSnapshot:
    x = space_time_matrix(cfg, target, xi_t)
    if calib is not None and not calib.is_identity:
        x = apply_calibration(calib, x)
    if plan is not None:
        if plan.symbols.shape != x.shape:
            raise InvalidArgumentError(
                f"Transmit plan shape {plan.symbols.shape} does not match the snapshot shape {x.shape}"
            )
        x = x * plan.symbols
    return SpaceTimeSnapshot(x, cfg)


def complex_gaussian(rng: np.random.Generator, sigma2: float, shape: tuple[int, ...]) -> np.ndarray:
    scale = math.sqrt(sigma2 / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def add_noise(snapshot: SpaceTimeSnapshot, noise: NoiseSpec, rng: np.random.Generator) -> SpaceTimeSnapshot:
    if noise.sigma2 == 0:
        return snapshot
    z = complex_gaussian(rng, noise.sigma2, snapshot.shape)
    return SpaceTimeSnapshot(snapshot.data + z, snapshot.config)


def snr_to_sigma2(signal_power: float, snr_db: float) -> float:
    """
    Noise variance giving `snr_db` relative to `signal_power`.

    The harness passes the per-element signal power xi_t/N so the snr axis is per element
    and per symbol. An infinite SNR yields a noise-free trial.
    """
    if math.isnan(signal_power) or math.isnan(snr_db):
        raise InvalidArgumentError(f"SNR inputs must not be NaN, got {signal_power}, {snr_db}")
    return signal_power / 10.0 ** (snr_db / 10.0)


def processing_gain_db(cfg: ArrayConfig) -> float:
    return 10 * math.log10(cfg.num_elements * cfg.num_symbols)
