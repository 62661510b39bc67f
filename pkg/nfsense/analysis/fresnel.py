"""Fresnel integrals and the Fresnel-form angular gain of a near-field source."""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import fresnel as _scipy_fresnel

from ..model.geometry import ArrayConfig


@dataclass(frozen=True)
class FresnelPair:
    C: float
    S: float


def fresnel_cs(x) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (C(x), S(x)) with C = int_0^x cos(pi t^2 / 2) dt and S likewise with sin."""
    s, c = _scipy_fresnel(x)
    return c, s


def fresnel(x: float) -> FresnelPair:
    c, s = fresnel_cs(float(x))
    return FresnelPair(float(c), float(s))


def fresnel_parameters(cfg: ArrayConfig, theta_u: float, r_f: float, theta_n) -> tuple[np.ndarray, float]:
    """(gamma_1, gamma_2) of the Fresnel-form gain, scaled by the spatial phase ratio q."""
    q = cfg.half_wavelength_ratio
    cos2 = math.cos(theta_u) ** 2
    d = cfg.element_spacing
    gamma_1 = math.sqrt(q * r_f / (d * cos2)) * (np.sin(theta_n) - math.sin(theta_u))
    gamma_2 = (cfg.num_elements / 2) * math.sqrt(q * d * cos2 / r_f)
    return gamma_1, gamma_2


def dirichlet_power(delta, n: int) -> np.ndarray:
    """|sin(pi n delta / 2) / (n sin(pi delta / 2))|^2, equal to 1 wherever the denominator vanishes."""
    delta = np.asarray(delta, dtype=float)
    num = np.sin(math.pi * n * delta / 2)
    den = n * np.sin(math.pi * delta / 2)
    small = np.abs(den) < 1e-12
    ratio = np.where(small, 1.0, num / np.where(small, 1.0, den))
    return np.abs(ratio) ** 2


def planar_gain(cfg: ArrayConfig, theta_u: float, theta_n) -> np.ndarray:
    """Normalized far-field DFT gain for a source at theta_u seen by the beam at theta_n."""
    delta = cfg.half_wavelength_ratio * (np.sin(theta_n) - math.sin(theta_u))
    return dirichlet_power(delta, cfg.num_elements)


def analytic_angular_gain_fresnel(cfg: ArrayConfig, theta_u: float, r_f: float, theta_n) -> np.ndarray:
    """
    Fresnel approximation of the near-field angular DFT gain.

    Falls back to the planar gain when gamma_2 vanishes (r_f infinite or numerically so).
    """
    if not math.isfinite(r_f):
        return planar_gain(cfg, theta_u, theta_n)
    gamma_1, gamma_2 = fresnel_parameters(cfg, theta_u, r_f, theta_n)
    if gamma_2 < 1e-6:
        return planar_gain(cfg, theta_u, theta_n)
    c_hi, s_hi = fresnel_cs(gamma_1 + gamma_2)
    c_lo, s_lo = fresnel_cs(gamma_1 - gamma_2)
    c_bar = c_hi - c_lo
    s_bar = s_hi - s_lo
    return np.abs((c_bar + 1j * s_bar) / (2 * gamma_2)) ** 2
