"""
Sequential 1-D MUSIC refinement of angle, range, radial and transverse velocity.

Location is refined on the noise subspace of the spatial sample covariance. Velocity is
refined on the single-snapshot space-time pseudo-spectrum 1 / (1 - |u^H y|^2), where y is the
normalized vectorized snapshot and u the unit-norm space-time steering vector.

Transverse motion tilts the spatial phase a little more every symbol, so the array sees the
target at the apparent direction sin(theta) - m_bar * beta / q averaged over the CPI. The
range and transverse-velocity scans hold that apparent direction fixed and re-anchor the
true angle for every candidate, which keeps the 1-D scans decoupled.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from ..core.errors import InvalidArgumentError
from ..model.geometry import ArrayConfig, ebrd_bound, element_offsets
from ..model.synth import SpaceTimeSnapshot
from ..analysis.spectrum import anchored_theta, apparent_sin
from .coarse import CoarseEstimate
from .results import EstimationResult

logger = logging.getLogger("nfsense.estimators.music")

REFINEMENT_ORDER = ("theta", "range", "v_r", "v_theta")
SPECTRUM_EPS = 1e-12
FLATNESS_TOL = 1e-6
HERMITIAN_TOL = 1e-9
THETA_LIMIT = math.pi / 2 - 1e-6
MIN_RANGE = 1e-3
_CHUNK = 32


@dataclass(frozen=True)
class SubspaceDecomposition:
    """Eigen-decomposition of a covariance, eigenvalues descending."""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    signal_dim: int
    degenerate: bool = False

    @property
    def signal_basis(self) -> np.ndarray:
        return self.eigenvectors[:, :self.signal_dim]

    @property
    def noise_basis(self) -> np.ndarray:
        return self.eigenvectors[:, self.signal_dim:]


@dataclass(frozen=True)
class RefinementConfig:
    """
    Scan settings. A window of None means `window_steps` coarse resolution steps around the
    coarse value; an explicit window is the half-width in the parameter's own units.
    """
    theta_window: float | None = None
    range_window: float | None = None
    vr_window: float | None = None
    vtheta_window: float | None = None
    grid_points: int = 512
    passes: int = 2
    window_steps: float = 3.0
    energy_fraction: float = 0.95
    max_signal_dim: int = 8

    def __post_init__(self):
        if self.grid_points < 3:
            raise InvalidArgumentError(f"grid_points must be >= 3, got {self.grid_points}")
        if self.passes < 1:
            raise InvalidArgumentError(f"passes must be >= 1, got {self.passes}")
        if not self.window_steps > 0:
            raise InvalidArgumentError(f"window_steps must be positive, got {self.window_steps}")
        if not 0 < self.energy_fraction <= 1:
            raise InvalidArgumentError(f"energy_fraction must lie in (0, 1], got {self.energy_fraction}")
        if self.max_signal_dim < 1:
            raise InvalidArgumentError(f"max_signal_dim must be >= 1, got {self.max_signal_dim}")
        for name in ("theta_window", "range_window", "vr_window", "vtheta_window"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value >= 0):
                raise InvalidArgumentError(f"{name} must be finite and non-negative, got {value}")


@dataclass(frozen=True)
class StageResult:
    """Values of one refinement stage; iterating yields only the values, so it unpacks like a tuple."""
    values: tuple[float, float]
    peaks: dict = field(default_factory=dict)
    flags: frozenset = frozenset()
    apparent_sin: float | None = None

    def __iter__(self):
        return iter(self.values)


class _ScanLog:
    def __init__(self):
        self.peaks: dict[str, float] = {}
        self.flags: set[str] = set()
        self.saturated: set[str] = set()


def spatial_covariance(snapshot: SpaceTimeSnapshot) -> np.ndarray:
    y = snapshot.data
    r = (y @ y.conj().T) / y.shape[1]
    return 0.5 * (r + r.conj().T)


def noise_subspace(r: np.ndarray, energy_fraction: float = 0.95, max_signal_dim: int = 8) -> SubspaceDecomposition:
    r = np.asarray(r, dtype=complex)
    if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] < 2:
        raise InvalidArgumentError(f"Covariance must be a square matrix of size >= 2, got shape {r.shape}")
    scale = max(1.0, float(np.max(np.abs(r))))
    if float(np.max(np.abs(r - r.conj().T))) > HERMITIAN_TOL * scale:
        raise InvalidArgumentError("Covariance matrix is not Hermitian.")

    values, vectors = eigh(0.5 * (r + r.conj().T))
    order = np.argsort(values)[::-1]
    values = np.clip(values[order], 0.0, None)
    vectors = vectors[:, order]

    dim_cap = min(max_signal_dim, r.shape[0] - 1)
    total = float(values.sum())
    degenerate = total <= 0 or (values[0] - values[-1]) <= FLATNESS_TOL * values[0]
    if degenerate:
        signal_dim = 1
        logger.debug("Covariance eigenvalues are flat; using a one-dimensional signal subspace.")
    else:
        captured = np.cumsum(values) / total
        signal_dim = int(np.searchsorted(captured, energy_fraction - 1e-12) + 1)
        signal_dim = min(max(signal_dim, 1), dim_cap)
    values.setflags(write=False)
    vectors.setflags(write=False)
    return SubspaceDecomposition(values, vectors, signal_dim, bool(degenerate))


def _projection_spectrum(noise_basis: np.ndarray, steering: np.ndarray) -> np.ndarray:
    """Rows of `steering` are candidate vectors; each is normalized before projection."""
    norms = np.linalg.norm(steering, axis=1)
    if np.any(norms == 0):
        raise InvalidArgumentError("Steering vectors must be nonzero.")
    units = steering / norms[:, None]
    residual = np.sum(np.abs(units.conj() @ noise_basis) ** 2, axis=1)
    return 1.0 / np.maximum(residual, SPECTRUM_EPS)


def music_spectrum_1d(noise_basis: np.ndarray, steering_fn, grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidArgumentError("MUSIC scan grid must be a non-empty 1-D array.")
    steering = np.array([np.asarray(steering_fn(x), dtype=complex) for x in grid])
    if steering.ndim != 2 or steering.shape[1] != noise_basis.shape[0]:
        raise InvalidArgumentError(
            f"Steering vectors of length {steering.shape[-1]} do not match the noise basis rows {noise_basis.shape[0]}"
        )
    return _projection_spectrum(noise_basis, steering)


def _spatial_rows(cfg: ArrayConfig, thetas, ranges) -> tuple[np.ndarray, np.ndarray]:
    thetas, ranges = np.broadcast_arrays(np.asarray(thetas, dtype=float), np.asarray(ranges, dtype=float))
    x = element_offsets(cfg)
    s = np.sin(thetas)[:, None]
    r = ranges[:, None]
    r_n = np.sqrt(r * r + x * x - 2 * r * x * s)
    diff = (x * x - 2 * r * x * s) / (r_n + r)
    return diff, r_n


def space_time_correlation(cfg: ArrayConfig, y_hat: np.ndarray, thetas, ranges, v_r, v_theta) -> np.ndarray:
    """
    |u^H y_hat|^2 for unit-norm space-time steering u at every broadcast parameter tuple.

    `y_hat` is the snapshot matrix scaled to unit Frobenius norm.
    """
    thetas, ranges, v_r, v_theta = (np.atleast_1d(a) for a in np.broadcast_arrays(
        np.asarray(thetas, dtype=float), np.asarray(ranges, dtype=float),
        np.asarray(v_r, dtype=float), np.asarray(v_theta, dtype=float)))
    x = element_offsets(cfg)
    m = np.arange(1, cfg.num_symbols + 1)
    kappa_nu = cfg.spatial_phase_factor * cfg.wavenumber
    norm = math.sqrt(cfg.num_elements * cfg.num_symbols)
    out = np.empty(thetas.shape[0])
    for start in range(0, thetas.shape[0], _CHUNK):
        sl = slice(start, start + _CHUNK)
        diff, r_n = _spatial_rows(cfg, thetas[sl], ranges[sl])
        s = np.sin(thetas[sl])[:, None]
        c = np.cos(thetas[sl])[:, None]
        r = ranges[sl][:, None]
        v_n = (v_r[sl][:, None] * (r - x * s) + v_theta[sl][:, None] * x * c) / r_n
        omega = 2 * v_n / (cfg.wavelength * cfg.symbol_rate)
        temporal = np.exp(1j * math.pi * omega[:, :, None] * m[None, None, :])
        per_element = np.einsum("gnm,nm->gn", temporal, y_hat)
        corr = np.sum(np.exp(1j * kappa_nu * diff) * per_element, axis=1) / norm
        out[sl] = np.abs(corr) ** 2
    return out


def _vectorized_spectrum(correlation: np.ndarray) -> np.ndarray:
    return 1.0 / np.maximum(1.0 - correlation, SPECTRUM_EPS)


def vectorized_spectrum(snapshot: SpaceTimeSnapshot, thetas, ranges, v_r, v_theta) -> np.ndarray:
    """Single-snapshot space-time pseudo-spectrum; flat ones when the snapshot is all zero."""
    y = snapshot.data
    total = float(np.linalg.norm(y))
    shape = np.broadcast_shapes(np.shape(thetas), np.shape(ranges), np.shape(v_r), np.shape(v_theta))
    if total == 0:
        return np.ones(shape or (1,))
    corr = space_time_correlation(snapshot.config, y / total, thetas, ranges, v_r, v_theta)
    return _vectorized_spectrum(corr)


def _window(explicit: float | None, steps: float, step: float) -> float:
    if explicit is not None:
        return float(explicit)
    return float(steps * step)


def _theta_bounds(center: float, half_width: float) -> tuple[float, float]:
    return max(-THETA_LIMIT, center - half_width), min(THETA_LIMIT, center + half_width)


def _range_bounds(center: float, half_width: float) -> tuple[float, float]:
    return max(MIN_RANGE, center - half_width), center + half_width


def _scan(name: str, center: float, bounds: tuple[float, float], outer: tuple[float, float],
          points: int, spectrum_fn, log: _ScanLog) -> float:
    """Evaluate `spectrum_fn` over the bounds and return the argmax (lowest value on ties)."""
    lo, hi = bounds
    if not hi > lo:
        return center
    grid = np.linspace(lo, hi, points)
    spectrum = np.asarray(spectrum_fn(grid), dtype=float)
    peak = float(spectrum.max())
    if not np.all(np.isfinite(spectrum)) or peak - float(spectrum.min()) <= FLATNESS_TOL * peak:
        log.flags.update({"degenerate_spectrum", "refinement_failed"})
        logger.warning(f"Flat {name} spectrum over [{lo:.6g}, {hi:.6g}]; keeping {center:.6g}.")
        return center
    idx = int(np.argmax(spectrum))
    log.peaks[name] = peak
    if (idx == 0 and lo <= outer[0]) or (idx == points - 1 and hi >= outer[1]):
        log.saturated.add(name)
    else:
        log.saturated.discard(name)
    return float(grid[idx])


def _start_angle(coarse: CoarseEstimate) -> float:
    # spatial steering is static, so the angle scan peaks at the apparent direction
    return coarse.theta if coarse.apparent_theta is None else coarse.apparent_theta


def _location_scans(snapshot: SpaceTimeSnapshot, coarse: CoarseEstimate, rcfg: RefinementConfig,
                    log: _ScanLog) -> tuple[float, float, tuple, tuple]:
    cfg = snapshot.config
    start = _start_angle(coarse)
    decomposition = noise_subspace(spatial_covariance(snapshot), rcfg.energy_fraction, rcfg.max_signal_dim)
    if decomposition.degenerate:
        log.flags.update({"degenerate_spectrum", "refinement_failed"})
        logger.warning("Spatial covariance is degenerate; keeping the coarse location.")
        return start, coarse.range, _theta_bounds(start, 0.0), _range_bounds(coarse.range, 0.0)
    logger.debug(f"Spatial covariance signal dimension: {decomposition.signal_dim}.")
    noise = decomposition.noise_basis

    def spatial(thetas, ranges):
        diff, _ = _spatial_rows(cfg, thetas, ranges)
        rows = np.exp(-1j * cfg.spatial_phase_factor * cfg.wavenumber * diff)
        return _projection_spectrum(noise, rows)

    theta_bounds = _theta_bounds(start, _window(rcfg.theta_window, rcfg.window_steps, coarse.theta_step))
    theta = _scan("theta", start, theta_bounds, theta_bounds, rcfg.grid_points,
                  lambda grid: spatial(grid, np.full_like(grid, coarse.range)), log)
    range_bounds = _range_bounds(coarse.range, _window(rcfg.range_window, rcfg.window_steps, coarse.range_step))
    target_range = _scan("range", coarse.range, range_bounds, range_bounds, rcfg.grid_points,
                         lambda grid: spatial(np.full_like(grid, theta), grid), log)
    return theta, target_range, theta_bounds, range_bounds


def refine_location(snapshot: SpaceTimeSnapshot, coarse: CoarseEstimate, rcfg: RefinementConfig | None = None,
                    velocity: tuple[float, float] | None = None) -> StageResult:
    """
    Angle scan at the coarse range, then range scan at the refined angle, both on the
    spatial-covariance noise subspace.

    With `velocity` given, the returned angle is re-anchored from the apparent direction using
    that transverse velocity; without it the apparent angle is returned.
    """
    rcfg = rcfg or RefinementConfig()
    log = _ScanLog()
    theta_app, target_range, _, _ = _location_scans(snapshot, coarse, rcfg, log)
    s_app = math.sin(theta_app)
    theta = theta_app if velocity is None else anchored_theta(snapshot.config, s_app, target_range, velocity[1])
    flags = set(log.flags)
    if log.saturated:
        flags.add("window_saturated")
    return StageResult((theta, target_range), dict(log.peaks), frozenset(flags), s_app)


def _velocity_scans(snapshot: SpaceTimeSnapshot, theta: float, target_range: float, coarse: CoarseEstimate,
                    rcfg: RefinementConfig, log: _ScanLog, sin_app: float | None) -> tuple[float, float, tuple, tuple]:
    cfg = snapshot.config
    y = snapshot.data
    total = float(np.linalg.norm(y))
    vr_bounds = (coarse.v_r - _window(rcfg.vr_window, rcfg.window_steps, coarse.vr_step),
                 coarse.v_r + _window(rcfg.vr_window, rcfg.window_steps, coarse.vr_step))
    magnitude = abs(coarse.v_theta)
    vtheta_half = _window(rcfg.vtheta_window, rcfg.window_steps, coarse.vtheta_step)
    if rcfg.vtheta_window is None and coarse.vtheta_match is not None:
        lo, hi = coarse.vtheta_match.span
        vtheta_half = max(vtheta_half, magnitude - lo, hi - magnitude)

    if total == 0:
        log.flags.update({"degenerate_spectrum", "refinement_failed"})
        logger.warning("All-zero snapshot; keeping the coarse velocity.")
        return coarse.v_r, coarse.v_theta, vr_bounds, (coarse.v_theta, coarse.v_theta)
    y_hat = y / total

    def theta_for(v_theta):
        if sin_app is None:
            return theta
        return anchored_theta(cfg, sin_app, target_range, v_theta)

    def vr_spectrum(v_theta):
        th = theta_for(v_theta)
        return lambda grid: _vectorized_spectrum(
            space_time_correlation(cfg, y_hat, th, target_range, grid, v_theta))

    # try both signs and keep the stronger radial scan; the ridge sign goes first and wins ties
    first = -1.0 if coarse.ridge_velocity < 0 else 1.0
    best = None
    for sign in ((1.0,) if magnitude == 0 else (first, -first)):
        candidate = sign * magnitude
        trial_log = _ScanLog()
        v_r = _scan("v_r", coarse.v_r, vr_bounds, vr_bounds, rcfg.grid_points, vr_spectrum(candidate), trial_log)
        peak = trial_log.peaks.get("v_r")
        if peak is None:
            peak = float(vr_spectrum(candidate)(np.array([v_r]))[0])
        if best is None or peak > best[0]:
            best = (peak, candidate, v_r, trial_log)
    _, candidate, v_r, trial_log = best
    log.peaks.update(trial_log.peaks)
    log.flags.update(trial_log.flags)
    log.saturated.update(trial_log.saturated)

    vtheta_bounds = (candidate - vtheta_half, candidate + vtheta_half)

    def vtheta_spectrum(grid):
        thetas = np.array([theta_for(v) for v in grid])
        return _vectorized_spectrum(space_time_correlation(cfg, y_hat, thetas, target_range, v_r, grid))

    v_theta = _scan("v_theta", candidate, vtheta_bounds, vtheta_bounds, rcfg.grid_points, vtheta_spectrum, log)
    return v_r, v_theta, vr_bounds, vtheta_bounds


def refine_velocity(snapshot: SpaceTimeSnapshot, location, coarse: CoarseEstimate,
                    rcfg: RefinementConfig | None = None) -> StageResult:
    """
    Radial scan with the transverse velocity at plus and minus the coarse magnitude, then a
    transverse scan around the better signed candidate.

    When `location` is a StageResult carrying an apparent direction, every candidate transverse
    velocity re-anchors the angle used by the steering vector.
    """
    rcfg = rcfg or RefinementConfig()
    theta, target_range = tuple(location)
    sin_app = getattr(location, "apparent_sin", None)
    log = _ScanLog()
    v_r, v_theta, _, _ = _velocity_scans(snapshot, theta, target_range, coarse, rcfg, log, sin_app)
    flags = set(log.flags)
    if log.saturated:
        flags.add("window_saturated")
    return StageResult((v_r, v_theta), dict(log.peaks), frozenset(flags))


def _clamped(center: float, half_width: float, outer: tuple[float, float]) -> tuple[float, float]:
    return max(outer[0], center - half_width), min(outer[1], center + half_width)


def refine_all(snapshot: SpaceTimeSnapshot, coarse: CoarseEstimate, rcfg: RefinementConfig | None = None,
               method: str = "MUSIC") -> EstimationResult:
    rcfg = rcfg or RefinementConfig()
    cfg = snapshot.config
    log = _ScanLog()
    log.flags.update(coarse.flags - {"outside_ebrd"})

    theta_app, target_range, theta_bounds, range_bounds = _location_scans(snapshot, coarse, rcfg, log)
    sin_app = math.sin(theta_app)
    v_r, v_theta, vr_bounds, vtheta_bounds = _velocity_scans(
        snapshot, theta_app, target_range, coarse, rcfg, log, sin_app)
    if "refinement_failed" not in log.flags:
        theta = anchored_theta(cfg, sin_app, target_range, v_theta)
    else:
        theta = coarse.theta if theta_app == _start_angle(coarse) else theta_app
    # pass-1 angle bounds live in apparent-direction space; shift them onto the anchored angle
    shift = theta - theta_app
    theta_bounds = (max(-THETA_LIMIT, theta_bounds[0] + shift), min(THETA_LIMIT, theta_bounds[1] + shift))

    total = float(np.linalg.norm(snapshot.data))
    if total > 0 and "refinement_failed" not in log.flags:
        y_hat = snapshot.data / total
        half = {
            "theta": (theta_bounds[1] - theta_bounds[0]) / 2,
            "range": (range_bounds[1] - range_bounds[0]) / 2,
            "v_r": (vr_bounds[1] - vr_bounds[0]) / 2,
            "v_theta": (vtheta_bounds[1] - vtheta_bounds[0]) / 2,
        }

        def spectrum(thetas, ranges, vrs, vthetas):
            return _vectorized_spectrum(space_time_correlation(cfg, y_hat, thetas, ranges, vrs, vthetas))

        for pass_index in range(1, rcfg.passes):
            theta = _scan("theta", theta, _clamped(theta, half["theta"], theta_bounds), theta_bounds,
                          rcfg.grid_points, lambda g: spectrum(g, target_range, v_r, v_theta), log)
            sin_app = apparent_sin(cfg, theta, target_range, v_theta)

            def range_spectrum(grid):
                thetas = np.array([anchored_theta(cfg, sin_app, r, v_theta) for r in grid])
                return spectrum(thetas, grid, v_r, v_theta)

            target_range = _scan("range", target_range, _clamped(target_range, half["range"], range_bounds),
                                 range_bounds, rcfg.grid_points, range_spectrum, log)
            theta = anchored_theta(cfg, sin_app, target_range, v_theta)
            v_r = _scan("v_r", v_r, _clamped(v_r, half["v_r"], vr_bounds), vr_bounds, rcfg.grid_points,
                        lambda g: spectrum(theta, target_range, g, v_theta), log)

            def vtheta_spectrum(grid):
                thetas = np.array([anchored_theta(cfg, sin_app, target_range, v) for v in grid])
                return spectrum(thetas, target_range, v_r, grid)

            v_theta = _scan("v_theta", v_theta, _clamped(v_theta, half["v_theta"], vtheta_bounds), vtheta_bounds,
                            rcfg.grid_points, vtheta_spectrum, log)
            theta = anchored_theta(cfg, sin_app, target_range, v_theta)
            logger.debug(f"Refinement pass {pass_index + 1}: theta={theta:.6f}, r={target_range:.4f}, "
                         f"v_r={v_r:.4f}, v_theta={v_theta:.4f}")

    flags = set(log.flags)
    if log.saturated:
        flags.add("window_saturated")
        logger.warning(f"Refinement pinned at the window edge for {sorted(log.saturated)}.")
    if target_range >= ebrd_bound(cfg, theta):
        flags.add("outside_ebrd")
        logger.warning(f"Refined range {target_range:.2f} m lies outside the EBRD; range is weakly observable.")
    diagnostics = {
        "coarse": coarse.as_target().as_array().tolist(),
        "saturated": sorted(log.saturated),
        "passes": rcfg.passes,
    }
    return EstimationResult(theta, target_range, v_r, v_theta, method, dict(log.peaks), frozenset(flags), diagnostics)
