"""
Benchmark estimators: gradient maximum likelihood, polar-codebook location search and
velocity-codebook search at a known location.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..core.errors import ConfigurationError, EstimationFailedError, InvalidArgumentError
from ..model.geometry import ArrayConfig, CalibrationProfile, TargetState, spatial_steering_grid
from ..model.synth import SpaceTimeSnapshot, clean_signal
from .coarse import CoarseEstimate
from .music import THETA_LIMIT, MIN_RANGE, space_time_correlation
from .results import EstimationResult

logger = logging.getLogger("nfsense.estimators.baselines")

# (sin(theta), range as a fraction of r_RD, v_r, v_theta) box for random initialization
RANDOM_INIT_BOX = ((-0.95, 0.95), (1 / 200, 1 / 10), (-15.0, 15.0), (-16.0, 16.0))


@dataclass(frozen=True)
class GradientConfig:
    """
    Settings of the projected gradient descent on the ML objective.

    Gradients are central differences with `grad_steps`; a failed line search halves the step up
    to `max_halvings` times. Restarts after the first perturb the initial point, or draw a
    random one when there is none.
    """
    max_iters: int = 200
    initial_step: float = 1.0
    decay: float = 0.5
    restarts: int = 4
    grad_steps: tuple[float, float, float, float] = (1e-4, 1e-2, 1e-2, 1e-2)
    tolerance: float = 1e-10
    max_halvings: int = 20

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.restarts < 1:
            raise InvalidArgumentError(f"restarts must be >= 1, got {self.restarts}")
        if not self.initial_step > 0 or not 0 < self.decay < 1:
            raise InvalidArgumentError(
                f"Need initial_step > 0 and decay in (0, 1), got {self.initial_step}, {self.decay}"
            )
        if len(self.grad_steps) != 4 or not all(s > 0 for s in self.grad_steps):
            raise InvalidArgumentError(f"grad_steps must be four positive values, got {self.grad_steps}")
        if self.tolerance < 0 or self.max_halvings < 1:
            raise InvalidArgumentError("tolerance must be >= 0 and max_halvings >= 1.")

    @property
    def scale(self) -> np.ndarray:
        """Coordinate scaling of the search space; a unit step moves each parameter 100 gradient steps."""
        return np.asarray(self.grad_steps, dtype=float) * 100.0


@dataclass(frozen=True)
class PolarCodebook:
    """Polar-domain location codebook: sampled (theta, r) pairs and their steering columns."""
    thetas: np.ndarray
    ranges: np.ndarray
    steering: np.ndarray
    fingerprint: int
    grid_shape: tuple[int, int]

    def __len__(self):
        return self.thetas.shape[0]


def ml_objective(snapshot: SpaceTimeSnapshot, psi: tuple[float, float], v: tuple[float, float],
                 xi_t: float = 1.0, calib: CalibrationProfile | None = None) -> float:
    """||Y - X(psi, v)||_F^2 against the noise-free model."""
    model = clean_signal(snapshot.config, TargetState(psi[0], psi[1], v[0], v[1]), calib, xi_t)
    return float(np.sum(np.abs(snapshot.data - model.data) ** 2))


def _project(p: np.ndarray) -> np.ndarray:
    q = p.copy()
    q[0] = min(THETA_LIMIT, max(-THETA_LIMIT, q[0]))
    q[1] = max(MIN_RANGE, q[1])
    return q


def _initial_point(init) -> np.ndarray | None:
    if init is None:
        return None
    if isinstance(init, (CoarseEstimate, EstimationResult)):
        init = init.as_target()
    if isinstance(init, TargetState):
        return init.as_array()
    point = np.asarray(init, dtype=float)
    if point.shape != (4,):
        raise InvalidArgumentError(f"Initial point must hold (theta, r, v_r, v_theta), got shape {point.shape}")
    return point


def _random_point(cfg: ArrayConfig, rng: np.random.Generator) -> np.ndarray:
    (s_lo, s_hi), (r_lo, r_hi), (vr_lo, vr_hi), (vt_lo, vt_hi) = RANDOM_INIT_BOX
    return np.array([
        math.asin(rng.uniform(s_lo, s_hi)),
        cfg.rayleigh_distance * rng.uniform(r_lo, r_hi),
        rng.uniform(vr_lo, vr_hi),
        rng.uniform(vt_lo, vt_hi),
    ])


def _descend(objective, start: np.ndarray, gcfg: GradientConfig, floor: float) -> tuple[np.ndarray, float, int, list]:
    scale = gcfg.scale
    steps = np.asarray(gcfg.grad_steps, dtype=float)
    p = _project(start)
    f = objective(p)
    if not math.isfinite(f):
        raise FloatingPointError("objective is not finite at the starting point")
    history = [f]
    alpha = gcfg.initial_step
    iterations = 0
    for iterations in range(1, gcfg.max_iters + 1):
        if f <= floor:
            iterations -= 1
            break
        grad = np.empty(4)
        for k in range(4):
            e = np.zeros(4)
            e[k] = steps[k]
            grad[k] = (objective(_project(p + e)) - objective(_project(p - e))) / (2 * steps[k])
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("gradient is not finite")
        scaled = grad * scale
        norm = float(np.linalg.norm(scaled))
        if norm == 0:
            break
        direction = -scaled / norm * scale

        accepted = False
        for _ in range(gcfg.max_halvings):
            candidate = _project(p + alpha * direction)
            f_new = objective(candidate)
            if math.isfinite(f_new) and f_new < f:
                accepted = True
                break
            alpha *= gcfg.decay
        if not accepted:
            break
        decrease = (f - f_new) / f if f > 0 else 0.0
        p, f = candidate, f_new
        history.append(f)
        alpha = min(alpha / gcfg.decay, gcfg.initial_step)
        if decrease < gcfg.tolerance:
            break
    return p, f, iterations, history


def ml_gradient_descent(snapshot: SpaceTimeSnapshot, init=None, gcfg: GradientConfig | None = None,
                        xi_t: float = 1.0, calib: CalibrationProfile | None = None,
                        rng: np.random.Generator | None = None, method: str = "ML") -> EstimationResult:
    """
    Projected normalized-gradient descent with backtracking on the Frobenius residual.

    Restart 0 starts at `init`; later restarts perturb it, or draw uniformly from the search box
    when `init` is None. The lowest final objective wins.
    """
    gcfg = gcfg or GradientConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    cfg = snapshot.config
    start = _initial_point(init)
    floor = gcfg.tolerance * float(np.sum(np.abs(snapshot.data) ** 2))

    def objective(p):
        return ml_objective(snapshot, (p[0], p[1]), (p[2], p[3]), xi_t, calib)

    best = None
    failures = 0
    for restart in range(gcfg.restarts):
        if start is None:
            point = _random_point(cfg, rng)
        elif restart == 0:
            point = start.copy()
        else:
            point = start + rng.standard_normal(4) * gcfg.scale
        try:
            p, f, iterations, history = _descend(objective, point, gcfg, floor)
        except (FloatingPointError, InvalidArgumentError) as e:
            failures += 1
            logger.warning(f"ML restart {restart} diverged: {e}")
            continue
        logger.debug(f"ML restart {restart}: objective {f:.6e} after {iterations} iterations.")
        if best is None or f < best[1]:
            best = (p, f, iterations, history, restart)
        if f <= floor:
            break

    if best is None:
        raise EstimationFailedError(
            f"All {gcfg.restarts} gradient restarts failed.",
            diagnostics={"restarts": gcfg.restarts, "failures": failures},
        )
    p, f, iterations, history, restart = best
    diagnostics = {
        "objective": f,
        "iterations": iterations,
        "history": history,
        "restart": restart,
        "failures": failures,
    }
    return EstimationResult(float(p[0]), float(p[1]), float(p[2]), float(p[3]), method,
                            {"objective": f}, frozenset(), diagnostics)


def build_polar_codebook(cfg: ArrayConfig, g_total: int = 5000, sin_max: float = 0.95,
                         range_min: float | None = None, range_max: float | None = None) -> PolarCodebook:
    if g_total < 4:
        raise InvalidArgumentError(f"Polar codebook needs at least 4 entries, got {g_total}")
    g_theta = math.ceil(math.sqrt(g_total))
    g_r = max(2, round(g_total / g_theta))
    r_min = range_min if range_min is not None else cfg.rayleigh_distance / 200
    r_max = range_max if range_max is not None else cfg.rayleigh_distance
    if not 0 < r_min < r_max:
        raise InvalidArgumentError(f"Need 0 < range_min < range_max, got {r_min}, {r_max}")

    angles = np.arcsin(np.linspace(-sin_max, sin_max, g_theta))
    ranges = 1.0 / np.linspace(1.0 / r_min, 1.0 / r_max, g_r)
    theta_grid, range_grid = np.meshgrid(angles, ranges, indexing="ij")
    thetas, ranges = theta_grid.ravel(), range_grid.ravel()
    steering = spatial_steering_grid(cfg, thetas, ranges)
    for arr in (thetas, ranges, steering):
        arr.setflags(write=False)
    logger.info(f"Polar codebook built: {g_theta} angles x {g_r} ranges = {thetas.size} entries.")
    return PolarCodebook(thetas, ranges, steering, cfg.fingerprint(), (g_theta, g_r))


def polar_locate(snapshot: SpaceTimeSnapshot, codebook: PolarCodebook) -> tuple[float, float]:
    """Codebook entry with the largest power summed incoherently over symbols; the first wins ties."""
    if snapshot.config.fingerprint() != codebook.fingerprint:
        raise ConfigurationError("Polar codebook was built for a different array configuration.")
    scores = np.sum(np.abs(codebook.steering.conj() @ snapshot.data) ** 2, axis=1)
    idx = int(np.argmax(scores))
    return float(codebook.thetas[idx]), float(codebook.ranges[idx])


def velocity_codebook_search(snapshot: SpaceTimeSnapshot, known_location: tuple[float, float],
                             vr_grid, vtheta_grid, xi_t: float = 1.0) -> tuple[float, float]:
    """Exhaustive (v_r, v_theta) search at a known location; ties go to the first pair in v_r-major order."""
    vr_grid = np.asarray(vr_grid, dtype=float)
    vtheta_grid = np.asarray(vtheta_grid, dtype=float)
    if vr_grid.size == 0 or vtheta_grid.size == 0:
        raise InvalidArgumentError("Velocity codebook grids must be non-empty.")
    theta, target_range = known_location
    vr, vt = np.meshgrid(vr_grid, vtheta_grid, indexing="ij")
    y = snapshot.data
    total = float(np.linalg.norm(y))
    # xi_t scales every codeword equally and does not move the argmax
    if total == 0:
        return float(vr_grid[0]), float(vtheta_grid[0])
    scores = space_time_correlation(snapshot.config, y / total, theta, target_range, vr.ravel(), vt.ravel())
    idx = int(np.argmax(scores))
    return float(vr.ravel()[idx]), float(vt.ravel()[idx])
