"""
The estimators a sweep can run, looked up by method name (DFT-PC, MUSIC-CE, ML, POLAR, ...).

DFT and MUSIC variants share one coarse estimate per snapshot through the context cache.
"""
import logging

from ..core.errors import ConfigurationError, EstimationFailedError
from ..model.synth import SpaceTimeSnapshot
from .base_estimator import CALIBRATION_MODES, AbstractEstimator, EstimationContext
from .baselines import ml_gradient_descent, polar_locate, velocity_codebook_search
from .coarse import CoarseEstimate, estimate_coarse
from .music import refine_all
from .results import EstimationResult

logger = logging.getLogger("nfsense.estimators.registry")


def cached_coarse(snapshot: SpaceTimeSnapshot, context: EstimationContext) -> CoarseEstimate:
    """Coarse estimate of `snapshot`, computed once per snapshot and shared between estimators."""
    key = ("coarse", id(snapshot))
    hit = context.cache.get(key)
    if hit is not None and hit[0] is snapshot:
        return hit[1]
    coarse = estimate_coarse(snapshot, context.tables)
    context.cache[key] = (snapshot, coarse)
    return coarse


class DFTEstimator(AbstractEstimator):
    """Coarse stage alone; reports the table magnitude of v_theta."""
    def __init__(self, calibration: str = "PC"):
        self.calibration = calibration

    def method_name(self) -> str:
        return f"DFT-{self.calibration}"

    def can_handle(self, context: EstimationContext) -> bool:
        return context.tables is not None

    def estimate(self, snapshot: SpaceTimeSnapshot, context: EstimationContext) -> EstimationResult:
        coarse = cached_coarse(snapshot, context)
        peaks = {}
        if coarse.angular_spread is not None:
            peaks["angle"] = coarse.angular_spread.peak_value
        if coarse.doppler_spread is not None:
            peaks["doppler"] = coarse.doppler_spread.peak_value
        diagnostics = {}
        if coarse.range_match is not None:
            diagnostics["range_score"] = coarse.range_match.score
        if coarse.vtheta_match is not None:
            diagnostics["vtheta_score"] = coarse.vtheta_match.score
        return EstimationResult(coarse.theta, coarse.range, coarse.v_r, coarse.v_theta, self.method_name(),
                                peaks, coarse.flags, diagnostics)


class MUSICEstimator(AbstractEstimator):
    def __init__(self, calibration: str = "PC"):
        self.calibration = calibration

    def method_name(self) -> str:
        return f"MUSIC-{self.calibration}"

    def can_handle(self, context: EstimationContext) -> bool:
        return context.tables is not None

    def estimate(self, snapshot: SpaceTimeSnapshot, context: EstimationContext) -> EstimationResult:
        coarse = cached_coarse(snapshot, context)
        return refine_all(snapshot, coarse, context.refinement, method=self.method_name())


class MLEstimator(AbstractEstimator):
    """Gradient ML from a random start ("ML") or from the DFT coarse estimate ("ML-DFT")."""

    def __init__(self, from_coarse: bool = False):
        self.from_coarse = from_coarse

    def method_name(self) -> str:
        return "ML-DFT" if self.from_coarse else "ML"

    def can_handle(self, context: EstimationContext) -> bool:
        return context.tables is not None or not self.from_coarse

    def estimate(self, snapshot: SpaceTimeSnapshot, context: EstimationContext) -> EstimationResult:
        init = cached_coarse(snapshot, context) if self.from_coarse else None
        return ml_gradient_descent(snapshot, init, context.gradient, context.xi_t, None, context.rng,
                                   method=self.method_name())


class PolarEstimator(AbstractEstimator):
    """Polar codebook for location, then the velocity codebook at the true location."""

    def method_name(self) -> str:
        return "POLAR"

    def can_handle(self, context: EstimationContext) -> bool:
        return context.codebook is not None and context.velocity_grids is not None

    def estimate(self, snapshot: SpaceTimeSnapshot, context: EstimationContext) -> EstimationResult:
        theta, target_range = polar_locate(snapshot, context.codebook)
        known = (context.truth.theta, context.truth.range) if context.truth is not None else (theta, target_range)
        vr_grid, vtheta_grid = context.velocity_grids
        v_r, v_theta = velocity_codebook_search(snapshot, known, vr_grid, vtheta_grid, context.xi_t)
        return EstimationResult(theta, target_range, v_r, v_theta, self.method_name(),
                                diagnostics={"velocity_location": list(known)})


class EstimatorRegistry:
    """Name-indexed estimator instances, in registration order."""

    def __init__(self):
        self._estimators: dict[str, AbstractEstimator] = {}

    @classmethod
    def default(cls) -> "EstimatorRegistry":
        registry = cls()
        for mode in CALIBRATION_MODES:
            registry.register(DFTEstimator(mode))
        for mode in CALIBRATION_MODES:
            registry.register(MUSICEstimator(mode))
        registry.register(MLEstimator(from_coarse=False))
        registry.register(MLEstimator(from_coarse=True))
        registry.register(PolarEstimator())
        return registry

    def register(self, estimator: AbstractEstimator) -> None:
        name = estimator.method_name()
        if name in self._estimators:
            logger.warning(f"Replacing estimator '{name}'.")
        self._estimators[name] = estimator
        logger.debug(f"Registered estimator '{name}'.")

    def names(self) -> list[str]:
        return list(self._estimators)

    def get(self, name: str) -> AbstractEstimator:
        try:
            return self._estimators[name]
        except KeyError:
            raise ConfigurationError(
                f"Unknown method '{name}'. Available: {', '.join(self._estimators)}"
            ) from None

    def resolve(self, names) -> list[AbstractEstimator]:
        """Estimators for `names` in canonical registration order, without duplicates."""
        wanted = {n.strip().upper() for n in names if n.strip()}
        if not wanted:
            raise ConfigurationError("At least one method must be selected.")
        lookup = {n.upper(): n for n in self._estimators}
        unknown = sorted(wanted - set(lookup))
        if unknown:
            raise ConfigurationError(
                f"Unknown method(s) {', '.join(unknown)}. Available: {', '.join(self._estimators)}"
            )
        return [est for name, est in self._estimators.items() if name.upper() in wanted]


def run_estimator(estimator: AbstractEstimator, snapshot: SpaceTimeSnapshot,
                  context: EstimationContext) -> tuple[EstimationResult | None, str]:
    """Run one estimator, turning failures into (None, message) so a trial never aborts."""
    name = estimator.method_name()
    if not estimator.can_handle(context):
        return None, f"{name}: the estimation context lacks the inputs this method needs."
    try:
        return estimator.estimate(snapshot, context), f"{name}: ok"
    except EstimationFailedError as e:
        logger.warning(f"{name} failed: {e}")
        return None, f"{name}: {e}"
    except ConfigurationError:
        raise
    except Exception as e:
        logger.error(f"{name} raised an unexpected error: {e}", exc_info=True)
        return None, f"{name}: unexpected error: {e}"
