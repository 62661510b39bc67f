import abc
from dataclasses import dataclass, field

import numpy as np

from ..model.geometry import ArrayConfig, TargetState
from ..model.synth import SpaceTimeSnapshot
from .results import EstimationResult

CALIBRATION_MODES = ("PC", "CE")


@dataclass
class EstimationContext:
    """
    Everything an estimator may draw on besides the snapshot.

    `truth` is only read by estimators that assume a known location (the velocity codebook).
    Shared members (tables, codebook) are built once per sweep and must not be mutated.
    """
    cfg: ArrayConfig
    xi_t: float = 1.0
    tables: object | None = None
    refinement: object | None = None
    gradient: object | None = None
    codebook: object | None = None
    velocity_grids: tuple[np.ndarray, np.ndarray] | None = None
    truth: TargetState | None = None
    rng: np.random.Generator | None = None
    cache: dict = field(default_factory=dict)


class AbstractEstimator(abc.ABC):
    """
    Base class for the estimators the harness can run.
    Subclasses name themselves and declare whether a context suits them.
    """
    calibration: str = "PC"

    @abc.abstractmethod
    def method_name(self) -> str:
        raise NotImplementedError("Subclasses must implement method_name()")

    @abc.abstractmethod
    def can_handle(self, context: EstimationContext) -> bool:
        """Check that the context carries what this estimator needs (tables, codebook, ...)."""
        raise NotImplementedError("Subclasses must implement can_handle()")

    @abc.abstractmethod
    def estimate(self, snapshot: SpaceTimeSnapshot, context: EstimationContext) -> EstimationResult:
        """
        Run the estimator on one snapshot.
        Raises EstimationFailedError when no estimate can be produced.
        """
        raise NotImplementedError("Subclasses must implement estimate()")
