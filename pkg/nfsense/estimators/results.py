import math
from dataclasses import dataclass, field

from ..core.errors import InvalidArgumentError
from ..model.geometry import TargetState

PARAMETER_NAMES = ("theta", "range", "v_r", "v_theta")


@dataclass(frozen=True)
class EstimationResult:
    """Estimates of all four target parameters produced by one method on one snapshot."""
    theta: float
    range: float
    v_r: float
    v_theta: float
    method: str
    peaks: dict = field(default_factory=dict)
    flags: frozenset = frozenset()
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        values = (self.theta, self.range, self.v_r, self.v_theta)
        if not all(math.isfinite(v) for v in values):
            raise InvalidArgumentError(f"Estimates must be finite, got {values} from {self.method}")
        object.__setattr__(self, "flags", frozenset(self.flags))

    def parameters(self) -> dict[str, float]:
        return {"theta": self.theta, "range": self.range, "v_r": self.v_r, "v_theta": self.v_theta}

    def as_target(self) -> TargetState:
        return TargetState(self.theta, self.range, self.v_r, self.v_theta)

    def squared_errors(self, truth: TargetState) -> dict[str, float]:
        true_values = {"theta": truth.theta, "range": truth.range, "v_r": truth.v_r, "v_theta": truth.v_theta}
        return {name: (value - true_values[name]) ** 2 for name, value in self.parameters().items()}
