"""
Offline lookup tables mapping 3-dB spread widths back to range and transverse velocity.

K_a holds the angular width for every (angle, range) cell; K_v holds the Doppler width for
every (v_r, v_theta) cell at one conditioning location. Widths are regularized to be
monotone along the searched axis, then offset by a tiny strictly monotone ramp so every
cell is its own unique nearest match. Every cell also keeps the offset of the measured
spread center from the true value, used by the coarse stage to remove the bias of close,
off-broadside sources.

Spreads are measured with ripple dips bridged (see `angular_spread`), so version 1 files,
which were not, are rejected and rebuilt.
"""
import csv
import hashlib
import logging
import math
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import isotonic_regression

from ..analysis.spectrum import (
    ad_transform,
    angular_spread,
    doppler_spread,
    velocity_to_doppler,
)
from ..core.errors import (
    DegenerateInputError,
    FileFormatError,
    InvalidArgumentError,
    TableBuildError,
)
from ..model.geometry import ArrayConfig, TargetState, ebrd_bound
from ..model.synth import clean_signal

logger = logging.getLogger("nfsense.estimators.tables")

KIND_ANGLE = 0
KIND_VELOCITY = 1
TABLE_MAGIC = b"NFLT"
TABLE_VERSION = 2
TIE_FRACTION = 1e-9
_HEADER = struct.Struct("<4sIIIIQIIddd")


@dataclass(frozen=True)
class TableGrids:
    """Sampling of the lookup tables; ranges are spaced evenly in 1/r."""
    angle_points: int = 128
    angle_sin_max: float = 0.95
    range_points: int = 64
    range_min: float | None = None
    range_max: float | None = None
    vr_points: int = 31
    vr_max: float = 15.0
    vtheta_points: int = 33
    vtheta_max: float = 16.0

    def __post_init__(self):
        for name in ("angle_points", "range_points", "vr_points", "vtheta_points"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 < self.angle_sin_max < 1:
            raise InvalidArgumentError(f"angle_sin_max must lie in (0, 1), got {self.angle_sin_max}")
        if self.vr_max < 0 or self.vtheta_max < 0:
            raise InvalidArgumentError("Velocity grid bounds must be non-negative.")

    def angles(self) -> np.ndarray:
        return np.arcsin(np.linspace(-self.angle_sin_max, self.angle_sin_max, self.angle_points))

    def range_bounds(self, cfg: ArrayConfig) -> tuple[float, float]:
        r_min = self.range_min if self.range_min is not None else cfg.rayleigh_distance / 200
        r_max = self.range_max if self.range_max is not None else ebrd_bound(cfg, 0.0)
        if not 0 < r_min < r_max:
            raise InvalidArgumentError(f"Range grid needs 0 < range_min < range_max, got {r_min}, {r_max}")
        return r_min, r_max

    def ranges(self, cfg: ArrayConfig) -> np.ndarray:
        """Uniform in 1/r, ascending in r."""
        r_min, r_max = self.range_bounds(cfg)
        return 1.0 / np.linspace(1.0 / r_min, 1.0 / r_max, self.range_points)

    def radial_velocities(self) -> np.ndarray:
        return np.linspace(-self.vr_max, self.vr_max, self.vr_points)

    def transverse_velocities(self) -> np.ndarray:
        return np.linspace(0.0, self.vtheta_max, self.vtheta_points)


@dataclass(frozen=True)
class TableMatch:
    """
    Result of matching a measured width against one table row.

    `span` is the plateau of grid values whose widths tie with the match; `extrapolated` is set
    when the width lies outside the row.
    """
    value: float
    index: int
    score: float
    extrapolated: bool
    span: tuple[float, float]


@dataclass(frozen=True)
class LookupTable:
    """
    Widths tabulated over a (row, column) grid, plus the raw widths before regularization and
    the measured spread center minus the true center of every cell.
    """
    kind: int
    row_grid: np.ndarray
    col_grid: np.ndarray
    width: np.ndarray
    raw_width: np.ndarray
    center_offset: np.ndarray
    fingerprint: int
    oversample_a: int
    oversample_d: int
    tie_step: float
    conditioning: tuple[float, float] | None = None

    def __post_init__(self):
        for name in ("row_grid", "col_grid", "width", "raw_width", "center_offset"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        rows, cols = self.row_grid.shape[0], self.col_grid.shape[0]
        if any(m.shape != (rows, cols) for m in (self.width, self.raw_width, self.center_offset)):
            raise InvalidArgumentError(
                f"Width matrix shape {self.width.shape} does not match grids ({rows}, {cols})"
            )

    def _match(self, row: int, measured_width: float) -> TableMatch:
        return match_row(self.width[row], self.col_grid, measured_width, self.tie_step)


class AngleRangeTable(LookupTable):
    """
    Angular 3-dB widths (sin(theta) units) over (angle, range); non-increasing in range.

    `center_offset` holds the measured spread center minus sin(theta) of every cell; close,
    off-broadside sources sit away from their true direction by a few bins.
    """

    @property
    def angle_grid(self) -> np.ndarray:
        return self.row_grid

    @property
    def range_grid(self) -> np.ndarray:
        return self.col_grid

    def _offsets_at(self, target_range: float) -> np.ndarray:
        inv_r = 1.0 / self.range_grid[::-1]
        return np.array([np.interp(1.0 / target_range, inv_r, row[::-1]) for row in self.center_offset])

    def angle_offset(self, sin_theta: float, target_range: float) -> float:
        """Center offset interpolated linearly in sin(theta) and 1/r, clamped to the grid."""
        return float(np.interp(sin_theta, np.sin(self.angle_grid), self._offsets_at(target_range)))

    def debias_sin(self, center: float, target_range: float) -> float:
        """
        sin(theta) whose interpolated spread center is `center`.

        Offsets are indexed by the true direction, so s + angle_offset(s) = center is solved
        on each piecewise-linear segment; of several roots the one nearest `center` wins.
        A source sitting on a grid node is recovered up to rounding.
        """
        nodes = np.sin(self.angle_grid)
        offsets = self._offsets_at(target_range)
        g = nodes + offsets
        roots = []
        if center - offsets[0] <= nodes[0]:
            roots.append(center - offsets[0])
        if center - offsets[-1] >= nodes[-1]:
            roots.append(center - offsets[-1])
        for i in range(nodes.size - 1):
            lo, hi = g[i], g[i + 1]
            if lo == center:
                roots.append(nodes[i])
            elif lo != hi and min(lo, hi) <= center <= max(lo, hi):
                t = (center - lo) / (hi - lo)
                roots.append(nodes[i] + t * (nodes[i + 1] - nodes[i]))
        s = min(roots, key=lambda x: abs(x - center)) if roots else center - self.angle_offset(center, target_range)
        return min(1.0, max(-1.0, float(s)))


class VelocityTable(LookupTable):
    """Doppler 3-dB widths (normalized frequency) over (v_r, v_theta); non-decreasing in v_theta."""

    @property
    def vr_grid(self) -> np.ndarray:
        return self.row_grid

    @property
    def vtheta_grid(self) -> np.ndarray:
        return self.col_grid


def grid_digest(*grids: np.ndarray) -> str:
    h = hashlib.blake2b(digest_size=8)
    for g in grids:
        h.update(np.ascontiguousarray(g, dtype="<f8").tobytes())
    return h.hexdigest()


def regularize_rows(raw: np.ndarray, decreasing: bool, tie_step: float) -> np.ndarray:
    """Isotonic projection of every row plus a strict ramp of `tie_step` per cell."""
    ramp = np.arange(raw.shape[1]) * tie_step
    out = np.empty_like(raw)
    for i, row in enumerate(raw):
        iso = isotonic_regression(row, increasing=not decreasing).x
        out[i] = iso - ramp if decreasing else iso + ramp
    deviation = float(np.max(np.abs(out - raw))) if raw.size else 0.0
    logger.debug(f"Monotone regularization moved widths by at most {deviation:.3e}.")
    return out


def match_row(widths: np.ndarray, grid: np.ndarray, measured_width: float, tie_step: float) -> TableMatch:
    """
    Correlative match of a measured width against one table row.

    Differences are mapped into (-pi/2, pi/2) before taking the cosine, so the best score is
    the nearest width; the first (smallest grid value) wins ties.
    """
    if not (math.isfinite(measured_width) and measured_width > 0):
        raise InvalidArgumentError(f"Measured width must be positive, got {measured_width}")
    scale = max(float(np.max(np.abs(widths))), measured_width)
    delta = (math.pi / 2) * (measured_width - widths) / scale
    idx = int(np.argmin(np.abs(delta)))
    tolerance = (widths.shape[0] + 1) * tie_step
    extrapolated = bool(measured_width < widths.min() - tolerance or measured_width > widths.max() + tolerance)

    lo = hi = idx
    while lo > 0 and abs(widths[lo - 1] - widths[idx]) <= tolerance:
        lo -= 1
    while hi < widths.shape[0] - 1 and abs(widths[hi + 1] - widths[idx]) <= tolerance:
        hi += 1
    return TableMatch(float(grid[idx]), idx, math.cos(float(delta[idx])), extrapolated,
                      (float(grid[lo]), float(grid[hi])))


def nearest_index(grid: np.ndarray, value: float) -> int:
    return int(np.argmin(np.abs(grid - value)))


def build_angle_table(cfg: ArrayConfig, angle_grid: np.ndarray, range_grid: np.ndarray,
                      oversample_a: int = 4, oversample_d: int = 4) -> AngleRangeTable:
    angle_grid = np.asarray(angle_grid, dtype=float)
    range_grid = np.asarray(range_grid, dtype=float)
    if angle_grid.size == 0 or range_grid.size == 0:
        raise InvalidArgumentError("Lookup-table grids must be non-empty.")

    # a single symbol gives the same angular profile as the full static CPI
    static_cfg = replace(cfg, num_symbols=1)
    raw = np.empty((angle_grid.size, range_grid.size))
    offset = np.empty_like(raw)
    logger.info(f"Building angle-range table: {angle_grid.size} angles x {range_grid.size} ranges.")
    for i, theta in enumerate(angle_grid):
        for j, r in enumerate(range_grid):
            try:
                admap = ad_transform(clean_signal(static_cfg, TargetState(theta, r)), oversample_a, oversample_d)
                spread = angular_spread(admap)
                raw[i, j] = spread.width
                offset[i, j] = spread.center - math.sin(theta)
            except (DegenerateInputError, InvalidArgumentError) as e:
                raise TableBuildError(
                    f"Angle-range table cell ({i}, {j}) at theta={theta:.6f} rad, r={r:.4f} m failed: {e}",
                    cell=(i, j),
                ) from e

    tie_step = TIE_FRACTION * 2.0 / (oversample_a * cfg.num_elements)
    width = regularize_rows(raw, decreasing=True, tie_step=tie_step)
    logger.info("Angle-range table built.")
    return AngleRangeTable(KIND_ANGLE, angle_grid, range_grid, width, raw, offset, cfg.fingerprint(),
                           int(oversample_a), int(oversample_d), tie_step)


def build_velocity_table(cfg: ArrayConfig, theta: float, target_range: float, vr_grid: np.ndarray,
                         vtheta_grid: np.ndarray, oversample_a: int = 4, oversample_d: int = 4) -> VelocityTable:
    vr_grid = np.asarray(vr_grid, dtype=float)
    vtheta_grid = np.asarray(vtheta_grid, dtype=float)
    if vr_grid.size == 0 or vtheta_grid.size == 0:
        raise InvalidArgumentError("Lookup-table grids must be non-empty.")
    if not (math.isfinite(theta) and math.isfinite(target_range)):
        raise InvalidArgumentError(f"Conditioning location must be finite, got ({theta}, {target_range})")

    raw = np.empty((vr_grid.size, vtheta_grid.size))
    offset = np.empty_like(raw)
    logger.info(
        f"Building velocity table at theta={theta:.4f} rad, r={target_range:.3f} m: "
        f"{vr_grid.size} x {vtheta_grid.size} cells."
    )
    for i, v_r in enumerate(vr_grid):
        for j, v_theta in enumerate(vtheta_grid):
            try:
                target = TargetState(theta, target_range, v_r, v_theta)
                admap = ad_transform(clean_signal(cfg, target), oversample_a, oversample_d)
                spread = doppler_spread(admap)
                raw[i, j] = spread.width
                offset[i, j] = spread.center - float(velocity_to_doppler(cfg, v_r))
            except (DegenerateInputError, InvalidArgumentError) as e:
                raise TableBuildError(
                    f"Velocity table cell ({i}, {j}) at v_r={v_r:.3f}, v_theta={v_theta:.3f} failed: {e}",
                    cell=(i, j),
                ) from e

    tie_step = TIE_FRACTION * 2.0 / (oversample_d * cfg.num_symbols)
    width = regularize_rows(raw, decreasing=False, tie_step=tie_step)
    return VelocityTable(KIND_VELOCITY, vr_grid, vtheta_grid, width, raw, offset, cfg.fingerprint(),
                         int(oversample_a), int(oversample_d), tie_step, (float(theta), float(target_range)))


def match_range(table: AngleRangeTable, theta: float, measured_width: float) -> TableMatch:
    return table._match(nearest_index(table.angle_grid, theta), measured_width)


def match_transverse(table: VelocityTable, v_r: float, measured_width: float) -> TableMatch:
    return table._match(nearest_index(table.vr_grid, v_r), measured_width)


def write_table(path: str, table: LookupTable) -> None:
    cond = table.conditioning if table.conditioning is not None else (math.nan, math.nan)
    header = _HEADER.pack(TABLE_MAGIC, TABLE_VERSION, table.kind, table.row_grid.size, table.col_grid.size,
                          table.fingerprint, table.oversample_a, table.oversample_d, table.tie_step,
                          cond[0], cond[1])
    with open(path, "wb") as f:
        f.write(header)
        for arr in (table.row_grid, table.col_grid, table.width, table.raw_width, table.center_offset):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    logger.debug(f"Lookup table (kind {table.kind}) written to '{path}'.")


def read_table(path: str) -> LookupTable:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FileFormatError(f"'{path}' is too short to be a lookup-table file.")
    (magic, version, kind, rows, cols, fingerprint, os_a, os_d,
     tie_step, cond_theta, cond_range) = _HEADER.unpack_from(raw)
    if magic != TABLE_MAGIC:
        raise FileFormatError(f"'{path}' has magic {magic!r}, expected {TABLE_MAGIC!r}.")
    if version != TABLE_VERSION:
        raise FileFormatError(f"'{path}' has unsupported table version {version}.")
    if kind not in (KIND_ANGLE, KIND_VELOCITY):
        raise FileFormatError(f"'{path}' has unknown table kind {kind}.")
    expected = _HEADER.size + 8 * (rows + cols + 3 * rows * cols)
    if len(raw) != expected:
        raise FileFormatError(f"'{path}' holds {len(raw)} bytes, expected {expected}.")

    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(float)
    row_grid = values[:rows]
    col_grid = values[rows:rows + cols]
    width, raw_width, center_offset = values[rows + cols:].reshape(3, rows, cols)
    if kind == KIND_ANGLE:
        return AngleRangeTable(kind, row_grid, col_grid, width, raw_width, center_offset, fingerprint,
                               os_a, os_d, tie_step)
    return VelocityTable(kind, row_grid, col_grid, width, raw_width, center_offset, fingerprint,
                         os_a, os_d, tie_step, (cond_theta, cond_range))


def export_table_csv(path: str, table: LookupTable) -> None:
    header = ["theta_rad", "range_m"] if table.kind == KIND_ANGLE else ["v_r", "v_theta"]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header + ["width", "raw_width", "center_offset"])
        for i, row_value in enumerate(table.row_grid):
            for j, col_value in enumerate(table.col_grid):
                writer.writerow([f"{row_value:.10g}", f"{col_value:.10g}",
                                 f"{table.width[i, j]:.17g}", f"{table.raw_width[i, j]:.17g}",
                                 f"{table.center_offset[i, j]:.17g}"])
    logger.info(f"Lookup table exported to '{path}'.")
