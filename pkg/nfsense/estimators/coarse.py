"""
DFT-stage coarse estimation.

Angle and radial velocity come from the medians of the 3-dB angular and Doppler spreads;
range and transverse velocity come from matching the spread widths against the lookup tables.

The spread median of a close, off-broadside source is pulled off its direction by the
array curvature, and transverse motion shifts it further by m_bar * beta. The angle table
records the first offset per cell; the second is undone with the signed transverse velocity,
whose sign is read from the tilt of the angle-Doppler ridge.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from PyQt6.QtCore import QMutex, QMutexLocker

from ..analysis.spectrum import (
    SpreadMeasurement,
    ad_transform,
    anchored_theta,
    angular_spread,
    doppler_spread,
    doppler_to_velocity,
    ridge_slope,
    velocity_from_slope,
)
from ..core.errors import (
    ConfigurationError,
    DegenerateInputError,
    EstimationFailedError,
    FileFormatError,
)
from ..core.table_store import TableStore
from ..model.geometry import ArrayConfig, TargetState, ebrd_bound
from ..model.synth import SpaceTimeSnapshot
from .tables import (
    AngleRangeTable,
    TableGrids,
    TableMatch,
    VelocityTable,
    build_angle_table,
    build_velocity_table,
    grid_digest,
    match_range,
    match_transverse,
    nearest_index,
    read_table,
    write_table,
)

logger = logging.getLogger("nfsense.estimators.coarse")


@dataclass(frozen=True)
class CoarseEstimate:
    """
    Coarse values plus the spreads and table matches they came from.

    `v_theta` is the table magnitude; the ridge tilt only supplies `ridge_velocity`, and the
    sign is settled by the refinement stage. `apparent_theta` is the direction the array sees
    through transverse motion, where the location scans start.
    """
    theta: float
    range: float
    v_r: float
    v_theta: float
    angular_spread: SpreadMeasurement | None = None
    doppler_spread: SpreadMeasurement | None = None
    range_match: TableMatch | None = None
    vtheta_match: TableMatch | None = None
    theta_step: float = 0.0
    range_step: float = 0.0
    vr_step: float = 0.0
    vtheta_step: float = 0.0
    flags: frozenset = frozenset()
    apparent_theta: float | None = None
    ridge_velocity: float = 0.0

    @property
    def signed_v_theta(self) -> float:
        """Table magnitude of v_theta carrying the sign of the ridge tilt."""
        return -self.v_theta if self.ridge_velocity < 0 else self.v_theta

    def as_target(self) -> TargetState:
        return TargetState(self.theta, self.range, self.v_r, self.signed_v_theta)


class LookupTables:
    """
    The angle-range table plus a cache of velocity tables keyed by conditioning cell.

    Velocity tables are built lazily at the angle/range grid point nearest the coarse
    location and reused afterwards, optionally through a TableStore on disk.
    """

    def __init__(self, cfg: ArrayConfig, angle_table: AngleRangeTable, grids: TableGrids,
                 store: TableStore | None = None):
        if angle_table.fingerprint != cfg.fingerprint():
            raise ConfigurationError("The angle-range table was built for a different array configuration.")
        self.cfg = cfg
        self.angle_table = angle_table
        self.grids = grids
        self.store = store
        self._velocity_tables: dict[tuple[int, int], VelocityTable] = {}
        self._mutex = QMutex()
        logger.debug(f"LookupTables initialized (fingerprint {self.fingerprint:016x}).")

    @property
    def fingerprint(self) -> int:
        return self.angle_table.fingerprint

    @property
    def oversample_a(self) -> int:
        return self.angle_table.oversample_a

    @property
    def oversample_d(self) -> int:
        return self.angle_table.oversample_d

    @classmethod
    def build(cls, cfg: ArrayConfig, grids: TableGrids | None = None, oversample_a: int = 4,
              oversample_d: int = 4, store: TableStore | None = None) -> "LookupTables":
        grids = grids or TableGrids()
        angles, ranges = grids.angles(), grids.ranges(cfg)
        key = f"ka-{cfg.fingerprint():016x}-{oversample_a}x{oversample_d}-{grid_digest(angles, ranges)}"
        table = _load_cached(store, key)
        if table is None:
            table = build_angle_table(cfg, angles, ranges, oversample_a, oversample_d)
            _save_cached(store, key, table)
        return cls(cfg, table, grids, store)

    def conditioning_cell(self, theta: float, target_range: float) -> tuple[int, int]:
        return (nearest_index(self.angle_table.angle_grid, theta),
                nearest_index(self.angle_table.range_grid, target_range))

    def velocity_table(self, theta: float, target_range: float) -> VelocityTable:
        cell = self.conditioning_cell(theta, target_range)
        with QMutexLocker(self._mutex):
            table = self._velocity_tables.get(cell)
            if table is not None:
                return table
            cond_theta = float(self.angle_table.angle_grid[cell[0]])
            cond_range = float(self.angle_table.range_grid[cell[1]])
            vr_grid = self.grids.radial_velocities()
            vtheta_grid = self.grids.transverse_velocities()
            key = (f"kv-{self.fingerprint:016x}-{self.oversample_a}x{self.oversample_d}-"
                   f"{grid_digest(vr_grid, vtheta_grid, np.array([cond_theta, cond_range]))}")
            table = _load_cached(self.store, key)
            if table is None:
                table = build_velocity_table(self.cfg, cond_theta, cond_range, vr_grid, vtheta_grid,
                                             self.oversample_a, self.oversample_d)
                _save_cached(self.store, key, table)
            self._velocity_tables[cell] = table
            return table


def _load_cached(store: TableStore | None, key: str):
    if store is None:
        return None
    path = store.lookup(key)
    if path is None:
        return None
    try:
        table = read_table(path)
        logger.debug(f"Loaded cached table '{key}'.")
        return table
    except (OSError, FileFormatError) as e:
        logger.warning(f"Cached table '{key}' is unreadable ({e}); rebuilding.")
        store.forget(key)
        return None


def _save_cached(store: TableStore | None, key: str, table) -> None:
    if store is None:
        return
    try:
        write_table(store.path_for(key), table)
    except OSError as e:
        logger.error(f"Could not write table '{key}': {e}", exc_info=True)
        return
    ok, message = store.register(key, table.kind, table.fingerprint)
    if not ok:
        logger.warning(message)


def coarse_angle(spread: SpreadMeasurement) -> float:
    return math.asin(min(1.0, max(-1.0, spread.center)))


def coarse_radial_velocity(spread: SpreadMeasurement, cfg: ArrayConfig) -> float:
    return float(doppler_to_velocity(cfg, spread.center))


def _local_step(grid: np.ndarray, index: int) -> float:
    if grid.size < 2:
        return 0.0
    gaps = []
    if index > 0:
        gaps.append(grid[index] - grid[index - 1])
    if index < grid.size - 1:
        gaps.append(grid[index + 1] - grid[index])
    return float(max(abs(g) for g in gaps))


def _pick_magnitude(match: TableMatch, grid: np.ndarray, ridge_velocity: float) -> float:
    """Grid value inside the matched plateau closest to the ridge magnitude, else the match itself."""
    lo, hi = match.span
    magnitude = abs(ridge_velocity)
    if not lo < hi or not lo <= magnitude <= hi:
        return match.value
    inside = grid[(grid >= lo) & (grid <= hi)]
    return float(inside[nearest_index(inside, magnitude)])


def estimate_coarse(snapshot: SpaceTimeSnapshot, tables: LookupTables) -> CoarseEstimate:
    cfg = snapshot.config
    if cfg.fingerprint() != tables.fingerprint:
        raise ConfigurationError(
            f"Lookup tables (fingerprint {tables.fingerprint:016x}) do not match the snapshot's "
            f"array configuration ({cfg.fingerprint():016x})."
        )

    admap = ad_transform(snapshot, tables.oversample_a, tables.oversample_d)
    try:
        angular = angular_spread(admap)
        doppler = doppler_spread(admap)
    except DegenerateInputError as e:
        raise EstimationFailedError(
            f"Coarse estimation failed: {e}",
            diagnostics={"peak_power": admap.peak_power, "total_power": admap.total_power},
        ) from e

    raw_theta = coarse_angle(angular)
    v_r = coarse_radial_velocity(doppler, cfg)
    range_match = match_range(tables.angle_table, raw_theta, angular.width)
    vtable = tables.velocity_table(raw_theta, range_match.value)
    vtheta_match = match_transverse(vtable, v_r, doppler.width)

    ridge_velocity = velocity_from_slope(cfg, ridge_slope(admap, angular), raw_theta)
    v_theta = _pick_magnitude(vtheta_match, vtable.vtheta_grid, ridge_velocity)
    signed = -v_theta if ridge_velocity < 0 else v_theta

    sin_app = tables.angle_table.debias_sin(angular.center, range_match.value)
    theta = anchored_theta(cfg, sin_app, range_match.value, signed)

    flags = set()
    if range_match.extrapolated:
        flags.add("range_extrapolated")
        logger.warning(f"Angular width {angular.width:.5f} lies outside the table row; range pinned at {range_match.value:.3f} m.")
    if vtheta_match.extrapolated:
        flags.add("vtheta_extrapolated")
        logger.warning(f"Doppler width {doppler.width:.5f} lies outside the table row; v_theta pinned at {vtheta_match.value:.3f} m/s.")
    if range_match.value >= ebrd_bound(cfg, theta):
        flags.add("outside_ebrd")

    estimate = CoarseEstimate(
        theta=theta,
        range=range_match.value,
        v_r=v_r,
        v_theta=v_theta,
        angular_spread=angular,
        doppler_spread=doppler,
        range_match=range_match,
        vtheta_match=vtheta_match,
        theta_step=admap.angle_step / math.cos(theta),
        range_step=_local_step(tables.angle_table.range_grid, range_match.index),
        vr_step=float(doppler_to_velocity(cfg, admap.doppler_step)),
        vtheta_step=_local_step(vtable.vtheta_grid, nearest_index(vtable.vtheta_grid, v_theta)),
        flags=frozenset(flags),
        apparent_theta=math.asin(sin_app),
        ridge_velocity=ridge_velocity,
    )
    logger.debug(
        f"Coarse estimate: theta={theta:.5f} rad (spread median {raw_theta:.5f}), r={estimate.range:.3f} m, "
        f"v_r={v_r:.3f} m/s, |v_theta|={v_theta:.3f} m/s, ridge v_theta={ridge_velocity:.2f} m/s, "
        f"flags={sorted(flags)}"
    )
    return estimate
