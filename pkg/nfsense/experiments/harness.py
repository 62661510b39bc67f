"""
Monte-Carlo NMSE-versus-SNR experiments.

Every trial draws one noise realization and one calibration profile from its own seed,
synthesizes a perfectly calibrated (PC) and a calibration-error (CE) snapshot from them, and
runs each selected method on the matching snapshot. Trials are independent; results are
reduced in (snr, iteration) order so reports do not depend on scheduling.
"""
import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from functools import partial

import numpy as np
from PyQt6.QtCore import QSettings
from tqdm import tqdm

from ..core.config_service import ConfigService
from ..core.errors import ConfigurationError, InvalidArgumentError
from ..core.table_store import TableStore
from ..core.trial_worker import run_jobs
from ..estimators.base_estimator import EstimationContext
from ..estimators.baselines import GradientConfig, build_polar_codebook
from ..estimators.coarse import LookupTables
from ..estimators.music import RefinementConfig
from ..estimators.registry import EstimatorRegistry, run_estimator
from ..estimators.results import PARAMETER_NAMES, EstimationResult
from ..estimators.tables import TableGrids
from ..model.geometry import (
    ArrayConfig,
    CalibrationProfile,
    TargetState,
    ebrd_bound,
    sample_calibration,
    target_snr,
)
from ..model.synth import (
    SpaceTimeSnapshot,
    clean_signal,
    complex_gaussian,
    processing_gain_db,
    snr_to_sigma2,
)

logger = logging.getLogger("nfsense.experiments.harness")

NMSE_FLOOR_DB = -200.0
NMSE_CEILING_DB = 200.0
CSV_COLUMNS = ("method", "parameter", "snr_db_processed", "snr_db_element", "nmse_db", "trials", "failures")
DEFAULT_METHODS = ("DFT-PC", "DFT-CE", "MUSIC-PC", "MUSIC-CE", "ML", "POLAR")
TABLE_METHODS = {"DFT-PC", "DFT-CE", "MUSIC-PC", "MUSIC-CE", "ML-DFT"}

CONFIG_SCHEMA = {
    "array": {"num_elements", "carrier_freq", "symbol_rate", "num_symbols", "element_spacing",
              "two_way_spatial", "index_convention"},
    "target": {"theta", "range", "v_r", "v_theta"},
    "noise": {"snr_db", "xi_t", "transmit_power", "antenna_gain", "rcs", "calibration",
              "max_phase", "max_amp_db"},
    "methods": {"methods", "iterations", "seed", "workers", "oversample_a", "oversample_d", "grid_points",
                "passes", "window_steps", "energy_fraction", "ml_max_iters", "ml_restarts", "polar_points"},
    "grids": {"angle_points", "angle_sin_max", "range_points", "range_min", "range_max", "vr_points",
              "vr_max", "vtheta_points", "vtheta_max"},
}


@dataclass(frozen=True)
class RadarEquation:
    """Derives the echo power xi_t from the monostatic radar equation."""
    transmit_power: float
    antenna_gain: float
    rcs: float

    def xi_t(self, cfg: ArrayConfig, target_range: float) -> float:
        return target_snr(self.transmit_power, self.antenna_gain, cfg.wavelength, self.rcs, target_range)


@dataclass(frozen=True)
class CalibrationBounds:
    enabled: bool = True
    max_phase: float = math.pi / 36
    max_amp_db: float = 1.0

    def __post_init__(self):
        if self.max_phase < 0 or self.max_amp_db < 0:
            raise InvalidArgumentError("Calibration bounds must be non-negative.")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything a Monte-Carlo sweep needs.

    The default target is the evaluation scenario (15 degrees, r_RD/50, 10 m/s, 8 m/s). SNR values
    are per element; reports add the processing gain of N*M samples.
    """
    array: ArrayConfig = field(default_factory=ArrayConfig)
    target: TargetState | None = None
    snr_db: tuple[float, ...] = (-40.0, -30.0, -20.0, -10.0)
    iterations: int = 1000
    seed: int = 0
    xi_t: float = 1.0
    radar: RadarEquation | None = None
    calibration: CalibrationBounds = field(default_factory=CalibrationBounds)
    methods: tuple[str, ...] = DEFAULT_METHODS
    oversample_a: int = 4
    oversample_d: int = 4
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    gradient: GradientConfig = field(default_factory=GradientConfig)
    grids: TableGrids = field(default_factory=TableGrids)
    polar_points: int = 5000
    workers: int = 1

    def __post_init__(self):
        if self.target is None:
            target = TargetState(math.pi / 12, self.array.rayleigh_distance / 50, 10.0, 8.0)
            object.__setattr__(self, "target", target)
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.iterations < 1:
            raise InvalidArgumentError(f"iterations must be >= 1, got {self.iterations}")
        if not self.snr_db:
            raise InvalidArgumentError("The SNR list must not be empty.")
        if not self.methods:
            raise InvalidArgumentError("At least one method must be selected.")
        if self.workers < 1:
            raise InvalidArgumentError(f"workers must be >= 1, got {self.workers}")
        if not (math.isfinite(self.xi_t) and self.xi_t > 0):
            raise InvalidArgumentError(f"xi_t must be positive, got {self.xi_t}")

    @property
    def signal_power(self) -> float:
        """xi_t from the radar equation when configured, otherwise the direct override."""
        if self.radar is not None:
            return self.radar.xi_t(self.array, self.target.range)
        return self.xi_t

    def noise_variance(self, snr_db: float) -> float:
        return snr_to_sigma2(self.signal_power / self.array.num_elements, snr_db)

    def echo(self) -> list[str]:
        """Deterministic key = value lines describing the run."""
        lines = []
        for f in fields(self.array):
            lines.append(f"array.{f.name} = {getattr(self.array, f.name)!r}")
        for name in ("theta", "range", "v_r", "v_theta"):
            lines.append(f"target.{name} = {getattr(self.target, name)!r}")
        lines.append(f"noise.snr_db = {', '.join(repr(s) for s in self.snr_db)}")
        lines.append(f"noise.signal_power = {self.signal_power!r}")
        lines.append(f"noise.calibration = {self.calibration!r}")
        lines.append(f"methods = {', '.join(self.methods)}")
        lines.append(f"iterations = {self.iterations}")
        lines.append(f"seed = {self.seed}")
        lines.append(f"oversampling = {self.oversample_a}x{self.oversample_d}")
        lines.append(f"refinement = {self.refinement!r}")
        lines.append(f"gradient = {self.gradient!r}")
        lines.append(f"grids = {self.grids!r}")
        lines.append(f"polar_points = {self.polar_points}")
        lines.append(f"processing_gain_db = {processing_gain_db(self.array):.6f}")
        return lines


def load_experiment_config(path: str) -> ExperimentConfig:
    service = ConfigService(path, CONFIG_SCHEMA)
    ok, message = service.load()
    if not ok:
        raise ConfigurationError(message)

    array_kwargs = {}
    for key in ("num_elements", "num_symbols"):
        if service.has("array", key):
            array_kwargs[key] = service.integer("array", key)
    for key in ("carrier_freq", "symbol_rate", "element_spacing"):
        if service.has("array", key):
            array_kwargs[key] = service.number("array", key)
    if service.has("array", "two_way_spatial"):
        array_kwargs["two_way_spatial"] = service.boolean("array", "two_way_spatial")
    if service.has("array", "index_convention"):
        array_kwargs["index_convention"] = service.text("array", "index_convention")
    try:
        array = ArrayConfig(**array_kwargs)
    except InvalidArgumentError as e:
        raise ConfigurationError(f"[array]: {e}") from None
    names = {"rd": array.rayleigh_distance, "ebrd": ebrd_bound(array, 0.0)}

    defaults = ExperimentConfig(array=array)
    try:
        target = TargetState(
            service.number("target", "theta", defaults.target.theta, names),
            service.number("target", "range", defaults.target.range, names),
            service.number("target", "v_r", defaults.target.v_r, names),
            service.number("target", "v_theta", defaults.target.v_theta, names),
        )
    except InvalidArgumentError as e:
        raise ConfigurationError(f"[target]: {e}") from None

    radar_keys = ("transmit_power", "antenna_gain", "rcs")
    present = [k for k in radar_keys if service.has("noise", k)]
    radar = None
    if present and len(present) != len(radar_keys):
        raise ConfigurationError(f"[noise] needs all of {', '.join(radar_keys)} for the radar equation, got {present}")
    if present:
        radar = RadarEquation(*(service.number("noise", k, names=names) for k in radar_keys))

    refinement_kwargs = {}
    for key, caster in (("grid_points", service.integer), ("passes", service.integer),
                        ("window_steps", service.number), ("energy_fraction", service.number)):
        if service.has("methods", key):
            refinement_kwargs[key] = caster("methods", key)
    gradient_kwargs = {}
    if service.has("methods", "ml_max_iters"):
        gradient_kwargs["max_iters"] = service.integer("methods", "ml_max_iters")
    if service.has("methods", "ml_restarts"):
        gradient_kwargs["restarts"] = service.integer("methods", "ml_restarts")

    grid_kwargs = {}
    for key in ("angle_points", "range_points", "vr_points", "vtheta_points"):
        if service.has("grids", key):
            grid_kwargs[key] = service.integer("grids", key)
    for key in ("angle_sin_max", "range_min", "range_max", "vr_max", "vtheta_max"):
        if service.has("grids", key):
            grid_kwargs[key] = service.number("grids", key, names=names)

    try:
        econfig = ExperimentConfig(
            array=array,
            target=target,
            snr_db=tuple(service.number_list("noise", "snr_db", list(defaults.snr_db))),
            iterations=service.integer("methods", "iterations", defaults.iterations),
            seed=service.integer("methods", "seed", defaults.seed),
            xi_t=service.number("noise", "xi_t", defaults.xi_t, names),
            radar=radar,
            calibration=CalibrationBounds(
                service.boolean("noise", "calibration", True),
                service.number("noise", "max_phase", math.pi / 36),
                service.number("noise", "max_amp_db", 1.0),
            ),
            methods=tuple(service.text_list("methods", "methods", list(defaults.methods))),
            oversample_a=service.integer("methods", "oversample_a", defaults.oversample_a),
            oversample_d=service.integer("methods", "oversample_d", defaults.oversample_d),
            refinement=RefinementConfig(**refinement_kwargs),
            gradient=GradientConfig(**gradient_kwargs),
            grids=TableGrids(**grid_kwargs),
            polar_points=service.integer("methods", "polar_points", defaults.polar_points),
            workers=service.integer("methods", "workers", defaults.workers),
        )
    except InvalidArgumentError as e:
        raise ConfigurationError(f"Invalid experiment config '{path}': {e}") from None
    EstimatorRegistry.default().resolve(econfig.methods)
    return econfig


@dataclass
class SweepResources:
    """Per-sweep shared state: estimators, lookup tables and codebooks built once."""
    registry: EstimatorRegistry
    estimators: list
    tables: LookupTables | None = None
    codebook: object | None = None
    velocity_grids: tuple[np.ndarray, np.ndarray] | None = None


def prepare_resources(econfig: ExperimentConfig, store: TableStore | None = None) -> SweepResources:
    registry = EstimatorRegistry.default()
    estimators = registry.resolve(econfig.methods)
    names = {e.method_name() for e in estimators}
    resources = SweepResources(registry, estimators)
    if names & TABLE_METHODS:
        resources.tables = LookupTables.build(econfig.array, econfig.grids, econfig.oversample_a,
                                              econfig.oversample_d, store)
    if "POLAR" in names:
        resources.codebook = build_polar_codebook(econfig.array, econfig.polar_points,
                                                  econfig.grids.angle_sin_max)
        vtheta_max = econfig.grids.vtheta_max
        resources.velocity_grids = (
            econfig.grids.radial_velocities(),
            np.linspace(-vtheta_max, vtheta_max, 2 * econfig.grids.vtheta_points - 1),
        )
    return resources


@dataclass(frozen=True)
class TrialOutcome:
    results: dict[str, EstimationResult | None]
    messages: dict[str, str]
    runtimes: dict[str, float]
    calibration: CalibrationProfile | None = None


def trial_seed(master_seed: int, snr_index: int, iteration: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(snr_index, iteration))


def _child(seed: np.random.SeedSequence, index: int) -> np.random.SeedSequence:
    """Child `index` of `seed`, derived without touching the parent's spawn counter."""
    return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + (index,))


def synthesize_trial(econfig: ExperimentConfig, snr_db: float,
                     seed: np.random.SeedSequence) -> tuple[dict[str, SpaceTimeSnapshot], CalibrationProfile | None]:
    """PC and CE snapshots sharing one noise draw. Both draws happen whatever methods are selected."""
    noise_seq, calib_seq = _child(seed, 0), _child(seed, 1)
    cfg = econfig.array
    xi_t = econfig.signal_power
    sigma2 = econfig.noise_variance(snr_db)
    noise = complex_gaussian(np.random.default_rng(noise_seq), sigma2, (cfg.num_elements, cfg.num_symbols))
    bounds = econfig.calibration
    profile = sample_calibration(np.random.default_rng(calib_seq), bounds.max_phase, bounds.max_amp_db,
                                 cfg.num_elements)
    clean_pc = clean_signal(cfg, econfig.target, None, xi_t)
    snapshots = {"PC": SpaceTimeSnapshot(clean_pc.data + noise, cfg)}
    if bounds.enabled:
        clean_ce = clean_signal(cfg, econfig.target, profile, xi_t)
        snapshots["CE"] = SpaceTimeSnapshot(clean_ce.data + noise, cfg)
    else:
        snapshots["CE"] = snapshots["PC"]
        profile = None
    return snapshots, profile


def run_trial(econfig: ExperimentConfig, snr_db: float, seed, resources: SweepResources | None = None) -> TrialOutcome:
    """
    One synthesis feeding every selected method. `seed` is an int or a SeedSequence.
    Method failures are recorded as None results and never abort the trial.
    """
    resources = resources or prepare_resources(econfig)
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    snapshots, profile = synthesize_trial(econfig, snr_db, seed)
    method_seq = _child(seed, 2)
    # one stream per registered method, so adding a method never shifts another method's draws
    method_rngs = {name: np.random.default_rng(_child(method_seq, i))
                   for i, name in enumerate(resources.registry.names())}

    cache: dict = {}
    results, messages, runtimes = {}, {}, {}
    for estimator in resources.estimators:
        name = estimator.method_name()
        context = EstimationContext(
            cfg=econfig.array,
            xi_t=econfig.signal_power,
            tables=resources.tables,
            refinement=econfig.refinement,
            gradient=econfig.gradient,
            codebook=resources.codebook,
            velocity_grids=resources.velocity_grids,
            truth=econfig.target,
            rng=method_rngs[name],
            cache=cache,
        )
        started = time.perf_counter()
        result, message = run_estimator(estimator, snapshots[estimator.calibration], context)
        runtimes[name] = time.perf_counter() - started
        results[name] = result
        messages[name] = message
    return TrialOutcome(results, messages, runtimes, profile)


@dataclass(frozen=True)
class NMSEValue:
    db: float
    normalized: bool


def nmse(true_values, estimates) -> NMSEValue:
    """10 log10(sum |x - x_hat|^2 / sum |x|^2), clamped to +-200 dB; plain MSE when every truth is zero."""
    truth = np.asarray(true_values, dtype=float)
    est = np.asarray(estimates, dtype=float)
    if truth.ndim != 1 or truth.size == 0 or truth.shape != est.shape:
        raise InvalidArgumentError(f"nmse needs equal non-empty 1-D inputs, got {truth.shape} and {est.shape}")
    error = float(np.sum((truth - est) ** 2))
    reference = float(np.sum(truth ** 2))
    normalized = reference > 0
    ratio = error / reference if normalized else error / truth.size
    if ratio <= 0:
        return NMSEValue(NMSE_FLOOR_DB, normalized)
    db = 10 * math.log10(ratio) if math.isfinite(ratio) else NMSE_CEILING_DB
    return NMSEValue(min(NMSE_CEILING_DB, max(NMSE_FLOOR_DB, db)), normalized)


def complexity_orders(cfg: ArrayConfig, grid_points: int = 512, iterations: int = 200,
                      polar_points: int = 5000, oversample_a: int = 4, oversample_d: int = 4,
                      velocity_points: int = 31 * 65) -> dict[str, float]:
    """Leading operation counts of each pipeline for one snapshot."""
    n, m = cfg.num_elements, cfg.num_symbols
    k_a, k_d = oversample_a * n, oversample_d * m
    dft = k_a * k_d * math.log2(k_a * k_d)
    return {
        "DFT": dft,
        "MUSIC": dft + n ** 3 + 2 * grid_points * n * n + 6 * grid_points * n * m,
        "ML": iterations * 9 * n * m,
        "POLAR": polar_points * n * m + velocity_points * n * m,
    }


@dataclass
class NMSERow:
    method: str
    parameter: str
    snr_db_processed: float
    snr_db_element: float
    nmse_db: float | None
    trials: int
    failures: int


@dataclass
class NMSEReport:
    """
    Reduced sweep results: one row per method, parameter and SNR, with the config echo
    written as comment lines ahead of the CSV table.
    """
    rows: list[NMSERow]
    config_echo: list[str]
    seed: int
    wall_clock: float = 0.0
    runtimes: dict[str, float] = field(default_factory=dict)
    complexity: dict[str, float] = field(default_factory=dict)

    def row(self, method: str, parameter: str, snr_db_element: float) -> NMSERow | None:
        for r in self.rows:
            if r.method == method and r.parameter.split("[")[0] == parameter and r.snr_db_element == snr_db_element:
                return r
        return None

    def to_csv_text(self) -> str:
        buffer = io.StringIO()
        for line in self.config_echo:
            buffer.write(f"# {line}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([
                r.method,
                r.parameter,
                f"{r.snr_db_processed:.6f}",
                f"{r.snr_db_element:.6f}",
                "" if r.nmse_db is None else f"{r.nmse_db:.6f}",
                r.trials,
                r.failures,
            ])
        return buffer.getvalue()

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            f.write(self.to_csv_text())
        logger.info(f"NMSE report ({len(self.rows)} rows) written to '{path}'.")

    def write_sidecar(self, csv_path: str) -> str:
        path = f"{csv_path}.meta.ini"
        settings = QSettings(path, QSettings.Format.IniFormat)
        settings.setValue("run/seed", self.seed)
        settings.setValue("run/wall_clock_s", self.wall_clock)
        for name, seconds in self.runtimes.items():
            settings.setValue(f"runtime/{name}", seconds)
        for name, ops in self.complexity.items():
            settings.setValue(f"complexity/{name}", ops)
        settings.sync()
        logger.info(f"Run metadata written to '{path}'.")
        return path


def _reduce(econfig: ExperimentConfig, outcomes: list, method_names: list[str]) -> list[NMSERow]:
    gain = processing_gain_db(econfig.array)
    truth = econfig.target
    true_values = {"theta": truth.theta, "range": truth.range, "v_r": truth.v_r, "v_theta": truth.v_theta}
    rows = []
    per_snr = econfig.iterations
    for snr_index, snr in enumerate(econfig.snr_db):
        chunk = outcomes[snr_index * per_snr:(snr_index + 1) * per_snr]
        for method in method_names:
            estimates = {p: [] for p in PARAMETER_NAMES}
            failures = 0
            for status, payload in chunk:
                result = payload.results.get(method) if status == "ok" else None
                if result is None:
                    failures += 1
                    continue
                for p, value in result.parameters().items():
                    estimates[p].append(value)
            for p in PARAMETER_NAMES:
                label, value = p, None
                if estimates[p]:
                    measured = nmse([true_values[p]] * len(estimates[p]), estimates[p])
                    value = measured.db
                    if not measured.normalized:
                        label = f"{p}[mse]"
                elif true_values[p] == 0:
                    label = f"{p}[mse]"
                rows.append(NMSERow(method, label, snr + gain, snr, value, len(chunk), failures))
    return rows


def run_sweep(econfig: ExperimentConfig, store: TableStore | None = None, show_progress: bool = True) -> NMSEReport:
    started = time.perf_counter()
    resources = prepare_resources(econfig, store)
    method_names = [e.method_name() for e in resources.estimators]
    logger.info(
        f"Sweep: {len(econfig.snr_db)} SNR points x {econfig.iterations} trials, methods {method_names}, "
        f"{econfig.workers} worker(s)."
    )

    jobs = []
    for snr_index, snr in enumerate(econfig.snr_db):
        for it in range(econfig.iterations):
            jobs.append(partial(run_trial, econfig, snr, trial_seed(econfig.seed, snr_index, it), resources))

    with tqdm(total=len(jobs), desc="trials", unit="trial", disable=not show_progress) as bar:
        outcomes = run_jobs(jobs, econfig.workers, progress=lambda: bar.update(1))

    crashed = sum(1 for status, _ in outcomes if status != "ok")
    if crashed:
        logger.error(f"{crashed} trial(s) crashed; counted as failures for every method.")

    runtimes = {name: 0.0 for name in method_names}
    for status, payload in outcomes:
        if status == "ok":
            for name, seconds in payload.runtimes.items():
                runtimes[name] += seconds

    report = NMSEReport(
        rows=_reduce(econfig, outcomes, method_names),
        config_echo=econfig.echo(),
        seed=econfig.seed,
        wall_clock=time.perf_counter() - started,
        runtimes=runtimes,
        complexity=complexity_orders(econfig.array, econfig.refinement.grid_points, econfig.gradient.max_iters,
                                     econfig.polar_points, econfig.oversample_a, econfig.oversample_d),
    )
    logger.info(f"Sweep finished in {report.wall_clock:.1f} s.")
    return report


def with_overrides(econfig: ExperimentConfig, seed: int | None = None, methods=None, snr_db=None,
                   iterations: int | None = None, workers: int | None = None) -> ExperimentConfig:
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if methods:
        changes["methods"] = tuple(methods)
    if snr_db:
        changes["snr_db"] = tuple(snr_db)
    if iterations is not None:
        changes["iterations"] = iterations
    if workers is not None:
        changes["workers"] = workers
    try:
        updated = replace(econfig, **changes) if changes else econfig
    except InvalidArgumentError as e:
        raise ConfigurationError(str(e)) from None
    EstimatorRegistry.default().resolve(updated.methods)
    return updated
