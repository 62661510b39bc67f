import argparse
import csv
import logging
import math
import os
import sys

import numpy as np

from .analysis.spectrum import ad_transform, export_admap_csv
from .core.app_logger import setup_logger
from .core.errors import (
    ConfigurationError,
    EstimationFailedError,
    FileFormatError,
    InvalidArgumentError,
    NFSenseError,
)
from .core.table_store import TableStore
from .estimators.coarse import LookupTables
from .estimators.tables import KIND_ANGLE, export_table_csv, read_table
from .experiments.harness import (
    ExperimentConfig,
    load_experiment_config,
    prepare_resources,
    run_sweep,
    synthesize_trial,
    trial_seed,
    with_overrides,
)
from .experiments.selftest import run_selftest
from .model.snapshot_io import export_snapshot_csv, read_snapshot, write_snapshot
from .estimators.base_estimator import EstimationContext
from .estimators.registry import run_estimator

logger = logging.getLogger("nfsense.main")

EXIT_OK = 0
EXIT_ESTIMATION_FAILED = 1
EXIT_CONFIG_ERROR = 2


def _split(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [item.strip() for item in text.split(",") if item.strip()]


def _snr_list(text: str | None) -> list[float] | None:
    items = _split(text)
    if items is None:
        return None
    try:
        return [float(item) for item in items]
    except ValueError:
        raise ConfigurationError(f"--snr expects comma-separated numbers, got '{text}'") from None


def _load_config(args) -> ExperimentConfig:
    econfig = load_experiment_config(args.config) if args.config else ExperimentConfig()
    return with_overrides(
        econfig,
        seed=getattr(args, "seed", None),
        methods=_split(getattr(args, "methods", None)),
        snr_db=_snr_list(getattr(args, "snr", None)),
        iterations=getattr(args, "iters", None),
        workers=getattr(args, "workers", None),
    )


def _store(args) -> TableStore | None:
    if getattr(args, "no_cache", False):
        return None
    return TableStore(getattr(args, "cache_dir", None))


def _cmd_simulate(args) -> int:
    econfig = _load_config(args)
    snr = econfig.snr_db[0] if args.snr else math.inf
    snapshots, _ = synthesize_trial(econfig, snr, trial_seed(econfig.seed, 0, 0))
    snapshot = snapshots["CE" if args.ce else "PC"]
    write_snapshot(args.out, snapshot)
    if args.csv:
        export_snapshot_csv(args.csv, snapshot)
    print(f"Wrote {snapshot.shape[0]}x{snapshot.shape[1]} snapshot to {args.out} (per-element SNR {snr} dB).")
    return EXIT_OK


def _cmd_admap(args) -> int:
    econfig = _load_config(args)
    snapshot = read_snapshot(args.snapshot, econfig.array)
    admap = ad_transform(snapshot, args.oversample_a, args.oversample_d)
    export_admap_csv(args.out, admap)
    k, l = admap.peak_bin()
    print(f"Peak at sin(theta)={admap.angle_axis[k]:.6f}, omega={admap.doppler_axis[l]:.6f}; written to {args.out}")
    return EXIT_OK


def _cmd_tables(args) -> int:
    if args.tables_command == "build":
        econfig = _load_config(args)
        store = TableStore(args.out) if args.out else _store(args)
        tables = LookupTables.build(econfig.array, econfig.grids, econfig.oversample_a, econfig.oversample_d, store)
        vtable = tables.velocity_table(econfig.target.theta, econfig.target.range)
        print(f"Angle-range table: {tables.angle_table.width.shape[0]} x {tables.angle_table.width.shape[1]} cells.")
        print(f"Velocity table at {vtable.conditioning}: {vtable.width.shape[0]} x {vtable.width.shape[1]} cells.")
        if store is not None:
            print(f"Cached in {store.base_dir}")
            store.close()
        return EXIT_OK

    table = read_table(args.path)
    kind = "angle-range" if table.kind == KIND_ANGLE else "velocity"
    print(f"{kind} table, {table.width.shape[0]} x {table.width.shape[1]} cells, fingerprint {table.fingerprint:016x}")
    print(f"oversampling {table.oversample_a}x{table.oversample_d}, tie step {table.tie_step:.3e}")
    if table.conditioning is not None:
        print(f"conditioned at theta={table.conditioning[0]:.6f} rad, r={table.conditioning[1]:.4f} m")
    print(f"widths in [{table.width.min():.6g}, {table.width.max():.6g}], "
          f"max regularization shift {np.max(np.abs(table.width - table.raw_width)):.3e}")
    if args.out:
        export_table_csv(args.out, table)
    return EXIT_OK


def _cmd_estimate(args) -> int:
    econfig = _load_config(args)
    snapshot = read_snapshot(args.snapshot, econfig.array)
    store = _store(args)
    resources = prepare_resources(econfig, store)
    rows = []
    cache: dict = {}
    for estimator in resources.estimators:
        context = EstimationContext(
            cfg=econfig.array, xi_t=econfig.signal_power, tables=resources.tables,
            refinement=econfig.refinement, gradient=econfig.gradient, codebook=resources.codebook,
            velocity_grids=resources.velocity_grids, truth=None,
            rng=np.random.default_rng(econfig.seed), cache=cache,
        )
        result, message = run_estimator(estimator, snapshot, context)
        if result is None:
            print(f"{estimator.method_name():10s} FAILED  {message}")
            continue
        flags = ";".join(sorted(result.flags))
        print(f"{result.method:10s} theta={result.theta:+.6f} rad  r={result.range:9.4f} m  "
              f"v_r={result.v_r:+8.4f} m/s  v_theta={result.v_theta:+8.4f} m/s  {flags}")
        rows.append([result.method, f"{result.theta:.10g}", f"{result.range:.10g}",
                     f"{result.v_r:.10g}", f"{result.v_theta:.10g}", flags])
    if store is not None:
        store.close()
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["method", "theta", "range", "v_r", "v_theta", "flags"])
            writer.writerows(rows)
    return EXIT_OK if rows else EXIT_ESTIMATION_FAILED


def _cmd_sweep(args) -> int:
    econfig = _load_config(args)
    store = _store(args)
    report = run_sweep(econfig, store, show_progress=not args.quiet)
    if store is not None:
        store.close()
    report.write_csv(args.out)
    report.write_sidecar(args.out)
    print(f"Wrote {len(report.rows)} rows to {args.out}")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    outcomes = run_selftest()
    for name, ok, message in outcomes:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {message}")
    return EXIT_OK if all(ok for _, ok, _ in outcomes) else EXIT_ESTIMATION_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nfsense", description="Near-field joint angle, range and velocity sensing.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug-level console logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False, out_help="output path"):
        p.add_argument("--config", help="experiment INI file (see README)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=out_required, help=out_help)
        p.add_argument("--cache-dir", help="lookup-table cache directory")
        p.add_argument("--no-cache", action="store_true", help="do not read or write cached tables")

    p = sub.add_parser("simulate", help="synthesize one snapshot file")
    common(p, out_required=True, out_help="snapshot file (.nfst)")
    p.add_argument("--snr", help="per-element SNR in dB (default: noise-free)")
    p.add_argument("--ce", action="store_true", help="apply a random calibration error")
    p.add_argument("--csv", help="also export the snapshot as CSV")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("admap", help="angle-Doppler map of a snapshot as CSV")
    p.add_argument("snapshot")
    common(p, out_required=True, out_help="CSV output")
    p.add_argument("--oversample-a", type=int, default=4)
    p.add_argument("--oversample-d", type=int, default=4)
    p.set_defaults(handler=_cmd_admap)

    p = sub.add_parser("tables", help="build or inspect lookup tables")
    tables_sub = p.add_subparsers(dest="tables_command", required=True)
    build = tables_sub.add_parser("build", help="build and cache the tables for a config")
    common(build, out_help="cache directory for the built tables")
    build.set_defaults(handler=_cmd_tables)
    inspect = tables_sub.add_parser("inspect", help="summarize a table file")
    inspect.add_argument("path")
    inspect.add_argument("--out", help="export the table as CSV")
    inspect.set_defaults(handler=_cmd_tables)

    p = sub.add_parser("estimate", help="run the selected methods on one snapshot")
    p.add_argument("snapshot")
    common(p, out_help="CSV with one row per method")
    p.add_argument("--methods", help="comma-separated method names")
    p.set_defaults(handler=_cmd_estimate)

    p = sub.add_parser("sweep", help="Monte-Carlo NMSE sweep")
    common(p, out_required=True, out_help="NMSE CSV report")
    p.add_argument("--methods", help="comma-separated method names")
    p.add_argument("--snr", help="comma-separated per-element SNRs in dB")
    p.add_argument("--iters", type=int, help="trials per SNR point")
    p.add_argument("--workers", type=int, help="parallel trial workers")
    p.add_argument("--quiet", action="store_true", help="no progress bar")
    p.set_defaults(handler=_cmd_sweep)

    p = sub.add_parser("selftest", help="run the invariant checks")
    p.set_defaults(handler=_cmd_selftest)
    return parser


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG_ERROR

    setup_logger(log_to_file=os.environ.get("NFSENSE_NO_LOG_FILE") is None,
                 console_level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.handler(args)
    except EstimationFailedError as e:
        logger.error(f"Estimation failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ESTIMATION_FAILED
    except (ConfigurationError, InvalidArgumentError, FileFormatError) as e:
        logger.error(f"Configuration error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except OSError as e:
        logger.error(f"I/O error: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except NFSenseError as e:
        logger.critical(f"Unhandled nfsense error: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ESTIMATION_FAILED


def main() -> int:
    return cli(sys.argv[1:])


if __name__ == '__main__':
    sys.exit(main())
