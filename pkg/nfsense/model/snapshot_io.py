import csv
import logging
import struct

import numpy as np

from ..core.errors import ConfigurationError, FileFormatError
from .geometry import ArrayConfig
from .synth import SpaceTimeSnapshot

logger = logging.getLogger("nfsense.model.snapshot_io")

SNAPSHOT_MAGIC = b"NFST"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_snapshot(path: str, snapshot: SpaceTimeSnapshot) -> None:
    n, m = snapshot.shape
    payload = np.ascontiguousarray(snapshot.data, dtype="<c16").tobytes()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, n, m))
        f.write(payload)
    logger.info(f"Snapshot {n}x{m} written to '{path}'.")


def read_snapshot(path: str, cfg: ArrayConfig) -> SpaceTimeSnapshot:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FileFormatError(f"'{path}' is too short to be a snapshot file.")
    magic, version, n, m = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise FileFormatError(f"'{path}' has magic {magic!r}, expected {SNAPSHOT_MAGIC!r}.")
    if version != SNAPSHOT_VERSION:
        raise FileFormatError(f"'{path}' has unsupported snapshot version {version}.")
    if (n, m) != (cfg.num_elements, cfg.num_symbols):
        raise ConfigurationError(
            f"Snapshot '{path}' is {n}x{m} but the configuration expects "
            f"{cfg.num_elements}x{cfg.num_symbols}."
        )
    expected = _HEADER.size + 16 * n * m
    if len(raw) != expected:
        raise FileFormatError(f"'{path}' holds {len(raw)} bytes, expected {expected}.")
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(n, m)
    logger.debug(f"Snapshot {n}x{m} read from '{path}'.")
    return SpaceTimeSnapshot(data.astype(complex), cfg)


def format_complex(z: complex) -> str:
    return f"{z.real:.17g}{z.imag:+.17g}j"


def export_snapshot_csv(path: str, snapshot: SpaceTimeSnapshot) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([f"symbol_{m + 1}" for m in range(snapshot.shape[1])])
        for row in snapshot.data:
            writer.writerow([format_complex(z) for z in row])
    logger.info(f"Snapshot CSV written to '{path}'.")
