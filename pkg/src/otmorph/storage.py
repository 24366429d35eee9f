"""Bit-exact field persistence: raw little-endian float64 plus a JSON sidecar."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ExportError, IngestionError

ORDERING = "slice-major (k), then row-major (j along y, i along x), then component"


def save_array(directory, name: str, values: np.ndarray, **meta) -> Path:
    """Write ``<name>.f64`` and ``<name>.json``; returns the data path."""
    directory = Path(directory)
    data = np.ascontiguousarray(values, dtype="<f8")
    raw = data.tobytes()
    path = directory / f"{name}.f64"
    sidecar = {
        "shape": list(data.shape),
        "dtype": "<f8",
        "ordering": ORDERING,
        "sha256": hashlib.sha256(raw).hexdigest(),
        **meta,
    }
    try:
        path.write_bytes(raw)
        (directory / f"{name}.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def load_array(directory, name: str) -> tuple[np.ndarray, dict, bool]:
    """Return ``(values, sidecar, checksum_ok)``."""
    directory = Path(directory)
    path = directory / f"{name}.f64"
    try:
        meta = json.loads((directory / f"{name}.json").read_text())
        raw = path.read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot read stored field {name!r}: {exc}", path) from exc
    shape = tuple(meta["shape"])
    if len(raw) != 8 * int(np.prod(shape)):
        raise IngestionError(
            f"stored field {name!r} has {len(raw)} bytes, expected {8 * int(np.prod(shape))}", path
        )
    ok = hashlib.sha256(raw).hexdigest() == meta.get("sha256")
    values = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)
    return values, meta, ok
