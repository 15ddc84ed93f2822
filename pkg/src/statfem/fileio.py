"""CSV and JSON readers/writers for observations and plot-ready field tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import StatFEMError
from .inference import ObservationSet

AXES = "xyz"


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise StatFEMError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise StatFEMError(f"{path}: invalid JSON ({exc})") from exc


def _fmt(x):
    return repr(float(x))


def write_observations(obs: ObservationSet, path) -> Path:
    """One row per sensor component: ``sensor_id,x[,y],component,read_0..read_{n_o-1}``."""
    path = Path(path)
    dim, nc = obs.coords.shape[1], obs.n_components
    header = ["sensor_id", *AXES[:dim], "component"] + [f"read_{i}" for i in range(obs.n_o)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in range(obs.n_sensors):
            for c in range(nc):
                w.writerow([s, *map(_fmt, obs.coords[s]), c, *map(_fmt, obs.Y[s * nc + c])])
    return path


def read_observations(path, sigma_e: float) -> ObservationSet:
    """Parse an observation CSV. ``H`` is left unset; build it from a mesh."""
    path = Path(path)
    if not path.exists():
        raise StatFEMError(f"observation file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise StatFEMError(f"{path}: empty observation file")
    header = rows[0]
    try:
        ci = header.index("component")
    except ValueError:
        raise StatFEMError(f"{path}: header lacks a 'component' column") from None
    dim = ci - 1
    data = rows[1:]
    try:
        sid = np.array([int(r[0]) for r in data])
        comp = np.array([int(r[ci]) for r in data])
        xy = np.array([[float(v) for v in r[1:ci]] for r in data]).reshape(len(data), dim)
        Y = np.array([[float(v) for v in r[ci + 1:]] for r in data])
    except (ValueError, IndexError) as exc:
        raise StatFEMError(f"{path}: malformed row ({exc})") from exc
    nc = int(comp.max()) + 1
    n_s = int(sid.max()) + 1
    if len(data) != n_s * nc or np.any(sid != np.repeat(np.arange(n_s), nc)) \
            or np.any(comp != np.tile(np.arange(nc), n_s)):
        raise StatFEMError(f"{path}: rows must be ordered by sensor then component")
    return ObservationSet(xy[::nc], None, Y, sigma_e, nc)


def write_nodal_table(path, coords, columns: dict, id_name="node", n_components=None) -> Path:
    """Long-format table: one row per (point, component) with the given value columns.

    ``columns`` maps names to arrays of length ``n_points * n_components``
    ordered point-major.
    """
    path = Path(path)
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    n, dim = coords.shape
    nc = n_components or dim
    names = list(columns)
    vals = [np.asarray(columns[k], dtype=float).reshape(n * nc) for k in names]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([id_name, *AXES[:dim], "component", *names])
        for p in range(n):
            for c in range(nc):
                k = p * nc + c
                w.writerow([p, *map(_fmt, coords[p]), c, *(_fmt(v[k]) for v in vals)])
    return path


def write_matrix_long(path, M) -> Path:
    """Matrix as ``row,col,value`` records (heatmap-ready)."""
    path = Path(path)
    M = np.asarray(M, dtype=float)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                w.writerow([i, j, _fmt(M[i, j])])
    return path
