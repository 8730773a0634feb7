"""Atomic CSV / JSON / JSON-header-plus-binary output and the matching readers.

Binary layout: one UTF-8 JSON header line terminated by ``\\n``, followed by
the raw little-endian float64 payload in column-major (Fortran) order. The
header records ``shape``, ``dtype``, ``order``, ``columns`` and any metadata.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile

import numpy as np

from .discretization import Field2D, Grid1D, Grid2D, Profile1D
from .errors import ConfigInvalid


def atomic_write(path: str, data: bytes | str) -> None:
    """Write via a temporary file in the target directory and rename over ``path``."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(x) -> str:
    return format(float(x), ".17g")


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path: str, obj) -> None:
    atomic_write(path, dumps(obj))


def table_csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_table_csv(path: str, header: list[str], rows) -> None:
    atomic_write(path, table_csv(header, rows))


def component_names(m: int) -> list[str]:
    return [f"u{k + 1}" for k in range(m)]


# ------------------------------------------------------------ profiles


def profile_columns(p: Profile1D) -> tuple[list[str], np.ndarray]:
    return ["y"] + component_names(p.m), np.column_stack([p.nodes, p.values])


def field_columns(f: Field2D) -> tuple[list[str], np.ndarray]:
    g = f.grid
    X, Y = np.meshgrid(g.x, g.ygrid.nodes, indexing="ij")
    cols = [X.reshape(-1), Y.reshape(-1)] + [f.values[..., k].reshape(-1) for k in range(f.m)]
    return ["x", "y"] + component_names(f.m), np.column_stack(cols)


def write_array(path_stem: str, header: list[str], data: np.ndarray, fmt: str, meta: dict | None = None) -> str:
    """Write a 2D table as ``stem.csv`` or ``stem.bin`` (JSON header + binary); returns the path."""
    if fmt == "csv":
        path = path_stem + ".csv"
        atomic_write(path, table_csv(header, data.tolist()))
        return path
    if fmt == "json":
        path = path_stem + ".bin"
        arr = np.asarray(data, dtype="<f8")
        head = {"columns": header, "shape": list(arr.shape), "dtype": "<f8", "order": "F", "meta": jsonable(meta or {})}
        atomic_write(path, json.dumps(head, sort_keys=True).encode("utf-8") + b"\n" + arr.tobytes(order="F"))
        return path
    raise ConfigInvalid(f"unknown output format {fmt!r}")


def read_array(path: str) -> tuple[list[str], np.ndarray, dict]:
    """Inverse of write_array for either format."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".bin") or raw[:1] == b"{":
        nl = raw.index(b"\n")
        head = json.loads(raw[:nl].decode("utf-8"))
        arr = np.frombuffer(raw[nl + 1:], dtype=head["dtype"]).reshape(head["shape"], order=head["order"])
        return head["columns"], np.array(arr), head.get("meta", {})
    text = raw.decode("utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ConfigInvalid(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigInvalid(f"{path}: non-numeric entry ({exc})") from None
    return header, data, {}


def read_profile(path: str) -> Profile1D:
    header, data, _ = read_array(path)
    if not header or header[0] != "y" or data.ndim != 2 or data.shape[1] < 2:
        raise ConfigInvalid(f"{path}: expected columns y, u1[, u2 ...]")
    y = data[:, 0]
    n = len(y)
    if n < 3:
        raise ConfigInvalid(f"{path}: need at least 3 nodes")
    grid = Grid1D(float(y[-1]), n)
    if not np.allclose(y, grid.nodes, rtol=0, atol=1e-9 * max(1.0, grid.y_max)) or not np.isclose(y[0], -y[-1]):
        raise ConfigInvalid(f"{path}: nodes must be uniform and symmetric about 0")
    return Profile1D(grid, data[:, 1:].copy())


def read_field(path: str) -> Field2D:
    header, data, _ = read_array(path)
    if header[:2] != ["x", "y"] or data.shape[1] < 3:
        raise ConfigInvalid(f"{path}: expected columns x, y, u1[, u2 ...]")
    xs = np.unique(data[:, 0])
    ys = np.unique(data[:, 1])
    nx, ny, m = len(xs), len(ys), data.shape[1] - 2
    if nx * ny != data.shape[0]:
        raise ConfigInvalid(f"{path}: rows do not form a tensor grid")
    grid = Grid2D(float(xs[-1] - xs[0]), nx, float(ys[-1]), ny)
    order = np.lexsort((data[:, 1], data[:, 0]))
    vals = data[order, 2:].reshape(nx, ny, m)
    return Field2D(grid, vals)
