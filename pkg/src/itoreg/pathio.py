"""Path serialization: columnar text and length-prefixed binary.

Text format: one header line ``dimension dt T eps_max`` followed by one row
per node in [0, T] with d space-separated columns, every float printed with
17 significant digits (which round-trips IEEE doubles exactly).

Binary format, little-endian throughout: two uint64 fields (dimension,
node count), three float64 fields (dt, T, eps_max), then the value matrix
row-major as float64.  Round-trips are bit-exact.

The process-role label is not part of either wire format; readers accept it
as an argument.
"""

from __future__ import annotations

import io
import struct
from os import PathLike
from typing import BinaryIO, TextIO, Union

import numpy as np

from .errors import DataError
from .numerics import sig17
from .pathkit import SamplePath, TimeGrid

_BIN_HEADER = struct.Struct("<QQddd")


def write_path_text(path: SamplePath, dest: Union[str, PathLike, TextIO]) -> None:
    if isinstance(dest, (str, PathLike)):
        with open(dest, "w", encoding="utf-8", newline="\n") as f:
            write_path_text(path, f)
        return
    g = path.grid
    dest.write(f"{path.dimension} {sig17(g.dt)} {sig17(g.t_horizon)} {sig17(g.continuation_margin)}\n")
    for row in path.values:
        dest.write(" ".join(sig17(v) for v in row) + "\n")


def read_path_text(src: Union[str, PathLike, TextIO], label: str = "deterministic") -> SamplePath:
    if isinstance(src, (str, PathLike)):
        with open(src, "r", encoding="utf-8") as f:
            return read_path_text(f, label)
    header = src.readline().split()
    if len(header) != 4:
        raise DataError(f"malformed header: expected 4 fields, got {len(header)}")
    d = int(header[0])
    dt, horizon, margin = (float(h) for h in header[1:])
    n_steps = round(horizon / dt)
    grid = TimeGrid(horizon, n_steps, margin)
    rows = []
    for line in src:
        line = line.strip()
        if not line:
            continue
        cols = line.split()
        if len(cols) != d:
            raise DataError(f"row has {len(cols)} columns, expected {d}")
        rows.append([float(c) for c in cols])
    return SamplePath(grid, np.asarray(rows, dtype=np.float64), label)


def write_path_binary(path: SamplePath, dest: Union[str, PathLike, BinaryIO]) -> None:
    if isinstance(dest, (str, PathLike)):
        with open(dest, "wb") as f:
            write_path_binary(path, f)
        return
    g = path.grid
    dest.write(_BIN_HEADER.pack(path.dimension, path.values.shape[0], g.dt, g.t_horizon, g.continuation_margin))
    dest.write(np.ascontiguousarray(path.values, dtype="<f8").tobytes())


def read_path_binary(src: Union[str, PathLike, BinaryIO], label: str = "deterministic") -> SamplePath:
    if isinstance(src, (str, PathLike)):
        with open(src, "rb") as f:
            return read_path_binary(f, label)
    raw = src.read(_BIN_HEADER.size)
    if len(raw) != _BIN_HEADER.size:
        raise DataError("truncated binary header")
    d, n_nodes, dt, horizon, margin = _BIN_HEADER.unpack(raw)
    payload = src.read(8 * d * n_nodes)
    if len(payload) != 8 * d * n_nodes:
        raise DataError("truncated binary payload")
    values = np.frombuffer(payload, dtype="<f8").reshape(n_nodes, d).astype(np.float64)
    grid = TimeGrid(horizon, round(horizon / dt), margin)
    return SamplePath(grid, values, label)


def path_to_text(path: SamplePath) -> str:
    buf = io.StringIO()
    write_path_text(path, buf)
    return buf.getvalue()


def path_to_bytes(path: SamplePath) -> bytes:
    buf = io.BytesIO()
    write_path_binary(path, buf)
    return buf.getvalue()
