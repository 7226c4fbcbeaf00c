"""Readers and writers for the on-disk interchange formats.

Vector files follow the fvecs layout: each record is a 4-byte little-endian
unsigned dimension d followed by d float32 values, also little-endian.
Scalar files are plain CSV with a header row whose first column is ``id``.
"""

from __future__ import annotations

import csv
import struct

import numpy as np

from .errors import PersistenceError
from .store import Row, ScalarKind, Table, TableSchema


def write_fvecs(path, vectors: np.ndarray) -> None:
    arr = np.asarray(vectors, dtype=np.float32)
    if arr.ndim != 2:
        raise PersistenceError("expected a 2-D array of vectors")
    n, d = arr.shape
    out = np.empty((n, d + 1), dtype=np.uint32)
    out[:, 0] = d
    out[:, 1:] = arr.view(np.uint32)
    out.astype("<u4", copy=False).tofile(path)


def read_fvecs(path) -> np.ndarray:
    raw = np.fromfile(path, dtype="<u4")
    if raw.size == 0:
        return np.empty((0, 0), dtype=np.float32)
    d = int(raw[0])
    if d <= 0 or raw.size % (d + 1) != 0:
        raise PersistenceError(f"{path}: malformed vector file (d={d})")
    recs = raw.reshape(-1, d + 1)
    if not np.all(recs[:, 0] == d):
        raise PersistenceError(f"{path}: inconsistent record dimensions")
    return recs[:, 1:].copy().view(np.float32)


def write_scalars_csv(path, table: Table) -> None:
    cols = [c for c in table.schema.scalar_columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [c.name for c in cols])
        for pos, rid in enumerate(table.ids):
            row = [int(rid)]
            for c in cols:
                if c.kind is ScalarKind.NUMERIC:
                    row.append(repr(float(table.numeric_values(c.name)[pos])))
                else:
                    row.append(table.categorical_values(c.name)[pos])
            writer.writerow(row)


def read_scalars_csv(path) -> tuple:
    """Returns (ids, {column: list of raw string values})."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id":
            raise PersistenceError(f"{path}: first CSV column must be 'id'")
        columns = header[1:]
        ids = []
        values = {c: [] for c in columns}
        for line in reader:
            if not line:
                continue
            ids.append(int(line[0]))
            for c, v in zip(columns, line[1:]):
                values[c].append(v)
    return ids, values


def load_table(schema: TableSchema, vector_paths: dict, scalar_path) -> Table:
    """Build a table from one fvecs file per vector column plus a scalar CSV."""
    ids, scalar_values = read_scalars_csv(scalar_path)
    mats = {}
    for col in schema.vector_columns:
        if col.name not in vector_paths:
            raise PersistenceError(f"no vector file given for column {col.name!r}")
        mat = read_fvecs(vector_paths[col.name])
        if mat.shape[0] != len(ids):
            raise PersistenceError(
                f"{col.name!r}: {mat.shape[0]} vectors vs {len(ids)} scalar rows"
            )
        mats[col.name] = mat
    table = Table(schema)
    rows = []
    for i, rid in enumerate(ids):
        vectors = {name: mats[name][i] for name in mats}
        scalars = {}
        for col in schema.scalar_columns:
            raw = scalar_values[col.name][i]
            scalars[col.name] = float(raw) if col.kind is ScalarKind.NUMERIC else raw
        rows.append(Row(id=rid, vectors=vectors, scalars=scalars))
    table.insert_batch(rows)
    table.consume_pending()  # freshly loaded data is not "new"
    return table


# -- small binary helpers shared by the persistence formats ------------------


def pack_str(s: str) -> bytes:
    data = s.encode("utf-8")
    return struct.pack("<I", len(data)) + data


def unpack_str(buf: bytes, offset: int) -> tuple:
    (n,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    return buf[offset : offset + n].decode("utf-8"), offset + n


def pack_array(arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr).tobytes()
    return struct.pack("<I", len(data)) + data


def unpack_array(buf: bytes, offset: int, dtype, shape) -> tuple:
    (n,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    arr = np.frombuffer(buf[offset : offset + n], dtype=dtype).reshape(shape).copy()
    return arr, offset + n
