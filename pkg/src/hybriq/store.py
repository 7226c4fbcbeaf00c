"""In-memory tables with multiple vector columns and scalar columns.

Scoring convention: every metric is expressed as a distance where smaller is
better. Inner product is stored negated so that ranking is uniformly
ascending. Composite scores accumulate per-dimension and per-column strictly
left to right in float64, which keeps the vectorised scan bit-identical to a
scalar re-implementation of the same arithmetic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateColumnName,
    DuplicateId,
    UnknownColumn,
    ZeroDimension,
)


class Metric(enum.Enum):
    L2 = "l2"
    INNER_PRODUCT = "ip"


class ScalarKind(enum.Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


class PredicateOp(enum.Enum):
    EQ = "="
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="
    BETWEEN = "between"


@dataclass(frozen=True)
class VectorColumn:
    name: str
    dim: int
    metric: Metric = Metric.L2


@dataclass(frozen=True)
class ScalarColumn:
    name: str
    kind: ScalarKind


@dataclass(frozen=True)
class TableSchema:
    vector_columns: tuple
    scalar_columns: tuple

    def __post_init__(self):
        object.__setattr__(self, "vector_columns", tuple(self.vector_columns))
        object.__setattr__(self, "scalar_columns", tuple(self.scalar_columns))
        names = [c.name for c in self.vector_columns] + [
            c.name for c in self.scalar_columns
        ]
        seen = set()
        for n in names:
            if n in seen:
                raise DuplicateColumnName(f"column name repeated: {n!r}")
            seen.add(n)
        if not self.vector_columns or not self.scalar_columns:
            raise ZeroDimension(
                "schema needs at least one vector column and one scalar column"
            )
        for c in self.vector_columns:
            if c.dim < 1:
                raise ZeroDimension(f"vector column {c.name!r} has dimension {c.dim}")

    @property
    def num_vector_columns(self) -> int:
        return len(self.vector_columns)

    def vector_column(self, name: str) -> VectorColumn:
        for c in self.vector_columns:
            if c.name == name:
                return c
        raise UnknownColumn(f"no vector column {name!r}")

    def scalar_column(self, name: str) -> ScalarColumn:
        for c in self.scalar_columns:
            if c.name == name:
                return c
        raise UnknownColumn(f"no scalar column {name!r}")


@dataclass
class Row:
    """One stored tuple: an id, one vector per vector column, one scalar per
    scalar column (dicts keyed by column name)."""

    id: int
    vectors: dict
    scalars: dict


@dataclass(frozen=True)
class Predicate:
    column: str
    op: PredicateOp
    value: object
    high: object = None  # BETWEEN only

    def __post_init__(self):
        if self.op is PredicateOp.BETWEEN:
            if self.high is None:
                raise ValueError("BETWEEN needs a high bound")
            if float(self.value) > float(self.high):
                raise ValueError("BETWEEN low bound exceeds high bound")
        elif self.high is not None:
            raise ValueError(f"{self.op} takes a single operand")


@dataclass
class HybridQuery:
    predicates: list
    query_vectors: dict  # column name -> 1-D array
    weights: dict  # column name -> non-negative float
    k: int
    target_recall: float = 0.9

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if not 0.0 < self.target_recall <= 1.0:
            raise ValueError("target_recall must lie in (0, 1]")
        total = sum(float(w) for w in self.weights.values())
        if total <= 0.0 or any(float(w) < 0.0 for w in self.weights.values()):
            raise ValueError("weights must be non-negative and sum to > 0")

    def normalized_weights(self) -> dict:
        total = sum(float(w) for w in self.weights.values())
        return {c: float(w) / total for c, w in self.weights.items()}


def l2_distance(a, b) -> float:
    """Euclidean distance accumulated left to right in float64."""
    if len(a) != len(b):
        raise DimensionMismatch(f"dim {len(a)} vs {len(b)}")
    acc = 0.0
    for j in range(len(a)):
        d = float(a[j]) - float(b[j])
        acc += d * d
    return math.sqrt(acc)


def ip_distance(a, b) -> float:
    """Negated inner product (smaller is better)."""
    if len(a) != len(b):
        raise DimensionMismatch(f"dim {len(a)} vs {len(b)}")
    acc = 0.0
    for j in range(len(a)):
        acc += float(a[j]) * float(b[j])
    return -acc


def metric_distance(metric: Metric, a, b) -> float:
    if metric is Metric.L2:
        return l2_distance(a, b)
    return ip_distance(a, b)


def metric_distance_batch(metric: Metric, mat: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Distances from q to every row of mat.

    Accumulates one dimension at a time so the float64 rounding sequence
    matches the scalar functions above exactly.
    """
    m = mat.astype(np.float64, copy=False)
    qv = np.asarray(q, dtype=np.float64)
    if m.shape[1] != qv.shape[0]:
        raise DimensionMismatch(f"dim {m.shape[1]} vs {qv.shape[0]}")
    acc = np.zeros(m.shape[0], dtype=np.float64)
    if metric is Metric.L2:
        for j in range(m.shape[1]):
            d = m[:, j] - qv[j]
            acc += d * d
        return np.sqrt(acc)
    for j in range(m.shape[1]):
        acc += m[:, j] * qv[j]
    return -acc


class Table:
    """Columnar storage: float32 matrices for vectors, float64 arrays for
    numeric scalars, python lists for categorical scalars."""

    def __init__(self, schema: TableSchema):
        self.schema = schema
        self._vectors = {
            c.name: np.empty((0, c.dim), dtype=np.float32)
            for c in schema.vector_columns
        }
        self._numeric = {
            c.name: np.empty(0, dtype=np.float64)
            for c in schema.scalar_columns
            if c.kind is ScalarKind.NUMERIC
        }
        self._categorical = {
            c.name: [] for c in schema.scalar_columns if c.kind is ScalarKind.CATEGORICAL
        }
        self._ids = np.empty(0, dtype=np.int64)
        self._id_to_pos = {}
        self.pending_updates: list = []  # row ids inserted since last encoder refresh

    # -- ingestion ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def row_count(self) -> int:
        return len(self._ids)

    def insert_batch(self, rows) -> int:
        """Append rows, validating shape and id uniqueness first.

        The whole batch is rejected if any row is invalid. Inserted ids are
        appended to the pending-update buffer consumed by the encoder.
        """
        if not rows:
            return 0
        new_ids = []
        seen = set()
        for row in rows:
            rid = int(row.id)
            if rid < 0:
                raise DuplicateId(f"ids must be non-negative, got {rid}")
            if rid in self._id_to_pos or rid in seen:
                raise DuplicateId(f"id {rid} already present")
            seen.add(rid)
            for c in self.schema.vector_columns:
                v = np.asarray(row.vectors[c.name])
                if v.ndim != 1 or v.shape[0] != c.dim:
                    raise DimensionMismatch(
                        f"row {rid}: column {c.name!r} expects dim {c.dim}, "
                        f"got {v.shape}"
                    )
            for c in self.schema.scalar_columns:
                if c.name not in row.scalars:
                    raise UnknownColumn(f"row {rid}: missing scalar {c.name!r}")
                if c.kind is ScalarKind.NUMERIC:
                    float(row.scalars[c.name])
            new_ids.append(rid)

        base = len(self._ids)
        for c in self.schema.vector_columns:
            block = np.stack(
                [np.asarray(r.vectors[c.name], dtype=np.float32) for r in rows]
            )
            self._vectors[c.name] = np.concatenate([self._vectors[c.name], block])
        for name in self._numeric:
            vals = np.array([float(r.scalars[name]) for r in rows], dtype=np.float64)
            self._numeric[name] = np.concatenate([self._numeric[name], vals])
        for name in self._categorical:
            self._categorical[name].extend(str(r.scalars[name]) for r in rows)
        self._ids = np.concatenate([self._ids, np.array(new_ids, dtype=np.int64)])
        for offset, rid in enumerate(new_ids):
            self._id_to_pos[rid] = base + offset
        self.pending_updates.extend(new_ids)
        return len(new_ids)

    def consume_pending(self) -> list:
        out, self.pending_updates = self.pending_updates, []
        return out

    # -- access ------------------------------------------------------------

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    def position_of(self, rid: int) -> int:
        try:
            return self._id_to_pos[int(rid)]
        except KeyError:
            raise UnknownColumn(f"no row with id {rid}") from None

    def vector_matrix(self, column: str) -> np.ndarray:
        if column not in self._vectors:
            raise UnknownColumn(f"no vector column {column!r}")
        return self._vectors[column]

    def vector_of(self, column: str, rid: int) -> np.ndarray:
        return self._vectors[column][self.position_of(rid)]

    def numeric_values(self, column: str) -> np.ndarray:
        if column not in self._numeric:
            raise UnknownColumn(f"no numeric column {column!r}")
        return self._numeric[column]

    def categorical_values(self, column: str) -> list:
        if column not in self._categorical:
            raise UnknownColumn(f"no categorical column {column!r}")
        return self._categorical[column]

    def scalar_value(self, column: str, rid: int):
        pos = self.position_of(rid)
        if column in self._numeric:
            return float(self._numeric[column][pos])
        if column in self._categorical:
            return self._categorical[column][pos]
        raise UnknownColumn(f"no scalar column {column!r}")

    def row(self, rid: int) -> Row:
        pos = self.position_of(rid)
        vectors = {name: mat[pos].copy() for name, mat in self._vectors.items()}
        scalars = {}
        for name, arr in self._numeric.items():
            scalars[name] = float(arr[pos])
        for name, vals in self._categorical.items():
            scalars[name] = vals[pos]
        return Row(id=int(rid), vectors=vectors, scalars=scalars)

    # -- predicate evaluation ------------------------------------------------

    def _check_predicate_columns(self, predicates) -> None:
        for p in predicates:
            col = self.schema.scalar_column(p.column)
            if col.kind is ScalarKind.CATEGORICAL and p.op is not PredicateOp.EQ:
                raise ColumnTypeError(p)

    def evaluate_predicates(self, row: Row, predicates) -> bool:
        """True iff the row satisfies every predicate (empty list is true)."""
        self._check_predicate_columns(predicates)
        for p in predicates:
            value = row.scalars[p.column]
            if not _eval_one(self.schema.scalar_column(p.column).kind, value, p):
                return False
        return True

    def predicate_mask(self, predicates) -> np.ndarray:
        """Boolean qualifying mask over all rows in storage order."""
        self._check_predicate_columns(predicates)
        mask = np.ones(len(self._ids), dtype=bool)
        for p in predicates:
            kind = self.schema.scalar_column(p.column).kind
            if kind is ScalarKind.NUMERIC:
                vals = self._numeric[p.column]
                if p.op is PredicateOp.EQ:
                    mask &= vals == float(p.value)
                elif p.op is PredicateOp.LT:
                    mask &= vals < float(p.value)
                elif p.op is PredicateOp.LE:
                    mask &= vals <= float(p.value)
                elif p.op is PredicateOp.GT:
                    mask &= vals > float(p.value)
                elif p.op is PredicateOp.GE:
                    mask &= vals >= float(p.value)
                else:
                    mask &= (vals >= float(p.value)) & (vals <= float(p.high))
            else:
                target = str(p.value)
                vals = self._categorical[p.column]
                mask &= np.fromiter(
                    (v == target for v in vals), dtype=bool, count=len(vals)
                )
        return mask

    def qualifying_positions(self, predicates) -> np.ndarray:
        return np.nonzero(self.predicate_mask(predicates))[0]

    def predicate_eval_for(self, predicates):
        """Callable id -> bool used by filtered index scans."""
        self._check_predicate_columns(predicates)
        mask = self.predicate_mask(predicates)

        def check(rid: int) -> bool:
            return bool(mask[self._id_to_pos[int(rid)]])

        return check

    # -- scoring -------------------------------------------------------------

    def _validate_query(self, query: HybridQuery) -> None:
        for c in self.schema.vector_columns:
            if c.name not in query.query_vectors:
                raise DimensionMismatch(f"query missing vector for {c.name!r}")
            q = np.asarray(query.query_vectors[c.name])
            if q.shape != (c.dim,):
                raise DimensionMismatch(
                    f"query vector for {c.name!r} has shape {q.shape}, "
                    f"expected ({c.dim},)"
                )

    def composite_distance(self, row: Row, query: HybridQuery) -> float:
        """Weighted sum of per-column metric distances, smaller is better."""
        self._validate_query(query)
        score = 0.0
        for c in self.schema.vector_columns:
            w = float(query.weights.get(c.name, 0.0))
            d = metric_distance(
                c.metric, row.vectors[c.name], query.query_vectors[c.name]
            )
            score += w * d
        return score

    def composite_distance_at(self, positions: np.ndarray, query: HybridQuery) -> np.ndarray:
        """Composite scores for the rows at the given storage positions.

        Bit-identical to composite_distance row by row.
        """
        self._validate_query(query)
        scores = np.zeros(len(positions), dtype=np.float64)
        for c in self.schema.vector_columns:
            w = float(query.weights.get(c.name, 0.0))
            d = metric_distance_batch(
                c.metric,
                self._vectors[c.name][positions],
                query.query_vectors[c.name],
            )
            scores += w * d
        return scores


class ColumnTypeError(UnknownColumn):
    def __init__(self, predicate):
        super().__init__(
            f"categorical column {predicate.column!r} only supports equality, "
            f"got {predicate.op}"
        )


def _eval_one(kind: ScalarKind, value, p: Predicate) -> bool:
    if kind is ScalarKind.CATEGORICAL:
        return str(value) == str(p.value)
    v = float(value)
    if p.op is PredicateOp.EQ:
        return v == float(p.value)
    if p.op is PredicateOp.LT:
        return v < float(p.value)
    if p.op is PredicateOp.LE:
        return v <= float(p.value)
    if p.op is PredicateOp.GT:
        return v > float(p.value)
    if p.op is PredicateOp.GE:
        return v >= float(p.value)
    return float(p.value) <= v <= float(p.high)


def create_table(schema: TableSchema) -> Table:
    """Register an empty table for the given schema."""
    return Table(schema)
