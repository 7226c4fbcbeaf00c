"""Hybrid vector-scalar query engine with a learned plan rewriter."""

from .config import EngineConfig
from .store import (
    HybridQuery,
    Metric,
    Predicate,
    PredicateOp,
    Row,
    ScalarColumn,
    ScalarKind,
    Table,
    TableSchema,
    VectorColumn,
    create_table,
)

__all__ = [
    "EngineConfig",
    "HybridQuery",
    "Metric",
    "Predicate",
    "PredicateOp",
    "Row",
    "ScalarColumn",
    "ScalarKind",
    "Table",
    "TableSchema",
    "VectorColumn",
    "create_table",
]

__version__ = "0.1.0"
