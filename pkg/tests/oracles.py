"""Independent brute-force reference implementations.

Deliberately written with plain Python loops and math functions, sharing no
code with the engine, so that engine results can be checked against a second
opinion. The float64 accumulation order (per dimension, then per column,
left to right) mirrors the documented scoring convention, which makes exact
score comparisons meaningful.
"""

import math


def predicate_holds(kind_by_column, scalars, predicates):
    for p in predicates:
        value = scalars[p.column]
        kind = kind_by_column[p.column]
        op = p.op.value
        if kind == "categorical":
            if str(value) != str(p.value):
                return False
            continue
        v = float(value)
        if op == "=" and not v == float(p.value):
            return False
        if op == "<" and not v < float(p.value):
            return False
        if op == "<=" and not v <= float(p.value):
            return False
        if op == ">" and not v > float(p.value):
            return False
        if op == ">=" and not v >= float(p.value):
            return False
        if op == "between" and not (float(p.value) <= v <= float(p.high)):
            return False
    return True


def column_distance(metric, a, b):
    if metric == "l2":
        acc = 0.0
        for x, y in zip(a, b):
            d = float(x) - float(y)
            acc += d * d
        return math.sqrt(acc)
    acc = 0.0
    for x, y in zip(a, b):
        acc += float(x) * float(y)
    return -acc


def composite_score(schema_columns, vectors, query_vectors, weights):
    """schema_columns: list of (name, metric string) in schema order."""
    score = 0.0
    for name, metric in schema_columns:
        d = column_distance(metric, vectors[name], query_vectors[name])
        score += float(weights.get(name, 0.0)) * d
    return score


def brute_force_topk(table, query, k=None):
    """Exact filtered top-k over a Table, computed the slow way.

    Returns a list of (id, score) sorted by (score, id).
    """
    k = query.k if k is None else k
    kind_by_column = {
        c.name: c.kind.value for c in table.schema.scalar_columns
    }
    schema_columns = [
        (c.name, c.metric.value) for c in table.schema.vector_columns
    ]
    scored = []
    for rid in table.ids.tolist():
        row = table.row(rid)
        if not predicate_holds(kind_by_column, row.scalars, query.predicates):
            continue
        score = composite_score(
            schema_columns, row.vectors, query.query_vectors, query.weights
        )
        scored.append((score, rid))
    scored.sort()
    return [(rid, score) for score, rid in scored[:k]]


def brute_force_knn(vectors, ids, q, k, metric="l2"):
    """Unfiltered exact nearest neighbours over raw vectors."""
    scored = []
    for rid, v in zip(ids, vectors):
        scored.append((column_distance(metric, v, q), int(rid)))
    scored.sort()
    return [rid for _, rid in scored[:k]]


def recall_at_k(retrieved_ids, truth_ids):
    truth = set(truth_ids)
    if not truth:
        return 1.0
    return len(truth.intersection(retrieved_ids)) / len(truth)
