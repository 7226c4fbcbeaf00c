import numpy as np
import pytest

from hybriq.store import (
    Metric,
    Row,
    ScalarColumn,
    ScalarKind,
    Table,
    TableSchema,
    VectorColumn,
)


def make_rows(ids, vec_cols, scalar_cols):
    """vec_cols: {name: matrix}; scalar_cols: {name: sequence}."""
    rows = []
    for i, rid in enumerate(ids):
        rows.append(
            Row(
                id=int(rid),
                vectors={name: mat[i] for name, mat in vec_cols.items()},
                scalars={name: vals[i] for name, vals in scalar_cols.items()},
            )
        )
    return rows


def uniform_table(n_rows, dims=(8,), seed=0, lo=0.0, hi=100.0):
    """Uniform vectors plus one uniform numeric and one categorical column."""
    rng = np.random.default_rng(seed)
    vec_specs = [VectorColumn(f"vec{i}", d) for i, d in enumerate(dims)]
    schema = TableSchema(
        vector_columns=vec_specs,
        scalar_columns=(
            ScalarColumn("price", ScalarKind.NUMERIC),
            ScalarColumn("tag", ScalarKind.CATEGORICAL),
        ),
    )
    table = Table(schema)
    vec_cols = {
        s.name: rng.uniform(-1.0, 1.0, size=(n_rows, s.dim)).astype(np.float32)
        for s in vec_specs
    }
    price = rng.uniform(lo, hi, size=n_rows)
    tag = rng.choice(["a", "b", "c", "d"], size=n_rows)
    table.insert_batch(
        make_rows(range(n_rows), vec_cols, {"price": price, "tag": tag})
    )
    table.consume_pending()
    return table


@pytest.fixture
def small_table():
    return uniform_table(200, dims=(4,), seed=11)


def clustered_table(n_rows, dim=8, n_clusters=5, seed=0, spread=0.25,
                    label_noise=0.0):
    """Gaussian blobs with the blob id planted as a categorical label plus a
    numeric column correlated with the blob centre."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-4.0, 4.0, size=(n_clusters, dim))
    assignment = rng.integers(0, n_clusters, size=n_rows)
    vecs = centers[assignment] + rng.normal(0.0, spread, size=(n_rows, dim))
    labels = assignment.copy()
    if label_noise > 0:
        flip = rng.random(n_rows) < label_noise
        labels[flip] = rng.integers(0, n_clusters, size=int(flip.sum()))
    level = centers[:, 0][assignment] * 10.0 + rng.normal(0.0, 1.0, size=n_rows)

    schema = TableSchema(
        vector_columns=(VectorColumn("emb", dim),),
        scalar_columns=(
            ScalarColumn("group", ScalarKind.CATEGORICAL),
            ScalarColumn("level", ScalarKind.NUMERIC),
        ),
    )
    table = Table(schema)
    table.insert_batch(
        make_rows(
            range(n_rows),
            {"emb": vecs.astype(np.float32)},
            {"group": [f"g{int(a)}" for a in labels], "level": level},
        )
    )
    table.consume_pending()
    return table, assignment, centers
