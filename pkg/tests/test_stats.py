import numpy as np
import pytest

from hybriq.errors import ColumnMismatch, EmptyTable, MissingHistogram
from hybriq.stats import (
    StatsCatalog,
    build_histogram,
    estimate_conjunction,
    estimate_predicate,
)
from hybriq.store import (
    Predicate,
    PredicateOp,
    ScalarColumn,
    ScalarKind,
    Table,
    TableSchema,
    VectorColumn,
)

from conftest import make_rows, uniform_table


def numeric_table(values, extra=None):
    cols = [ScalarColumn("x", ScalarKind.NUMERIC)]
    data = {"x": values}
    if extra is not None:
        cols.append(ScalarColumn("y", ScalarKind.NUMERIC))
        data["y"] = extra
    schema = TableSchema(
        vector_columns=(VectorColumn("v", 2),),
        scalar_columns=tuple(cols),
    )
    table = Table(schema)
    n = len(values)
    table.insert_batch(make_rows(range(n), {"v": np.zeros((n, 2))}, data))
    return table


def categorical_table(values):
    schema = TableSchema(
        vector_columns=(VectorColumn("v", 2),),
        scalar_columns=(ScalarColumn("c", ScalarKind.CATEGORICAL),),
    )
    table = Table(schema)
    n = len(values)
    table.insert_batch(make_rows(range(n), {"v": np.zeros((n, 2))}, {"c": values}))
    return table


class TestBuild:
    def test_uniform_ints_ten_bins(self):
        table = numeric_table(list(range(1, 101)))
        hist = build_histogram(table, "x", num_bins=10)
        assert hist.counts.tolist() == [10] * 10
        assert hist.prefix_sums.tolist() == [10 * i for i in range(1, 11)]
        assert hist.total_count == 100

    def test_constant_column_degenerate(self):
        table = numeric_table([5.0] * 40)
        hist = build_histogram(table, "x", num_bins=10)
        assert hist.num_bins == 1
        assert hist.counts.tolist() == [40]

    def test_categorical_frequencies(self):
        table = categorical_table(["A"] * 70 + ["B"] * 30)
        hist = build_histogram(table, "c")
        assert hist.frequencies == {"A": 70, "B": 30}

    def test_empty_table(self):
        schema = TableSchema(
            vector_columns=(VectorColumn("v", 2),),
            scalar_columns=(ScalarColumn("x", ScalarKind.NUMERIC),),
        )
        with pytest.raises(EmptyTable):
            build_histogram(Table(schema), "x")


class TestEstimate:
    def test_running_example_lt_50(self):
        table = numeric_table(list(range(1, 101)))
        hist = build_histogram(table, "x", num_bins=100)
        est = estimate_predicate(hist, Predicate("x", PredicateOp.LT, 50))
        exact = sum(1 for v in range(1, 101) if v < 50) / 100
        assert exact == 0.49
        assert 0.48 <= est <= 0.51

    def test_boundary_thresholds(self):
        table = numeric_table(list(range(1, 101)))
        hist = build_histogram(table, "x", num_bins=10)
        assert estimate_predicate(hist, Predicate("x", PredicateOp.LT, 1)) == 0.0
        assert estimate_predicate(hist, Predicate("x", PredicateOp.GE, 1)) == 1.0

    def test_categorical_exact(self):
        table = categorical_table(["A"] * 70 + ["B"] * 30)
        hist = build_histogram(table, "c")
        assert estimate_predicate(hist, Predicate("c", PredicateOp.EQ, "A")) == 0.70
        assert estimate_predicate(hist, Predicate("c", PredicateOp.EQ, "Z")) == 0.0

    def test_column_mismatch(self):
        table = numeric_table(list(range(10)))
        hist = build_histogram(table, "x", 4)
        with pytest.raises(ColumnMismatch):
            estimate_predicate(hist, Predicate("other", PredicateOp.LT, 1))

    def test_exact_on_bin_edges(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(0.0, 1.0, size=5000)
        table = numeric_table(values.tolist())
        hist = build_histogram(table, "x", num_bins=50)
        for edge in hist.bin_edges[1:-1]:
            est = estimate_predicate(hist, Predicate("x", PredicateOp.LT, float(edge)))
            exact = float(np.mean(values < edge))
            assert est == pytest.approx(exact, abs=1e-12)

    def test_range_error_bounded_by_max_bin_mass(self):
        rng = np.random.default_rng(1)
        values = rng.normal(50.0, 20.0, size=4000)
        table = numeric_table(values.tolist())
        hist = build_histogram(table, "x", num_bins=64)
        bound = hist.counts.max() / hist.total_count
        for _ in range(300):
            cut = float(rng.uniform(values.min(), values.max()))
            est = estimate_predicate(hist, Predicate("x", PredicateOp.LT, cut))
            exact = float(np.mean(values < cut))
            assert abs(est - exact) <= bound + 1e-12

    def test_widening_a_range_never_decreases(self):
        rng = np.random.default_rng(2)
        values = rng.uniform(0, 100, size=2000)
        table = numeric_table(values.tolist())
        hist = build_histogram(table, "x", num_bins=40)
        lo, hi = 40.0, 55.0
        prev = 0.0
        for pad in np.linspace(0, 35, 12):
            est = estimate_predicate(
                hist, Predicate("x", PredicateOp.BETWEEN, lo - pad, hi + pad)
            )
            assert est >= prev - 1e-12
            prev = est


class TestConjunction:
    def test_vacuous(self):
        assert estimate_conjunction({}, []) == 1.0

    def test_independent_product(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 1, size=8000)
        y = rng.uniform(0, 1, size=8000)
        table = numeric_table(x.tolist(), extra=y.tolist())
        hists = {
            "x": build_histogram(table, "x", 100),
            "y": build_histogram(table, "y", 100),
        }
        preds = [
            Predicate("x", PredicateOp.LT, float(np.quantile(x, 0.5))),
            Predicate("y", PredicateOp.LT, float(np.quantile(y, 0.5))),
        ]
        est = estimate_conjunction(hists, preds)
        exact = float(
            np.mean((x < np.quantile(x, 0.5)) & (y < np.quantile(y, 0.5)))
        )
        assert abs(est - exact) <= 0.03
        assert abs(est - 0.25) <= 0.03

    def test_repeated_predicate_squares(self):
        table = numeric_table(list(range(1, 101)))
        hists = {"x": build_histogram(table, "x", 100)}
        p = Predicate("x", PredicateOp.LT, 50)
        single = estimate_predicate(hists["x"], p)
        assert estimate_conjunction(hists, [p, p]) == pytest.approx(single**2)

    def test_missing_histogram(self):
        with pytest.raises(MissingHistogram):
            estimate_conjunction({}, [Predicate("x", PredicateOp.LT, 1)])


class TestCatalog:
    def test_build_estimate_and_refresh(self, small_table):
        catalog = StatsCatalog(small_table, num_bins=20, refresh_fraction=0.10)
        catalog.build()
        sel = catalog.estimate([Predicate("price", PredicateOp.LT, 50.0)])
        assert 0.0 <= sel <= 1.0
        rows_before = catalog._rows_at_build
        # grow the table by more than 10 percent and estimate again
        n = small_table.row_count
        from conftest import make_rows

        extra = make_rows(
            range(1000, 1000 + n // 5),
            {"vec0": np.zeros((n // 5, 4))},
            {"price": [1.0] * (n // 5), "tag": ["a"] * (n // 5)},
        )
        small_table.insert_batch(extra)
        catalog.estimate([Predicate("price", PredicateOp.LT, 50.0)])
        assert catalog._rows_at_build > rows_before

    def test_persistence_roundtrip(self, small_table, tmp_path):
        catalog = StatsCatalog(small_table, num_bins=16)
        catalog.build()
        path = tmp_path / "stats.bin"
        catalog.dump(path)
        fresh = StatsCatalog(small_table, num_bins=16)
        fresh.load(path)
        p = Predicate("price", PredicateOp.BETWEEN, 10.0, 60.0)
        assert fresh.estimate([p]) == catalog.estimate([p])
        assert fresh.histograms["tag"].frequencies == (
            catalog.histograms["tag"].frequencies
        )
