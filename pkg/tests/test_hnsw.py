import numpy as np
import pytest

from hybriq.errors import DimensionMismatch, EmptyTable, PersistenceError
from hybriq.hnsw import (
    BuildParams,
    GraphIndex,
    IterativeScan,
    SearchParams,
    build,
)
from hybriq.store import Metric

from conftest import uniform_table
from oracles import brute_force_knn, recall_at_k


def random_index(n, dim, seed=0, m=12, efc=100):
    rng = np.random.default_rng(seed)
    vecs = rng.uniform(-1, 1, size=(n, dim)).astype(np.float32)
    idx = GraphIndex(dim, Metric.L2, BuildParams(m=m, ef_construction=efc, seed=seed))
    for i in range(n):
        idx.insert(i, vecs[i])
    return idx, vecs


class TestBuildAndInsert:
    def test_singleton_always_found(self):
        idx = GraphIndex(4, Metric.L2, BuildParams(seed=1))
        idx.insert(0, np.array([1.0, 2.0, 3.0, 4.0]))
        for q in (np.zeros(4), np.ones(4) * 9):
            res = idx.search(q, k=3)
            assert [rid for rid, _ in res] == [0]

    def test_build_from_table(self):
        table = uniform_table(300, dims=(8,), seed=2)
        idx = build(table, "vec0", BuildParams(m=8, ef_construction=64, seed=3))
        assert idx.node_count == 300
        idx.validate()
        assert idx.degree_bound_ok()

    def test_build_empty_table_rejected(self):
        table = uniform_table(10, dims=(4,), seed=4)
        empty = type(table)(table.schema)
        with pytest.raises(EmptyTable):
            build(empty, "vec0")

    def test_insert_wrong_dim(self):
        idx = GraphIndex(4)
        with pytest.raises(DimensionMismatch):
            idx.insert(0, np.zeros(5))

    def test_self_retrieval_after_insert(self):
        idx, vecs = random_index(200, 8, seed=5)
        res = idx.search(vecs[123], k=1, params=SearchParams(ef_search=16))
        assert res[0][0] == 123
        assert res[0][1] == 0.0

    def test_incremental_matches_batch_recall(self):
        rng = np.random.default_rng(6)
        vecs = rng.uniform(-1, 1, size=(1100, 16)).astype(np.float32)
        batch = GraphIndex(16, Metric.L2, BuildParams(m=12, ef_construction=100, seed=7))
        for i in range(1000):
            batch.insert(i, vecs[i])
        grown = GraphIndex(16, Metric.L2, BuildParams(m=12, ef_construction=100, seed=7))
        for i in range(1000):
            grown.insert(i, vecs[i])
        # 100 additional incremental inserts on the grown copy only
        for i in range(1000, 1100):
            grown.insert(i, vecs[i])
            batch.insert(i, vecs[i])
        queries = rng.uniform(-1, 1, size=(50, 16)).astype(np.float32)
        params = SearchParams(ef_search=64)

        def mean_recall(index):
            total = 0.0
            for q in queries:
                truth = brute_force_knn(vecs, range(1100), q, 10)
                got = [rid for rid, _ in index.search(q, 10, params)]
                total += recall_at_k(got, truth)
            return total / len(queries)

        assert abs(mean_recall(grown) - mean_recall(batch)) <= 0.05


class TestSearch:
    def test_k_exceeding_size_returns_all_sorted(self):
        idx, vecs = random_index(30, 4, seed=8)
        q = np.zeros(4, dtype=np.float32)
        res = idx.search(q, k=100)
        assert len(res) == 30
        dists = [d for _, d in res]
        assert dists == sorted(dists)
        truth = brute_force_knn(vecs, range(30), q, 30)
        assert [rid for rid, _ in res] == truth

    def test_empty_index(self):
        idx = GraphIndex(4)
        assert idx.search(np.zeros(4), k=5) == []

    def test_exact_match_first(self):
        idx, vecs = random_index(500, 8, seed=9)
        res = idx.search(vecs[77], k=5, params=SearchParams(ef_search=64))
        assert res[0] == (77, 0.0)

    def test_results_sorted_with_exact_distances(self):
        idx, vecs = random_index(400, 8, seed=10)
        rng = np.random.default_rng(11)
        from oracles import column_distance

        for _ in range(10):
            q = rng.uniform(-1, 1, 8).astype(np.float32)
            res = idx.search(q, k=10, params=SearchParams(ef_search=50))
            dists = [d for _, d in res]
            assert dists == sorted(dists)
            for rid, d in res:
                assert d == column_distance("l2", vecs[rid], q)

    def test_ef_monotonicity(self):
        idx, vecs = random_index(2000, 16, seed=12, m=12, efc=80)
        rng = np.random.default_rng(13)
        queries = rng.uniform(-1, 1, size=(60, 16)).astype(np.float32)
        recalls = {}
        for ef in (10, 400):
            total = 0.0
            for q in queries:
                truth = brute_force_knn(vecs, range(2000), q, 10)
                got = [rid for rid, _ in idx.search(q, 10, SearchParams(ef_search=ef))]
                total += recall_at_k(got, truth)
            recalls[ef] = total / len(queries)
        assert recalls[400] >= recalls[10]
        assert recalls[400] >= 0.9

    def test_seed_determinism_bit_reproducible(self):
        a, _ = random_index(300, 8, seed=14)
        b, _ = random_index(300, 8, seed=14)
        rng = np.random.default_rng(15)
        q = rng.uniform(-1, 1, 8).astype(np.float32)
        assert a.search(q, 10) == b.search(q, 10)
        assert a._levels == b._levels
        assert [a._links[0][s] for s in range(300)] == [
            b._links[0][s] for s in range(300)
        ]


@pytest.fixture(scope="module")
def shared_index():
    return random_index(2000, 8, seed=16, m=12, efc=100)


class TestFilteredSearch:
    def test_always_true_matches_plain_search(self, shared_index):
        idx, vecs = shared_index
        rng = np.random.default_rng(17)
        for mode in IterativeScan:
            q = rng.uniform(-1, 1, 8).astype(np.float32)
            params = SearchParams(ef_search=50, iterative_scan=mode)
            plain = idx.search(q, 10, params)
            got, scanned, converged = idx.filtered_search(
                q, 10, params, lambda rid: True
            )
            assert got == plain
            assert converged
            assert scanned > 0

    def test_always_false(self, shared_index):
        idx, _ = shared_index
        params = SearchParams(
            ef_search=50, max_scan_tuples=300, iterative_scan=IterativeScan.RELAXED
        )
        got, scanned, converged = idx.filtered_search(
            np.zeros(8, dtype=np.float32), 10, params, lambda rid: False
        )
        assert got == []
        assert not converged
        assert scanned <= 300

    def test_scan_budget_respected(self, shared_index):
        idx, _ = shared_index
        for budget in (1, 17, 250):
            params = SearchParams(
                ef_search=64,
                max_scan_tuples=budget,
                iterative_scan=IterativeScan.STRICT,
            )
            _, scanned, _ = idx.filtered_search(
                np.zeros(8, dtype=np.float32), 10, params, lambda rid: rid % 7 == 0
            )
            assert scanned <= budget

    def test_no_false_positives(self, shared_index):
        idx, _ = shared_index
        rng = np.random.default_rng(18)
        pred = lambda rid: rid % 3 == 0
        for mode in IterativeScan:
            q = rng.uniform(-1, 1, 8).astype(np.float32)
            got, _, _ = idx.filtered_search(
                q, 20, SearchParams(ef_search=40, iterative_scan=mode), pred
            )
            assert all(pred(rid) for rid, _ in got)

    def test_half_selectivity_recall(self, shared_index):
        idx, vecs = shared_index
        rng = np.random.default_rng(20)
        qualifying = set(
            int(i) for i in rng.choice(2000, size=1000, replace=False)
        )
        pred = lambda rid: rid in qualifying
        params = SearchParams(
            ef_search=64, max_scan_tuples=800, iterative_scan=IterativeScan.RELAXED
        )
        total = 0.0
        n_q = 40
        for _ in range(n_q):
            q = rng.uniform(-1, 1, 8).astype(np.float32)
            truth = brute_force_knn(
                vecs[sorted(qualifying)], sorted(qualifying), q, 10
            )
            got, scanned, _ = idx.filtered_search(q, 10, params, pred)
            assert scanned <= 800
            total += recall_at_k([rid for rid, _ in got], truth)
        assert total / n_q >= 0.8

    def test_exhaustive_when_k_covers_all_qualifying(self):
        idx, vecs = random_index(800, 8, seed=21, m=12, efc=100)
        qualifying = sorted(int(i) for i in range(0, 800, 5))
        pred = lambda rid: rid % 5 == 0
        q = np.full(8, 0.2, dtype=np.float32)
        for mode in (IterativeScan.RELAXED, IterativeScan.STRICT):
            params = SearchParams(
                ef_search=16, max_scan_tuples=800, iterative_scan=mode
            )
            got, _, converged = idx.filtered_search(q, len(qualifying), params, pred)
            assert converged
            truth = brute_force_knn(
                vecs[qualifying], qualifying, q, len(qualifying)
            )
            assert [rid for rid, _ in got] == truth

    def test_strict_returns_true_topk_of_visited(self):
        idx, vecs = random_index(600, 8, seed=22, m=12, efc=100)
        pred = lambda rid: rid % 2 == 0
        params = SearchParams(
            ef_search=600, iterative_scan=IterativeScan.STRICT
        )
        q = np.zeros(8, dtype=np.float32)
        got, scanned, _ = idx.filtered_search(q, 10, params, pred)
        # beam covers the whole graph, so the result must be globally exact
        truth = brute_force_knn(
            vecs[::2], range(0, 600, 2), q, 10
        )
        assert [rid for rid, _ in got] == truth


class TestPersistence:
    def test_roundtrip_and_validation(self, tmp_path):
        idx, vecs = random_index(250, 8, seed=23)
        path = tmp_path / "index.bin"
        idx.save(path)
        loaded = GraphIndex.load(path)
        assert loaded.node_count == 250
        q = vecs[11]
        assert loaded.search(q, 5) == idx.search(q, 5)
        # inserts continue deterministically after reload
        extra = np.full(8, 0.5, dtype=np.float32)
        idx.insert(900, extra)
        loaded.insert(900, extra)
        assert loaded.search(q, 5) == idx.search(q, 5)

    def test_corrupt_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(PersistenceError):
            GraphIndex.load(path)

    def test_unreachable_graph_rejected(self, tmp_path):
        idx, _ = random_index(50, 4, seed=24)
        # sever a node's inbound and outbound base-layer links
        victim = 25
        for slot in range(50):
            links = idx._links[0][slot]
            if links is not None and victim in links:
                links.remove(victim)
        idx._links[0][victim] = []
        path = tmp_path / "broken.bin"
        idx.save(path)
        with pytest.raises(PersistenceError):
            GraphIndex.load(path)
