"""Hierarchical navigable small-world graph index.

One index per vector column. Search supports a plain beam pass, a filtered
pass with an early-termination budget (max_scan_tuples), and iterative modes
that keep widening the beam from the live frontier until enough qualifying
results are found:

* Off      - a single beam pass of width ef_search; qualifying nodes among
             the visited set are returned.
* Relaxed  - after the first full pass, expansion continues and stops the
             moment the k-th qualifying node is discovered (results are the
             first k discovered, re-sorted by exact distance).
* Strict   - expansion stops only at a pass boundary; every qualifying node
             visited competes, so the result is the true top-k among them.

Neither mode prunes frontier pushes, so with an unbounded scan budget the
expansion can exhaust the whole connected component; that property makes the
index exact in the limit k_i = qualifying-row count.

max_scan_tuples counts nodes popped at layer 0, i.e. predicate-evaluated
nodes; layers above the base are navigation only.
"""

from __future__ import annotations

import enum
import heapq
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyTable,
    PersistenceError,
    UnknownColumn,
)
from .store import Metric, Table, metric_distance


class IterativeScan(enum.Enum):
    OFF = "off"
    RELAXED = "relaxed"
    STRICT = "strict"


@dataclass(frozen=True)
class BuildParams:
    m: int = 16
    ef_construction: int = 200
    level_factor: float = None  # default 1 / ln(m)
    seed: int = 0

    def resolved_level_factor(self) -> float:
        if self.level_factor is not None:
            return self.level_factor
        return 1.0 / math.log(self.m)


@dataclass(frozen=True)
class SearchParams:
    ef_search: int = 64
    max_scan_tuples: int = None  # None = unbounded
    iterative_scan: IterativeScan = IterativeScan.OFF

    def __post_init__(self):
        if self.ef_search < 1:
            raise ValueError("ef_search must be positive")
        if self.max_scan_tuples is not None and self.max_scan_tuples < 1:
            raise ValueError("max_scan_tuples must be positive")


class GraphIndex:
    def __init__(self, dim: int, metric: Metric = Metric.L2,
                 params: BuildParams = BuildParams()):
        self.dim = int(dim)
        self.metric = metric
        self.params = params
        self._rng = np.random.Generator(np.random.PCG64(params.seed))
        self._capacity = 0
        self._vecs = np.empty((0, dim), dtype=np.float32)
        self._ids = np.empty(0, dtype=np.int64)
        self._id_to_slot: dict = {}
        self._levels: list = []
        # _links[layer][slot]: neighbor slot list, or None below the node's level
        self._links: list = [[]]
        self.entry_slot = None
        self.top_level = -1

    def __len__(self) -> int:
        return len(self._levels)

    @property
    def node_count(self) -> int:
        return len(self._levels)

    def contains(self, rid: int) -> bool:
        return int(rid) in self._id_to_slot

    # -- internal helpers -----------------------------------------------------

    def _grow(self, needed: int) -> None:
        if needed <= self._capacity:
            return
        cap = max(1024, self._capacity * 2, needed)
        fresh = np.empty((cap, self.dim), dtype=np.float32)
        fresh[: len(self._levels)] = self._vecs[: len(self._levels)]
        self._vecs = fresh
        self._capacity = cap

    def _dists(self, q32: np.ndarray, slots) -> np.ndarray:
        """Internal float32 ranking distances (squared L2 / negated IP)."""
        sub = self._vecs[slots]
        if self.metric is Metric.L2:
            diff = sub - q32
            return (diff * diff).sum(axis=1)
        return -(sub * q32).sum(axis=1)

    def _dist1(self, q32: np.ndarray, slot: int) -> float:
        v = self._vecs[slot]
        if self.metric is Metric.L2:
            d = v - q32
            return float((d * d).sum())
        return float(-(v * q32).sum())

    def _exact(self, q, slot: int) -> float:
        """Float64 distance in the table's scoring convention."""
        return metric_distance(self.metric, self._vecs[slot], q)

    def _draw_level(self) -> int:
        u = 1.0 - self._rng.random()  # (0, 1]
        return int(-math.log(u) * self.params.resolved_level_factor())

    def _greedy(self, q32: np.ndarray, start: int, layer: int) -> int:
        best = start
        best_d = self._dist1(q32, best)
        links = self._links[layer]
        while True:
            neigh = links[best]
            if not neigh:
                return best
            ds = self._dists(q32, neigh)
            j = int(np.argmin(ds))
            if ds[j] < best_d:
                best_d = float(ds[j])
                best = neigh[j]
            else:
                return best

    def _search_layer(self, q32: np.ndarray, entries, layer: int, ef: int):
        """Classic bounded beam pass used during construction."""
        visited = bytearray(len(self._levels))
        frontier = []
        best = []  # max-heap via negated distance
        for ep in entries:
            if visited[ep]:
                continue
            visited[ep] = 1
            d = self._dist1(q32, ep)
            heapq.heappush(frontier, (d, ep))
            heapq.heappush(best, (-d, ep))
        links = self._links[layer]
        while frontier:
            d, slot = heapq.heappop(frontier)
            if len(best) >= ef and d > -best[0][0]:
                break
            fresh = [n for n in links[slot] if not visited[n]]
            if not fresh:
                continue
            for n in fresh:
                visited[n] = 1
            ds = self._dists(q32, fresh)
            for n, nd in zip(fresh, ds):
                nd = float(nd)
                if len(best) < ef:
                    heapq.heappush(frontier, (nd, n))
                    heapq.heappush(best, (-nd, n))
                elif nd < -best[0][0]:
                    heapq.heappush(frontier, (nd, n))
                    heapq.heapreplace(best, (-nd, n))
        out = sorted((-nd, s) for nd, s in best)
        return out

    def _select_neighbors(self, q32: np.ndarray, candidates, m: int):
        """Diversity-aware selection: keep a candidate only when it is closer
        to the query than to every neighbor already kept."""
        if len(candidates) <= m:
            return [s for _, s in candidates]
        chosen: list = []
        spill = []
        for d, c in candidates:
            if len(chosen) == m:
                break
            if not chosen:
                chosen.append(c)
                continue
            to_chosen = self._dists(self._vecs[c], chosen)
            if d < float(to_chosen.min()):
                chosen.append(c)
            else:
                spill.append(c)
        for c in spill:
            if len(chosen) == m:
                break
            chosen.append(c)
        return chosen

    def _cap_for(self, layer: int) -> int:
        return 2 * self.params.m if layer == 0 else self.params.m

    # -- construction -----------------------------------------------------------

    def insert(self, rid: int, vector) -> None:
        v = np.asarray(vector, dtype=np.float32)
        if v.shape != (self.dim,):
            raise DimensionMismatch(
                f"vector shape {v.shape} does not match index dim {self.dim}"
            )
        rid = int(rid)
        if rid in self._id_to_slot:
            raise DimensionMismatch(f"id {rid} already indexed")
        slot = len(self._levels)
        self._grow(slot + 1)
        self._vecs[slot] = v
        self._ids = np.append(self._ids, rid)
        self._id_to_slot[rid] = slot
        level = self._draw_level()
        self._levels.append(level)
        while len(self._links) <= max(level, self.top_level):
            self._links.append([None] * slot)
        for layer in range(len(self._links)):
            self._links[layer].append([] if layer <= level else None)

        if self.entry_slot is None:
            self.entry_slot = slot
            self.top_level = level
            return

        q32 = v
        ep = self.entry_slot
        for layer in range(self.top_level, level, -1):
            ep = self._greedy(q32, ep, layer)
        entries = [ep]
        for layer in range(min(level, self.top_level), -1, -1):
            cands = self._search_layer(
                q32, entries, layer, self.params.ef_construction
            )
            neighbors = self._select_neighbors(q32, cands, self.params.m)
            links = self._links[layer]
            cap = self._cap_for(layer)
            links[slot] = list(neighbors)
            for n in neighbors:
                links[n].append(slot)
                if len(links[n]) > cap:
                    ds = self._dists(self._vecs[n], links[n])
                    ranked = sorted(zip(ds.tolist(), links[n]))
                    links[n] = self._select_neighbors(self._vecs[n], ranked, cap)
            entries = [s for _, s in cands]

        if level > self.top_level:
            self.entry_slot = slot
            self.top_level = level

    # -- search -------------------------------------------------------------------

    def _descend(self, q32: np.ndarray) -> int:
        ep = self.entry_slot
        for layer in range(self.top_level, 0, -1):
            ep = self._greedy(q32, ep, layer)
        return ep

    def _brute(self, q, k: int, predicate=None):
        order = []
        for slot in range(len(self._levels)):
            rid = int(self._ids[slot])
            if predicate is not None and not predicate(rid):
                continue
            order.append((self._exact(q, slot), rid))
        order.sort()
        return [(rid, d) for d, rid in order[:k]]

    def search(self, q, k: int, params: SearchParams = SearchParams()):
        """Top-k by exact recomputed distance, ascending (ties by id)."""
        if k < 1:
            raise ValueError("k must be positive")
        if self.entry_slot is None:
            return []
        if k >= len(self._levels):
            return self._brute(q, k)
        results, _, _ = self._beam(q, k, params, predicate=None)
        return results

    def filtered_search(self, q, k: int, params: SearchParams, predicate_eval):
        """Qualifying top-k; returns (results, scanned_count, converged)."""
        if k < 1:
            raise ValueError("k must be positive")
        if self.entry_slot is None:
            return [], 0, False
        return self._beam(q, k, params, predicate=predicate_eval)

    def _beam(self, q, k: int, params: SearchParams, predicate):
        q32 = np.asarray(q, dtype=np.float32)
        if q32.shape != (self.dim,):
            raise DimensionMismatch(
                f"query shape {q32.shape} does not match index dim {self.dim}"
            )
        mode = params.iterative_scan
        cap = params.max_scan_tuples or (1 << 62)
        ef = max(params.ef_search, k)

        start = self._descend(q32)
        n = len(self._levels)
        seen = bytearray(n)
        seen[start] = 1
        frontier = [(self._dist1(q32, start), start)]
        best: list = []  # max-heap of the ef best visited (negated distances)
        qual: list = []  # (internal distance, slot) in discovery order
        scanned = 0
        links = self._links[0]
        first_pass = True

        while frontier:
            if scanned >= cap:
                break
            d, slot = heapq.heappop(frontier)
            if len(best) >= ef and d > -best[0][0]:
                # pass boundary reached for the current beam width
                if mode is IterativeScan.OFF:
                    break
                if len(qual) >= k:
                    break
                first_pass = False
                ef *= 2
            scanned += 1
            if len(best) < ef:
                heapq.heappush(best, (-d, slot))
            elif d < -best[0][0]:
                heapq.heapreplace(best, (-d, slot))
            if predicate is None or predicate(int(self._ids[slot])):
                qual.append((d, slot))
                if (
                    mode is IterativeScan.RELAXED
                    and not first_pass
                    and len(qual) >= k
                ):
                    break
            fresh = [x for x in links[slot] if not seen[x]]
            if fresh:
                for x in fresh:
                    seen[x] = 1
                ds = self._dists(q32, fresh)
                for x, xd in zip(fresh, ds):
                    heapq.heappush(frontier, (float(xd), x))

        if mode is IterativeScan.RELAXED:
            pool = qual[:k]
        elif len(qual) > k + 8:
            # exact output distances are recomputed below, so keep a margin
            # over k in case float32 internal ranking disagrees on near-ties
            pool = heapq.nsmallest(k + 8, qual)
        else:
            pool = qual
        exact = sorted((self._exact(q, s), int(self._ids[s])) for _, s in pool)[:k]
        results = [(rid, d) for d, rid in exact]
        return results, scanned, len(results) >= k

    # -- persistence ----------------------------------------------------------------

    MAGIC = b"HGIX"
    VERSION = 1

    def save(self, path) -> None:
        n = len(self._levels)
        parts = [
            self.MAGIC,
            struct.pack(
                "<IBIIId",
                self.VERSION,
                0 if self.metric is Metric.L2 else 1,
                self.dim,
                self.params.m,
                self.params.ef_construction,
                self.params.resolved_level_factor(),
            ),
            struct.pack(
                "<Iqi",
                n,
                -1 if self.entry_slot is None else self.entry_slot,
                self.top_level,
            ),
        ]
        state = json.dumps(self._rng.bit_generator.state)
        data = state.encode()
        parts.append(struct.pack("<I", len(data)))
        parts.append(data)
        parts.append(self._ids.astype("<i8").tobytes())
        parts.append(np.asarray(self._levels, dtype="<i4").tobytes())
        parts.append(np.ascontiguousarray(self._vecs[:n], dtype="<f4").tobytes())
        for layer in range(self.top_level + 1):
            for slot in range(n):
                if self._levels[slot] < layer:
                    continue
                neigh = self._links[layer][slot]
                parts.append(struct.pack("<I", len(neigh)))
                parts.append(np.asarray(neigh, dtype="<u4").tobytes())
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))

    @classmethod
    def load(cls, path) -> "GraphIndex":
        with open(path, "rb") as fh:
            buf = fh.read()
        if buf[:4] != cls.MAGIC:
            raise PersistenceError(f"{path}: not an index file")
        version, metric_code, dim, m, efc, lf = struct.unpack_from("<IBIIId", buf, 4)
        if version != cls.VERSION:
            raise PersistenceError(f"{path}: unsupported index version {version}")
        offset = 4 + struct.calcsize("<IBIIId")
        n, entry, top = struct.unpack_from("<Iqi", buf, offset)
        offset += struct.calcsize("<Iqi")
        (state_len,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        rng_state = json.loads(buf[offset : offset + state_len].decode())
        offset += state_len

        metric = Metric.L2 if metric_code == 0 else Metric.INNER_PRODUCT
        idx = cls(dim, metric, BuildParams(m=m, ef_construction=efc, level_factor=lf))
        idx._rng.bit_generator.state = rng_state
        idx._ids = np.frombuffer(buf[offset : offset + 8 * n], dtype="<i8").copy()
        offset += 8 * n
        idx._grow(n)
        idx._levels = (
            np.frombuffer(buf[offset : offset + 4 * n], dtype="<i4").tolist()
        )
        offset += 4 * n
        idx._vecs[:n] = np.frombuffer(
            buf[offset : offset + 4 * n * dim], dtype="<f4"
        ).reshape(n, dim)
        offset += 4 * n * dim
        idx._id_to_slot = {int(r): s for s, r in enumerate(idx._ids)}
        idx.entry_slot = None if entry < 0 else int(entry)
        idx.top_level = int(top)
        idx._links = [[None] * n for _ in range(max(top + 1, 1))]
        for layer in range(top + 1):
            for slot in range(n):
                if idx._levels[slot] < layer:
                    continue
                (cnt,) = struct.unpack_from("<I", buf, offset)
                offset += 4
                neigh = np.frombuffer(buf[offset : offset + 4 * cnt], dtype="<u4")
                offset += 4 * cnt
                idx._links[layer][slot] = [int(x) for x in neigh]
        idx.validate()
        return idx

    def validate(self) -> None:
        """Check the base-layer reachability invariant; raises on violation."""
        n = len(self._levels)
        if n == 0:
            return
        if self.entry_slot is None:
            raise PersistenceError("non-empty index without an entry point")
        seen = bytearray(n)
        stack = [self.entry_slot]
        seen[self.entry_slot] = 1
        links = self._links[0]
        while stack:
            slot = stack.pop()
            for x in links[slot]:
                if not seen[x]:
                    seen[x] = 1
                    stack.append(x)
        missing = n - sum(seen)
        if missing:
            raise PersistenceError(
                f"{missing} nodes unreachable from the entry point"
            )

    def degree_bound_ok(self) -> bool:
        for layer in range(self.top_level + 1):
            cap = self._cap_for(layer)
            for slot, neigh in enumerate(self._links[layer]):
                if neigh is not None and len(neigh) > cap:
                    return False
        return True


def build(table: Table, column: str, params: BuildParams = BuildParams()) -> GraphIndex:
    """Index every current row of one vector column."""
    spec = table.schema.vector_column(column)
    if table.row_count == 0:
        raise EmptyTable("cannot build an index over an empty table")
    idx = GraphIndex(spec.dim, spec.metric, params)
    mat = table.vector_matrix(column)
    for pos, rid in enumerate(table.ids):
        idx.insert(int(rid), mat[pos])
    return idx
