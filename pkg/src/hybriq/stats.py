"""Per-column equi-width histograms with prefix sums for selectivity estimates.

Range estimates binary-search the bin edges and interpolate linearly inside
the boundary bin; thresholds that land exactly on an edge are exact.
Conjunctions multiply per-predicate estimates (attribute independence).
"""

from __future__ import annotations

import struct
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .errors import ColumnMismatch, EmptyTable, MissingHistogram, UnknownColumn
from .fileio import pack_array, pack_str, unpack_array, unpack_str
from .store import Predicate, PredicateOp, ScalarKind, Table


@dataclass
class Histogram:
    column: str
    kind: ScalarKind
    total_count: int
    # numeric
    bin_edges: np.ndarray = None  # len num_bins + 1, strictly increasing
    counts: np.ndarray = None
    prefix_sums: np.ndarray = None
    # categorical
    frequencies: dict = field(default_factory=dict)

    @property
    def num_bins(self) -> int:
        return 0 if self.counts is None else len(self.counts)


def build_histogram(table: Table, column: str, num_bins: int = 100) -> Histogram:
    if table.row_count == 0:
        raise EmptyTable("cannot build a histogram over an empty table")
    col = table.schema.scalar_column(column)
    if col.kind is ScalarKind.CATEGORICAL:
        freqs: dict = {}
        for v in table.categorical_values(column):
            freqs[v] = freqs.get(v, 0) + 1
        return Histogram(
            column=column,
            kind=col.kind,
            total_count=table.row_count,
            frequencies=freqs,
        )

    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    values = table.numeric_values(column)
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        # degenerate range: one bin holding everything
        edges = np.array([lo, hi], dtype=np.float64)
        counts = np.array([len(values)], dtype=np.int64)
    else:
        edges = np.linspace(lo, hi, num_bins + 1)
        counts, _ = np.histogram(values, bins=edges)
        counts = counts.astype(np.int64)
    return Histogram(
        column=column,
        kind=col.kind,
        total_count=int(counts.sum()),
        bin_edges=edges,
        counts=counts,
        prefix_sums=np.cumsum(counts),
    )


def _cdf(hist: Histogram, threshold: float) -> float:
    """Estimated fraction of values below ``threshold``."""
    edges = hist.bin_edges
    total = hist.total_count
    if threshold <= edges[0]:
        return 0.0
    if threshold >= edges[-1]:
        return 1.0
    # rightmost edge <= threshold; bin b covers [edges[b], edges[b+1])
    b = bisect_right(edges.tolist(), threshold) - 1
    below = float(hist.prefix_sums[b - 1]) if b > 0 else 0.0
    width = edges[b + 1] - edges[b]
    frac = (threshold - edges[b]) / width if width > 0 else 0.0
    return (below + frac * float(hist.counts[b])) / total


def estimate_predicate(hist: Histogram, predicate: Predicate) -> float:
    if predicate.column != hist.column:
        raise ColumnMismatch(
            f"histogram is for {hist.column!r}, predicate targets {predicate.column!r}"
        )
    if hist.kind is ScalarKind.CATEGORICAL:
        if predicate.op is not PredicateOp.EQ:
            raise ColumnMismatch("categorical histograms only estimate equality")
        return hist.frequencies.get(str(predicate.value), 0) / hist.total_count

    op = predicate.op
    if op in (PredicateOp.LT, PredicateOp.LE):
        return _cdf(hist, float(predicate.value))
    if op in (PredicateOp.GT, PredicateOp.GE):
        return 1.0 - _cdf(hist, float(predicate.value))
    if op is PredicateOp.BETWEEN:
        lo, hi = float(predicate.value), float(predicate.high)
        return max(0.0, _cdf(hist, hi) - _cdf(hist, lo))
    # equality on a continuous column: mass of the containing bin spread
    # over its width, a deliberately rough heuristic
    v = float(predicate.value)
    edges = hist.bin_edges
    if v < edges[0] or v > edges[-1]:
        return 0.0
    b = min(bisect_right(edges.tolist(), v) - 1, hist.num_bins - 1)
    width = float(edges[b + 1] - edges[b]) if hist.num_bins else 0.0
    mass = float(hist.counts[b]) / hist.total_count
    if width <= 1.0:
        return mass
    return min(1.0, mass / width)


def estimate_conjunction(histograms: dict, predicates) -> float:
    """Product of per-predicate selectivities; an empty list estimates 1.0."""
    sel = 1.0
    for p in predicates:
        if p.column not in histograms:
            raise MissingHistogram(f"no histogram for column {p.column!r}")
        sel *= estimate_predicate(histograms[p.column], p)
    return sel


class StatsCatalog:
    """All histograms for one table, with a lazy rebuild policy: stats are
    refreshed once inserts since the last build exceed a fraction of the
    row count that was seen then."""

    def __init__(self, table: Table, num_bins: int = 100, refresh_fraction: float = 0.10):
        self.table = table
        self.num_bins = num_bins
        self.refresh_fraction = refresh_fraction
        self.histograms: dict = {}
        self._rows_at_build = 0

    def build(self) -> None:
        self.histograms = {
            c.name: build_histogram(self.table, c.name, self.num_bins)
            for c in self.table.schema.scalar_columns
        }
        self._rows_at_build = self.table.row_count

    def maybe_refresh(self) -> bool:
        if not self.histograms:
            return False
        grown = self.table.row_count - self._rows_at_build
        if self._rows_at_build and grown / self._rows_at_build > self.refresh_fraction:
            self.build()
            return True
        return False

    def estimate(self, predicates) -> float:
        if not self.histograms:
            raise MissingHistogram("statistics have not been built")
        self.maybe_refresh()
        return estimate_conjunction(self.histograms, predicates)

    def numeric_range(self, column: str) -> tuple:
        hist = self.histograms.get(column)
        if hist is None:
            raise MissingHistogram(f"no histogram for column {column!r}")
        if hist.kind is not ScalarKind.NUMERIC:
            raise ColumnMismatch(f"{column!r} is not numeric")
        return float(hist.bin_edges[0]), float(hist.bin_edges[-1])

    # -- persistence: compact binary section --------------------------------

    MAGIC = b"HSTA"
    VERSION = 1

    def dump(self, path) -> None:
        parts = [self.MAGIC, struct.pack("<IQI", self.VERSION, self._rows_at_build,
                                         len(self.histograms))]
        for name, h in self.histograms.items():
            parts.append(pack_str(name))
            parts.append(struct.pack("<BQ", 0 if h.kind is ScalarKind.NUMERIC else 1,
                                     h.total_count))
            if h.kind is ScalarKind.NUMERIC:
                parts.append(struct.pack("<I", h.num_bins))
                parts.append(pack_array(h.bin_edges.astype("<f8")))
                parts.append(pack_array(h.counts.astype("<i8")))
            else:
                parts.append(struct.pack("<I", len(h.frequencies)))
                for cat, cnt in sorted(h.frequencies.items()):
                    parts.append(pack_str(cat))
                    parts.append(struct.pack("<q", cnt))
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))

    def load(self, path) -> None:
        with open(path, "rb") as fh:
            buf = fh.read()
        if buf[:4] != self.MAGIC:
            raise UnknownColumn(f"{path}: not a statistics file")
        version, rows_at_build, count = struct.unpack_from("<IQI", buf, 4)
        if version != self.VERSION:
            raise UnknownColumn(f"{path}: unsupported stats version {version}")
        offset = 4 + struct.calcsize("<IQI")
        hists = {}
        for _ in range(count):
            name, offset = unpack_str(buf, offset)
            kind_code, total = struct.unpack_from("<BQ", buf, offset)
            offset += struct.calcsize("<BQ")
            if kind_code == 0:
                (nbins,) = struct.unpack_from("<I", buf, offset)
                offset += 4
                edges, offset = unpack_array(buf, offset, "<f8", (nbins + 1,))
                counts, offset = unpack_array(buf, offset, "<i8", (nbins,))
                hists[name] = Histogram(
                    column=name, kind=ScalarKind.NUMERIC, total_count=int(total),
                    bin_edges=edges, counts=counts, prefix_sums=np.cumsum(counts),
                )
            else:
                (ncats,) = struct.unpack_from("<I", buf, offset)
                offset += 4
                freqs = {}
                for _ in range(ncats):
                    cat, offset = unpack_str(buf, offset)
                    (cnt,) = struct.unpack_from("<q", buf, offset)
                    offset += 8
                    freqs[cat] = cnt
                hists[name] = Histogram(
                    column=name, kind=ScalarKind.CATEGORICAL,
                    total_count=int(total), frequencies=freqs,
                )
        self.histograms = hists
        self._rows_at_build = rows_at_build
