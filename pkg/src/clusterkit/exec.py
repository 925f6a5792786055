"""A small instrumented query executor.

Operators work on row selections: per-chunk offset lists into a base table,
the analogue of reference segments. Scans prune chunks with min/max
statistics, use binary search on sorted base chunks and report their sizes
and timings; the hash join is split into the usual materialize, radix
cluster, build, probe and output steps.
"""

from __future__ import annotations

import math
import shlex
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .mvcc import TransactionContext, visible_mask
from .storage import DataType, DictionarySegment, MinMaxStats, Table

CACHE_BUDGET_BYTES = 2 ** 21
HASH_ENTRY_BYTES = 16
MAX_RADIX_BITS = 8

COMPARATORS = ("=", "<", "<=", ">", ">=", "between", "like-prefix", "like-infix")
_ALIASES = {"==": "=", "≤": "<=", "≥": ">=", "like_prefix": "like-prefix", "like_infix": "like-infix"}


class QueryError(Exception):
    pass


@dataclass(frozen=True)
class ColumnRef:
    """Operand naming another column of the same table."""

    name: str


@dataclass
class PredicateSpec:
    column: Any  # column id or name
    comparator: str
    value: Any = None
    value2: Any = None

    def __post_init__(self):
        self.comparator = _ALIASES.get(self.comparator, self.comparator)
        if self.comparator not in COMPARATORS:
            raise QueryError(f"unsupported comparator {self.comparator!r}")
        if self.comparator == "between" and self.value2 is None:
            raise QueryError("between needs two operands")
        if self.comparator.startswith("like") and isinstance(self.value, str):
            self.value = self.value.strip("%")

    @property
    def is_column_comparison(self) -> bool:
        return isinstance(self.value, ColumnRef)

    @property
    def pruning_usable(self) -> bool:
        return self.comparator != "like-infix" and not self.is_column_comparison

    @property
    def sortedness_usable(self) -> bool:
        return self.pruning_usable

    def interval(self):
        """(low, low_inclusive, high, high_inclusive); None bounds are open."""
        op, v = self.comparator, self.value
        if op == "=":
            return v, True, v, True
        if op == "<":
            return None, False, v, False
        if op == "<=":
            return None, False, v, True
        if op == ">":
            return v, False, None, False
        if op == ">=":
            return v, True, None, False
        if op == "between":
            return v, True, self.value2, True
        if op == "like-prefix":
            if v == "":
                return None, False, None, False
            return v, True, v[:-1] + chr(ord(v[-1]) + 1), False
        raise QueryError(f"{op} has no interval form")

    def bind(self, table: Table) -> "PredicateSpec":
        """Resolve the column and coerce operands to the column type."""
        column = table.column_id(self.column)
        dtype = table.schema.columns[column].data_type
        if self.is_column_comparison:
            other = table.column_id(self.value.name)
            if table.schema.columns[other].data_type.is_string != dtype.is_string:
                raise QueryError("type mismatch between compared columns")
            return PredicateSpec(column, self.comparator, ColumnRef(table.schema.names[other]))
        return PredicateSpec(column, self.comparator, _coerce_operand(self.value, dtype, self.comparator),
                             _coerce_operand(self.value2, dtype, self.comparator))


def _coerce_operand(value, dtype: DataType, comparator: str):
    if value is None:
        return None
    if comparator.startswith("like"):
        if not dtype.is_string:
            raise QueryError("LIKE requires a string column")
        return str(value)
    if dtype.is_string:
        if not isinstance(value, str):
            raise QueryError(f"type mismatch: {value!r} against a string column")
        return value
    if isinstance(value, str):
        try:
            value = float(value) if any(ch in value for ch in ".eE") else int(value)
        except ValueError:
            raise QueryError(f"type mismatch: {value!r} against a numeric column") from None
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, (int, float, np.integer, np.floating)):
        raise QueryError(f"type mismatch: {value!r} against a numeric column")
    return value.item() if isinstance(value, np.generic) else value


def can_prune(stats: MinMaxStats, predicate: PredicateSpec) -> bool:
    """True only if no row summarized by ``stats`` can match ``predicate``."""
    if not predicate.pruning_usable:
        return False
    if stats.min is None:
        return True  # only nulls, which never match
    lo, lo_inc, hi, hi_inc = predicate.interval()
    try:
        if lo is not None and hi is not None and (lo > hi or (lo == hi and not (lo_inc and hi_inc))):
            return True
        if lo is not None and (lo > stats.max or (lo == stats.max and not lo_inc)):
            return True
        if hi is not None and (hi < stats.min or (hi == stats.min and not hi_inc)):
            return True
    except TypeError:
        raise QueryError("type mismatch between predicate and column statistics") from None
    return False


# ---------------------------------------------------------------- selections

@dataclass
class ChunkSelection:
    chunk_id: int
    chunk: Any
    offsets: np.ndarray | None  # None: all physical rows of the chunk
    n: int  # physical rows considered when offsets is None

    @property
    def size(self) -> int:
        return self.n if self.offsets is None else len(self.offsets)

    def positions(self) -> np.ndarray:
        return np.arange(self.n, dtype=np.int64) if self.offsets is None else self.offsets


@dataclass
class RowSelection:
    table: Table
    chunks: list = field(default_factory=list)
    is_reference: bool = False  # output of a scan or join rather than a stored table

    @property
    def row_count(self) -> int:
        return sum(c.size for c in self.chunks)

    @property
    def chunk_count(self) -> int:
        return sum(1 for c in self.chunks if c.size)

    def row_ids(self) -> list[tuple[int, int]]:
        return [(c.chunk_id, int(o)) for c in self.chunks for o in c.positions()]

    def column(self, column) -> tuple[np.ndarray, np.ndarray]:
        """Values and null mask of one column over all selected rows."""
        column = self.table.column_id(column)
        values, nulls = [], []
        for cs in self.chunks:
            if cs.size == 0:
                continue
            if cs.offsets is None:
                v, m = cs.chunk.segments[column].arrays(cs.n)
            else:
                v, m = cs.chunk.segments[column].take(cs.offsets)
            values.append(v)
            nulls.append(np.zeros(len(v), dtype=bool) if m is None else m)
        dtype = self.table.schema.columns[column].data_type.numpy_dtype
        if not values:
            return np.empty(0, dtype=dtype), np.empty(0, dtype=bool)
        return np.concatenate(values), np.concatenate(nulls)

    def rows(self) -> list[tuple]:
        out = []
        for cs in self.chunks:
            if cs.size:
                out.extend(cs.chunk.rows(cs.positions()))
        return out


@dataclass
class OperatorReport:
    kind: str
    table: str = ""
    column: str = ""
    comparator: str = ""
    input_rows: int = 0
    output_rows: int = 0
    input_chunks: int = 0
    runtime_ns: int = 0
    on_reference_input: bool = False
    pruning_usable: bool = True
    sortedness_usable: bool = True
    column_comparison: bool = False
    binary_search_chunks: int = 0
    # joins
    mode: str = ""
    build_table: str = ""
    build_column: str = ""
    probe_table: str = ""
    probe_column: str = ""
    build_input_rows: int = 0
    steps: dict = field(default_factory=dict)
    radix_bits: int = 0
    data_arrives_sorted: bool = False

    @property
    def selectivity(self) -> float:
        return 1.0 if self.input_rows == 0 else self.output_rows / self.input_rows


JOIN_STEPS = ("materialize_build", "materialize_probe", "radix_cluster", "build", "probe", "output")


# ---------------------------------------------------------------- operators

def get_table(ctx: TransactionContext, table: Table) -> RowSelection:
    """All chunks not logically deleted as of the snapshot."""
    sel = RowSelection(table)
    for chunk_id, chunk in table.live_chunks():
        if chunk.mvcc.cleanup_commit_id <= ctx.snapshot_cid:
            continue
        sel.chunks.append(ChunkSelection(chunk_id, chunk, None, chunk.size))
    return sel


def prune_chunks(table: Table, predicates: Sequence[PredicateSpec], selection: RowSelection | None = None):
    """Chunk ids surviving min/max pruning (mutable chunks are never pruned)."""
    preds = [p.bind(table) for p in predicates]
    preds = [p for p in preds if p.pruning_usable]
    ids = [cs.chunk_id for cs in selection.chunks] if selection is not None else \
        [i for i, _ in table.live_chunks()]
    kept = set()
    for chunk_id in ids:
        chunk = table.chunks[chunk_id]
        if chunk is None:
            continue
        if chunk.stats is None or not any(can_prune(chunk.stats[p.column], p) for p in preds):
            kept.add(chunk_id)
    return kept


def _apply_pruning(selection: RowSelection, kept: set) -> RowSelection:
    return RowSelection(selection.table, [cs for cs in selection.chunks if cs.chunk_id in kept],
                        selection.is_reference)


def validate(ctx: TransactionContext, selection: RowSelection) -> RowSelection:
    """Keep only rows visible to ``ctx``."""
    out = RowSelection(selection.table, is_reference=selection.is_reference)
    for cs in selection.chunks:
        n = cs.n if cs.offsets is None else cs.chunk.size
        mask = visible_mask(cs.chunk, ctx, n)
        if cs.offsets is None:
            if mask.all():
                out.chunks.append(ChunkSelection(cs.chunk_id, cs.chunk, None, n))
                continue
            offsets = np.flatnonzero(mask).astype(np.int64)
        else:
            offsets = cs.offsets[mask[cs.offsets]]
        if len(offsets):
            out.chunks.append(ChunkSelection(cs.chunk_id, cs.chunk, offsets, n))
    return out


def _interval_mask(values: np.ndarray, lo, lo_inc, hi, hi_inc) -> np.ndarray:
    mask = np.ones(len(values), dtype=bool)
    if lo is not None:
        mask &= (values >= lo) if lo_inc else (values > lo)
    if hi is not None:
        mask &= (values <= hi) if hi_inc else (values < hi)
    return mask


def _dictionary_id_range(dictionary: np.ndarray, lo, lo_inc, hi, hi_inc) -> tuple[int, int]:
    a = 0 if lo is None else int(np.searchsorted(dictionary, lo, "left" if lo_inc else "right"))
    b = len(dictionary) if hi is None else int(np.searchsorted(dictionary, hi, "right" if hi_inc else "left"))
    return a, max(a, b)


def _scan_segment(segment, positions: np.ndarray | None, n: int, pred: PredicateSpec) -> np.ndarray:
    """Boolean match mask over ``positions`` (or the first ``n`` rows)."""
    if pred.comparator == "like-infix":
        needle = pred.value
        if isinstance(segment, DictionarySegment):
            hits = np.fromiter((needle in v for v in segment.dictionary.tolist()), dtype=bool,
                               count=len(segment.dictionary))
            hits = np.append(hits, False)
            ids = segment.value_ids[:n] if positions is None else segment.value_ids[positions]
            return hits[ids]
        vals, nulls = segment.arrays(n) if positions is None else segment.take(positions)
        mask = np.fromiter((needle in v for v in vals.tolist()), dtype=bool, count=len(vals))
        return mask if nulls is None else mask & ~nulls
    lo, lo_inc, hi, hi_inc = pred.interval()
    if isinstance(segment, DictionarySegment):
        a, b = _dictionary_id_range(segment.dictionary, lo, lo_inc, hi, hi_inc)
        ids = segment.value_ids[:n] if positions is None else segment.value_ids[positions]
        return (ids >= a) & (ids < b)
    vals, nulls = segment.arrays(n) if positions is None else segment.take(positions)
    mask = _interval_mask(vals, lo, lo_inc, hi, hi_inc)
    return mask if nulls is None else mask & ~nulls


def _binary_search_range(segment, n: int, pred: PredicateSpec) -> tuple[int, int]:
    """Matching row range of a chunk sorted ascending (nulls last)."""
    lo, lo_inc, hi, hi_inc = pred.interval()
    if isinstance(segment, DictionarySegment):
        a, b = _dictionary_id_range(segment.dictionary, lo, lo_inc, hi, hi_inc)
        ids = segment.value_ids[:n]
        return int(np.searchsorted(ids, a, "left")), int(np.searchsorted(ids, b, "left"))
    vals, nulls = segment.arrays(n)
    m = n if nulls is None else n - int(nulls.sum())
    vals = vals[:m]
    start = 0 if lo is None else int(np.searchsorted(vals, lo, "left" if lo_inc else "right"))
    end = m if hi is None else int(np.searchsorted(vals, hi, "right" if hi_inc else "left"))
    return start, max(start, end)


def _compare_columns(table, cs: ChunkSelection, pred: PredicateSpec) -> np.ndarray:
    other = table.column_id(pred.value.name)
    pos = cs.positions()
    a, an = cs.chunk.segments[pred.column].take(pos)
    b, bn = cs.chunk.segments[other].take(pos)
    op = pred.comparator
    if op == "=":
        mask = a == b
    elif op == "<":
        mask = a < b
    elif op == "<=":
        mask = a <= b
    elif op == ">":
        mask = a > b
    elif op == ">=":
        mask = a >= b
    else:
        raise QueryError(f"{op} cannot compare two columns")
    mask = np.asarray(mask, dtype=bool)
    if an is not None:
        mask &= ~an
    if bn is not None:
        mask &= ~bn
    return mask


def table_scan(selection: RowSelection, predicate: PredicateSpec, use_binary_search: bool = True):
    """Filter ``selection``; returns (RowSelection, OperatorReport).

    Binary search is used on immutable chunks sorted by the predicate column
    when the input comes straight from the stored table (after pruning and
    visibility filtering) and the predicate supports it.
    """
    table = selection.table
    pred = predicate.bind(table)
    t0 = time.perf_counter_ns()
    out = RowSelection(table, is_reference=True)
    binary_chunks = 0
    for cs in selection.chunks:
        if cs.size == 0:
            continue
        segment = cs.chunk.segments[pred.column]
        if pred.is_column_comparison:
            offsets = cs.positions()[_compare_columns(table, cs, pred)]
        elif (use_binary_search and not selection.is_reference and pred.sortedness_usable
              and not cs.chunk.mutable and cs.chunk.sort_column == pred.column):
            binary_chunks += 1
            start, end = _binary_search_range(segment, cs.chunk.size, pred)
            if cs.offsets is None:
                offsets = np.arange(start, min(end, cs.n), dtype=np.int64)
            else:
                o = cs.offsets
                offsets = o[(o >= start) & (o < end)]
        elif cs.offsets is None:
            offsets = np.flatnonzero(_scan_segment(segment, None, cs.n, pred)).astype(np.int64)
        else:
            offsets = cs.offsets[_scan_segment(segment, cs.offsets, cs.n, pred)]
        if len(offsets):
            out.chunks.append(ChunkSelection(cs.chunk_id, cs.chunk, offsets, cs.n))
    runtime = time.perf_counter_ns() - t0
    report = OperatorReport(
        kind="scan", table=table.name, column=table.schema.names[pred.column],
        comparator=pred.comparator, input_rows=selection.row_count, output_rows=out.row_count,
        input_chunks=selection.chunk_count, runtime_ns=runtime,
        on_reference_input=selection.is_reference, pruning_usable=pred.pruning_usable,
        sortedness_usable=pred.sortedness_usable, column_comparison=pred.is_column_comparison,
        binary_search_chunks=binary_chunks)
    return out, report


# ---------------------------------------------------------------- hash join

@dataclass
class JoinResult:
    build_positions: np.ndarray  # (k, 2) chunk id / offset of matched build rows
    probe_positions: np.ndarray  # (k, 2) for the probe side
    report: OperatorReport
    mode: str

    def build_selection(self, table: Table) -> RowSelection:
        return _selection_from_positions(table, self.build_positions)

    def probe_selection(self, table: Table) -> RowSelection:
        return _selection_from_positions(table, self.probe_positions)


def _selection_from_positions(table: Table, positions: np.ndarray) -> RowSelection:
    sel = RowSelection(table, is_reference=True)
    if len(positions) == 0:
        return sel
    uniq = np.unique(positions, axis=0)
    chunk_ids, starts = np.unique(uniq[:, 0], return_index=True)
    bounds = list(starts[1:]) + [len(uniq)]
    for chunk_id, a, b in zip(chunk_ids.tolist(), starts.tolist(), bounds):
        chunk = table.chunks[chunk_id]
        sel.chunks.append(ChunkSelection(chunk_id, chunk, uniq[a:b, 1].astype(np.int64), chunk.size))
    return sel


def _materialize(selection: RowSelection, column: int):
    """Key values plus (chunk id, offset) positions of non-null rows."""
    values, nulls = selection.column(column)
    ids = np.concatenate([np.full(cs.size, cs.chunk_id, dtype=np.int64) for cs in selection.chunks if cs.size]) \
        if selection.row_count else np.empty(0, dtype=np.int64)
    offs = np.concatenate([cs.positions() for cs in selection.chunks if cs.size]) \
        if selection.row_count else np.empty(0, dtype=np.int64)
    keep = ~nulls
    return values[keep], np.column_stack([ids[keep], offs[keep]])


def radix_bits_for(build_rows: int, cache_budget_bytes: int = CACHE_BUDGET_BYTES) -> int:
    """Smallest r so that each of the 2^r partitions' hash maps fits the budget."""
    size = build_rows * HASH_ENTRY_BYTES
    if size <= cache_budget_bytes:
        return 0
    return min(MAX_RADIX_BITS, math.ceil(math.log2(size / cache_budget_bytes)))


def _hash_keys(keys: np.ndarray) -> np.ndarray:
    if keys.dtype.kind in "iu":
        return keys.astype(np.int64, copy=False)
    if keys.dtype.kind == "f":
        # equal floats must land in the same partition; -0.0 == 0.0
        return (keys + 0.0).view(np.int64) >> 12
    return np.fromiter((hash(k) for k in keys.tolist()), dtype=np.int64, count=len(keys))


def _check_join_types(build: Table, bcol: int, probe: Table, pcol: int):
    bt = build.schema.columns[bcol].data_type
    pt = probe.schema.columns[pcol].data_type
    if bt.is_string != pt.is_string:
        raise QueryError("join columns are not type compatible")
    return bt, pt


def hash_join(build: RowSelection, probe: RowSelection, build_column, probe_column, mode: str = "inner",
              cache_budget_bytes: int = CACHE_BUDGET_BYTES) -> JoinResult:
    if mode not in ("inner", "semi"):
        raise QueryError(f"unsupported join mode {mode!r}")
    bcol = build.table.column_id(build_column)
    pcol = probe.table.column_id(probe_column)
    bt, pt = _check_join_types(build.table, bcol, probe.table, pcol)
    steps = {}
    clock = time.perf_counter_ns
    t_start = clock()

    t = clock()
    bkeys, bpos = _materialize(build, bcol)
    steps["materialize_build"] = clock() - t
    t = clock()
    pkeys, ppos = _materialize(probe, pcol)
    steps["materialize_probe"] = clock() - t
    if (bt is DataType.FLOAT64) != (pt is DataType.FLOAT64):
        bkeys, pkeys = bkeys.astype(np.float64), pkeys.astype(np.float64)

    t = clock()
    r = radix_bits_for(len(bkeys), cache_budget_bytes)
    if r:
        mask = (1 << r) - 1
        bpart = _hash_keys(bkeys) & mask
        ppart = _hash_keys(pkeys) & mask
        border = np.argsort(bpart, kind="stable")
        porder = np.argsort(ppart, kind="stable")
        bbounds = np.searchsorted(bpart[border], np.arange((1 << r) + 1))
        pbounds = np.searchsorted(ppart[porder], np.arange((1 << r) + 1))
        partitions = [(border[bbounds[i]:bbounds[i + 1]], porder[pbounds[i]:pbounds[i + 1]]) for i in range(1 << r)]
    else:
        partitions = [(np.arange(len(bkeys)), np.arange(len(pkeys)))]
    # an absent radix step is recorded as exactly zero
    steps["radix_cluster"] = clock() - t if r else 0

    # build: one hash map per partition, key -> group of build rows
    t = clock()
    tables = []
    for bidx, _ in partitions:
        keys = bkeys[bidx]
        order = np.argsort(keys, kind="stable")
        uniq, starts, counts = np.unique(keys[order], return_index=True, return_counts=True)
        tables.append((dict(zip(uniq.tolist(), range(len(uniq)))), bidx[order], starts, counts))
    steps["build"] = clock() - t

    t = clock()
    matches = []
    for (bidx, pidx), (hmap, members, starts, counts) in zip(partitions, tables):
        if len(pidx) == 0 or not hmap:
            continue
        get = hmap.get
        groups = np.fromiter((get(k, -1) for k in pkeys[pidx].tolist()), dtype=np.int64, count=len(pidx))
        hit = groups >= 0
        matches.append((pidx[hit], groups[hit], members, starts, counts))
    steps["probe"] = clock() - t

    t = clock()
    bout, pout = [], []
    for prows, groups, members, starts, counts in matches:
        if mode == "semi":
            pout.append(prows)
            continue
        reps = counts[groups]
        pout.append(np.repeat(prows, reps))
        first = np.repeat(starts[groups], reps)
        within = np.arange(len(first)) - np.repeat(np.cumsum(reps) - reps, reps)
        bout.append(members[first + within])
    empty = np.empty((0, 2), dtype=np.int64)
    probe_positions = ppos[np.concatenate(pout)] if pout else empty
    build_positions = bpos[np.concatenate(bout)] if bout else empty
    steps["output"] = clock() - t
    total = clock() - t_start

    probe_chunks = [cs.chunk for cs in probe.chunks if cs.size]
    sorted_input = bool(probe_chunks) and all(
        c.sort_column == pcol and not c.mutable for c in probe_chunks)
    report = OperatorReport(
        kind="join", mode=mode, input_rows=probe.row_count, output_rows=len(probe_positions),
        input_chunks=probe.chunk_count, runtime_ns=total, on_reference_input=probe.is_reference,
        build_table=build.table.name, build_column=build.table.schema.names[bcol],
        probe_table=probe.table.name, probe_column=probe.table.schema.names[pcol],
        build_input_rows=build.row_count, steps=steps, radix_bits=r,
        data_arrives_sorted=sorted_input and r == 0)
    return JoinResult(build_positions, probe_positions, report, mode)


# ---------------------------------------------------------------- queries

@dataclass
class ScanOp:
    table: str
    predicate: PredicateSpec


@dataclass
class JoinOp:
    mode: str
    build_table: str
    build_column: str
    probe_table: str
    probe_column: str


@dataclass
class QuerySpec:
    query_id: str
    operators: list = field(default_factory=list)
    reorder_predicates: bool = False

    @property
    def scans(self) -> list[ScanOp]:
        return [op for op in self.operators if isinstance(op, ScanOp)]

    @property
    def joins(self) -> list[JoinOp]:
        return [op for op in self.operators if isinstance(op, JoinOp)]

    def tables(self) -> list[str]:
        names = []
        for op in self.operators:
            for name in ((op.table,) if isinstance(op, ScanOp) else (op.build_table, op.probe_table)):
                if name not in names:
                    names.append(name)
        return names


@dataclass
class QueryResult:
    query_id: str
    reports: list
    selections: dict
    runtime_ns: int = 0

    @property
    def scan_reports(self):
        return [r for r in self.reports if r.kind == "scan"]

    @property
    def join_reports(self):
        return [r for r in self.reports if r.kind == "join"]


def _parse_operand(token: str):
    if token.startswith("@"):
        return ColumnRef(token[1:])
    return token


def parse_queries(text: str) -> list[QuerySpec]:
    """Parse the line-oriented query format.

    ::

        query q1
        reorder on
        scan orders o_date >= 2020-01-01
        join inner customer.c_id = orders.o_cust

    Operands stay textual and are coerced against the column type when the
    query runs; ``@col`` compares against another column. A file without
    ``query`` lines holds a single query named ``q1``.
    """
    queries: list[QuerySpec] = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = shlex.split(line)
        keyword = tokens[0].lower()
        if keyword == "query":
            current = QuerySpec(tokens[1] if len(tokens) > 1 else f"q{len(queries) + 1}")
            queries.append(current)
            continue
        if current is None:
            current = QuerySpec(f"q{len(queries) + 1}")
            queries.append(current)
        try:
            if keyword == "reorder":
                current.reorder_predicates = tokens[1].lower() in ("on", "true", "1", "yes")
            elif keyword == "scan":
                table, column, op = tokens[1:4]
                operands = tokens[4:]
                if op.lower() == "between" and len(operands) == 3 and operands[1].lower() == "and":
                    operands = [operands[0], operands[2]]
                pred = PredicateSpec(column, op.lower() if op.lower().startswith("like") else op,
                                     _parse_operand(operands[0]) if operands else None,
                                     operands[1] if len(operands) > 1 else None)
                current.operators.append(ScanOp(table, pred))
            elif keyword == "join":
                mode, left, eq, right = tokens[1:5]
                if eq != "=":
                    raise QueryError("expected '=' in join")
                bt, bc = left.split(".", 1)
                pt, pc = right.split(".", 1)
                current.operators.append(JoinOp(mode.lower(), bt, bc, pt, pc))
            else:
                raise QueryError(f"unknown keyword {keyword!r}")
        except (IndexError, ValueError, QueryError) as exc:
            raise QueryError(f"line {lineno}: {exc}") from None
    return queries


def estimate_selectivity(table: Table, predicate: PredicateSpec) -> float:
    """Histogram-based selectivity guess, used only to order scans."""
    pred = predicate.bind(table)
    if not pred.pruning_usable:
        return 1.0
    try:
        hist = table.histogram(pred.column)
    except Exception:
        return 1.0
    total = hist.total_count
    if total == 0:
        return 0.0
    lo, lo_inc, hi, hi_inc = pred.interval()
    hit = 0.0
    for b in hist.bins:
        if (lo is not None and (b.upper < lo)) or (hi is not None and b.lower > hi):
            continue
        if isinstance(b.lower, (int, float)) and not isinstance(lo, str) and b.upper > b.lower:
            a = b.lower if lo is None else max(lo, b.lower)
            z = b.upper if hi is None else min(hi, b.upper)
            width = b.upper - b.lower
            frac = 1.0 / b.distinct_count if pred.comparator == "=" else max(z - a, 0) / width
            hit += b.row_count * min(1.0, max(frac, 1.0 / b.distinct_count))
        else:
            hit += b.row_count / (b.distinct_count if pred.comparator == "=" else 1)
    return min(1.0, hit / total)


def run_query(ctx: TransactionContext, spec: QuerySpec, tables: dict, use_pruning: bool = True) -> QueryResult:
    """get_table, prune, validate, scans (optionally reordered), then joins."""
    t0 = time.perf_counter_ns()
    for name in spec.tables():
        if name not in tables:
            raise QueryError(f"query {spec.query_id} references unknown table {name!r}")
    scans_by_table: dict[str, list[PredicateSpec]] = {}
    for op in spec.scans:
        scans_by_table.setdefault(op.table, []).append(op.predicate)
    if spec.reorder_predicates:
        for name, preds in scans_by_table.items():
            table = tables[name]
            scans_by_table[name] = sorted(
                preds, key=lambda p: (estimate_selectivity(table, p), table.column_id(p.column)))
    selections: dict[str, RowSelection] = {}
    reports = []
    for name in spec.tables():
        table = tables[name]
        sel = get_table(ctx, table)
        preds = scans_by_table.get(name, [])
        if use_pruning and preds:
            sel = _apply_pruning(sel, prune_chunks(table, preds, sel))
        sel = validate(ctx, sel)
        for pred in preds:
            sel, report = table_scan(sel, pred)
            reports.append(report)
        selections[name] = sel
    for op in spec.joins:
        result = hash_join(selections[op.build_table], selections[op.probe_table],
                           op.build_column, op.probe_column, op.mode)
        reports.append(result.report)
        selections[op.probe_table] = result.probe_selection(tables[op.probe_table])
        if op.mode != "semi" and op.build_table != op.probe_table:
            selections[op.build_table] = result.build_selection(tables[op.build_table])
    return QueryResult(spec.query_id, reports, selections, time.perf_counter_ns() - t0)
