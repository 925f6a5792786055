"""Chunked columnar tables.

A table is a list of horizontal partitions (chunks). Mutable chunks hold
plain value segments pre-allocated to the chunk capacity; once finalized a
chunk is immutable, carries min/max statistics per segment and may be
dictionary encoded.
"""

from __future__ import annotations

import csv
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .mvcc import ChunkMvcc, TransactionManager

DEFAULT_CHUNK_CAPACITY = 65_535

# Memory accounting constants. estimate_memory() is the only consumer.
CHUNK_OVERHEAD_BYTES = 64
NUMERIC_VALUE_BYTES = 8
STRING_HEADER_BYTES = 8  # per stored string, on top of its character count
NULL_FLAG_BYTES = 1


class DataType(str, Enum):
    INT64 = "int64"
    FLOAT64 = "float64"
    STRING = "string"
    DATE = "date"  # 10-character ISO string, ordered lexicographically

    @property
    def is_string(self) -> bool:
        return self in (DataType.STRING, DataType.DATE)

    @property
    def numpy_dtype(self):
        if self is DataType.INT64:
            return np.int64
        if self is DataType.FLOAT64:
            return np.float64
        return object

    @property
    def filler(self):
        return "" if self.is_string else 0

    def coerce(self, value):
        """Convert a python or text value to this type; None stays None."""
        if value is None:
            return None
        if self is DataType.INT64:
            if isinstance(value, (bool, float)) and not float(value).is_integer():
                raise TypeError(f"cannot store {value!r} in an int64 column")
            return int(value)
        if self is DataType.FLOAT64:
            return float(value)
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {value!r}")
        if self is DataType.DATE and len(value) != 10:
            raise ValueError(f"dates are 10-character strings, got {value!r}")
        return value


class StorageError(Exception):
    pass


@dataclass(frozen=True)
class ColumnDefinition:
    name: str
    data_type: DataType
    nullable: bool = False

    def __post_init__(self):
        object.__setattr__(self, "data_type", DataType(self.data_type))


@dataclass(frozen=True)
class TableSchema:
    columns: tuple

    def __post_init__(self):
        columns = tuple(
            c if isinstance(c, ColumnDefinition) else ColumnDefinition(*c) for c in self.columns
        )
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise StorageError(f"duplicate column names: {dupes}")
        object.__setattr__(self, "columns", columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __len__(self):
        return len(self.columns)

    def column_id(self, column: int | str) -> int:
        if isinstance(column, (int, np.integer)):
            if not 0 <= column < len(self.columns):
                raise KeyError(f"no column with id {column}")
            return int(column)
        for i, c in enumerate(self.columns):
            if c.name == column:
                return i
        raise KeyError(f"no column named {column!r}")

    def to_dict(self) -> list[dict]:
        return [
            {"name": c.name, "data_type": c.data_type.value, "nullable": c.nullable}
            for c in self.columns
        ]

    @classmethod
    def from_dict(cls, data: Sequence[dict]) -> "TableSchema":
        return cls(tuple(ColumnDefinition(d["name"], d["data_type"], d.get("nullable", False)) for d in data))


def _string_bytes(values: np.ndarray) -> int:
    return sum(STRING_HEADER_BYTES + len(v) for v in values.tolist())


class ValueSegment:
    """Plain values, pre-allocated to ``capacity`` slots."""

    def __init__(self, data_type: DataType, capacity: int, nullable: bool = False):
        self.data_type = DataType(data_type)
        self.values = np.full(capacity, self.data_type.filler, dtype=self.data_type.numpy_dtype)
        self.nulls = np.zeros(capacity, dtype=bool) if nullable else None
        self.size = 0

    @property
    def capacity(self) -> int:
        return len(self.values)

    def write(self, start: int, values: Sequence) -> None:
        n = len(values)
        if self.data_type.is_string or self.nulls is not None:
            mask = np.fromiter((v is None for v in values), dtype=bool, count=n)
            if mask.any():
                if self.nulls is None:
                    raise StorageError("null value in a non-nullable column")
                self.nulls[start:start + n] = mask
                values = [self.data_type.filler if v is None else v for v in values]
        self.values[start:start + n] = values
        self.size = max(self.size, start + n)

    def write_arrays(self, start: int, values: np.ndarray, nulls: np.ndarray | None) -> None:
        n = len(values)
        self.values[start:start + n] = values
        if nulls is not None and nulls.any():
            if self.nulls is None:
                raise StorageError("null value in a non-nullable column")
            self.nulls[start:start + n] = nulls
        self.size = max(self.size, start + n)

    def arrays(self, n: int | None = None) -> tuple[np.ndarray, np.ndarray | None]:
        n = self.size if n is None else n
        return self.values[:n], None if self.nulls is None else self.nulls[:n]

    def take(self, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        return self.values[offsets], None if self.nulls is None else self.nulls[offsets]

    def decode(self, n: int | None = None) -> list:
        vals, nulls = self.arrays(n)
        out = vals.tolist()
        if nulls is not None:
            for i in np.flatnonzero(nulls):
                out[i] = None
        return out

    def memory_bytes(self) -> int:
        if self.data_type.is_string:
            used = _string_bytes(self.values[: self.size])
            total = used + STRING_HEADER_BYTES * (self.capacity - self.size)
        else:
            total = NUMERIC_VALUE_BYTES * self.capacity
        if self.nulls is not None:
            total += NULL_FLAG_BYTES * self.capacity
        return total


def id_width_for(max_id: int) -> int:
    for width in (8, 16, 32):
        if max_id < 2 ** width:
            return width
    raise StorageError("dictionary too large for 32-bit value ids")


class DictionarySegment:
    """Sorted dictionary plus value ids; nulls use the id ``len(dictionary)``."""

    def __init__(self, data_type: DataType, dictionary: np.ndarray, value_ids: np.ndarray, nullable: bool):
        self.data_type = DataType(data_type)
        self.dictionary = dictionary
        self.value_ids = value_ids
        self.nullable = nullable
        self.null_id = len(dictionary)

    @classmethod
    def encode(cls, segment: ValueSegment, n: int) -> "DictionarySegment":
        vals, nulls = segment.arrays(n)
        present = vals if nulls is None else vals[~nulls]
        dictionary = np.unique(present)
        if dictionary.dtype != segment.values.dtype:
            dictionary = dictionary.astype(segment.values.dtype)
        has_null = nulls is not None and bool(nulls.any())
        width = id_width_for(len(dictionary) if has_null else max(len(dictionary) - 1, 0))
        ids = np.searchsorted(dictionary, vals).astype(f"uint{width}")
        if has_null:
            ids[nulls] = len(dictionary)
        return cls(segment.data_type, dictionary, ids, segment.nulls is not None)

    @property
    def id_width(self) -> int:
        return self.value_ids.dtype.itemsize * 8

    @property
    def size(self) -> int:
        return len(self.value_ids)

    @property
    def capacity(self) -> int:
        return len(self.value_ids)

    def _padded_dictionary(self) -> np.ndarray:
        return np.append(self.dictionary, np.array([self.data_type.filler], dtype=self.dictionary.dtype))

    def arrays(self, n: int | None = None) -> tuple[np.ndarray, np.ndarray | None]:
        ids = self.value_ids if n is None else self.value_ids[:n]
        return self._materialize(ids)

    def take(self, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        return self._materialize(self.value_ids[offsets])

    def _materialize(self, ids):
        nulls = ids == self.null_id if self.nullable else None
        if nulls is not None and nulls.any():
            return self._padded_dictionary()[ids], nulls
        return self.dictionary[ids], nulls

    def decode(self, n: int | None = None) -> list:
        vals, nulls = self.arrays(n)
        out = vals.tolist()
        if nulls is not None:
            for i in np.flatnonzero(nulls):
                out[i] = None
        return out

    def memory_bytes(self) -> int:
        if self.data_type.is_string:
            dictionary = _string_bytes(self.dictionary)
        else:
            dictionary = NUMERIC_VALUE_BYTES * len(self.dictionary)
        return dictionary + self.value_ids.nbytes


@dataclass
class MinMaxStats:
    min: Any
    max: Any
    has_null: bool

    @classmethod
    def from_segment(cls, segment, n: int) -> "MinMaxStats":
        if isinstance(segment, DictionarySegment):
            ids = segment.value_ids[:n]
            has_null = segment.nullable and bool((ids == segment.null_id).any())
            used = ids[ids != segment.null_id] if has_null else ids
            if len(used) == 0:
                return cls(None, None, has_null)
            return cls(segment.dictionary[used.min()].item() if not segment.data_type.is_string
                       else segment.dictionary[used.min()],
                       segment.dictionary[used.max()].item() if not segment.data_type.is_string
                       else segment.dictionary[used.max()], has_null)
        vals, nulls = segment.arrays(n)
        has_null = nulls is not None and bool(nulls.any())
        if has_null:
            vals = vals[~nulls]
        if len(vals) == 0:
            return cls(None, None, has_null)
        lo, hi = vals.min(), vals.max()
        if isinstance(lo, np.generic):
            lo, hi = lo.item(), hi.item()
        return cls(lo, hi, has_null)


class Chunk:
    """A horizontal partition: one segment per column plus MVCC data."""

    def __init__(self, schema: TableSchema, capacity: int):
        self.schema = schema
        self.capacity = capacity
        self.segments: list = [ValueSegment(c.data_type, capacity, c.nullable) for c in schema.columns]
        self.size = 0
        self.mutable = True
        self.mvcc = ChunkMvcc(capacity)
        self.sort_column: int | None = None
        # per clustering column id: (low, high) with high None for unbounded,
        # or the string "null" for the null-only range
        self.value_range_constraints: dict | None = None
        self.cluster_key = None
        self.stats: list[MinMaxStats] | None = None
        self.lock = threading.Lock()

    def __repr__(self):
        state = "mutable" if self.mutable else ("encoded" if self.is_encoded else "immutable")
        return f"<Chunk {self.size}/{self.capacity} rows, {state}>"

    @property
    def row_count(self) -> int:
        return self.size

    @property
    def is_full(self) -> bool:
        return self.size >= self.capacity

    @property
    def is_encoded(self) -> bool:
        return all(isinstance(s, DictionarySegment) for s in self.segments)

    def reserve(self, n: int) -> int:
        """Claim ``n`` row slots; caller holds ``self.lock``."""
        if not self.mutable:
            raise StorageError("cannot append to an immutable chunk")
        if self.size + n > self.capacity:
            raise StorageError("chunk capacity exceeded")
        start = self.size
        self.size += n
        return start

    def write_rows(self, start: int, rows: Sequence[Sequence]) -> None:
        columns = list(zip(*rows)) if rows else [() for _ in self.segments]
        for segment, column_def, values in zip(self.segments, self.schema.columns, columns):
            segment.write(start, [column_def.data_type.coerce(v) for v in values])

    def write_columns(self, start: int, columns: Sequence[tuple[np.ndarray, np.ndarray | None]]) -> None:
        for segment, (values, nulls) in zip(self.segments, columns):
            segment.write_arrays(start, values, nulls)

    def column_arrays(self, column: int, n: int | None = None):
        return self.segments[column].arrays(self.size if n is None else n)

    def take(self, offsets: np.ndarray) -> list[tuple[np.ndarray, np.ndarray | None]]:
        return [s.take(offsets) for s in self.segments]

    def rows(self, offsets: Iterable[int] | None = None) -> list[tuple]:
        offsets = np.arange(self.size) if offsets is None else np.asarray(offsets, dtype=np.int64)
        columns = []
        for values, nulls in self.take(offsets):
            col = values.tolist()
            if nulls is not None:
                for i in np.flatnonzero(nulls):
                    col[i] = None
            columns.append(col)
        return list(zip(*columns)) if columns else [() for _ in offsets]

    def finalize(self) -> None:
        if not self.mutable:
            raise StorageError("chunk is already immutable")
        self.mutable = False
        self.stats = [MinMaxStats.from_segment(s, self.size) for s in self.segments]

    def encode(self) -> None:
        """Replace every value segment by an exactly sized dictionary segment."""
        if self.mutable:
            raise StorageError("only immutable chunks can be encoded")
        self.segments = [
            s if isinstance(s, DictionarySegment) else DictionarySegment.encode(s, self.size)
            for s in self.segments
        ]

    def memory_bytes(self) -> int:
        return CHUNK_OVERHEAD_BYTES + sum(s.memory_bytes() for s in self.segments)


class Table:
    def __init__(self, schema: TableSchema, chunk_capacity: int = DEFAULT_CHUNK_CAPACITY,
                 manager: TransactionManager | None = None, name: str = "table"):
        if chunk_capacity < 2:
            raise StorageError("chunk capacity must be at least 2")
        self.name = name
        self.schema = schema
        self.chunk_capacity = chunk_capacity
        self.manager = manager if manager is not None else TransactionManager()
        self.chunks: list[Chunk | None] = []
        self.insert_chunk_id: int | None = None
        self.append_lock = threading.RLock()
        # set by clustering runs: {"columns": [...], "counts": [...], "sort_column": ...}
        self.clustering_info: dict | None = None
        self._histograms: dict = {}
        self.append_mutable_chunk(use_for_inserts=True)

    def __repr__(self):
        return f"<Table {self.name!r} {self.row_count} rows in {self.chunk_count} chunks>"

    def append_mutable_chunk(self, use_for_inserts: bool = True, capacity: int | None = None) -> int:
        with self.append_lock:
            self.chunks.append(Chunk(self.schema, capacity or self.chunk_capacity))
            chunk_id = len(self.chunks) - 1
            if use_for_inserts:
                self.insert_chunk_id = chunk_id
            return chunk_id

    def append_chunk(self, chunk: Chunk) -> int:
        with self.append_lock:
            self.chunks.append(chunk)
            return len(self.chunks) - 1

    def live_chunks(self) -> list[tuple[int, Chunk]]:
        return [(i, c) for i, c in enumerate(list(self.chunks)) if c is not None]

    @property
    def chunk_count(self) -> int:
        return sum(1 for c in self.chunks if c is not None)

    @property
    def row_count(self) -> int:
        """Physical rows, including invalidated versions."""
        return sum(c.size for c in self.chunks if c is not None)

    def column_id(self, column) -> int:
        return self.schema.column_id(column)

    def remove_chunk(self, chunk_id: int) -> None:
        with self.append_lock:
            self.chunks[chunk_id] = None

    def histogram(self, column, max_bins: int = 100) -> "Histogram":
        key = (self.column_id(column), max_bins)
        if key not in self._histograms:
            self._histograms[key] = build_histogram(self, column, max_bins)
        return self._histograms[key]

    def visible_rows(self, ctx=None) -> list[tuple]:
        """Rows visible to ``ctx`` (a fresh snapshot when omitted)."""
        from .mvcc import visible_mask

        own = ctx is None
        if own:
            ctx = self.manager.begin()
        try:
            out = []
            for _, chunk in self.live_chunks():
                if chunk.mvcc.cleanup_commit_id <= ctx.snapshot_cid:
                    continue
                n = chunk.size
                mask = visible_mask(chunk, ctx, n)
                if mask.any():
                    out.extend(chunk.rows(np.flatnonzero(mask)))
            return out
        finally:
            if own:
                ctx.abort()


def create_table(schema: TableSchema, chunk_capacity: int = DEFAULT_CHUNK_CAPACITY,
                 manager: TransactionManager | None = None, name: str = "table") -> Table:
    """An empty table with one mutable chunk designated for inserts."""
    if not isinstance(schema, TableSchema):
        schema = TableSchema(tuple(schema))
    return Table(schema, chunk_capacity, manager, name)


def load_table(schema: TableSchema, rows: Sequence[Sequence] | dict, chunk_capacity: int = DEFAULT_CHUNK_CAPACITY,
               manager: TransactionManager | None = None, name: str = "table", encode: bool = True,
               chunk_sizes: Sequence[int] | None = None) -> Table:
    """Bulk-load committed rows (visible from commit id 0 on).

    ``rows`` is either a sequence of row tuples or a mapping column name ->
    sequence of values. Full chunks are finalized and, with ``encode``,
    dictionary encoded; the remainder stays in the mutable insert chunk.
    """
    if not isinstance(schema, TableSchema):
        schema = TableSchema(tuple(schema))
    table = Table(schema, chunk_capacity, manager, name)
    columns = _columnar(schema, rows)
    total = len(columns[0][0]) if columns else 0
    if chunk_sizes is None:
        chunk_sizes = [chunk_capacity] * (total // chunk_capacity)
        if total % chunk_capacity:
            chunk_sizes.append(total % chunk_capacity)
    if sum(chunk_sizes) != total:
        raise StorageError("chunk sizes do not add up to the row count")
    table.chunks.clear()
    start = 0
    for size in chunk_sizes:
        chunk = Chunk(schema, chunk_capacity)
        chunk.write_columns(0, [(v[start:start + size], None if m is None else m[start:start + size])
                                for v, m in columns])
        chunk.size = size
        chunk.mvcc.begin_cid[:size] = 0
        start += size
        table.chunks.append(chunk)
        if size == chunk_capacity:
            chunk.finalize()
            if encode:
                chunk.encode()
    if not table.chunks or not table.chunks[-1].mutable:
        table.append_mutable_chunk(use_for_inserts=True)
    else:
        table.insert_chunk_id = len(table.chunks) - 1
    return table


def _columnar(schema: TableSchema, rows) -> list[tuple[np.ndarray, np.ndarray | None]]:
    if isinstance(rows, dict):
        raw = [rows[c.name] for c in schema.columns]
    else:
        raw = list(zip(*rows)) if len(rows) else [[] for _ in schema.columns]
    out = []
    for column_def, values in zip(schema.columns, raw):
        dtype = column_def.data_type
        if isinstance(values, np.ndarray) and values.dtype != object and dtype.numpy_dtype is not object:
            out.append((values.astype(dtype.numpy_dtype, copy=False), None))
            continue
        values = list(values)
        nulls = np.fromiter((v is None for v in values), dtype=bool, count=len(values))
        if nulls.any() and not column_def.nullable:
            raise StorageError(f"null value in non-nullable column {column_def.name!r}")
        filled = [dtype.filler if v is None else dtype.coerce(v) for v in values]
        arr = np.empty(len(filled), dtype=dtype.numpy_dtype)
        arr[:] = filled
        out.append((arr, nulls if column_def.nullable else None))
    return out


def finalize_chunk(chunk: Chunk) -> None:
    chunk.finalize()


def encode_chunk(chunk: Chunk) -> None:
    chunk.encode()


def estimate_memory(table: Table) -> int:
    """Bytes used by all live chunks; see the constants at module top."""
    return sum(c.memory_bytes() for c in list(table.chunks) if c is not None)


@dataclass
class HistogramBin:
    lower: Any
    upper: Any
    row_count: int
    distinct_count: int


@dataclass
class Histogram:
    column: int
    bins: list[HistogramBin] = field(default_factory=list)

    @property
    def total_count(self) -> int:
        return sum(b.row_count for b in self.bins)

    def __len__(self):
        return len(self.bins)


def _visible_column_values(table: Table, column: int) -> tuple[np.ndarray, int]:
    """Non-null values of all visible rows plus the null count."""
    from .mvcc import visible_mask

    ctx = table.manager.begin()
    try:
        parts, null_count = [], 0
        for _, chunk in table.live_chunks():
            if chunk.mvcc.cleanup_commit_id <= ctx.snapshot_cid:
                continue
            n = chunk.size
            mask = visible_mask(chunk, ctx, n)
            if not mask.any():
                continue
            vals, nulls = chunk.segments[column].take(np.flatnonzero(mask))
            if nulls is not None:
                null_count += int(nulls.sum())
                vals = vals[~nulls]
            parts.append(vals)
    finally:
        ctx.abort()
    dtype = table.schema.columns[column].data_type.numpy_dtype
    return (np.concatenate(parts) if parts else np.empty(0, dtype=dtype)), null_count


def build_histogram(table: Table, column, max_bins: int = 100, min_bins: int = 5) -> Histogram:
    """Equal-distinct-count histogram over the visible non-null values.

    The bin count is ``min(max_bins, distinct)``, raised to ``min_bins`` when
    enough distinct values exist. Bins are closed intervals over observed
    values; distinct values are split into near-equal groups.
    """
    column = table.column_id(column)
    values, _ = _visible_column_values(table, column)
    if len(values) == 0:
        raise StorageError("cannot build a histogram over an all-null or empty column")
    distinct, counts = np.unique(values, return_counts=True)
    return histogram_from_distinct(column, distinct, counts, max_bins, min_bins)


def histogram_from_distinct(column: int, distinct, counts, max_bins: int = 100, min_bins: int = 5) -> Histogram:
    n_distinct = len(distinct)
    n_bins = min(max_bins, n_distinct)
    if n_distinct >= min_bins:
        n_bins = max(n_bins, min_bins)
    bins = []
    for idx in np.array_split(np.arange(n_distinct), n_bins):
        lo, hi = distinct[idx[0]], distinct[idx[-1]]
        bins.append(HistogramBin(
            lo.item() if isinstance(lo, np.generic) else lo,
            hi.item() if isinstance(hi, np.generic) else hi,
            int(np.sum(counts[idx])), len(idx)))
    return Histogram(column, bins)


# ---------------------------------------------------------------- CSV I/O

def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export_table_csv(table: Table, path: str | Path) -> None:
    """Write visible rows as CSV plus a ``.meta.json`` sidecar.

    The sidecar keeps schema, chunk capacity, declared sort columns and the
    chunk layout, so that a clustered table round-trips with its layout.
    """
    path = Path(path)
    names = table.schema.names
    ctx = table.manager.begin()
    sizes, sort_columns, constraints = [], [], []
    from .mvcc import visible_mask
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for _, chunk in table.live_chunks():
                if chunk.mvcc.cleanup_commit_id <= ctx.snapshot_cid:
                    continue
                mask = visible_mask(chunk, ctx, chunk.size)
                rows = chunk.rows(np.flatnonzero(mask))
                if not rows:
                    continue
                writer.writerows([[_format_value(v) for v in r] for r in rows])
                sizes.append(len(rows))
                sort_columns.append(None if chunk.sort_column is None else names[chunk.sort_column])
                constraints.append(None if chunk.value_range_constraints is None else
                                   {names[k]: v for k, v in chunk.value_range_constraints.items()})
    finally:
        ctx.abort()
    meta = {
        "name": table.name,
        "schema": table.schema.to_dict(),
        "chunk_capacity": table.chunk_capacity,
        "sort_columns": sorted({s for s in sort_columns if s is not None}),
        "chunk_sizes": sizes,
        "chunk_sort_columns": sort_columns,
        "chunk_constraints": constraints,
        "clustering": table.clustering_info,
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2))


def import_table_csv(path: str | Path, manager: TransactionManager | None = None,
                     chunk_capacity: int | None = None, encode: bool = True) -> Table:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".meta.json").read_text())
    schema = TableSchema.from_dict(meta["schema"])
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != schema.names:
            raise StorageError(f"CSV header {header} does not match schema {schema.names}")
        raw = list(reader)
    rows = [tuple(None if v == "" and c.nullable else c.data_type.coerce(_parse(v, c.data_type))
                  for v, c in zip(r, schema.columns)) for r in raw]
    capacity = chunk_capacity or meta["chunk_capacity"]
    layout = meta.get("chunk_sizes") if capacity == meta["chunk_capacity"] else None
    table = load_table(schema, rows, capacity, manager, meta.get("name", path.stem), encode=False,
                       chunk_sizes=layout)
    if layout:
        names = schema.names
        for chunk, sort_col, cons in zip(table.chunks, meta["chunk_sort_columns"], meta["chunk_constraints"]):
            if sort_col is not None:
                chunk.sort_column = names.index(sort_col)
            if cons is not None:
                chunk.value_range_constraints = {
                    names.index(k): (v if v == "null" else tuple(v)) for k, v in cons.items()}
            if chunk.mutable and chunk is not table.chunks[table.insert_chunk_id]:
                chunk.finalize()
            elif chunk.mutable and (sort_col is not None or cons is not None):
                chunk.finalize()
        if not table.chunks[-1].mutable:
            table.append_mutable_chunk(use_for_inserts=True)
        table.clustering_info = meta.get("clustering")
    if encode:
        for chunk in table.chunks:
            if chunk is not None and not chunk.mutable:
                chunk.encode()
    return table


def _parse(text: str, data_type: DataType):
    if data_type is DataType.INT64:
        return int(text)
    if data_type is DataType.FLOAT64:
        return float(text)
    return text
