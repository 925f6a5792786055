"""Per-operator workload statistics and their CSV layout.

A snapshot holds one record per executed scan or hash join plus table and
column metadata; it is written as four CSV files (scans, joins, table_meta,
column_meta) with fixed headers.
"""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .exec import OperatorReport, QueryResult
from .mvcc import visible_mask
from .storage import Table

SCAN_HEADER = ["query_id", "seq", "table", "column", "comparator", "selectivity", "input_rows", "output_rows",
               "runtime_ns", "on_reference_input", "pruning_usable", "sortedness_usable"]
JOIN_HEADER = ["query_id", "mode", "build_table", "build_column", "probe_table", "probe_column",
               "probe_input_rows", "probe_input_chunks", "mat_build_ns", "mat_probe_ns", "radix_ns", "build_ns",
               "probe_ns", "output_ns", "data_arrives_sorted", "probe_side_predicates"]
TABLE_HEADER = ["table", "row_count", "chunk_count", "chunk_capacity"]
COLUMN_HEADER = ["table", "column", "data_type", "distinct_count", "nullable", "sorted_by", "cluster_count"]


class WorkloadError(Exception):
    pass


@dataclass
class ScanRecord:
    query_id: str
    seq: int
    table: str
    column: str
    comparator: str
    selectivity: float
    input_rows: int
    output_rows: int
    runtime_ns: int
    on_reference_input: bool = False
    pruning_usable: bool = True
    sortedness_usable: bool = True


@dataclass
class JoinRecord:
    query_id: str
    mode: str
    build_table: str
    build_column: str
    probe_table: str
    probe_column: str
    probe_input_rows: int
    probe_input_chunks: int
    mat_build_ns: int
    mat_probe_ns: int
    radix_ns: int
    build_ns: int
    probe_ns: int
    output_ns: int
    data_arrives_sorted: bool = False
    probe_side_predicates: tuple = ()  # ((column, selectivity), ...)

    @property
    def total_ns(self) -> int:
        return self.mat_build_ns + self.mat_probe_ns + self.radix_ns + self.build_ns + self.probe_ns + self.output_ns


@dataclass
class TableMeta:
    table: str
    row_count: int
    chunk_count: int
    chunk_capacity: int


@dataclass
class ColumnMeta:
    table: str
    column: str
    data_type: str
    distinct_count: int
    nullable: bool
    sorted_by: bool
    cluster_count: int = 0  # 0: the table is not clustered by this column


@dataclass
class WorkloadSnapshot:
    scans: list = field(default_factory=list)
    joins: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)  # name -> TableMeta
    columns: dict = field(default_factory=dict)  # (table, column) -> ColumnMeta
    captured_at: float = field(default_factory=time.time, compare=False)

    def table_columns(self, table: str) -> list[ColumnMeta]:
        return [c for (t, _), c in self.columns.items() if t == table]

    def current_clustering(self, table: str) -> tuple[dict, str | None]:
        """(column -> cluster count, sort column) as recorded in the metadata."""
        counts = {c.column: c.cluster_count for c in self.table_columns(table) if c.cluster_count > 0}
        sort = [c.column for c in self.table_columns(table) if c.sorted_by]
        return counts, (sort[0] if sort else None)

    def scaled(self, factor: float) -> "WorkloadSnapshot":
        """Copy with every recorded duration multiplied by ``factor``."""
        scans = [ScanRecord(**{**s.__dict__, "runtime_ns": int(round(s.runtime_ns * factor))}) for s in self.scans]
        joins = [JoinRecord(**{**j.__dict__, **{k: int(round(getattr(j, k) * factor)) for k in _JOIN_STEP_FIELDS}})
                 for j in self.joins]
        return WorkloadSnapshot(scans, joins, dict(self.tables), dict(self.columns), self.captured_at)


_JOIN_STEP_FIELDS = ("mat_build_ns", "mat_probe_ns", "radix_ns", "build_ns", "probe_ns", "output_ns")


def record_scan(report: OperatorReport, query_id: str, seq: int) -> ScanRecord | None:
    """Scan record for a report, or None for column-vs-column scans on temporary inputs."""
    if report.column_comparison:
        return None
    return ScanRecord(query_id, seq, report.table, report.column, report.comparator, report.selectivity,
                      report.input_rows, report.output_rows, report.runtime_ns, report.on_reference_input,
                      report.pruning_usable, report.sortedness_usable)


def record_join(report: OperatorReport, query_id: str, probe_predicates=()) -> JoinRecord:
    s = report.steps
    return JoinRecord(query_id, report.mode, report.build_table, report.build_column, report.probe_table,
                      report.probe_column, report.input_rows, report.input_chunks,
                      s.get("materialize_build", 0), s.get("materialize_probe", 0), s.get("radix_cluster", 0),
                      s.get("build", 0), s.get("probe", 0), s.get("output", 0), report.data_arrives_sorted,
                      tuple(probe_predicates))


class WorkloadRecorder:
    """Collects records from executed queries; thread-safe appends."""

    def __init__(self):
        self.scans: list[ScanRecord] = []
        self.joins: list[JoinRecord] = []
        self._lock = threading.Lock()

    def record(self, result: QueryResult, query_id: str | None = None) -> None:
        qid = result.query_id if query_id is None else query_id
        scans, joins, seq = [], [], 0
        for report in result.reports:
            if report.kind == "scan":
                rec = record_scan(report, qid, seq)
                seq += 1
                if rec is not None:
                    scans.append(rec)
        for report in result.reports:
            if report.kind == "join":
                preds = [(s.column, s.selectivity) for s in scans if s.table == report.probe_table]
                joins.append(record_join(report, qid, preds))
        with self._lock:
            self.scans.extend(scans)
            self.joins.extend(joins)

    def snapshot(self, tables: dict | Iterable[Table]) -> WorkloadSnapshot:
        with self._lock:
            scans, joins = list(self.scans), list(self.joins)
        table_meta, column_meta = capture_metadata(tables)
        return WorkloadSnapshot(scans, joins, table_meta, column_meta)


def capture_metadata(tables) -> tuple[dict, dict]:
    tables = list(tables.values()) if isinstance(tables, dict) else list(tables)
    table_meta, column_meta = {}, {}
    for table in tables:
        ctx = table.manager.begin()
        try:
            live = [c for _, c in table.live_chunks() if c.mvcc.cleanup_commit_id > ctx.snapshot_cid]
            masks = [visible_mask(c, ctx) for c in live]
            rows = int(sum(m.sum() for m in masks))
            nonempty = sum(1 for m in masks if m.any())
            table_meta[table.name] = TableMeta(table.name, rows, nonempty, table.chunk_capacity)
            info = table.clustering_info or {}
            counts = dict(zip(info.get("columns", []), info.get("counts", [])))
            immutable = [c for c in live if not c.mutable and c.size]
            for i, column_def in enumerate(table.schema.columns):
                parts = []
                for c, m in zip(live, masks):
                    if m.any():
                        v, nulls = c.segments[i].take(np.flatnonzero(m))
                        parts.append(v if nulls is None else v[~nulls])
                distinct = len(np.unique(np.concatenate(parts))) if parts else 0
                if "sort_column" in info:
                    sorted_by = info["sort_column"] == column_def.name
                else:
                    sorted_by = bool(immutable) and all(c.sort_column == i for c in immutable)
                column_meta[(table.name, column_def.name)] = ColumnMeta(
                    table.name, column_def.name, column_def.data_type.value, distinct, column_def.nullable,
                    sorted_by, int(counts.get(column_def.name, 0)))
        finally:
            ctx.abort()
    return table_meta, column_meta


def group_scans_by_query(snapshot: WorkloadSnapshot, table: str) -> list[list[ScanRecord]]:
    """Scans on ``table`` grouped per query id (first-seen order), sorted by seq."""
    groups: dict[str, list[ScanRecord]] = {}
    for scan in snapshot.scans:
        if scan.table == table:
            groups.setdefault(scan.query_id, []).append(scan)
    return [sorted(g, key=lambda s: s.seq) for g in groups.values()]


# ---------------------------------------------------------------- CSV

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no", ""):
        return False
    raise WorkloadError(f"not a boolean: {text!r}")


def _format_predicates(preds) -> str:
    return ";".join(f"{c}:{repr(float(s))}" for c, s in preds)


def _parse_predicates(text: str) -> tuple:
    if not text:
        return ()
    out = []
    for part in text.split(";"):
        column, _, sel = part.rpartition(":")
        out.append((column, float(sel)))
    return tuple(out)


def _write(path: Path, header: list[str], rows: Iterable[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def export_csv(snapshot: WorkloadSnapshot, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write(d / "scans.csv", SCAN_HEADER, ([getattr(s, f) for f in SCAN_HEADER] for s in snapshot.scans))
    _write(d / "joins.csv", JOIN_HEADER, (
        [getattr(j, f) for f in JOIN_HEADER[:-1]] + [_format_predicates(j.probe_side_predicates)]
        for j in snapshot.joins))
    _write(d / "table_meta.csv", TABLE_HEADER, ([getattr(t, f) for f in TABLE_HEADER]
                                                for t in snapshot.tables.values()))
    _write(d / "column_meta.csv", COLUMN_HEADER, ([getattr(c, f) for f in COLUMN_HEADER]
                                                  for c in snapshot.columns.values()))


def _read(path: Path, header: list[str]) -> list[dict]:
    if not path.exists():
        raise WorkloadError(f"missing file {path.name}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        found = reader.fieldnames or []
        missing = [h for h in header if h not in found]
        if missing:
            raise WorkloadError(f"{path.name}: missing column(s) {', '.join(missing)}")
        return list(reader)


def _typed(cls, row: dict, overrides: dict) -> object:
    kwargs = {}
    for f in fields(cls):
        if f.name not in row:
            continue
        text = row[f.name]
        if f.name in overrides:
            kwargs[f.name] = overrides[f.name](text)
        elif f.type in ("int", int):
            kwargs[f.name] = int(text)
        elif f.type in ("float", float):
            kwargs[f.name] = float(text)
        elif f.type in ("bool", bool):
            kwargs[f.name] = _parse_bool(text)
        else:
            kwargs[f.name] = text
    return cls(**kwargs)


def import_csv(directory) -> WorkloadSnapshot:
    d = Path(directory)
    tables = {}
    for row in _read(d / "table_meta.csv", TABLE_HEADER):
        t = _typed(TableMeta, row, {})
        tables[t.table] = t
    columns = {}
    for row in _read(d / "column_meta.csv", COLUMN_HEADER):
        c = _typed(ColumnMeta, row, {})
        if c.table not in tables:
            raise WorkloadError(f"column_meta.csv: unknown table {c.table!r}")
        columns[(c.table, c.column)] = c
    scans = []
    for row in _read(d / "scans.csv", SCAN_HEADER):
        s = _typed(ScanRecord, row, {})
        _check_ref(tables, columns, s.table, s.column, "scans.csv")
        if not 0.0 <= s.selectivity <= 1.0:
            raise WorkloadError(f"scans.csv: selectivity {s.selectivity} outside [0, 1]")
        if abs(s.selectivity * s.input_rows - s.output_rows) > 1:
            raise WorkloadError(f"scans.csv: selectivity inconsistent with row counts in query {s.query_id}")
        scans.append(s)
    joins = []
    for row in _read(d / "joins.csv", JOIN_HEADER):
        j = _typed(JoinRecord, row, {"probe_side_predicates": _parse_predicates})
        _check_ref(tables, columns, j.build_table, j.build_column, "joins.csv")
        _check_ref(tables, columns, j.probe_table, j.probe_column, "joins.csv")
        if any(getattr(j, f) < 0 for f in _JOIN_STEP_FIELDS):
            raise WorkloadError("joins.csv: negative step duration")
        joins.append(j)
    return WorkloadSnapshot(scans, joins, tables, columns)


def _check_ref(tables, columns, table, column, where):
    if table not in tables:
        raise WorkloadError(f"{where}: unknown table {table!r}")
    if columns and (table, column) not in columns:
        raise WorkloadError(f"{where}: unknown column {table}.{column}")
