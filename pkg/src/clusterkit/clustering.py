"""Online disjoint-cluster reorganization of a table.

Phases: choose value-range boundaries from per-column histograms, move every
immutable chunk's rows into their clusters (one transaction per chunk),
optionally gather undersized cluster chunks into a constraint-free merge
cluster, then sort each cluster as a whole. Every step is an ordinary MVCC
transaction, so concurrent readers always see exactly one version of a row
and concurrent writers cause steps to abort rather than lose updates.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_is_fitted, check_table
from .mvcc import (UNSET, append_to_chunk, cleanup_table, fully_invalidated, invalidate_rows,
                   lock_valid_rows, mark_chunk_cleanup, try_lock_rows, visible_mask)
from .storage import Chunk, Histogram, Table, build_histogram, estimate_memory

log = logging.getLogger(__name__)

RUN_MODES = ("sequential", "background_cleanup", "background_cleanup_and_encoding")
BOUNDARY_METHODS = ("balanced", "greedy")
MERGE_KEY = ("merge",)
NULL_RANGE = "null"


class ClusteringError(Exception):
    pass


# ---------------------------------------------------------------- boundaries

@dataclass
class ColumnBoundaries:
    """Ranges [lowers[i], lowers[i+1]) with the last one unbounded above.

    Values below ``lowers[0]`` fall into the first range. Nullable columns get
    one extra null-only range at index ``len(lowers)``.
    """

    column: int
    lowers: list
    nullable: bool = False

    @property
    def range_count(self) -> int:
        return len(self.lowers) + (1 if self.nullable else 0)

    @property
    def null_index(self) -> int | None:
        return len(self.lowers) if self.nullable else None

    def ranges(self) -> list:
        out = [(lo, self.lowers[i + 1] if i + 1 < len(self.lowers) else None)
               for i, lo in enumerate(self.lowers)]
        if self.nullable:
            out.append(NULL_RANGE)
        return out

    def constraint(self, index: int):
        return self.ranges()[index]

    def assign(self, values: np.ndarray, nulls: np.ndarray | None = None) -> np.ndarray:
        lowers = np.array(self.lowers, dtype=values.dtype if values.dtype != object else object)
        idx = np.searchsorted(lowers, values, side="right") - 1
        idx = np.clip(idx, 0, None).astype(np.int64)
        if nulls is not None and nulls.any():
            if not self.nullable:
                raise ClusteringError("null value in a column without a null range")
            idx[nulls] = self.null_index
        return idx


@dataclass
class ClusterBoundaries:
    columns: list  # ColumnBoundaries per clustering column, in clustering order

    @property
    def cluster_count(self) -> int:
        return int(np.prod([c.range_count for c in self.columns]))

    def keys(self, chunk: Chunk, offsets: np.ndarray) -> np.ndarray:
        """(rows, columns) array of range indices for the given rows."""
        parts = []
        for cb in self.columns:
            vals, nulls = chunk.segments[cb.column].take(offsets)
            parts.append(cb.assign(vals, nulls))
        return np.column_stack(parts) if parts else np.zeros((len(offsets), 0), dtype=np.int64)

    def constraints(self, key: tuple) -> dict:
        return {cb.column: cb.constraint(i) for cb, i in zip(self.columns, key)}


def assign_cluster(values: Sequence, boundaries: ClusterBoundaries) -> tuple:
    """Cluster key of one row, given its clustering-column values in order."""
    key = []
    for cb, v in zip(boundaries.columns, values):
        if v is None:
            if not cb.nullable:
                raise ClusteringError("null value in a column without a null range")
            key.append(cb.null_index)
        else:
            arr = np.array([v], dtype=object if isinstance(v, str) else None)
            key.append(int(cb.assign(arr)[0]))
    return tuple(key)


def _greedy_lowers(bins, ideal: float) -> list:
    lowers, size, current_min, i = [], 0, None, 0
    while i < len(bins):
        b = bins[i]
        if current_min is None:
            current_min = b.lower
        if size + b.row_count < ideal:
            size += b.row_count
            i += 1
            continue
        # a single oversized bin forms its own cluster instead of looping forever
        if size == 0 or size + b.row_count - ideal < ideal - size:
            size += b.row_count
            i += 1
        # otherwise the bin is processed again for the next cluster
        lowers.append(current_min)
        size, current_min = 0, None
    if current_min is not None:
        lowers.append(current_min)
    return lowers


def _balanced_lowers(bins, ideal: float, count: int) -> list:
    # same greedy walk, but each cut goes to the bin edge nearest the running
    # target k * ideal, so rounding errors do not accumulate
    lowers = [bins[0].lower]
    cumulative, in_cluster = 0, 0
    for b in bins:
        if in_cluster and len(lowers) < count:
            target = len(lowers) * ideal
            if abs(cumulative - target) <= abs(cumulative + b.row_count - target):
                lowers.append(b.lower)
                in_cluster = 0
        cumulative += b.row_count
        in_cluster += b.row_count
    return lowers


def choose_boundaries(histograms: Sequence[Histogram], cluster_counts: Sequence[int],
                      nullable: Sequence[bool] | None = None, table_rows=None,
                      method: str = "balanced") -> ClusterBoundaries:
    """Per-column value ranges that split the rows into balanced clusters.

    ``method="greedy"`` aggregates bins exactly as the classic one-pass
    heuristic: a cluster takes the next bin while it stays below the ideal
    size and then takes the bin that overshoots only if the overshoot is
    smaller than the undershoot. It can return noticeably more ranges than
    requested when a few bins make up one cluster. ``"balanced"`` (default)
    is the same walk except that each cut is chosen against the running
    target ``k * ideal``; it returns the requested count whenever there are
    at least that many bins.
    """
    if method not in BOUNDARY_METHODS:
        raise ClusteringError(f"unknown boundary method {method!r}")
    if len(histograms) != len(cluster_counts):
        raise ClusteringError("one cluster count per histogram is required")
    nullable = list(nullable) if nullable is not None else [False] * len(histograms)
    columns = []
    for hist, count, is_nullable in zip(histograms, cluster_counts, nullable):
        if count < 1:
            raise ClusteringError("cluster counts must be at least 1")
        if not hist.bins:
            raise ClusteringError("cannot choose boundaries from an empty histogram")
        ideal = hist.total_count / count
        if method == "greedy":
            lowers = _greedy_lowers(hist.bins, ideal)
        else:
            lowers = _balanced_lowers(hist.bins, ideal, count)
        columns.append(ColumnBoundaries(hist.column, lowers, bool(is_nullable)))
    return ClusterBoundaries(columns)


def cluster_sizes(hist: Histogram, cb: ColumnBoundaries) -> list[int]:
    """Rows per (non-null) range implied by the histogram bins."""
    sizes = [0] * len(cb.lowers)
    for b in hist.bins:
        idx = max(0, int(np.searchsorted(np.array(cb.lowers, dtype=object), b.lower, "right")) - 1)
        sizes[idx] += b.row_count
    return sizes


def boundaries_for_table(table: Table, columns: Sequence, counts: Sequence[int],
                         method: str = "balanced", max_bins: int = 100) -> ClusterBoundaries:
    ids = [table.column_id(c) for c in columns]
    hists = [build_histogram(table, c, max_bins) for c in ids]
    nullable = [table.schema.columns[c].nullable for c in ids]
    return choose_boundaries(hists, counts, nullable, table.row_count, method)


# ---------------------------------------------------------------- config

@dataclass
class ClusteringConfig:
    clustering_columns: list
    cluster_counts: list
    sort_column: str
    merge_row_threshold: int = 10_000
    max_attempts_per_step: int = 1
    run_mode: str = "sequential"
    cleanup_interval: float = 1.0
    sample_memory: bool = False
    boundary_method: str = "balanced"
    partition_priority: str = "first"  # the late-locking variant is not implemented

    def __post_init__(self):
        if isinstance(self.clustering_columns, str):
            self.clustering_columns = [c for c in self.clustering_columns.split(",") if c]
        self.cluster_counts = [int(c) for c in (self.cluster_counts.split(",")
                               if isinstance(self.cluster_counts, str) else self.cluster_counts)]
        if len(self.clustering_columns) != len(self.cluster_counts):
            raise ClusteringError("one cluster count per clustering column is required")
        if any(c < 1 for c in self.cluster_counts):
            raise ClusteringError("cluster counts must be positive")
        if self.run_mode not in RUN_MODES:
            raise ClusteringError(f"unknown run mode {self.run_mode!r}")
        if self.max_attempts_per_step < 1:
            raise ClusteringError("max_attempts_per_step must be at least 1")
        if self.partition_priority != "first":
            raise ClusteringError("only the first (eager locking) partition approach is available")

    def validate(self, table: Table) -> None:
        for c in list(self.clustering_columns) + [self.sort_column]:
            table.column_id(c)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ClusteringConfig":
        kwargs: dict[str, Any] = {}
        known = {f.name: f for f in fields(cls)}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in known:
                raise ClusteringError(f"unknown config key {key!r}")
            if key in ("merge_row_threshold", "max_attempts_per_step"):
                kwargs[key] = int(value)
            elif key == "cleanup_interval":
                kwargs[key] = float(value)
            elif key == "sample_memory":
                kwargs[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ClusteringConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


# ---------------------------------------------------------------- report

@dataclass
class StepResult:
    phase: str
    target: str
    committed: bool
    attempts: int
    rows: int = 0
    lock_time_ns: int = 0
    duration_ns: int = 0
    reason: str = ""


@dataclass
class ClusteringRunReport:
    steps: list = field(default_factory=list)
    phase_durations_ns: dict = field(default_factory=dict)
    merged_chunks: int = 0
    merged_rows: int = 0
    memory_samples: list = field(default_factory=list)  # (seconds since start, bytes, phase)
    boundaries: ClusterBoundaries | None = None
    deleted_chunks: int = 0
    encoded_chunks: int = 0

    def phase_steps(self, phase: str) -> list[StepResult]:
        return [s for s in self.steps if s.phase == phase]

    def success_ratio(self, phase: str) -> float:
        steps = self.phase_steps(phase)
        return 1.0 if not steps else sum(s.committed for s in steps) / len(steps)

    @property
    def committed_steps(self) -> int:
        return sum(s.committed for s in self.steps)

    @property
    def aborted_steps(self) -> int:
        return sum(not s.committed for s in self.steps)

    @property
    def peak_memory(self) -> int:
        return max((b for _, b, _ in self.memory_samples), default=0)

    def unsorted_after_attempts(self, max_attempts: int) -> list[int]:
        """Clusters still unsorted after attempt 1..max_attempts."""
        sorts = self.phase_steps("sort")
        return [sum(1 for s in sorts if not s.committed or s.attempts > a) for a in range(1, max_attempts + 1)]

    def steps_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "target", "committed", "attempts", "rows", "lock_time_ns", "duration_ns", "reason"])
            for s in self.steps:
                w.writerow([s.phase, s.target, int(s.committed), s.attempts, s.rows, s.lock_time_ns,
                            s.duration_ns, s.reason])

    def memory_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seconds", "bytes", "phase"])
            for t, b, p in self.memory_samples:
                w.writerow([f"{t:.6f}", b, p])


# ---------------------------------------------------------------- steps

class ClusterState:
    """Chunks belonging to each cluster, plus its current insertion chunk."""

    def __init__(self, table: Table, boundaries: ClusterBoundaries, on_finalized=None):
        self.table = table
        self.boundaries = boundaries
        self.chunks: dict[tuple, list[int]] = {}
        self.insertion: dict[tuple, int] = {}
        self.on_finalized = on_finalized

    def constraints(self, key: tuple):
        return None if key == MERGE_KEY else self.boundaries.constraints(key)

    def insertion_chunk(self, key: tuple, needed: int) -> tuple[int, Chunk, int]:
        """(chunk id, chunk, free slots); caller holds the append lock."""
        table = self.table
        chunk_id = self.insertion.get(key)
        chunk = table.chunks[chunk_id] if chunk_id is not None else None
        if chunk is None or chunk.is_full:
            if chunk is not None:
                self.finalize(chunk_id)
            chunk_id = table.append_mutable_chunk(use_for_inserts=False)
            chunk = table.chunks[chunk_id]
            chunk.value_range_constraints = self.constraints(key)
            chunk.cluster_key = key
            self.insertion[key] = chunk_id
            self.chunks.setdefault(key, []).append(chunk_id)
        return chunk_id, chunk, chunk.capacity - chunk.size

    def finalize(self, chunk_id: int) -> None:
        chunk = self.table.chunks[chunk_id]
        if chunk is not None and chunk.mutable:
            chunk.finalize()
            if self.on_finalized is not None:
                self.on_finalized(chunk)

    def finalize_all(self) -> None:
        with self.table.append_lock:
            for key, chunk_id in list(self.insertion.items()):
                self.finalize(chunk_id)
            self.insertion.clear()


def _move_rows(ctx, state: ClusterState, chunk: Chunk, offsets: np.ndarray, keys) -> None:
    """Copy locked rows into their clusters and queue the originals' invalidation.

    The copies stay invisible until the transaction commits. Cluster chunks
    are private to the clustering thread, so only chunk creation takes the
    table's append lock. ``keys`` is either one key for all rows or an (n, d)
    array of range indices.
    """
    table = state.table
    columns = chunk.take(offsets)
    if isinstance(keys, tuple):
        groups = [(keys, np.arange(len(offsets)))]
    else:
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
        groups = [(tuple(int(x) for x in uniq[g]), order[bounds[g]:bounds[g + 1]]) for g in range(len(uniq))]
    for key, rows in groups:
        pos = 0
        while pos < len(rows):
            _, target, room = state.insertion_chunk(key, len(rows) - pos)
            take = rows[pos:pos + room]
            append_to_chunk(ctx, target, [(v[take], None if m is None else m[take]) for v, m in columns])
            pos += len(take)
            if target.is_full:
                state.finalize(state.insertion[key])
    invalidate_rows(ctx, chunk, offsets)


def partition_step(table: Table, chunk_id: int, state: ClusterState, key_of=None,
                   max_attempts: int = 1, phase: str = "partition") -> StepResult:
    """Move all valid rows of one immutable chunk into their clusters.

    Every non-invalidated row is locked up front; if any row is already under
    modification the whole step aborts. Once the locks are held the step
    cannot fail any more.
    """
    chunk = table.chunks[chunk_id]
    t_start = time.perf_counter_ns()
    if chunk is None:
        return StepResult(phase, str(chunk_id), True, 0, reason="chunk already removed")
    if chunk.mutable:
        raise ClusteringError("only immutable chunks can be partitioned")
    reason = ""
    for attempt in range(1, max_attempts + 1):
        ctx = table.manager.begin()
        t_lock = time.perf_counter_ns()
        ok, locked = lock_valid_rows(chunk, ctx)
        if not ok:
            ctx.abort()
            reason = "lock conflict"
            continue
        offsets = np.concatenate([o for c, o in ctx.locked if c is chunk]) if ctx.locked else \
            np.empty(0, dtype=np.int64)
        offsets.sort()
        keys = state.boundaries.keys(chunk, offsets) if key_of is None else key_of
        if len(offsets):
            _move_rows(ctx, state, chunk, offsets, keys)

        def after(cid):
            if fully_invalidated(chunk):
                mark_chunk_cleanup(chunk, cid)

        ctx.after_commit(after)
        ctx.commit()
        t_end = time.perf_counter_ns()
        return StepResult(phase, str(chunk_id), True, attempt, locked, t_end - t_lock, t_end - t_start)
    return StepResult(phase, str(chunk_id), False, max_attempts, 0, 0, time.perf_counter_ns() - t_start, reason)


def _sort_order(values: np.ndarray, nulls: np.ndarray | None) -> np.ndarray:
    if nulls is None or not nulls.any():
        return np.argsort(values, kind="stable")
    present = np.flatnonzero(~nulls)
    order = present[np.argsort(values[present], kind="stable")]
    return np.concatenate([order, np.flatnonzero(nulls)])


def _sorted_chunks(table: Table, columns, sort_column: int, template: Chunk) -> list[Chunk]:
    """Exact-size immutable chunks holding ``columns`` in order."""
    out = []
    total = len(columns[0][0]) if columns else 0
    for start in range(0, total, table.chunk_capacity):
        size = min(table.chunk_capacity, total - start)
        chunk = Chunk(table.schema, size)
        chunk.write_columns(0, [(v[start:start + size], None if m is None else m[start:start + size])
                                for v, m in columns])
        chunk.size = size
        chunk.finalize()
        chunk.sort_column = sort_column
        chunk.value_range_constraints = template.value_range_constraints
        chunk.cluster_key = template.cluster_key
        out.append(chunk)
    return out


def sort_step(table: Table, chunk_ids: Sequence[int], sort_column, max_attempts: int = 1,
              encode: bool = False, target: str = "", on_created=None) -> StepResult:
    """Replace a cluster's chunks by a sorted copy in one transaction.

    Locks are taken only after sorting; the step aborts if any chunk's
    invalid-row counter moved meanwhile or fewer rows could be locked than
    were visible when sorting began.
    """
    sort_column = table.column_id(sort_column)
    t_start = time.perf_counter_ns()
    chunks = [table.chunks[i] for i in chunk_ids]
    chunks = [c for c in chunks if c is not None]
    if any(c.mutable for c in chunks):
        raise ClusteringError("cluster chunks must be immutable before sorting")
    reason = ""
    for attempt in range(1, max_attempts + 1):
        counters = [c.mvcc.invalid_row_count for c in chunks]
        ctx = table.manager.begin()
        visible = [np.flatnonzero(visible_mask(c, ctx)).astype(np.int64) for c in chunks]
        expected = sum(len(v) for v in visible)
        _yield()
        parts = [c.take(v) for c, v in zip(chunks, visible) if len(v)]
        if parts:
            columns = [(np.concatenate([p[i][0] for p in parts]),
                        None if parts[0][i][1] is None else np.concatenate([p[i][1] for p in parts]))
                       for i in range(len(table.schema))]
            order = _sort_order(*columns[sort_column])
            columns = [(v[order], None if m is None else m[order]) for v, m in columns]
        else:
            columns = []
        _yield()
        # the sorted read-only copy, not yet part of the table
        created = _sorted_chunks(table, columns, sort_column, chunks[0])
        _yield()
        t_lock = time.perf_counter_ns()
        locked = 0
        failed = False
        for c in chunks:
            ok, n = lock_valid_rows(c, ctx)
            if not ok:
                failed, reason = True, "lock conflict"
                break
            locked += n
        if not failed and (locked != expected or
                           any(c.mvcc.invalid_row_count != n for c, n in zip(chunks, counters))):
            failed, reason = True, "concurrent invalidation"
        if failed:
            ctx.abort()
            continue
        held: dict[int, list] = {}
        for c, o in ctx.locked:
            held.setdefault(id(c), []).append(o)
        for c in chunks:
            if id(c) in held:
                invalidate_rows(ctx, c, np.concatenate(held[id(c)]))
        # copies stay invisible (begin unset, held by ctx) until the commit
        for out in created:
            offsets = np.arange(out.size, dtype=np.int64)
            out.mvcc.tid[:out.size] = ctx.tid
            ctx.inserted.append((out, offsets))
            if encode:
                out.encode()
            table.append_chunk(out)

        def after(cid):
            for c in chunks:
                if fully_invalidated(c):
                    mark_chunk_cleanup(c, cid)

        ctx.after_commit(after)
        ctx.commit()
        if on_created is not None:
            for out in created:
                on_created(out)
        t_end = time.perf_counter_ns()
        return StepResult("sort", target, True, attempt, locked, t_end - t_lock, t_end - t_start)
    return StepResult("sort", target, False, max_attempts, 0, 0, time.perf_counter_ns() - t_start, reason)


def merge_phase(table: Table, state: ClusterState, threshold: int, max_attempts: int = 1,
                report: ClusteringRunReport | None = None) -> list[StepResult]:
    """Re-partition every cluster chunk with at most ``threshold`` rows into the merge cluster."""
    results = []
    if threshold <= 0:
        return results
    small = [(key, cid) for key, ids in sorted(state.chunks.items(), key=lambda kv: repr(kv[0]))
             if key != MERGE_KEY for cid in ids
             if table.chunks[cid] is not None and table.chunks[cid].size <= threshold]
    for key, chunk_id in small:
        res = partition_step(table, chunk_id, state, key_of=MERGE_KEY, max_attempts=max_attempts, phase="merge")
        results.append(res)
        if res.committed:
            state.chunks[key].remove(chunk_id)
            if report is not None:
                report.merged_chunks += 1
                report.merged_rows += res.rows
            if not state.chunks[key]:
                del state.chunks[key]
    return results


# ---------------------------------------------------------------- driver

class _Worker(threading.Thread):
    def __init__(self, interval: float, action):
        super().__init__(daemon=True)
        self.interval = interval
        self.action = action
        self.stop_event = threading.Event()

    def run(self):
        while not self.stop_event.wait(self.interval):
            self.action()

    def stop(self):
        self.stop_event.set()
        self.join()


def _yield() -> None:
    # hand the interpreter lock to other threads so that concurrent transactions
    # interleave with long steps as they would on truly parallel threads
    time.sleep(0.0001)


def run_clustering(table: Table, config: ClusteringConfig, boundaries: ClusterBoundaries | None = None,
                   progress=None) -> ClusteringRunReport:
    """Apply ``config`` to ``table`` online; see the module docstring."""
    config.validate(table)
    report = ClusteringRunReport()
    t0 = time.perf_counter()
    phase = ["boundaries"]
    sample_lock = threading.Lock()

    def sample():
        if config.sample_memory:
            with sample_lock:
                report.memory_samples.append((time.perf_counter() - t0, estimate_memory(table), phase[0]))

    def mark(name):
        phase[0] = name
        sample()
        if progress is not None:
            progress(name)

    pending_encode: list[Chunk] = []
    encode_lock = threading.Lock()
    background_encoding = config.run_mode == "background_cleanup_and_encoding"

    def queue_encode(chunk: Chunk):
        if background_encoding:
            with encode_lock:
                pending_encode.append(chunk)

    def encode_pending():
        with encode_lock:
            batch = list(pending_encode)
            pending_encode.clear()
        for chunk in batch:
            if chunk.mvcc.cleanup_commit_id == UNSET and not chunk.is_encoded:
                chunk.encode()
                report.encoded_chunks += 1
        if batch:
            sample()

    def delete_safe():
        n = cleanup_table(table)
        report.deleted_chunks += n
        if n:
            sample()

    workers = []
    if config.run_mode != "sequential":
        workers.append(_Worker(config.cleanup_interval, delete_safe))
    if background_encoding:
        workers.append(_Worker(config.cleanup_interval, encode_pending))
    for w in workers:
        w.start()
    try:
        mark("boundaries")
        t = time.perf_counter_ns()
        if boundaries is None:
            boundaries = boundaries_for_table(table, config.clustering_columns, config.cluster_counts,
                                              config.boundary_method)
        report.boundaries = boundaries
        report.phase_durations_ns["boundaries"] = time.perf_counter_ns() - t

        # rows still sitting in the insert chunk take part as well
        with table.append_lock:
            insert_chunk = table.chunks[table.insert_chunk_id] if table.insert_chunk_id is not None else None
            if insert_chunk is not None and insert_chunk.size:
                insert_chunk.finalize()
                table.append_mutable_chunk(use_for_inserts=True)
        sources = [i for i, c in table.live_chunks() if not c.mutable and c.mvcc.cleanup_commit_id == UNSET]

        state = ClusterState(table, boundaries, on_finalized=queue_encode)
        mark("partition")
        t = time.perf_counter_ns()
        for chunk_id in sources:
            report.steps.append(partition_step(table, chunk_id, state, max_attempts=config.max_attempts_per_step))
            sample()
            _yield()
        state.finalize_all()
        report.phase_durations_ns["partition"] = time.perf_counter_ns() - t

        mark("merge")
        t = time.perf_counter_ns()
        report.steps.extend(merge_phase(table, state, config.merge_row_threshold,
                                        config.max_attempts_per_step, report))
        state.finalize_all()
        report.phase_durations_ns["merge"] = time.perf_counter_ns() - t
        sample()

        mark("sort")
        t = time.perf_counter_ns()
        sorted_outputs: list[Chunk] = []

        def created(chunk):
            sorted_outputs.append(chunk)
            queue_encode(chunk)

        for key in sorted(state.chunks, key=repr):
            ids = [i for i in state.chunks[key] if table.chunks[i] is not None]
            if not ids:
                continue
            res = sort_step(table, ids, config.sort_column, config.max_attempts_per_step,
                            target=_key_label(key), on_created=created)
            report.steps.append(res)
            sample()
            _yield()
        report.phase_durations_ns["sort"] = time.perf_counter_ns() - t

        mark("encode")
        t = time.perf_counter_ns()
        for chunk in sorted_outputs:
            if not chunk.is_encoded:
                chunk.encode()
                report.encoded_chunks += 1
        # unsorted clusters (failed sorts) are encoded too, they stay in place
        for _, chunk in table.live_chunks():
            if chunk.cluster_key is not None and not chunk.mutable and not chunk.is_encoded \
                    and chunk.mvcc.cleanup_commit_id == UNSET:
                chunk.encode()
                report.encoded_chunks += 1
        report.phase_durations_ns["encode"] = time.perf_counter_ns() - t
        sample()
    finally:
        for w in workers:
            w.stop()
    mark("cleanup")
    t = time.perf_counter_ns()
    report.deleted_chunks += cleanup_table(table)
    report.phase_durations_ns["cleanup"] = time.perf_counter_ns() - t
    sample()
    table.clustering_info = {
        "columns": [table.schema.names[table.column_id(c)] for c in config.clustering_columns],
        "counts": list(config.cluster_counts),
        "sort_column": table.schema.names[table.column_id(config.sort_column)],
    }
    table._histograms.clear()
    return report


def _key_label(key: tuple) -> str:
    return "merge" if key == MERGE_KEY else "-".join(str(k) for k in key)


# ---------------------------------------------------------------- checks

def _satisfies(values, nulls, constraint) -> np.ndarray:
    if constraint == NULL_RANGE:
        return nulls if nulls is not None else np.zeros(len(values), dtype=bool)
    lo, hi = constraint
    ok = np.ones(len(values), dtype=bool) if nulls is None else ~nulls
    if lo is not None:
        ok &= values >= lo
    if hi is not None:
        ok &= values < hi
    return ok


def check_clustered_table(table: Table) -> list[str]:
    """Problems with the current layout; an empty list means consistent.

    Checks that rows of constrained chunks satisfy their ranges, that each
    sorted cluster is non-decreasing in its sort column across its chunks,
    and that no logical row is visible twice (when an ``id`` column exists).
    """
    problems = []
    ctx = table.manager.begin()
    try:
        clusters: dict = {}
        for chunk_id, chunk in table.live_chunks():
            if chunk.mvcc.cleanup_commit_id <= ctx.snapshot_cid:
                continue
            mask = visible_mask(chunk, ctx)
            offsets = np.flatnonzero(mask)
            if chunk.value_range_constraints:
                for col, cons in chunk.value_range_constraints.items():
                    vals, nulls = chunk.segments[col].take(offsets)
                    if not np.all(_satisfies(vals, nulls, cons)):
                        problems.append(f"chunk {chunk_id} violates its range on column {col}")
            if chunk.sort_column is not None and chunk.cluster_key is not None and len(offsets):
                clusters.setdefault(chunk.cluster_key, []).append((chunk_id, chunk, offsets))
        for key, parts in clusters.items():
            previous = None
            for chunk_id, chunk, offsets in sorted(parts, key=lambda p: p[0]):
                vals, nulls = chunk.segments[chunk.sort_column].take(offsets)
                order = [None if (nulls is not None and nulls[i]) else v for i, v in enumerate(vals.tolist())]
                seq = ([previous] if previous is not None else []) + order
                for a, b in zip(seq, seq[1:]):
                    if a is None and b is not None or (a is not None and b is not None and b < a):
                        problems.append(f"cluster {_key_label(key)} is not sorted")
                        break
                if order:
                    previous = order[-1]
        if "id" in table.schema.names:
            col = table.column_id("id")
            ids = []
            for chunk_id, chunk in table.live_chunks():
                if chunk.mvcc.cleanup_commit_id <= ctx.snapshot_cid:
                    continue
                vals, _ = chunk.segments[col].take(np.flatnonzero(visible_mask(chunk, ctx)))
                ids.append(vals)
            if ids:
                all_ids = np.concatenate(ids)
                if len(np.unique(all_ids)) != len(all_ids):
                    problems.append("some logical rows are visible more than once")
    finally:
        ctx.abort()
    return problems


# ---------------------------------------------------------------- estimator

class DisjointClusterer(TransformerMixin, BaseEstimator):
    """Estimator-style wrapper around the online clustering run.

    ``fit`` derives value-range boundaries from the table's histograms;
    ``transform`` reorganizes the table in place and returns it.

    >>> clusterer = DisjointClusterer(["a"], [4], sort_column="b")  # doctest: +SKIP
    >>> clusterer.fit(table).transform(table)                      # doctest: +SKIP
    """

    def __init__(self, clustering_columns=("a",), cluster_counts=(1,), sort_column=None,
                 merge_row_threshold=10_000, max_attempts_per_step=1, run_mode="sequential",
                 cleanup_interval=1.0, sample_memory=False, boundary_method="balanced"):
        self.clustering_columns = clustering_columns
        self.cluster_counts = cluster_counts
        self.sort_column = sort_column
        self.merge_row_threshold = merge_row_threshold
        self.max_attempts_per_step = max_attempts_per_step
        self.run_mode = run_mode
        self.cleanup_interval = cleanup_interval
        self.sample_memory = sample_memory
        self.boundary_method = boundary_method

    def _config(self) -> ClusteringConfig:
        sort_column = self.sort_column if self.sort_column is not None else list(self.clustering_columns)[0]
        return ClusteringConfig(list(self.clustering_columns), list(self.cluster_counts), sort_column,
                                self.merge_row_threshold, self.max_attempts_per_step, self.run_mode,
                                self.cleanup_interval, self.sample_memory, self.boundary_method)

    def fit(self, table, y=None):
        table = check_table(table)
        config = self._config()
        config.validate(table)
        self.config_ = config
        self.boundaries_ = boundaries_for_table(table, config.clustering_columns, config.cluster_counts,
                                                config.boundary_method)
        self.n_clusters_ = self.boundaries_.cluster_count
        return self

    def transform(self, table):
        check_is_fitted(self, "boundaries_")
        table = check_table(table)
        self.report_ = run_clustering(table, self.config_, self.boundaries_)
        return table
