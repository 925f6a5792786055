"""Robustness and memory experiments for online clustering.

The robustness runs clustering while updater threads rewrite random rows
(invalidate + reinsert with an incremented payload) and reports how many
clustering steps committed.  Every committed update is logged, so the final
table can be checked against a replay of the log.
"""

from __future__ import annotations

import csv
import math
import sys
import threading
import time
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import ClusteringConfig, check_clustered_table, run_clustering
from .datagen import DataGenSpec, generate_columns, generate_table
from .mvcc import TransactionManager, row_visible, update_row, visible_mask
from .storage import Table, estimate_memory, load_table

ROBUSTNESS_HEADER = ["chunks_per_cluster", "cluster_counts", "updates_per_second", "max_attempts",
                     "partition_success", "merge_success", "sort_success", "sort_steps", "update_attempts",
                     "update_success_ratio", "achieved_update_rate", "unsorted_per_attempt", "preserved",
                     "problems", "duration_s"]
MEMORY_HEADER = ["run_mode", "initial_bytes", "peak_bytes", "final_bytes", "samples", "duration_s"]


def experiment_spec(rows: int, id_column="id", payload_column="payload", key_range=10_000,
                    categories: int = 0) -> DataGenSpec:
    """Table with an id, two uniform clustering keys, a random sort key and a zero payload."""
    columns = [{"name": id_column, "dist": "sequence"},
               {"name": "a", "dist": "uniform-int", "low": 0, "high": key_range - 1},
               {"name": "b", "dist": "uniform-int", "low": 0, "high": key_range - 1},
               {"name": "s", "dist": "uniform-int", "low": 0, "high": 999_999},
               {"name": payload_column, "dist": "uniform-int", "low": 0, "high": 0}]
    if categories:
        columns.append({"name": "tag", "dist": "categorical", "n": categories})
    return DataGenSpec.from_dict({"table": "t", "rows": rows, "columns": columns})


def counts_for_cluster_size(rows: int, capacity: int, chunks_per_cluster: float, fill: float = 0.95,
                            max_count: int = 100) -> list[int]:
    """Two cluster counts whose product gives clusters of about ``chunks_per_cluster`` chunks."""
    clusters = max(1, round(rows / (fill * chunks_per_cluster * capacity)))
    a = min(max_count, max(1, round(math.sqrt(clusters))))
    b = min(max_count, max(1, round(clusters / a)))
    return [a, b]


# ---------------------------------------------------------------- updaters

@dataclass
class UpdateLog:
    attempts: int = 0
    committed: int = 0
    per_id: Counter = field(default_factory=Counter)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, ok: bool, row_id=None) -> None:
        with self.lock:
            self.attempts += 1
            if ok:
                self.committed += 1
                self.per_id[row_id] += 1

    @property
    def success_ratio(self) -> float:
        return 1.0 if self.attempts == 0 else self.committed / self.attempts


class UpdaterPool:
    """Threads issuing rate-limited single-row updates on random visible rows.

    ``mutate_columns`` additionally rewrites those (clustering) columns with a
    fresh value drawn from ``value_range`` for stress tests.
    """

    def __init__(self, table: Table, threads: int = 10, updates_per_second: float = 100.0, seed: int = 0,
                 id_column="id", payload_column="payload", mutate_columns=(), value_range=(0, 10_000)):
        self.table = table
        self.threads = threads
        self.rate = updates_per_second
        self.seed = seed
        self.id_col = table.column_id(id_column)
        self.payload_col = table.column_id(payload_column)
        self.mutate = [table.column_id(c) for c in mutate_columns]
        self.value_range = value_range
        self.log = UpdateLog()
        self._stop = threading.Event()
        self._workers: list[threading.Thread] = []
        self.started_at = self.stopped_at = 0.0
        self.refresh_interval = 0.02
        self._live_cache = None
        self._live_lock = threading.Lock()

    def _live(self):
        # the chunk list is refreshed periodically; stale entries only cost a retry
        now = time.perf_counter()
        with self._live_lock:
            if self._live_cache is None or now - self._live_cache[0] > self.refresh_interval:
                live = [(i, c) for i, c in self.table.live_chunks() if c.size]
                bounds = np.cumsum([c.size for _, c in live]) if live else np.empty(0, dtype=np.int64)
                self._live_cache = (now, live, bounds)
            return self._live_cache[1], self._live_cache[2]

    def _pick(self, rng, ctx):
        live, bounds = self._live()
        if not live:
            return None
        for _ in range(16):
            pos = int(rng.integers(0, bounds[-1]))
            i = int(np.searchsorted(bounds, pos, side="right"))
            chunk_id, chunk = live[i]
            offset = pos - (int(bounds[i - 1]) if i else 0)
            if offset < chunk.size and row_visible(chunk, offset, ctx):
                return chunk_id, chunk, offset
        return None

    def _run(self, k: int) -> None:
        rng = np.random.default_rng([self.seed, k])
        interval = self.threads / self.rate if self.rate > 0 else None
        next_at = time.perf_counter() + (rng.random() * interval if interval else 0)
        while not self._stop.is_set():
            if interval is None:
                return
            delay = next_at - time.perf_counter()
            if delay > 0 and self._stop.wait(delay):
                return
            next_at += interval
            ctx = self.table.manager.begin()
            picked = self._pick(rng, ctx)
            if picked is None:
                ctx.abort()
                continue
            chunk_id, chunk, offset = picked
            row = list(chunk.rows([offset])[0])
            row[self.payload_col] += 1
            for c in self.mutate:
                row[c] = int(rng.integers(*self.value_range))
            try:
                ok = update_row(ctx, self.table, chunk_id, offset, row)
            except Exception:
                ok = False
            if ok:
                ctx.commit()
            else:
                ctx.abort()
            self.log.add(ok, row[self.id_col])

    def start(self) -> "UpdaterPool":
        self.started_at = time.perf_counter()
        self._workers = [threading.Thread(target=self._run, args=(k,), daemon=True) for k in range(self.threads)]
        for w in self._workers:
            w.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        for w in self._workers:
            w.join()
        self.stopped_at = time.perf_counter()

    @property
    def achieved_rate(self) -> float:
        span = (self.stopped_at or time.perf_counter()) - self.started_at
        return self.log.attempts / span if span > 0 else 0.0


def verify_preservation(table: Table, initial: dict, log: UpdateLog, id_column="id",
                        payload_column="payload") -> list[str]:
    """Compare the visible rows with the initial rows plus the replayed update log."""
    problems = []
    id_col, pay_col = table.column_id(id_column), table.column_id(payload_column)
    ctx = table.manager.begin()
    try:
        ids, pays = [], []
        for _, chunk in table.live_chunks():
            mask = visible_mask(chunk, ctx)
            if mask.any():
                offsets = np.flatnonzero(mask)
                ids.append(chunk.segments[id_col].take(offsets)[0])
                pays.append(chunk.segments[pay_col].take(offsets)[0])
    finally:
        ctx.abort()
    ids = np.concatenate(ids) if ids else np.empty(0, dtype=np.int64)
    pays = np.concatenate(pays) if pays else np.empty(0, dtype=np.int64)
    expected_ids = np.asarray(initial[id_column])
    if len(ids) != len(expected_ids):
        problems.append(f"{len(ids)} visible rows, expected {len(expected_ids)}")
    uniq, counts = np.unique(ids, return_counts=True)
    if np.any(counts != 1):
        problems.append(f"{int(np.sum(counts != 1))} ids visible more than once")
    if not np.array_equal(uniq, np.unique(expected_ids)):
        problems.append("visible id set differs from the initial id set")
    order = np.argsort(ids, kind="stable")
    base = dict(zip(np.asarray(expected_ids).tolist(), np.asarray(initial[payload_column]).tolist()))
    expected = np.array([base.get(i, 0) + log.per_id.get(i, 0) for i in ids[order].tolist()], dtype=np.int64)
    wrong = int(np.sum(pays[order] != expected))
    if wrong:
        problems.append(f"{wrong} rows with a payload that does not match the update log")
    return problems


# ---------------------------------------------------------------- robustness

@dataclass
class RobustnessSpec:
    rows: int = 1_000_000
    chunk_capacity: int = 4096
    chunks_per_cluster: tuple = (1, 2, 3, 9)
    updater_threads: int = 10
    updates_per_second: float = 5000.0
    max_attempts: int = 1
    merge_row_threshold: int = 256
    seed: int = 0
    mutate_clustering_columns: bool = False
    switch_interval: float = 0.0005
    repeats: int = 1  # seeds per cluster size, pooled

    def __post_init__(self):
        if self.rows <= 0 or self.chunk_capacity <= 0:
            raise ValueError("rows and chunk_capacity must be positive")
        if self.updater_threads < 0 or self.updates_per_second < 0:
            raise ValueError("updater threads and rate must be non-negative")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


def robustness_case(spec: RobustnessSpec, chunks_per_cluster: float, updates_per_second: float | None = None,
                    max_attempts: int | None = None, table: Table | None = None) -> dict:
    rate = spec.updates_per_second if updates_per_second is None else updates_per_second
    attempts = spec.max_attempts if max_attempts is None else max_attempts
    gen = experiment_spec(spec.rows)
    initial = generate_columns(gen, spec.seed)
    if table is None:
        table = load_table(gen.schema(), initial, spec.chunk_capacity, TransactionManager(), gen.table)
    counts = counts_for_cluster_size(spec.rows, spec.chunk_capacity, chunks_per_cluster)
    config = ClusteringConfig(["a", "b"], counts, "s", merge_row_threshold=spec.merge_row_threshold,
                              max_attempts_per_step=attempts)
    pool = UpdaterPool(table, spec.updater_threads, rate, spec.seed,
                       mutate_columns=("a", "b") if spec.mutate_clustering_columns else ())
    # finer thread switching keeps updater lock hold times close to their own work
    previous = sys.getswitchinterval()
    sys.setswitchinterval(spec.switch_interval)
    t0 = time.perf_counter()
    pool.start()
    try:
        report = run_clustering(table, config)
    finally:
        pool.stop()
        sys.setswitchinterval(previous)
    duration = time.perf_counter() - t0
    problems = verify_preservation(table, initial, pool.log) + check_clustered_table(table)
    sorts = report.phase_steps("sort")
    return {
        "chunks_per_cluster": chunks_per_cluster,
        "cluster_counts": "x".join(map(str, counts)),
        "updates_per_second": rate,
        "max_attempts": attempts,
        "partition_success": report.success_ratio("partition"),
        "merge_success": report.success_ratio("merge"),
        "sort_success": report.success_ratio("sort"),
        "partition_steps": len(report.phase_steps("partition")),
        "merge_steps": len(report.phase_steps("merge")),
        "sort_steps": len(sorts),
        "update_attempts": pool.log.attempts,
        "update_success_ratio": pool.log.success_ratio,
        "achieved_update_rate": pool.achieved_rate,
        "unsorted_per_attempt": report.unsorted_after_attempts(attempts),
        "preserved": not problems,
        "problems": problems,
        "duration_s": duration,
    }


def pool_rows(rows: list[dict]) -> dict:
    """Combine runs of one cluster size: step-weighted success ratios, summed counts."""
    if len(rows) == 1:
        return rows[0]
    out = dict(rows[0])

    def weighted(key, weight):
        total = sum(r[weight] for r in rows)
        return sum(r[key] * r[weight] for r in rows) / total if total else 1.0

    for phase in ("partition", "merge", "sort"):
        out[f"{phase}_success"] = weighted(f"{phase}_success", f"{phase}_steps")
        out[f"{phase}_steps"] = sum(r[f"{phase}_steps"] for r in rows)
    out["update_success_ratio"] = weighted("update_success_ratio", "update_attempts")
    out["update_attempts"] = sum(r["update_attempts"] for r in rows)
    out["achieved_update_rate"] = float(np.mean([r["achieved_update_rate"] for r in rows]))
    out["unsorted_per_attempt"] = [int(sum(v)) for v in zip(*(r["unsorted_per_attempt"] for r in rows))]
    out["problems"] = [p for r in rows for p in r["problems"]]
    out["preserved"] = all(r["preserved"] for r in rows)
    out["duration_s"] = sum(r["duration_s"] for r in rows)
    return out


def run_robustness(spec: RobustnessSpec, progress=None, sizes=None, **overrides) -> list[dict]:
    """One pooled row per cluster size.

    Repeats cycle through all sizes before the next seed, so slow drift in
    machine load spreads evenly over the sizes being compared.
    """
    sizes = tuple(spec.chunks_per_cluster if sizes is None else sizes)
    runs: dict = {m: [] for m in sizes}
    for r in range(spec.repeats):
        seeded = replace(spec, seed=spec.seed + r)
        for m in sizes:
            runs[m].append(robustness_case(seeded, m, **overrides))
            if progress:
                progress(runs[m][-1])
    return [pool_rows(runs[m]) for m in sizes]


def write_robustness_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROBUSTNESS_HEADER)
        for r in rows:
            w.writerow([";".join(map(str, r[h])) if isinstance(r[h], list) else r[h] for h in ROBUSTNESS_HEADER])


# ---------------------------------------------------------------- memory

@dataclass
class MemorySpec:
    rows: int = 400_000
    chunk_capacity: int = 4096
    chunks_per_cluster: float = 10
    run_modes: tuple = ("sequential", "background_cleanup", "background_cleanup_and_encoding")
    cleanup_interval: float = 0.005
    key_range: int = 200
    categories: int = 20
    seed: int = 0


def memory_case(spec: MemorySpec, run_mode: str) -> dict:
    gen = experiment_spec(spec.rows, key_range=spec.key_range, categories=spec.categories)
    table = generate_table(gen, spec.seed, spec.chunk_capacity, TransactionManager())
    counts = counts_for_cluster_size(spec.rows, spec.chunk_capacity, spec.chunks_per_cluster)
    config = ClusteringConfig(["a", "b"], counts, "s", merge_row_threshold=spec.chunk_capacity // 16,
                              run_mode=run_mode, cleanup_interval=spec.cleanup_interval, sample_memory=True)
    initial = estimate_memory(table)
    t0 = time.perf_counter()
    report = run_clustering(table, config)
    return {
        "run_mode": run_mode,
        "initial_bytes": initial,
        "peak_bytes": max(report.peak_memory, initial),
        "final_bytes": estimate_memory(table),
        "samples": report.memory_samples,
        "duration_s": time.perf_counter() - t0,
        "problems": check_clustered_table(table),
    }


def run_memory(spec: MemorySpec) -> list[dict]:
    return [memory_case(spec, mode) for mode in spec.run_modes]


def write_memory_csv(rows, path, curve_path=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MEMORY_HEADER)
        for r in rows:
            w.writerow([r["run_mode"], r["initial_bytes"], r["peak_bytes"], r["final_bytes"],
                        len(r["samples"]), r["duration_s"]])
    if curve_path is not None:
        with open(curve_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run_mode", "seconds", "bytes", "phase"])
            for r in rows:
                for t, b, phase in r["samples"]:
                    w.writerow([r["run_mode"], repr(t), b, phase])
