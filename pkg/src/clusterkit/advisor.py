"""Workload-driven clustering advisor.

Given a recorded workload snapshot, the advisor enumerates clustering
candidates for one table, picks cluster counts for each, and estimates the
latency every recorded scan and hash join would have under the candidate.
Candidates are ranked by the estimated total.

Scan estimates come from a rows-touched cost model.  By default
(``scan_mode="relative"``) the model is used only as a ratio between the
candidate and the current clustering and applied to the measured runtime,
so the machine constant cancels; ``"absolute"`` returns
``time_per_row * (input + output)`` directly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import combinations
from pathlib import Path

from sklearn.base import BaseEstimator

from .workload import JoinRecord, ScanRecord, WorkloadSnapshot, group_scans_by_query

MAX_CLUSTER_COUNT = 100
SCAN_MODES = ("relative", "absolute")
SORTED_SCAN_MODES = ("total", "per_chunk")
SUGGESTION_HEADER = ["rank", "clustering", "sort_column", "scan_ns", "join_ns", "carried_ns", "total_ns"]


class AdvisorError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Constants of the estimation model; defaults are placeholders until calibrated."""

    time_per_row: float = 1.0
    unique_low: float = 1.0
    unique_high: float = 1.4
    density_low: float = 1.0
    density_high: float = 1.5
    mat_sort_factor: float = 1.3
    probe_sort_factor: float = 1.2
    correlation_penalty: float = 2.0
    join_base_cluster_count: int = 3
    max_cluster_count: int = MAX_CLUSTER_COUNT
    d: int = 2
    k: int = 5
    scan_mode: str = "relative"
    sorted_scan_mode: str = "total"

    def validate(self) -> "ModelConfig":
        for lo, hi, name in ((self.unique_low, self.unique_high, "unique"),
                             (self.density_low, self.density_high, "density")):
            if lo < 1 or hi < lo:
                raise AdvisorError(f"{name} factor endpoints must satisfy 1 <= low <= high")
        if self.mat_sort_factor < 1 or self.probe_sort_factor < 1:
            raise AdvisorError("sort factors must be >= 1")
        if self.correlation_penalty < 1:
            raise AdvisorError("correlation penalty must be >= 1")
        if self.time_per_row <= 0:
            raise AdvisorError("time_per_row must be positive")
        if self.d < 1 or self.k < 1:
            raise AdvisorError("d and k must be >= 1")
        if self.scan_mode not in SCAN_MODES:
            raise AdvisorError(f"scan_mode must be one of {SCAN_MODES}")
        if self.sorted_scan_mode not in SORTED_SCAN_MODES:
            raise AdvisorError(f"sorted_scan_mode must be one of {SORTED_SCAN_MODES}")
        return self

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.__dict__.items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        defaults = cls()
        values = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not hasattr(defaults, key):
                raise AdvisorError(f"line {n}: unknown setting {line!r}")
            kind = type(getattr(defaults, key))
            values[key] = value if kind is str else kind(float(value)) if kind is int else kind(value)
        return cls(**values).validate()

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


@dataclass(frozen=True)
class ClusteringCandidate:
    columns: frozenset
    sort_column: str | None

    def __post_init__(self):
        object.__setattr__(self, "columns", frozenset(self.columns))

    @property
    def sort_key(self) -> tuple:
        return tuple(sorted(self.columns)), self.sort_column or ""

    def label(self, counts: dict | None = None) -> str:
        counts = counts or {}
        return ";".join(f"{c}:{counts[c]}" if c in counts else c for c in sorted(self.columns))


@dataclass(frozen=True)
class Clustering:
    """A candidate together with its cluster counts."""

    candidate: ClusteringCandidate
    counts: dict = field(hash=False)

    @property
    def columns(self):
        return self.candidate.columns

    @property
    def sort_column(self):
        return self.candidate.sort_column

    def is_clustered(self, column: str) -> bool:
        return column in self.counts and column in self.candidate.columns


@dataclass
class CorrelationHint:
    """User-supplied column correlations per table: {table: [(a, b), ...]}."""

    pairs: dict = field(default_factory=dict)

    def partners(self, table: str, column: str) -> list[str]:
        out = []
        for a, b in self.pairs.get(table, ()):
            if a == column:
                out.append(b)
            elif b == column:
                out.append(a)
        return out

    def validate(self, snapshot: WorkloadSnapshot) -> "CorrelationHint":
        for table, pairs in self.pairs.items():
            for pair in pairs:
                for column in pair:
                    if (table, column) not in snapshot.columns:
                        raise AdvisorError(f"hint references unknown column {table}.{column}")
        return self

    @classmethod
    def from_text(cls, text: str) -> "CorrelationHint":
        """Lines of ``table col_a col_b``; ``#`` starts a comment."""
        pairs: dict = {}
        for n, line in enumerate(text.splitlines(), 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            if len(parts) != 3:
                raise AdvisorError(f"line {n}: expected 'table column column'")
            pairs.setdefault(parts[0], []).append((parts[1], parts[2]))
        return cls(pairs)


@dataclass
class LatencyEstimate:
    scan_ns: float = 0.0
    join_ns: float = 0.0
    carried_ns: float = 0.0

    @property
    def total_ns(self) -> float:
        return self.scan_ns + self.join_ns + self.carried_ns


@dataclass
class Suggestion:
    rank: int
    clustering: Clustering
    estimate: LatencyEstimate


# ---------------------------------------------------------------- candidates

def interesting_columns(snapshot: WorkloadSnapshot, table: str) -> tuple[set, set]:
    scan_cols = {s.column for s in snapshot.scans if s.table == table}
    join_cols = set()
    for j in snapshot.joins:
        if j.build_table == table:
            join_cols.add(j.build_column)
        if j.probe_table == table:
            join_cols.add(j.probe_column)
    return scan_cols, join_cols


def generate_candidates(columns, d: int) -> list[ClusteringCandidate]:
    if d < 1:
        raise AdvisorError("d must be >= 1")
    cols = sorted(set(columns))
    seen, out = set(), []
    for size in range(1, min(d, len(cols)) + 1):
        for subset in combinations(cols, size):
            for sort in cols:
                cand = ClusteringCandidate(frozenset(subset), sort)
                if cand not in seen:
                    seen.add(cand)
                    out.append(cand)
    return out


def determine_cluster_counts(candidate: ClusteringCandidate, snapshot: WorkloadSnapshot, table: str,
                             scan_columns=None, join_columns=None, config: ModelConfig | None = None) -> dict:
    """One cluster count per clustering column, aiming at one cluster per chunk."""
    cfg = config or ModelConfig()
    if scan_columns is None or join_columns is None:
        scan_columns, join_columns = interesting_columns(snapshot, table)
    target = snapshot.tables[table].chunk_count
    scan = sorted(c for c in candidate.columns if c in scan_columns)
    joins = sorted(c for c in candidate.columns if c in join_columns and c not in scan_columns)
    # columns in the clustering but unused by the workload are treated like scan columns
    scan += sorted(c for c in candidate.columns if c not in scan_columns and c not in join_columns)
    base = cfg.join_base_cluster_count
    counts = {}
    if not scan:
        per = math.ceil(target ** (1.0 / len(joins))) if target > 0 else 1
        counts = {c: per for c in joins}
    else:
        counts = {c: base for c in joins}
        available = target / base ** len(joins)
        uniques = {c: max(1, snapshot.columns[(table, c)].distinct_count) for c in scan}
        logs = {c: math.log(u) for c, u in uniques.items()}
        total_log = sum(logs.values())
        for c in scan:
            share = logs[c] / total_log if total_log > 0 else 1.0 / len(scan)
            counts[c] = math.floor(available ** share + 0.5) if available >= 1 else 1
            if c in join_columns:
                counts[c] = max(counts[c], base)
    for c in counts:
        distinct = snapshot.columns[(table, c)].distinct_count
        counts[c] = max(1, min(counts[c], distinct, cfg.max_cluster_count))
    return counts


def current_clustering(snapshot: WorkloadSnapshot, table: str) -> Clustering:
    counts, sort = snapshot.current_clustering(table)
    return Clustering(ClusteringCandidate(frozenset(counts), sort), dict(counts))


# ---------------------------------------------------------------- scans

def _fraction(x: float) -> Fraction:
    # shortest decimal repr, so 0.1 is read as exactly one tenth
    return Fraction(repr(float(x)))


def estimate_unprunable_part(scans, clustering: Clustering, hints: CorrelationHint | None = None,
                             config: ModelConfig | None = None, table: str | None = None) -> Fraction:
    """Fraction of the table expected to survive pruning for one query group."""
    cfg = config or ModelConfig()
    part = Fraction(1)
    for scan in scans:
        if not scan.pruning_usable:
            continue
        sel = _fraction(scan.selectivity)
        column = scan.column
        if not clustering.is_clustered(column):
            partners = [p for p in (hints.partners(table or scan.table, column) if hints else [])
                        if clustering.is_clustered(p)]
            if not partners:
                continue
            column = sorted(partners)[0]
            sel = min(Fraction(1), sel * _fraction(cfg.correlation_penalty))
        k = clustering.counts[column]
        part *= Fraction(math.ceil(sel * k), k)
    return part


def sorted_scan_input(rows: float, capacity: int, mode: str = "total") -> float:
    """Rows a binary-searching scan is charged for."""
    if rows <= 1:
        return 0.0 if rows <= 0 else float(rows)
    if mode == "per_chunk":
        return min(float(rows), 2.0 * math.log2(capacity) * math.ceil(rows / capacity))
    return math.log2(rows)


def scan_costs(group, clustering: Clustering, table_rows: int, capacity: int,
               hints: CorrelationHint | None = None, config: ModelConfig | None = None) -> list[float]:
    """Model rows touched (input + output) per scan of one query group."""
    cfg = config or ModelConfig()
    unprunable = estimate_unprunable_part(group, clustering, hints, cfg)
    costs = []
    for i, scan in enumerate(group):
        rows = float(table_rows * unprunable) if i == 0 else float(scan.input_rows)
        if scan.column == clustering.sort_column and scan.sortedness_usable:
            rows = sorted_scan_input(rows, capacity, cfg.sorted_scan_mode)
        costs.append(rows + scan.output_rows)
    return costs


def estimate_scan_latencies(snapshot: WorkloadSnapshot, table: str, clustering: Clustering,
                            current: Clustering | None = None, hints: CorrelationHint | None = None,
                            config: ModelConfig | None = None) -> list[tuple[ScanRecord, float]]:
    """(record, estimated ns) for every scan on ``table``."""
    cfg = config or ModelConfig()
    meta = snapshot.tables[table]
    current = current if current is not None else current_clustering(snapshot, table)
    out = []
    for group in group_scans_by_query(snapshot, table):
        new = scan_costs(group, clustering, meta.row_count, meta.chunk_capacity, hints, cfg)
        if cfg.scan_mode == "absolute":
            out.extend((s, cfg.time_per_row * c) for s, c in zip(group, new))
            continue
        cur = scan_costs(group, current, meta.row_count, meta.chunk_capacity, hints, cfg)
        for scan, c_new, c_cur in zip(group, new, cur):
            if c_new == c_cur:
                est = float(scan.runtime_ns)
            elif c_cur > 0:
                est = scan.runtime_ns * (c_new / c_cur)
            else:
                est = cfg.time_per_row * c_new
            out.append((scan, est))
    return out


def estimate_scan_latency(snapshot: WorkloadSnapshot, table: str, clustering: Clustering,
                          current: Clustering | None = None, hints: CorrelationHint | None = None,
                          config: ModelConfig | None = None) -> float:
    return float(sum(e for _, e in estimate_scan_latencies(snapshot, table, clustering, current, hints, config)))


# ---------------------------------------------------------------- joins

def interpolate(low: float, high: float, fraction: float) -> float:
    return low + (high - low) * min(1.0, max(0.0, fraction))


def estimate_unique_values_per_chunk(distinct: int, column: str, clustering: Clustering, capacity: int) -> float:
    if clustering.is_clustered(column):
        return min(float(capacity), distinct / clustering.counts[column])
    return float(min(capacity, distinct))


def unique_values_factor(distinct: int, column: str, clustering: Clustering, capacity: int,
                         config: ModelConfig | None = None) -> float:
    cfg = config or ModelConfig()
    uv = estimate_unique_values_per_chunk(distinct, column, clustering, capacity)
    return interpolate(cfg.unique_low, cfg.unique_high, uv / capacity)


def estimate_chunk_count(join: JoinRecord, clustering: Clustering, row_count: int, chunk_count: int,
                         capacity: int) -> float:
    """Chunks the probe input is expected to spread over."""
    density = 1.0
    for column, sel in join.probe_side_predicates:
        if not clustering.is_clustered(column):
            density *= sel
    lower = join.probe_input_rows / capacity
    if density <= 0:
        return float(max(chunk_count, lower))
    return float(max(lower, min(join.probe_input_rows / (capacity * density), chunk_count)))


def density_factor(join: JoinRecord, clustering: Clustering, row_count: int, chunk_count: int, capacity: int,
                   config: ModelConfig | None = None) -> float:
    cfg = config or ModelConfig()
    est = estimate_chunk_count(join, clustering, row_count, chunk_count, capacity)
    lo = join.probe_input_rows / capacity
    hi = row_count / capacity
    fraction = (est - lo) / (hi - lo) if hi > lo else 0.0
    return interpolate(cfg.density_low, cfg.density_high, fraction)


def _sorted_benefit(join: JoinRecord, clustering: Clustering, current: Clustering) -> bool:
    """Whether the probe input arrives sorted by the join column under ``clustering``."""
    if clustering.sort_column != join.probe_column:
        return False
    if clustering.sort_column == current.sort_column:
        return bool(join.data_arrives_sorted)
    # a newly sorted layout keeps its order only if the join runs without radix clustering
    return join.radix_ns == 0


def _materialize_gains(join, clustering, current, snapshot, config) -> float:
    meta = snapshot.tables[join.probe_table]
    cap = meta.chunk_capacity
    gains = 1.0
    if _sorted_benefit(join, clustering, current):
        distinct = snapshot.columns[(join.probe_table, join.probe_column)].distinct_count
        gains *= unique_values_factor(distinct, join.probe_column, clustering, cap, config) * config.mat_sort_factor
    gains *= density_factor(join, clustering, meta.row_count, meta.chunk_count, cap, config)
    return gains


def estimate_materialize_step(join: JoinRecord, side: str, table: str, clustering: Clustering,
                              current: Clustering, snapshot: WorkloadSnapshot,
                              config: ModelConfig | None = None) -> float:
    """Materialize latency of one join side under ``clustering`` of ``table``.

    Only the probe side records its input density and arrival order, so the
    build side is returned as recorded.
    """
    cfg = config or ModelConfig()
    if side == "build":
        return float(join.mat_build_ns)
    if side != "probe":
        raise AdvisorError(f"unknown join side {side!r}")
    if join.probe_table != table:
        return float(join.mat_probe_ns)
    cur = _materialize_gains(join, current, current, snapshot, cfg)
    new = _materialize_gains(join, clustering, current, snapshot, cfg)
    return join.mat_probe_ns * (cur / new)


def estimate_probe_step(join: JoinRecord, table: str, clustering: Clustering, current: Clustering,
                        config: ModelConfig | None = None) -> float:
    cfg = config or ModelConfig()
    if join.probe_table != table:
        return float(join.probe_ns)
    factor = 1.0
    if _sorted_benefit(join, current, current):
        factor *= cfg.probe_sort_factor
    if _sorted_benefit(join, clustering, current):
        factor /= cfg.probe_sort_factor
    return join.probe_ns * factor


def estimate_join(join: JoinRecord, table: str, clustering: Clustering, current: Clustering,
                  snapshot: WorkloadSnapshot, config: ModelConfig | None = None) -> dict:
    """Per-step estimates of one join."""
    cfg = config or ModelConfig()
    return {
        "materialize_build": estimate_materialize_step(join, "build", table, clustering, current, snapshot, cfg),
        "materialize_probe": estimate_materialize_step(join, "probe", table, clustering, current, snapshot, cfg),
        "radix_cluster": float(join.radix_ns),
        "build": float(join.build_ns),
        "probe": estimate_probe_step(join, table, clustering, current, cfg),
        "output": float(join.output_ns),
    }


def estimate_join_latency(snapshot: WorkloadSnapshot, table: str, clustering: Clustering,
                          current: Clustering | None = None, config: ModelConfig | None = None) -> float:
    current = current if current is not None else current_clustering(snapshot, table)
    total = 0.0
    for join in snapshot.joins:
        if table in (join.build_table, join.probe_table):
            total += sum(estimate_join(join, table, clustering, current, snapshot, config).values())
    return total


def carried_latency(snapshot: WorkloadSnapshot, table: str) -> float:
    """Recorded latency of operators the table's clustering does not affect."""
    scans = sum(s.runtime_ns for s in snapshot.scans if s.table != table)
    joins = sum(j.total_ns for j in snapshot.joins if table not in (j.build_table, j.probe_table))
    return float(scans + joins)


def estimate_latency(snapshot, table, clustering, current=None, hints=None, config=None) -> LatencyEstimate:
    current = current if current is not None else current_clustering(snapshot, table)
    return LatencyEstimate(
        estimate_scan_latency(snapshot, table, clustering, current, hints, config),
        estimate_join_latency(snapshot, table, clustering, current, config),
        carried_latency(snapshot, table))


# ---------------------------------------------------------------- ranking

def rank(snapshot: WorkloadSnapshot, table: str, config: ModelConfig | None = None,
         hints: CorrelationHint | None = None, k: int | None = None) -> list[Suggestion]:
    """Top-k clusterings for ``table`` by ascending estimated total latency."""
    cfg = (config or ModelConfig()).validate()
    if table not in snapshot.tables:
        raise AdvisorError(f"unknown table {table!r}")
    scan_cols, join_cols = interesting_columns(snapshot, table)
    candidates = generate_candidates(scan_cols | join_cols, cfg.d)
    current = current_clustering(snapshot, table)
    scored = []
    for cand in candidates:
        counts = determine_cluster_counts(cand, snapshot, table, scan_cols, join_cols, cfg)
        clustering = Clustering(cand, counts)
        scored.append((clustering, estimate_latency(snapshot, table, clustering, current, hints, cfg)))
    scored.sort(key=lambda item: (item[1].total_ns, item[0].candidate.sort_key))
    limit = cfg.k if k is None else k
    return [Suggestion(i + 1, c, e) for i, (c, e) in enumerate(scored[:limit])]


def write_suggestions(suggestions, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUGGESTION_HEADER)
        for s in suggestions:
            e = s.estimate
            w.writerow([s.rank, s.clustering.candidate.label(s.clustering.counts), s.clustering.sort_column or "",
                        repr(e.scan_ns), repr(e.join_ns), repr(e.carried_ns), repr(e.total_ns)])


def read_suggestions(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        pairs = [p.split(":") for p in row["clustering"].split(";") if p]
        row["columns"] = [c for c, _ in pairs]
        row["counts"] = [int(n) for _, n in pairs]
    return rows


class ClusteringAdvisor(BaseEstimator):
    """Ranks clusterings of one table from a recorded workload.

    ``fit`` takes a :class:`WorkloadSnapshot`; ``predict`` estimates the total
    latency of given clusterings against the fitted workload.
    """

    def __init__(self, table=None, d=2, k=5, config=None, hints=None):
        self.table = table
        self.d = d
        self.k = k
        self.config = config
        self.hints = hints

    def _config(self) -> ModelConfig:
        return replace(self.config or ModelConfig(), d=self.d, k=self.k).validate()

    def fit(self, snapshot: WorkloadSnapshot, y=None):
        if not isinstance(snapshot, WorkloadSnapshot):
            raise AdvisorError("fit expects a WorkloadSnapshot")
        table = self.table
        if table is None:
            if len(snapshot.tables) != 1:
                raise AdvisorError("table must be given when the snapshot holds several tables")
            table = next(iter(snapshot.tables))
        scan_cols, join_cols = interesting_columns(snapshot, table)
        if not scan_cols | join_cols:
            raise AdvisorError(f"no interesting columns for table {table!r}")
        if self.hints is not None:
            self.hints.validate(snapshot)
        self.snapshot_ = snapshot
        self.table_ = table
        self.current_ = current_clustering(snapshot, table)
        self.suggestions_ = rank(snapshot, table, self._config(), self.hints)
        return self

    def predict(self, clusterings) -> list[float]:
        from ._validation import check_is_fitted
        check_is_fitted(self, "suggestions_")
        cfg = self._config()
        out = []
        for c in clusterings:
            if isinstance(c, ClusteringCandidate):
                c = Clustering(c, determine_cluster_counts(c, self.snapshot_, self.table_, config=cfg))
            out.append(estimate_latency(self.snapshot_, self.table_, c, self.current_, self.hints, cfg).total_ns)
        return out
