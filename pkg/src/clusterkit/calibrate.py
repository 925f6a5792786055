"""Fit model constants from workloads recorded under known clusterings.

Each snapshot carries its own clustering in the column metadata.  For every
ordered pair (a, b) the operators of b are estimated from the records of a,
with b's clustering as the candidate, and compared with what b measured.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from itertools import permutations, product

import numpy as np

from .advisor import (AdvisorError, ModelConfig, current_clustering, estimate_join,
                      estimate_scan_latencies)
from .metrics import relative_error, mse, smape
from .workload import WorkloadSnapshot

# documented search grids; lows stay at 1.0 so only the slope is fitted
PROBE_SORT_GRID = tuple(round(1.0 + 0.05 * i, 2) for i in range(21))
ENDPOINT_GRID = tuple(round(1.0 + 0.1 * i, 1) for i in range(11))

REPORT_HEADER = ["kind", "query_id", "table", "column", "step", "measured_ns", "estimated_ns", "relative_error"]


@dataclass
class EstimatePair:
    kind: str  # "scan" or "join"
    query_id: str
    table: str
    column: str
    step: str
    measured: float
    estimated: float


def _occurrence_keys(records, key):
    seen: dict = {}
    out = []
    for r in records:
        k = key(r)
        n = seen.get(k, 0)
        seen[k] = n + 1
        out.append((k, n))
    return out


def _scan_key(s):
    return s.query_id, s.table, s.column, s.comparator


def _join_key(j):
    return j.query_id, j.build_table, j.build_column, j.probe_table, j.probe_column


def match_scans(a: WorkloadSnapshot, b: WorkloadSnapshot, table: str):
    """Yield (record in a, record in b) for scans of ``table`` present in both."""
    sa = [s for s in a.scans if s.table == table]
    sb = [s for s in b.scans if s.table == table]
    index = dict(zip(_occurrence_keys(sb, _scan_key), sb))
    for k, s in zip(_occurrence_keys(sa, _scan_key), sa):
        if k in index:
            yield s, index[k]


def match_joins(a: WorkloadSnapshot, b: WorkloadSnapshot, table: str):
    ja = [j for j in a.joins if table in (j.build_table, j.probe_table)]
    jb = [j for j in b.joins if table in (j.build_table, j.probe_table)]
    index = dict(zip(_occurrence_keys(jb, _join_key), jb))
    for k, j in zip(_occurrence_keys(ja, _join_key), ja):
        if k in index:
            yield j, index[k]


def evaluate_pair(source: WorkloadSnapshot, target: WorkloadSnapshot, table: str,
                  config: ModelConfig | None = None, hints=None) -> list[EstimatePair]:
    """Estimates of ``target``'s operators made from ``source``'s records."""
    cfg = config or ModelConfig()
    current = current_clustering(source, table)
    candidate = current_clustering(target, table)
    measured = {id(a): b for a, b in match_scans(source, target, table)}
    pairs = []
    for scan, est in estimate_scan_latencies(source, table, candidate, current, hints, cfg):
        b = measured.get(id(scan))
        if b is not None:
            pairs.append(EstimatePair("scan", scan.query_id, table, scan.column, "scan", b.runtime_ns, est))
    for ja, jb in match_joins(source, target, table):
        steps = estimate_join(ja, table, candidate, current, source, cfg)
        truth = {"materialize_build": jb.mat_build_ns, "materialize_probe": jb.mat_probe_ns,
                 "radix_cluster": jb.radix_ns, "build": jb.build_ns, "probe": jb.probe_ns,
                 "output": jb.output_ns}
        for step, est in steps.items():
            pairs.append(EstimatePair("join", ja.query_id, table, ja.probe_column, step, truth[step], est))
    return pairs


def pair_smape(pairs, kind: str, step: str | None = None) -> float:
    sel = [p for p in pairs if p.kind == kind and (step is None or p.step == step)]
    if not sel:
        raise AdvisorError(f"no {kind} estimates to score")
    return smape([p.measured for p in sel], [p.estimated for p in sel])


def fit_time_per_row(snapshots) -> float:
    """Least-squares slope of runtime over rows touched, without intercept."""
    x = np.array([s.input_rows + s.output_rows for snap in snapshots for s in snap.scans], dtype=float)
    y = np.array([s.runtime_ns for snap in snapshots for s in snap.scans], dtype=float)
    denom = float(x @ x)
    if denom == 0:
        raise AdvisorError("no scan rows to fit time_per_row")
    return float(x @ y) / denom


def _query_sets(snapshot):
    return {s.query_id for s in snapshot.scans} | {j.query_id for j in snapshot.joins}


def _probe_joins(snapshots, table):
    """(source snapshot, current, candidate, source join, target join) for probe-side joins of every pair."""
    out = []
    for a, b in permutations(snapshots, 2):
        cur, cand = current_clustering(a, table), current_clustering(b, table)
        for ja, jb in match_joins(a, b, table):
            if ja.probe_table == table:
                out.append((a, cur, cand, ja, jb))
    return out


def calibrate(snapshots, table: str, config: ModelConfig | None = None) -> ModelConfig:
    """Fit time_per_row, the probe sort factor and the materialize endpoints.

    Grid ties resolve to the smallest values, so a pair without signal keeps
    every factor at 1.0.
    """
    snapshots = list(snapshots)
    if len(snapshots) < 2:
        raise AdvisorError("calibration needs workloads under at least two clusterings")
    queries = _query_sets(snapshots[0])
    if any(_query_sets(s) != queries for s in snapshots[1:]):
        raise AdvisorError("calibration workloads must run the same queries")
    if any(table not in s.tables for s in snapshots):
        raise AdvisorError(f"unknown table {table!r}")
    cfg = replace(config or ModelConfig(), time_per_row=fit_time_per_row(snapshots),
                  unique_low=1.0, density_low=1.0)

    joins = _probe_joins(snapshots, table)
    if not joins:
        return cfg.validate()

    truth_probe = [jb.probe_ns for *_, jb in joins]
    best = None
    for f in PROBE_SORT_GRID:
        trial = replace(cfg, probe_sort_factor=f)
        est = [estimate_join(ja, table, cand, cur, a, trial)["probe"] for a, cur, cand, ja, _ in joins]
        score = smape(truth_probe, est)
        if best is None or score < best[0] - 1e-12:
            best = (score, f)
    cfg = replace(cfg, probe_sort_factor=best[1])

    truth_mat = [jb.mat_probe_ns for *_, jb in joins]
    best = None
    for uh, dh, ms in product(ENDPOINT_GRID, ENDPOINT_GRID, ENDPOINT_GRID):
        trial = replace(cfg, unique_high=uh, density_high=dh, mat_sort_factor=ms)
        est = [estimate_join(ja, table, cand, cur, a, trial)["materialize_probe"] for a, cur, cand, ja, _ in joins]
        score = smape(truth_mat, est)
        if best is None or score < best[0] - 1e-12:
            best = (score, (uh, dh, ms))
    uh, dh, ms = best[1]
    return replace(cfg, unique_high=uh, density_high=dh, mat_sort_factor=ms).validate()


# ---------------------------------------------------------------- reports

def summary_rows(pairs) -> list[list]:
    """(kind, step, count, mse, smape) rows for every group with data."""
    groups: dict = {}
    for p in pairs:
        groups.setdefault((p.kind, p.step), []).append(p)
    rows = []
    for (kind, step), ps in sorted(groups.items()):
        m = [p.measured for p in ps]
        e = [p.estimated for p in ps]
        rows.append([kind, step, len(ps), mse(m, e), smape(m, e)])
    return rows


def write_report(pairs, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for p in pairs:
            rel = relative_error(p.measured, p.estimated) if p.estimated > 0 else ""
            w.writerow([p.kind, p.query_id, p.table, p.column, p.step, repr(float(p.measured)),
                        repr(float(p.estimated)), rel if rel == "" else repr(rel)])
        w.writerow([])
        w.writerow(["summary", "kind", "step", "count", "mse", "smape"])
        for row in summary_rows(pairs):
            w.writerow(["summary"] + [v if isinstance(v, (str, int)) else repr(v) for v in row])
