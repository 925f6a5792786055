"""Command-line interface: ``clusterkit <command> ...``.

Commands: gen, run, advise, apply, calibrate, bench-robustness, bench-memory
and report.  Tables are CSV files with a ``.meta.json`` sidecar; workloads
are directories holding the four workload CSV files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .advisor import AdvisorError, CorrelationHint, ModelConfig, interesting_columns, rank, write_suggestions
from .calibrate import EstimatePair, calibrate, evaluate_pair, write_report
from .clustering import ClusteringConfig, ClusteringError, check_clustered_table, run_clustering
from .datagen import DataGenSpec, GenSpecError, generate_table
from .exec import QueryError, parse_queries, run_query
from .experiments import (MemorySpec, RobustnessSpec, run_memory, run_robustness, write_memory_csv,
                          write_robustness_csv)
from .metrics import MetricError, relative_error_histogram
from .mvcc import TransactionManager
from .storage import StorageError, export_table_csv, import_table_csv
from .workload import WorkloadError, WorkloadRecorder, export_csv, import_csv

log = logging.getLogger("clusterkit")


class CommandError(Exception):
    pass


def _load_tables(paths, capacity=None) -> dict:
    manager = TransactionManager()
    tables = {}
    for p in paths:
        table = import_table_csv(p, manager, chunk_capacity=capacity)
        tables[table.name] = table
    return tables


def _model_config(path) -> ModelConfig:
    return ModelConfig.load(path) if path else ModelConfig()


def _dataclass_from_json(cls, path):
    if not path:
        return cls()
    data = json.loads(Path(path).read_text())
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise CommandError(f"unknown setting(s) {', '.join(sorted(unknown))}")
    for key, value in data.items():
        if isinstance(value, list):
            data[key] = tuple(value)
    return cls(**data)


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    spec = DataGenSpec.load(args.spec)
    table = generate_table(spec, args.seed, args.chunk_capacity)
    out = Path(args.out or f"{spec.table}.csv")
    export_table_csv(table, out)
    log.info("wrote %d rows to %s", table.row_count, out)
    return 0


def cmd_run(args) -> int:
    tables = _load_tables(args.table, args.chunk_capacity)
    queries = parse_queries(Path(args.queries).read_text())
    recorder = WorkloadRecorder()
    for rep in range(args.repetitions):
        for q in queries:
            ctx = next(iter(tables.values())).manager.begin() if tables else None
            if ctx is None:
                raise CommandError("no tables loaded")
            try:
                result = run_query(ctx, q, tables, use_pruning=not args.no_pruning)
            finally:
                ctx.abort()
            recorder.record(result, f"{q.query_id}@{rep}")
    snapshot = recorder.snapshot(tables)
    export_csv(snapshot, args.out)
    log.info("recorded %d scans and %d joins into %s", len(snapshot.scans), len(snapshot.joins), args.out)
    return 0


def cmd_advise(args) -> int:
    snapshot = import_csv(args.workload)
    if args.target_table not in snapshot.tables:
        raise CommandError(f"unknown table {args.target_table!r}")
    scan_cols, join_cols = interesting_columns(snapshot, args.target_table)
    if not scan_cols | join_cols:
        print(f"no interesting columns for table {args.target_table!r}", file=sys.stderr)
        return 2
    cfg = _model_config(args.config)
    cfg.d, cfg.k = args.d, args.k
    hints = CorrelationHint.from_text(Path(args.hints).read_text()).validate(snapshot) if args.hints else None
    suggestions = rank(snapshot, args.target_table, cfg, hints)
    out = args.out or "suggestions.csv"
    write_suggestions(suggestions, out)
    for s in suggestions:
        print(f"{s.rank}\t{s.clustering.candidate.label(s.clustering.counts)}\tsort={s.clustering.sort_column}"
              f"\t{s.estimate.total_ns:.0f} ns")
    return 0


def cmd_apply(args) -> int:
    path = args.clustering or args.config
    if not path:
        raise CommandError("apply needs a clustering config (--clustering or --config)")
    config = ClusteringConfig.load(path)
    tables = _load_tables([args.table_file], args.chunk_capacity)
    table = next(iter(tables.values()))
    report = run_clustering(table, config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.steps_csv(out / "steps.csv")
    if config.sample_memory:
        report.memory_csv(out / "memory.csv")
    problems = check_clustered_table(table)
    if args.write_table:
        export_table_csv(table, args.write_table)
    print(f"committed {report.committed_steps} of {len(report.steps)} steps; "
          f"{len(problems)} layout problem(s)")
    for p in problems:
        print(p, file=sys.stderr)
    return 0


def cmd_calibrate(args) -> int:
    snapshots = [import_csv(d) for d in args.workload]
    cfg = calibrate(snapshots, args.target_table, _model_config(args.config))
    cfg.save(args.out)
    print(cfg.to_text(), end="")
    return 0


def cmd_bench_robustness(args) -> int:
    spec = _dataclass_from_json(RobustnessSpec, args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    if args.chunk_capacity:
        spec.chunk_capacity = args.chunk_capacity
    if args.updates_per_second is not None:
        spec.updates_per_second = args.updates_per_second
    progress = lambda r: log.info("chunks per cluster %s: sort success %.3f", r["chunks_per_cluster"],
                                  r["sort_success"])
    rows = run_robustness(spec, progress)
    if args.retry_sweep:
        rows += run_robustness(spec, progress, sizes=spec.chunks_per_cluster[-1:], max_attempts=args.retry_sweep)
    write_robustness_csv(rows, args.out)
    return 0


def cmd_bench_memory(args) -> int:
    spec = _dataclass_from_json(MemorySpec, args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    if args.chunk_capacity:
        spec.chunk_capacity = args.chunk_capacity
    rows = run_memory(spec)
    write_memory_csv(rows, args.out, args.curve)
    for r in rows:
        print(f"{r['run_mode']}\tpeak {r['peak_bytes']}\tfinal {r['final_bytes']}")
    return 0


def _read_pairs(path) -> list[EstimatePair]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"measured_ns", "estimated_ns"} <= set(reader.fieldnames):
            raise CommandError("pairs file needs measured_ns and estimated_ns columns")
        pairs = []
        for row in reader:
            if not row.get("measured_ns") or row.get("kind") == "summary":
                continue
            pairs.append(EstimatePair(row.get("kind", "op"), row.get("query_id", ""), row.get("table", ""),
                                      row.get("column", ""), row.get("step", ""),
                                      float(row["measured_ns"]), float(row["estimated_ns"])))
    return pairs


def cmd_report(args) -> int:
    if args.pairs:
        pairs = _read_pairs(args.pairs)
    elif args.source and args.target:
        source, target = import_csv(args.source), import_csv(args.target)
        pairs = evaluate_pair(source, target, args.target_table, _model_config(args.config))
    else:
        raise CommandError("report needs --pairs or both --source and --target")
    if not pairs:
        raise CommandError("no estimate pairs to report")
    write_report(pairs, args.out)
    if args.histogram:
        positive = [p for p in pairs if p.estimated > 0]
        with open(args.histogram, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "step", "low", "high", "count"])
            groups: dict = {}
            for p in positive:
                groups.setdefault((p.kind, p.step), []).append(p)
            for (kind, step), ps in sorted(groups.items()):
                for lo, hi, n in relative_error_histogram([p.measured for p in ps], [p.estimated for p in ps]):
                    w.writerow([kind, step, lo, hi, n])
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clusterkit", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="random seed (default 0 where used)")
    parser.add_argument("--chunk-capacity", type=int, default=None, help="rows per chunk")
    parser.add_argument("--config", default=None, help="model config (advise/report/calibrate) or "
                                                       "clustering config (apply)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic table")
    p.add_argument("spec", help="generator spec (JSON)")
    p.add_argument("-o", "--out", help="output CSV (default <table>.csv)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="execute queries and export workload statistics")
    p.add_argument("--table", action="append", required=True, help="table CSV (repeatable)")
    p.add_argument("--queries", required=True, help="query file")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--no-pruning", action="store_true")
    p.add_argument("-o", "--out", required=True, help="workload directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("advise", help="rank clustering candidates for a table")
    p.add_argument("workload", help="workload directory")
    p.add_argument("target_table", metavar="table")
    p.add_argument("-d", type=int, default=2, help="max clustering dimensions")
    p.add_argument("-k", type=int, default=5, help="suggestions to return")
    p.add_argument("--hints", help="correlation hints file")
    p.add_argument("-o", "--out", help="suggestions CSV (default suggestions.csv)")
    p.set_defaults(func=cmd_advise)

    p = sub.add_parser("apply", help="cluster a table")
    p.add_argument("table_file", metavar="table", help="table CSV")
    p.add_argument("--clustering", help="clustering config file")
    p.add_argument("-o", "--out-dir", default=".", help="directory for report CSVs")
    p.add_argument("--write-table", help="write the clustered table to this CSV")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("calibrate", help="fit model constants from workloads under different clusterings")
    p.add_argument("target_table", metavar="table")
    p.add_argument("--workload", action="append", required=True, help="workload directory (two or more)")
    p.add_argument("-o", "--out", required=True, help="model config output")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("bench-robustness", help="clustering under concurrent updates")
    p.add_argument("--spec", help="experiment settings (JSON)")
    p.add_argument("--updates-per-second", type=float, help="target update rate (0 disables updates)")
    p.add_argument("--retry-sweep", type=int, default=0, help="extra run with up to N attempts per step")
    p.add_argument("-o", "--out", default="robustness.csv")
    p.set_defaults(func=cmd_bench_robustness)

    p = sub.add_parser("bench-memory", help="memory footprint of the run modes")
    p.add_argument("--spec", help="experiment settings (JSON)")
    p.add_argument("-o", "--out", default="memory.csv")
    p.add_argument("--curve", help="per-sample memory curve CSV")
    p.set_defaults(func=cmd_bench_memory)

    p = sub.add_parser("report", help="estimate-quality report")
    p.add_argument("--pairs", help="CSV with measured_ns and estimated_ns columns")
    p.add_argument("--source", help="workload the estimates are made from")
    p.add_argument("--target", help="workload whose measurements are estimated")
    p.add_argument("--table", dest="target_table", help="table whose clustering differs")
    p.add_argument("-o", "--out", default="report.csv")
    p.add_argument("--histogram", help="relative-error histogram CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.seed is None and args.command == "gen":
        args.seed = 0
    try:
        return args.func(args)
    except (CommandError, AdvisorError, ClusteringError, GenSpecError, QueryError, StorageError,
            WorkloadError, MetricError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
