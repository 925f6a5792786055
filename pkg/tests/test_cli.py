import csv
import json
import subprocess
import sys

import pytest

from clusterkit.cli import main
from clusterkit.workload import import_csv

GEN = {"table": "t", "rows": 6000, "chunk_capacity": 500, "columns": [
    {"name": "id", "dist": "sequence"},
    {"name": "a", "dist": "uniform-int", "low": 0, "high": 999},
    {"name": "b", "dist": "uniform-int", "low": 0, "high": 99},
    {"name": "c", "dist": "derived", "base": "a", "width": 30}]}

QUERIES = """
query q1
scan t a = 17
query q2
scan t a between 100 and 120
scan t b < 50
"""


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "gen.json").write_text(json.dumps(GEN))
    (tmp_path / "q.txt").write_text(QUERIES)
    assert main(["--seed", "3", "gen", str(tmp_path / "gen.json"), "-o", str(tmp_path / "t.csv")]) == 0
    assert main(["run", "--table", str(tmp_path / "t.csv"), "--queries", str(tmp_path / "q.txt"),
                 "--repetitions", "3", "-o", str(tmp_path / "wl")]) == 0
    return tmp_path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gen_deterministic(workspace):
    out = workspace / "again.csv"
    assert main(["--seed", "3", "gen", str(workspace / "gen.json"), "-o", str(out)]) == 0
    assert out.read_bytes() == (workspace / "t.csv").read_bytes()


def test_run_repetitions(workspace):
    snap = import_csv(workspace / "wl")
    assert len(snap.scans) == 9
    assert sorted({s.query_id for s in snap.scans}) == [f"q{q}@{r}" for q in (1, 2) for r in range(3)]


def test_empty_query_file(workspace):
    (workspace / "empty.txt").write_text("")
    assert main(["run", "--table", str(workspace / "t.csv"), "--queries", str(workspace / "empty.txt"),
                 "-o", str(workspace / "none")]) == 0
    snap = import_csv(workspace / "none")
    assert snap.scans == [] and snap.joins == []


def test_advise(workspace, capsys):
    out = workspace / "s.csv"
    assert main(["advise", str(workspace / "wl"), "t", "-k", "1", "-o", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 1 and "a" in rows[0]["clustering"]


def test_advise_errors(workspace, tmp_path):
    assert main(["advise", str(workspace / "wl"), "nope"]) == 1
    (workspace / "q0.txt").write_text("")
    main(["run", "--table", str(workspace / "t.csv"), "--queries", str(workspace / "q0.txt"),
          "-o", str(workspace / "none")])
    assert main(["advise", str(workspace / "none"), "t", "-o", str(tmp_path / "x.csv")]) == 2


def test_hints_change_estimates(workspace):
    (workspace / "qc.txt").write_text("scan t c between 100 and 110\nscan t b = 3\n")
    main(["run", "--table", str(workspace / "t.csv"), "--queries", str(workspace / "qc.txt"),
          "-o", str(workspace / "wc")])
    (workspace / "hints.txt").write_text("t a c\n")
    plain, hinted = workspace / "p.csv", workspace / "h.csv"
    assert main(["advise", str(workspace / "wc"), "t", "-k", "100", "-o", str(plain)]) == 0
    assert main(["advise", str(workspace / "wc"), "t", "-k", "100", "--hints", str(workspace / "hints.txt"),
                 "-o", str(hinted)]) == 0
    # hints only matter for candidates clustering the partner column, which the workload does not scan
    assert _rows(plain) == _rows(hinted)
    # the advisor cannot see "a" without a scan on it; add one so the hint has a candidate to act on
    (workspace / "qa.txt").write_text("scan t c between 100 and 110\nquery other\nscan t a = 5\n")
    main(["run", "--table", str(workspace / "t.csv"), "--queries", str(workspace / "qa.txt"),
          "-o", str(workspace / "wa")])
    main(["advise", str(workspace / "wa"), "t", "-k", "100", "-o", str(plain)])
    main(["advise", str(workspace / "wa"), "t", "-k", "100", "--hints", str(workspace / "hints.txt"),
          "-o", str(hinted)])
    single = lambda rows: {r["sort_column"]: float(r["scan_ns"]) for r in rows
                           if ";" not in r["clustering"] and r["clustering"].startswith("a:")}
    p, h = single(_rows(plain)), single(_rows(hinted))
    assert h["c"] < p["c"]


def test_apply_and_report(workspace):
    (workspace / "cl.txt").write_text("clustering_columns=a\ncluster_counts=4\nsort_column=b\n"
                                      "merge_row_threshold=50\nsample_memory=true\n")
    out = workspace / "applied"
    assert main(["apply", str(workspace / "t.csv"), "--clustering", str(out.parent / "cl.txt"),
                 "-o", str(out), "--write-table", str(workspace / "t2.csv")]) == 0
    steps = _rows(out / "steps.csv")
    assert steps and all(r["committed"] == "1" for r in steps)
    assert (out / "memory.csv").exists()

    assert main(["run", "--table", str(workspace / "t2.csv"), "--queries", str(workspace / "q.txt"),
                 "--repetitions", "3", "-o", str(workspace / "wl2")]) == 0
    report, hist = workspace / "r.csv", workspace / "h.csv"
    assert main(["report", "--source", str(workspace / "wl"), "--target", str(workspace / "wl2"),
                 "--table", "t", "-o", str(report), "--histogram", str(hist)]) == 0
    lines = report.read_text().splitlines()
    measured = [l for l in lines[1:] if l and not l.startswith("summary")]
    assert len(measured) == 9
    assert sum(int(r["count"]) for r in _rows(hist)) == 9


def test_report_perfect_pairs(tmp_path):
    (tmp_path / "p.csv").write_text("kind,measured_ns,estimated_ns\nscan,10,10\nscan,20,20\n")
    assert main(["report", "--pairs", str(tmp_path / "p.csv"), "-o", str(tmp_path / "r.csv")]) == 0
    summary = [l for l in (tmp_path / "r.csv").read_text().splitlines() if l.startswith("summary,scan")]
    assert summary and summary[0].split(",")[-1] == "0.0"


def test_report_needs_input(tmp_path):
    assert main(["report", "-o", str(tmp_path / "r.csv")]) == 1


def test_bench_commands(tmp_path):
    (tmp_path / "r.json").write_text(json.dumps({"rows": 8000, "chunk_capacity": 256,
                                                 "chunks_per_cluster": [1, 3], "updater_threads": 2}))
    out = tmp_path / "rob.csv"
    assert main(["--seed", "1", "bench-robustness", "--spec", str(tmp_path / "r.json"),
                 "--updates-per-second", "0", "--retry-sweep", "2", "-o", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 3 and all(float(r["sort_success"]) == 1.0 for r in rows)
    (tmp_path / "m.json").write_text(json.dumps({"rows": 8000, "chunk_capacity": 256, "chunks_per_cluster": 4}))
    assert main(["bench-memory", "--spec", str(tmp_path / "m.json"), "-o", str(tmp_path / "mem.csv"),
                 "--curve", str(tmp_path / "curve.csv")]) == 0
    assert len(_rows(tmp_path / "mem.csv")) == 3


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "clusterkit", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("gen", "run", "advise", "apply", "bench-robustness", "bench-memory", "report"):
        assert cmd in res.stdout
    for flag in ("--seed", "--chunk-capacity", "--config"):
        assert flag in res.stdout
