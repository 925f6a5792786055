import numpy as np

from clusterkit.datagen import generate_columns
from clusterkit.experiments import (MemorySpec, RobustnessSpec, UpdaterPool, counts_for_cluster_size,
                                    experiment_spec, memory_case, robustness_case, verify_preservation,
                                    write_memory_csv, write_robustness_csv)
from clusterkit.mvcc import TransactionManager
from clusterkit.storage import load_table

SMALL = RobustnessSpec(rows=20_000, chunk_capacity=512, updater_threads=4, updates_per_second=2000,
                       merge_row_threshold=32)


def test_counts_for_cluster_size():
    a, b = counts_for_cluster_size(10 ** 6, 4096, 1)
    assert abs(a * b - 10 ** 6 / (0.95 * 4096)) < 16
    assert counts_for_cluster_size(1000, 4096, 9) == [1, 1]


def test_zero_rate_is_clean():
    row = robustness_case(SMALL, 2, updates_per_second=0)
    assert row["partition_success"] == row["sort_success"] == 1.0
    assert row["update_attempts"] == 0 and row["preserved"]


def test_updates_preserve_data(tmp_path):
    row = robustness_case(SMALL, 2)
    assert row["preserved"], row["problems"]
    assert row["update_attempts"] > 0 and row["update_success_ratio"] > 0.9
    write_robustness_csv([row], tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().startswith("chunks_per_cluster,")


def test_verify_detects_lost_update():
    gen = experiment_spec(500)
    initial = generate_columns(gen, 0)
    table = load_table(gen.schema(), initial, 64, TransactionManager(), "t")
    pool = UpdaterPool(table, threads=2, updates_per_second=2000)
    pool.start()
    import time

    time.sleep(0.05)
    pool.stop()
    assert verify_preservation(table, initial, pool.log) == []
    # pretend one extra update committed
    pool.log.per_id[int(initial["id"][0])] += 1
    assert verify_preservation(table, initial, pool.log)


def test_memory_case(tmp_path):
    spec = MemorySpec(rows=40_000, chunk_capacity=512, chunks_per_cluster=4)
    rows = [memory_case(spec, m) for m in spec.run_modes]
    assert all(not r["problems"] for r in rows)
    assert all(r["peak_bytes"] >= r["initial_bytes"] for r in rows)
    write_memory_csv(rows, tmp_path / "m.csv", tmp_path / "curve.csv")
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 4
    assert len((tmp_path / "curve.csv").read_text().splitlines()) > 3


def test_pool_rows_weights_by_steps():
    from clusterkit.experiments import pool_rows

    def row(sort, steps, upd):
        return {"partition_success": 1.0, "partition_steps": 10, "merge_success": 1.0, "merge_steps": 0,
                "sort_success": sort, "sort_steps": steps, "update_success_ratio": upd, "update_attempts": 100,
                "achieved_update_rate": 50.0, "unsorted_per_attempt": [3], "problems": [], "preserved": True,
                "duration_s": 1.0}

    pooled = pool_rows([row(1.0, 30, 1.0), row(0.5, 10, 0.9)])
    assert pooled["sort_success"] == (30 + 5) / 40 and pooled["sort_steps"] == 40
    assert pooled["merge_success"] == 1.0 and pooled["unsorted_per_attempt"] == [6]
    assert abs(pooled["update_success_ratio"] - 0.95) < 1e-12


def test_run_robustness_repeats():
    from dataclasses import replace

    from clusterkit.experiments import run_robustness

    rows = run_robustness(replace(SMALL, repeats=2, chunks_per_cluster=(1, 3)), updates_per_second=0)
    assert [r["chunks_per_cluster"] for r in rows] == [1, 3]
    assert all(r["sort_success"] == 1.0 and r["preserved"] for r in rows)
