import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from clusterkit.advisor import (AdvisorError, Clustering, ClusteringAdvisor, ClusteringCandidate, CorrelationHint,
                                ModelConfig, current_clustering, density_factor, determine_cluster_counts,
                                estimate_chunk_count, estimate_join, estimate_join_latency, estimate_latency,
                                estimate_materialize_step, estimate_probe_step, estimate_scan_latencies,
                                estimate_scan_latency, estimate_unique_values_per_chunk, estimate_unprunable_part,
                                generate_candidates, interesting_columns, rank, read_suggestions, sorted_scan_input,
                                unique_values_factor, write_suggestions)
from clusterkit.calibrate import calibrate, evaluate_pair, fit_time_per_row, pair_smape
from clusterkit.workload import ColumnMeta, JoinRecord, ScanRecord, TableMeta, WorkloadSnapshot

MS = 1_000_000


def clustering(counts=None, sort=None):
    counts = counts or {}
    return Clustering(ClusteringCandidate(frozenset(counts), sort), dict(counts))


def scan(qid, column, sel, rows=1000, seq=0, runtime=None, table="t"):
    out = int(round(sel * rows))
    return ScanRecord(qid, seq, table, column, "=", sel, rows, out, runtime if runtime is not None else rows + out)


def join(probe_ns=100 * MS, mat_probe=100 * MS, sorted_=False, radix=0, preds=(), rows=1000, qid="j"):
    return JoinRecord(qid, "inner", "d", "k", "t", "k", rows, 1, 5 * MS, mat_probe, radix, 7 * MS, probe_ns,
                      3 * MS, sorted_, tuple(preds))


def snapshot(scans=(), joins=(), rows=1000, chunks=10, capacity=100, distinct=None, counts=None, sort=None):
    distinct = distinct or {}
    counts = counts or {}
    cols = {"a", "b", "k", "s", "r"} | set(distinct)
    columns = {("t", c): ColumnMeta("t", c, "int64", distinct.get(c, 100), False, c == sort, counts.get(c, 0))
               for c in cols}
    columns[("d", "k")] = ColumnMeta("d", "k", "int64", 100, False, False)
    tables = {"t": TableMeta("t", rows, chunks, capacity), "d": TableMeta("d", 100, 1, 100)}
    return WorkloadSnapshot(list(scans), list(joins), tables, columns)


class TestCandidates:
    def test_interesting(self):
        snap = snapshot([scan("q", "a", 0.1)], [join()])
        assert interesting_columns(snap, "t") == ({"a"}, {"k"})
        assert interesting_columns(WorkloadSnapshot(), "t") == (set(), set())
        both = snapshot([scan("q", "k", 0.1)], [join()])
        assert interesting_columns(both, "t") == ({"k"}, {"k"})

    def test_count(self):
        assert len(generate_candidates(["a", "b", "c"], 2)) == 18
        assert len(generate_candidates(["a"], 1)) == 1
        assert ClusteringCandidate(frozenset("abc"), "a") in generate_candidates("abc", 5)

    def test_count_formula(self):
        for c in range(1, 6):
            for d in range(1, 5):
                expected = sum(math.comb(c, i) for i in range(1, min(d, c) + 1)) * c
                assert len(generate_candidates([f"c{i}" for i in range(c)], d)) == expected

    def test_bad_d(self):
        with pytest.raises(AdvisorError):
            generate_candidates(["a"], 0)


class TestClusterCounts:
    def test_two_join_columns(self):
        snap = snapshot(chunks=916, distinct={"k": 10 ** 6, "k2": 10 ** 6})
        snap.joins = [join(), replace(join(), probe_column="k2")]
        counts = determine_cluster_counts(ClusteringCandidate({"k", "k2"}, "k"), snap, "t")
        assert counts == {"k": 31, "k2": 31}

    def test_scan_plus_join(self):
        snap = snapshot([scan("q", "ship", 0.01)], [replace(join(), probe_column="ok")], chunks=916,
                        distinct={"ship": 2526, "ok": 15 * 10 ** 6})
        counts = determine_cluster_counts(ClusteringCandidate({"ship", "ok"}, "ship"), snap, "t")
        assert counts == {"ok": 3, "ship": 100}

    def test_clamped_by_distinct(self):
        snap = snapshot([scan("q", "disc", 0.1)], chunks=916, distinct={"disc": 11})
        assert determine_cluster_counts(ClusteringCandidate({"disc"}, "disc"), snap, "t") == {"disc": 11}

    def test_log_apportionment(self):
        snap = snapshot([scan("q", "a", 0.1), scan("q", "b", 0.1, seq=1)], chunks=100,
                        distinct={"a": 10 ** 4, "b": 100})
        counts = determine_cluster_counts(ClusteringCandidate({"a", "b"}, "a"), snap, "t")
        # ln share 2/3 vs 1/3 of 100 clusters
        assert counts == {"a": round(100 ** (2 / 3)), "b": round(100 ** (1 / 3))}


class TestScanEstimates:
    def test_unprunable_part(self):
        c10 = clustering({"a": 10})
        assert estimate_unprunable_part([scan("q", "a", 0.15)], c10) == Fraction(1, 5)
        assert estimate_unprunable_part([scan("q", "b", 0.15)], c10) == 1
        both = clustering({"a": 10, "b": 20})
        part = estimate_unprunable_part([scan("q", "a", 0.15), scan("q", "b", 0.02, seq=1)], both)
        assert part == Fraction(1, 100)

    def test_unusable_pruning_skipped(self):
        s = replace(scan("q", "a", 0.1), pruning_usable=False)
        assert estimate_unprunable_part([s], clustering({"a": 10})) == 1

    def test_unprunable_bounds(self, rng):
        # divisor chains are monotone; every k keeps sel <= part < sel + 1/k
        for _ in range(300):
            sel = float(rng.choice([0.0, 1.0, rng.random()]))
            base = int(rng.integers(1, 20))
            parts = [estimate_unprunable_part([scan("q", "a", sel)], clustering({"a": base * m})) for m in (1, 2, 4)]
            assert parts[0] >= parts[1] >= parts[2]
            for m, p in zip((1, 2, 4), parts):
                s = Fraction(repr(sel))
                assert 0 <= p <= 1 and s <= p < s + Fraction(1, base * m) + (1 if s == 0 else 0)
            lo, hi = sorted(rng.random(2).tolist())
            k = clustering({"a": base})
            assert estimate_unprunable_part([scan("q", "a", lo)], k) <= estimate_unprunable_part([scan("q", "a", hi)], k)

    def test_zero_scan(self):
        s = ScanRecord("q", 0, "t", "a", "=", 0.0, 0, 0, 0)
        snap = snapshot([s], rows=0)
        assert estimate_scan_latency(snap, "t", clustering(), config=ModelConfig(scan_mode="absolute")) == 0

    def test_absolute_formula(self):
        snap = snapshot([scan("q", "a", 0.05)])
        cfg = ModelConfig(time_per_row=2.0, scan_mode="absolute")
        assert estimate_scan_latency(snap, "t", clustering({"b": 4}), config=cfg) == 2100

    def test_sorted_input(self):
        assert sorted_scan_input(65536, 65535) == 16
        assert sorted_scan_input(0, 100) == 0
        assert sorted_scan_input(131072, 65536, "per_chunk") == 2 * 16 * 2

    def test_sorted_scan_in_estimate(self):
        snap = snapshot([scan("q", "a", 0.0, rows=65536)], rows=65536)
        cfg = ModelConfig(scan_mode="absolute")
        assert estimate_scan_latency(snap, "t", clustering({}, "a"), config=cfg) == 16

    def test_relative_mode(self):
        snap = snapshot([scan("q", "a", 0.1, runtime=5000)])
        (_, est), = estimate_scan_latencies(snap, "t", clustering({"a": 10}))
        # (100 + 100) / (1000 + 100) of the recorded runtime
        assert est == pytest.approx(5000 * 200 / 1100)

    def test_hints(self):
        snap = snapshot([scan("q", "r", 0.01, runtime=5000)])
        cand = clustering({"s": 10})
        hints = CorrelationHint({"t": [("s", "r")]})
        plain = estimate_scan_latency(snap, "t", cand)
        hinted = estimate_scan_latency(snap, "t", cand, hints=hints)
        assert plain == 5000 and hinted < plain
        assert estimate_unprunable_part(snap.scans, cand, hints, table="t") == Fraction(1, 10)

    def test_hint_parsing(self):
        h = CorrelationHint.from_text("# pairs\nt s r\n")
        assert h.partners("t", "r") == ["s"]
        with pytest.raises(AdvisorError):
            CorrelationHint.from_text("t s")
        with pytest.raises(AdvisorError):
            CorrelationHint({"t": [("zz", "r")]}).validate(snapshot())


class TestJoinEstimates:
    def test_unique_values(self):
        assert estimate_unique_values_per_chunk(100_000, "k", clustering({"k": 3}), 65535) == 100_000 / 3
        assert int(estimate_unique_values_per_chunk(100_000, "k", clustering({"k": 3}), 65535)) == 33_333
        assert estimate_unique_values_per_chunk(15_000_000, "k", clustering({"k": 3}), 65535) == 65535
        assert estimate_unique_values_per_chunk(10, "k", clustering(), 65535) == 10

    def test_unique_factor(self):
        cfg = ModelConfig(unique_low=1.0, unique_high=1.4)
        assert unique_values_factor(0, "k", clustering(), 100, cfg) == 1.0
        assert unique_values_factor(10 ** 6, "k", clustering(), 100, cfg) == 1.4
        assert unique_values_factor(50, "k", clustering(), 100, cfg) == 1.2

    def test_chunk_count(self):
        assert estimate_chunk_count(join(rows=1000), clustering(), 10 ** 6, 100, 100) == 10
        j = join(rows=100_000, preds=[("a", 0.5)])
        assert estimate_chunk_count(j, clustering(), 10 ** 7, 200, 65535) == pytest.approx(100_000 / 32767.5)
        assert estimate_chunk_count(j, clustering(), 10 ** 7, 2, 65535) == 2
        assert estimate_chunk_count(j, clustering({"a": 4}), 10 ** 7, 200, 65535) == 100_000 / 65535
        assert estimate_chunk_count(join(rows=100, preds=[("a", 0.0)]), clustering(), 10 ** 4, 100, 100) == 100

    def test_density_factor(self):
        cfg = ModelConfig(density_low=1.0, density_high=1.5)
        assert density_factor(join(rows=1000), clustering(), 10_000, 100, 100, cfg) == 1.0
        assert density_factor(join(rows=1000, preds=[("a", 0.0)]), clustering(), 10_000, 100, 100, cfg) == 1.5
        # estimated 55 chunks lies halfway between 10 and 100
        assert density_factor(join(rows=1000, preds=[("a", 10 / 55)]), clustering(), 10_000, 100, 100,
                              cfg) == pytest.approx(1.25)

    def test_materialize_identity(self):
        j = join(sorted_=True, preds=[("a", 0.3)])
        snap = snapshot(joins=[j], counts={"k": 3}, sort="k")
        cur = current_clustering(snap, "t")
        assert estimate_materialize_step(j, "probe", "t", cur, cur, snap) == j.mat_probe_ns

    def test_materialize_sorted_to_unsorted(self):
        j = join(sorted_=True)
        snap = snapshot(joins=[j], sort="k")
        cfg = ModelConfig(unique_low=1.0, unique_high=1.0, mat_sort_factor=1.3)
        est = estimate_materialize_step(j, "probe", "t", clustering({"a": 2}), current_clustering(snap, "t"), snap,
                                        cfg)
        assert est == pytest.approx(130 * MS, rel=1e-12)

    def test_materialize_other_table(self):
        j = replace(join(sorted_=True), probe_table="d")
        snap = snapshot(joins=[j], sort="k")
        assert estimate_materialize_step(j, "probe", "t", clustering({"a": 2}), clustering(), snap) == j.mat_probe_ns
        assert estimate_materialize_step(j, "build", "t", clustering({"a": 2}), clustering(), snap) == j.mat_build_ns

    def test_probe_step(self):
        cfg = ModelConfig(probe_sort_factor=1.2)
        j = join(sorted_=True)
        cur = clustering({}, "k")
        assert estimate_probe_step(j, "t", cur, cur, cfg) == j.probe_ns
        assert estimate_probe_step(j, "t", clustering({"a": 2}), cur, cfg) == pytest.approx(120 * MS, rel=1e-12)
        assert estimate_probe_step(join(), "t", clustering({"a": 2}), clustering(), cfg) == 100 * MS

    def test_newly_sorted_needs_no_radix(self):
        cfg = ModelConfig(probe_sort_factor=1.2)
        assert estimate_probe_step(join(radix=0), "t", clustering({}, "k"), clustering(), cfg) == \
            pytest.approx(100 * MS / 1.2)
        assert estimate_probe_step(join(radix=5), "t", clustering({}, "k"), clustering(), cfg) == 100 * MS

    def test_join_latency(self):
        assert estimate_join_latency(WorkloadSnapshot(), "t", clustering()) == 0
        j = join(sorted_=True, preds=[("a", 0.2)])
        snap = snapshot(joins=[j], sort="k", counts={"k": 4})
        assert estimate_join_latency(snap, "t", current_clustering(snap, "t")) == j.total_ns
        cand = clustering({"a": 3}, "a")
        steps = estimate_join(j, "t", cand, current_clustering(snap, "t"), snap)
        assert estimate_join_latency(snap, "t", cand) == sum(steps.values())
        assert steps["build"] == j.build_ns and steps["radix_cluster"] == j.radix_ns


class TestIdentity:
    def test_every_operator(self, rng):
        for trial in range(50):
            scans = [scan(f"q{i // 3}", str(rng.choice(list("abs"))), float(rng.random()), seq=i % 3,
                          runtime=int(rng.integers(1, 10 ** 6))) for i in range(9)]
            joins = [join(int(rng.integers(1, 10 ** 7)), int(rng.integers(1, 10 ** 7)), bool(rng.random() < 0.5),
                          int(rng.integers(0, 2)) * 100, [("a", float(rng.random()))]) for _ in range(3)]
            counts = {c: int(rng.integers(1, 20)) for c in rng.choice(list("abk"), int(rng.integers(0, 3)),
                                                                    replace=False)}
            snap = snapshot(scans, joins, counts=counts, sort=str(rng.choice(list("abks"))))
            cur = current_clustering(snap, "t")
            assert [e for _, e in estimate_scan_latencies(snap, "t", cur)] == [s.runtime_ns for s in scans]
            for j in joins:
                assert estimate_join(j, "t", cur, cur, snap) == {
                    "materialize_build": j.mat_build_ns, "materialize_probe": j.mat_probe_ns,
                    "radix_cluster": j.radix_ns, "build": j.build_ns, "probe": j.probe_ns, "output": j.output_ns}


class TestRank:
    def _scan_heavy(self):
        scans = [scan(f"q{i}", "a", 0.01, runtime=10_000) for i in range(5)] + [scan("z", "b", 0.5, runtime=900)]
        return snapshot(scans, [join()], distinct={"a": 1000, "b": 1000})

    def test_scanned_column_first(self):
        top = rank(self._scan_heavy(), "t", ModelConfig(k=3))
        assert "a" in top[0].clustering.columns
        assert len(top) == 3 and [s.rank for s in top] == [1, 2, 3]

    def test_k_larger_than_candidates(self):
        assert len(rank(self._scan_heavy(), "t", k=1000)) == 18

    def test_deterministic_ties(self):
        snap = snapshot([scan("q", "a", 1.0), scan("q", "b", 1.0, seq=1)])
        first = [s.clustering.candidate.sort_key for s in rank(snap, "t", k=100)]
        assert first == [s.clustering.candidate.sort_key for s in rank(snap, "t", k=100)]

    def test_scale_invariance(self, rng):
        snap = self._scan_heavy()
        base = [s.clustering.candidate for s in rank(snap, "t", k=100)]
        for factor in (0.25, 3.0, 1000.0):
            assert [s.clustering.candidate for s in rank(snap.scaled(factor), "t", k=100)] == base

    def test_carried_latency(self):
        other = scan("x", "a", 0.1, runtime=777, table="d")
        snap = self._scan_heavy()
        snap.scans.append(other)
        est = estimate_latency(snap, "t", current_clustering(snap, "t"))
        assert est.carried_ns == 777

    def test_unknown_table(self):
        with pytest.raises(AdvisorError):
            rank(self._scan_heavy(), "nope")

    def test_suggestions_csv(self, tmp_path):
        top = rank(self._scan_heavy(), "t", k=4)
        write_suggestions(top, tmp_path / "s.csv")
        rows = read_suggestions(tmp_path / "s.csv")
        assert [int(r["rank"]) for r in rows] == [1, 2, 3, 4]
        assert rows[0]["columns"] == sorted(top[0].clustering.columns)
        assert float(rows[0]["total_ns"]) == top[0].estimate.total_ns

    def test_estimator(self):
        adv = ClusteringAdvisor("t", d=1, k=2).fit(self._scan_heavy())
        assert len(adv.suggestions_) == 2
        cur = adv.current_
        pred = adv.predict([cur, ClusteringCandidate({"a"}, "a")])
        assert pred[0] == pytest.approx(sum(s.runtime_ns for s in adv.snapshot_.scans) + join().total_ns)
        assert pred[1] < pred[0]

    def test_estimator_errors(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            ClusteringAdvisor("t").predict([])
        with pytest.raises(AdvisorError):
            ClusteringAdvisor("t").fit(snapshot())
        with pytest.raises(AdvisorError):
            ClusteringAdvisor().fit(self._scan_heavy())


class TestConfig:
    def test_roundtrip(self, tmp_path):
        cfg = ModelConfig(time_per_row=3.5, d=3, scan_mode="absolute")
        cfg.save(tmp_path / "m.txt")
        assert ModelConfig.load(tmp_path / "m.txt") == cfg

    def test_validation(self):
        with pytest.raises(AdvisorError):
            ModelConfig(unique_low=2, unique_high=1).validate()
        with pytest.raises(AdvisorError):
            ModelConfig.from_text("nonsense=1")


def _pair(c=3.0, rng=None):
    """Two snapshots of the same queries under different clusterings, runtime = c * rows touched."""
    rng = rng or np.random.default_rng(0)

    def snap(counts, sort):
        scans = []
        for i in range(20):
            rows = int(rng.integers(100, 10_000))
            out = int(rng.integers(0, rows))
            scans.append(ScanRecord(f"q{i}", 0, "t", "a", "<", out / rows, rows, out, int(c * (rows + out))))
        joins = [join(qid=f"j{i}", sorted_=sort == "k") for i in range(3)]
        return snapshot(scans, joins, counts=counts, sort=sort)

    return snap({"a": 4}, "k"), snap({}, None)


class TestCalibrate:
    def test_time_per_row(self):
        a, b = _pair(3.0)
        assert fit_time_per_row([a, b]) == pytest.approx(3.0, rel=0.01)
        assert calibrate([a, b], "t").time_per_row == pytest.approx(3.0, rel=0.01)

    def test_identical_pair(self):
        a, _ = _pair()
        cfg = calibrate([a, a], "t")
        assert (cfg.probe_sort_factor, cfg.unique_high, cfg.density_high, cfg.mat_sort_factor) == (1.0,) * 4

    def test_signal_is_recovered(self):
        a, b = _pair()
        # a sorted probe input made the probe 1.3x cheaper
        for j in a.joins:
            j.probe_ns = int(j.probe_ns / 1.3)
        assert calibrate([a, b], "t").probe_sort_factor == pytest.approx(1.3)

    def test_deterministic(self):
        a, b = _pair()
        assert calibrate([a, b], "t") == calibrate([a, b], "t")

    def test_errors(self):
        a, b = _pair()
        with pytest.raises(AdvisorError):
            calibrate([a], "t")
        b.scans = b.scans[:-1]
        with pytest.raises(AdvisorError):
            calibrate([a, b], "t")

    def test_evaluate_pair_identity(self):
        a, _ = _pair()
        pairs = evaluate_pair(a, a, "t")
        assert pair_smape(pairs, "scan") == 0 and pair_smape(pairs, "join", "probe") == 0
