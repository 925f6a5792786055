import numpy as np
import pytest

from clusterkit.mvcc import TransactionManager, insert_rows
from clusterkit.storage import (CHUNK_OVERHEAD_BYTES, ColumnDefinition, DataType, DictionarySegment, MinMaxStats,
                                StorageError, TableSchema, ValueSegment, build_histogram, create_table,
                                estimate_memory, export_table_csv, histogram_from_distinct, id_width_for,
                                import_table_csv, load_table)

from conftest import int_schema, make_table


def _segment(values, dtype=DataType.INT64, nullable=False):
    seg = ValueSegment(dtype, len(values), nullable)
    seg.write(0, values)
    return seg


class TestTable:
    def test_empty_table_has_one_mutable_chunk(self):
        t = create_table(int_schema("a", "b", "c"), 65535)
        assert t.chunk_count == 1
        assert t.chunks[0].mutable
        assert t.insert_chunk_id == 0

    def test_capacity_one_is_rejected(self):
        with pytest.raises(StorageError):
            create_table(int_schema("a"), 1)

    def test_inserts_spill_into_new_chunk(self):
        t = create_table(int_schema("a"), 4)
        ctx = t.manager.begin()
        insert_rows(ctx, t, [(i,) for i in range(5)])
        ctx.commit()
        assert [c.size for c in t.chunks] == [4, 1]
        assert not t.chunks[0].mutable

    def test_append_mutable_chunk_flag(self):
        t = create_table(int_schema("a"), 4)
        first = t.append_mutable_chunk(use_for_inserts=True)
        assert t.insert_chunk_id == first
        t.append_mutable_chunk(use_for_inserts=False)
        assert t.insert_chunk_id == first
        second = t.append_mutable_chunk(use_for_inserts=True)
        assert t.insert_chunk_id == second

    def test_load_table_finalizes_full_chunks(self):
        t = make_table({"a": np.arange(250)}, capacity=100)
        assert [c.size for c in t.chunks] == [100, 100, 50]
        assert [c.mutable for c in t.chunks] == [False, False, True]
        assert t.chunks[0].is_encoded
        assert t.row_count == 250

    def test_null_in_non_nullable_column(self):
        with pytest.raises(StorageError):
            load_table(int_schema("a"), [(1,), (None,)], 10)


class TestStats:
    def test_min_max(self):
        s = MinMaxStats.from_segment(_segment([3, 1, 9]), 3)
        assert (s.min, s.max, s.has_null) == (1, 9, False)

    def test_singleton(self):
        s = MinMaxStats.from_segment(_segment([7]), 1)
        assert s.min == s.max == 7

    def test_nulls_excluded(self):
        s = MinMaxStats.from_segment(_segment([None, 2], nullable=True), 2)
        assert (s.min, s.max, s.has_null) == (2, 2, True)

    def test_dictionary_segment_stats_match(self):
        seg = _segment([5, None, -3, 8], nullable=True)
        enc = DictionarySegment.encode(seg, 4)
        assert MinMaxStats.from_segment(enc, 4) == MinMaxStats.from_segment(seg, 4)


class TestDictionary:
    def test_encode_strings(self):
        seg = _segment(["b", "a", "b", "c"], DataType.STRING)
        enc = DictionarySegment.encode(seg, 4)
        assert enc.dictionary.tolist() == ["a", "b", "c"]
        assert enc.value_ids.tolist() == [1, 0, 1, 2]
        assert enc.id_width == 8
        assert enc.decode() == ["b", "a", "b", "c"]

    def test_id_width_grows(self):
        assert id_width_for(255) == 8
        assert id_width_for(299) == 16
        enc = DictionarySegment.encode(_segment(list(range(300))), 300)
        assert enc.id_width == 16

    def test_constant_column(self):
        enc = DictionarySegment.encode(_segment([4] * 10), 10)
        assert len(enc.dictionary) == 1
        assert set(enc.value_ids.tolist()) == {0}
        assert enc.memory_bytes() == 8 + 10

    def test_roundtrip_with_nulls(self, rng):
        values = [None if rng.random() < 0.2 else int(v) for v in rng.integers(0, 50, 200)]
        seg = _segment(values, nullable=True)
        assert DictionarySegment.encode(seg, 200).decode() == values
        taken, nulls = DictionarySegment.encode(seg, 200).take(np.array([0, 5, 9]))
        assert [None if n else v for v, n in zip(taken.tolist(), nulls)] == [values[0], values[5], values[9]]


class TestHistogram:
    def test_equal_split(self):
        h = histogram_from_distinct(0, np.arange(1, 101), np.ones(100, dtype=int), max_bins=5)
        assert len(h) == 5
        assert all(b.distinct_count == 20 and b.row_count == 20 for b in h.bins)

    def test_few_distinct(self):
        t = make_table({"a": np.array([1, 2, 3, 1, 2])}, capacity=10)
        assert len(build_histogram(t, "a")) == 3

    def test_skewed_counts(self):
        t = make_table({"a": np.array([1] * 90 + list(range(2, 11)))}, capacity=64)
        h = build_histogram(t, "a", max_bins=5)
        assert [b.distinct_count for b in h.bins] == [2] * 5
        assert h.bins[0].row_count == 91
        assert h.total_count == 99


class TestMemory:
    def test_empty_table(self):
        cap = 1000
        t = create_table(int_schema("a"), cap)
        assert estimate_memory(t) == 8 * cap + CHUNK_OVERHEAD_BYTES

    def test_encoded_constant_segment(self):
        t = make_table({"a": np.full(100, 7)}, capacity=100)
        assert t.chunks[0].segments[0].memory_bytes() == 8 + 100

    def test_encoding_shrinks(self, rng):
        t = make_table({"a": rng.integers(0, 10, 1000)}, capacity=100, encode=False)
        before = estimate_memory(t)
        for c in t.chunks:
            if not c.mutable:
                c.encode()
        assert estimate_memory(t) < before


class TestCsv:
    def test_roundtrip(self, tmp_path, rng):
        schema = TableSchema((ColumnDefinition("a", DataType.INT64), ColumnDefinition("s", DataType.STRING, True),
                              ColumnDefinition("f", DataType.FLOAT64), ColumnDefinition("d", DataType.DATE)))
        rows = [(int(i), None if i % 7 == 0 else f"v{i % 5}", float(i) / 3, f"2021-01-{1 + i % 28:02d}")
                for i in range(57)]
        t = load_table(schema, rows, 10, name="mixed")
        export_table_csv(t, tmp_path / "m.csv")
        back = import_table_csv(tmp_path / "m.csv", TransactionManager())
        assert back.name == "mixed"
        assert sorted(back.visible_rows()) == sorted(t.visible_rows())
        assert [c.size for c in back.chunks if c.size] == [c.size for c in t.chunks if c.size]

    def test_header_mismatch(self, tmp_path):
        t = make_table({"a": np.arange(5)})
        export_table_csv(t, tmp_path / "x.csv")
        (tmp_path / "x.csv").write_text("b\n1\n")
        with pytest.raises(StorageError):
            import_table_csv(tmp_path / "x.csv")
