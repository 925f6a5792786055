import json

import numpy as np
import pytest

from clusterkit.datagen import DataGenSpec, GenSpecError, generate_columns, generate_table, zipf_values
from clusterkit.storage import DataType, export_table_csv

SPEC = {"table": "t", "rows": 5000, "chunk_capacity": 512, "columns": [
    {"name": "id", "dist": "sequence"},
    {"name": "base", "dist": "uniform-int", "low": 0, "high": 2499},
    {"name": "derived", "dist": "derived", "base": "base", "width": 30},
    {"name": "ship", "dist": "date", "start": "1995-01-01", "end": "1995-12-31"},
    {"name": "recv", "dist": "derived", "base": "ship", "width": 30},
    {"name": "flag", "dist": "categorical", "n": 3, "null_fraction": 0.1},
    {"name": "f", "dist": "uniform-float", "low": 0, "high": 1},
]}


def test_deterministic_files(tmp_path):
    spec = DataGenSpec.from_dict(SPEC)
    export_table_csv(generate_table(spec, seed=7), tmp_path / "a.csv")
    export_table_csv(generate_table(spec, seed=7), tmp_path / "b.csv")
    export_table_csv(generate_table(spec, seed=8), tmp_path / "c.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_derived_offsets():
    cols = generate_columns(DataGenSpec.from_dict(SPEC), seed=3)
    diff = cols["derived"] - cols["base"]
    assert diff.min() >= 1 and diff.max() <= 30
    days = (np.array(cols["recv"], dtype="datetime64[D]") - np.array(cols["ship"], dtype="datetime64[D]"))
    assert days.astype(int).min() >= 1 and days.astype(int).max() <= 30


def test_schema_types_and_nulls():
    spec = DataGenSpec.from_dict(SPEC)
    types = {c.name: c.data_type for c in spec.schema().columns}
    assert types["recv"] == DataType.DATE and types["flag"] == DataType.STRING and types["f"] == DataType.FLOAT64
    flags = generate_columns(spec, 0)["flag"]
    share = sum(v is None for v in flags) / len(flags)
    assert 0.07 < share < 0.13
    assert set(flags) - {None} == {"c0", "c1", "c2"}


def test_zipf_skew_zero_is_uniform():
    values = zipf_values(np.random.default_rng(5), 100_000, 1, 100, 0.0)
    counts = np.bincount(values - 1, minlength=100)
    expected = len(values) / 100
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    # 99.9th percentile of chi-squared with 99 degrees of freedom
    assert chi2 < 148.2


def test_zipf_skewed_head():
    values = zipf_values(np.random.default_rng(5), 50_000, 1, 100, 1.2)
    counts = np.bincount(values, minlength=101)
    assert counts[1] > counts[2] > counts[10]


@pytest.mark.parametrize("patch", [
    {"columns": [{"name": "a", "dist": "gaussian"}]},
    {"columns": [{"name": "a", "dist": "uniform-int", "low": 5, "high": 1}]},
    {"columns": [{"name": "d", "dist": "derived", "base": "zz", "width": 3}]},
    {"columns": [{"name": "a", "dist": "categorical", "n": 0}]},
    {"rows": -1},
])
def test_invalid_specs(patch):
    with pytest.raises(GenSpecError):
        DataGenSpec.from_dict({**SPEC, **patch})


def test_load(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps(SPEC))
    t = generate_table(DataGenSpec.load(tmp_path / "s.json"))
    assert t.row_count == 5000 and t.chunk_capacity == 512
