"""Synthetic table generator.

A generator spec is JSON::

    {"table": "t", "rows": 100000, "chunk_capacity": 4096,
     "columns": [
        {"name": "id", "dist": "sequence"},
        {"name": "a", "dist": "uniform-int", "low": 0, "high": 999},
        {"name": "z", "dist": "zipf", "low": 1, "high": 1000, "skew": 1.1},
        {"name": "ship", "dist": "date", "start": "1992-01-01", "end": "1998-12-01"},
        {"name": "recv", "dist": "derived", "base": "ship", "width": 30},
        {"name": "flag", "dist": "categorical", "n": 3}]}

``derived`` columns are ``base + U[1, width]`` (days for date bases) and
must follow their base column.  Any column may set ``null_fraction``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .storage import ColumnDefinition, DataType, TableSchema, Table, load_table

DISTRIBUTIONS = ("sequence", "uniform-int", "uniform-float", "zipf", "date", "categorical", "derived")


class GenSpecError(ValueError):
    pass


@dataclass
class ColumnSpec:
    name: str
    dist: str
    params: dict = field(default_factory=dict)

    @property
    def null_fraction(self) -> float:
        return float(self.params.get("null_fraction", 0.0))


@dataclass
class DataGenSpec:
    table: str
    rows: int
    columns: list
    chunk_capacity: int | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "DataGenSpec":
        for key in ("table", "rows", "columns"):
            if key not in data:
                raise GenSpecError(f"spec is missing {key!r}")
        cols = []
        for c in data["columns"]:
            if "name" not in c or "dist" not in c:
                raise GenSpecError("every column needs 'name' and 'dist'")
            params = {k: v for k, v in c.items() if k not in ("name", "dist")}
            cols.append(ColumnSpec(c["name"], c["dist"], params))
        spec = cls(data["table"], int(data["rows"]), cols, data.get("chunk_capacity"))
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "DataGenSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def validate(self) -> None:
        if self.rows < 0:
            raise GenSpecError("rows must be non-negative")
        seen: dict = {}
        for c in self.columns:
            if c.dist not in DISTRIBUTIONS:
                raise GenSpecError(f"column {c.name!r}: unknown distribution {c.dist!r}")
            if c.name in seen:
                raise GenSpecError(f"duplicate column {c.name!r}")
            if not 0.0 <= c.null_fraction < 1.0:
                raise GenSpecError(f"column {c.name!r}: null_fraction must be in [0, 1)")
            p = c.params
            if c.dist in ("uniform-int", "uniform-float", "zipf"):
                if "low" not in p or "high" not in p or p["high"] < p["low"]:
                    raise GenSpecError(f"column {c.name!r}: needs low <= high")
            if c.dist == "zipf" and float(p.get("skew", 1.0)) < 0:
                raise GenSpecError(f"column {c.name!r}: skew must be >= 0")
            if c.dist == "date":
                if "start" not in p or "end" not in p or np.datetime64(p["end"]) < np.datetime64(p["start"]):
                    raise GenSpecError(f"column {c.name!r}: needs start <= end")
            if c.dist == "categorical" and int(p.get("n", 0)) < 1:
                raise GenSpecError(f"column {c.name!r}: needs n >= 1")
            if c.dist == "derived":
                base = p.get("base")
                if base not in seen:
                    raise GenSpecError(f"column {c.name!r}: base must be an earlier column")
                if seen[base] not in ("uniform-int", "sequence", "zipf", "date", "derived"):
                    raise GenSpecError(f"column {c.name!r}: base must be an integer or date column")
                if int(p.get("width", 0)) < 1:
                    raise GenSpecError(f"column {c.name!r}: width must be >= 1")
            seen[c.name] = c.dist

    def data_types(self) -> dict:
        types: dict = {}
        for c in self.columns:
            if c.dist == "derived":
                types[c.name] = types[c.params["base"]]
            elif c.dist == "uniform-float":
                types[c.name] = DataType.FLOAT64
            elif c.dist == "date":
                types[c.name] = DataType.DATE
            elif c.dist == "categorical":
                types[c.name] = DataType.STRING
            else:
                types[c.name] = DataType.INT64
        return types

    def schema(self) -> TableSchema:
        types = self.data_types()
        return TableSchema(tuple(ColumnDefinition(c.name, types[c.name], c.null_fraction > 0)
                                 for c in self.columns))


def zipf_values(rng: np.random.Generator, n: int, low: int, high: int, skew: float) -> np.ndarray:
    """Bounded Zipf: value ``low + r - 1`` with probability proportional to r^-skew."""
    ranks = np.arange(1, high - low + 2, dtype=float)
    p = ranks ** -skew
    p /= p.sum()
    return low + rng.choice(len(ranks), size=n, p=p).astype(np.int64)


def generate_columns(spec: DataGenSpec, seed: int = 0) -> dict:
    """Column name -> values (numpy arrays, or lists when nulls are present)."""
    rng = np.random.default_rng(seed)
    n = spec.rows
    out: dict = {}
    days: dict = {}  # date columns as day numbers, for derived columns
    for c in spec.columns:
        p = c.params
        if c.dist == "sequence":
            values = np.arange(int(p.get("start", 0)), int(p.get("start", 0)) + n, dtype=np.int64)
        elif c.dist == "uniform-int":
            values = rng.integers(int(p["low"]), int(p["high"]) + 1, size=n, dtype=np.int64)
        elif c.dist == "uniform-float":
            values = rng.uniform(float(p["low"]), float(p["high"]), size=n)
        elif c.dist == "zipf":
            values = zipf_values(rng, n, int(p["low"]), int(p["high"]), float(p.get("skew", 1.0)))
        elif c.dist == "date":
            start = np.datetime64(p["start"], "D").astype(np.int64)
            end = np.datetime64(p["end"], "D").astype(np.int64)
            days[c.name] = rng.integers(start, end + 1, size=n, dtype=np.int64)
            values = None
        elif c.dist == "categorical":
            k = int(p["n"])
            labels = np.array([f"c{i:0{len(str(k - 1))}d}" for i in range(k)], dtype=object)
            values = labels[rng.integers(0, k, size=n)]
        else:  # derived
            base = p["base"]
            offset = rng.integers(1, int(p["width"]) + 1, size=n, dtype=np.int64)
            if base in days:
                days[c.name] = days[base] + offset
                values = None
            else:
                values = np.asarray(out[base] if not isinstance(out[base], list) else
                                    [0 if v is None else v for v in out[base]], dtype=np.int64) + offset
        if values is None:
            values = np.datetime_as_string(days[c.name].astype("datetime64[D]")).astype(object)
        if c.null_fraction > 0:
            nulls = rng.random(n) < c.null_fraction
            values = [None if z else v for v, z in zip(values.tolist(), nulls)]
        out[c.name] = values
    return out


def generate_table(spec: DataGenSpec, seed: int = 0, chunk_capacity: int | None = None,
                   manager=None, encode: bool = True) -> Table:
    capacity = chunk_capacity or spec.chunk_capacity or 65535
    return load_table(spec.schema(), generate_columns(spec, seed), capacity, manager, spec.table, encode=encode)
