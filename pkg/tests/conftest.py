import numpy as np
import pytest

from clusterkit.mvcc import TransactionManager
from clusterkit.storage import ColumnDefinition, DataType, TableSchema, load_table


def int_schema(*names, nullable=()):
    return TableSchema(tuple(ColumnDefinition(n, DataType.INT64, n in nullable) for n in names))


def make_table(columns: dict, capacity=100, manager=None, name="t", encode=True, nullable=()):
    schema = int_schema(*columns, nullable=nullable)
    return load_table(schema, columns, capacity, manager or TransactionManager(), name, encode=encode)


def visible_multiset(table):
    from collections import Counter

    return Counter(table.visible_rows())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
