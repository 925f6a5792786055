"""Input validation helpers shared by the estimator classes."""

from __future__ import annotations

from sklearn.utils.validation import check_is_fitted  # noqa: F401  re-exported

from .storage import Table
from .workload import WorkloadSnapshot


def check_table(table) -> Table:
    if not isinstance(table, Table):
        raise TypeError(f"expected a Table, got {type(table).__name__}")
    if table.chunk_count == 0:
        raise ValueError("table has no chunks")
    return table


def check_snapshot(snapshot) -> WorkloadSnapshot:
    if not isinstance(snapshot, WorkloadSnapshot):
        raise TypeError(f"expected a WorkloadSnapshot, got {type(snapshot).__name__}")
    return snapshot
