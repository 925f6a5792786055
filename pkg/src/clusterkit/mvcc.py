"""Insert-only multi-version concurrency control with snapshot isolation.

A row version is visible to a snapshot ``s`` iff ``begin_cid <= s < end_cid``.
Rows are modified by first claiming their transaction id (a compare-and-set
guarded by a per-chunk lock); the new begin/end commit ids are applied under
a global commit lock and become visible to new snapshots only once the
commit id is published.
"""

from __future__ import annotations

import itertools
import threading
from enum import Enum
from typing import Callable

import numpy as np

UNSET = np.iinfo(np.int64).max
TOMBSTONE_CID = 0  # begin == end == 0: never visible to any snapshot
INITIAL_CID = 0


class TransactionStatus(str, Enum):
    ACTIVE = "active"
    COMMITTING = "committing"
    COMMITTED = "committed"
    ABORTED = "aborted"


class TransactionError(Exception):
    pass


class ChunkMvcc:
    """Per-row begin/end commit ids and transaction ids of one chunk."""

    def __init__(self, capacity: int):
        self.begin_cid = np.full(capacity, UNSET, dtype=np.int64)
        self.end_cid = np.full(capacity, UNSET, dtype=np.int64)
        self.tid = np.zeros(capacity, dtype=np.int64)
        self.invalid_row_count = 0
        self.cleanup_commit_id = UNSET
        self.lock = threading.Lock()

    def row_meta(self, offset: int) -> "MvccRowMeta":
        return MvccRowMeta(int(self.begin_cid[offset]), int(self.end_cid[offset]), int(self.tid[offset]))


class MvccRowMeta:
    __slots__ = ("begin_cid", "end_cid", "tid")

    def __init__(self, begin_cid=UNSET, end_cid=UNSET, tid=0):
        self.begin_cid = begin_cid
        self.end_cid = end_cid
        self.tid = tid

    def __repr__(self):
        fmt = lambda c: "UNSET" if c == UNSET else str(c)  # noqa: E731
        return f"MvccRowMeta(begin={fmt(self.begin_cid)}, end={fmt(self.end_cid)}, tid={self.tid})"


class TransactionContext:
    def __init__(self, manager: "TransactionManager", tid: int, snapshot_cid: int):
        self.manager = manager
        self.tid = tid
        self.snapshot_cid = snapshot_cid
        self.status = TransactionStatus.ACTIVE
        self.commit_cid: int | None = None
        # (chunk, offsets) pairs
        self.locked: list = []
        self.inserted: list = []
        self.invalidated: list = []
        self._own_invalidations: dict[int, list[np.ndarray]] = {}
        self._write_hooks: list[Callable[[int], None]] = []
        self._after_hooks: list[Callable[[int], None]] = []

    def __repr__(self):
        return f"<Transaction tid={self.tid} snapshot={self.snapshot_cid} {self.status.value}>"

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if self.status is TransactionStatus.ACTIVE:
            if exc_type is None:
                self.commit()
            else:
                self.abort()
        return False

    @property
    def active(self) -> bool:
        return self.status is TransactionStatus.ACTIVE

    def _require_active(self):
        if self.status is not TransactionStatus.ACTIVE:
            raise TransactionError(f"transaction {self.tid} is {self.status.value}")

    def on_commit(self, hook: Callable[[int], None]) -> None:
        """Run ``hook(cid)`` during commit, before row commit ids are applied.

        Hooks may still write rows and queue invalidations; the transaction
        cannot fail anymore at this point.
        """
        self._write_hooks.append(hook)

    def after_commit(self, hook: Callable[[int], None]) -> None:
        """Run ``hook(cid)`` after row commit ids are applied, before publication."""
        self._after_hooks.append(hook)

    def own_invalidations(self, mvcc: ChunkMvcc) -> list[np.ndarray]:
        return self._own_invalidations.get(id(mvcc), [])

    def commit(self) -> int:
        return self.manager.commit(self)

    def abort(self) -> None:
        self.manager.abort(self)


class TransactionManager:
    """Allocates transaction and commit ids and tracks active snapshots."""

    def __init__(self):
        self.last_cid = INITIAL_CID
        self._tids = itertools.count(1)
        self._active: dict[int, TransactionContext] = {}
        self._registry_lock = threading.Lock()
        self._commit_lock = threading.Lock()

    def begin(self) -> TransactionContext:
        with self._registry_lock:
            ctx = TransactionContext(self, next(self._tids), self.last_cid)
            self._active[ctx.tid] = ctx
        return ctx

    @property
    def active_count(self) -> int:
        return len(self._active)

    @property
    def lowest_active_snapshot(self) -> int:
        with self._registry_lock:
            if not self._active:
                return self.last_cid + 1
            return min(c.snapshot_cid for c in self._active.values())

    def commit(self, ctx: TransactionContext) -> int:
        ctx._require_active()
        ctx.status = TransactionStatus.COMMITTING
        with self._commit_lock:
            cid = self.last_cid + 1
            ctx.commit_cid = cid
            for hook in ctx._write_hooks:
                hook(cid)
            for chunk, offsets in ctx.inserted:
                mvcc = chunk.mvcc
                mvcc.begin_cid[offsets] = cid
            for chunk, offsets in ctx.invalidated:
                mvcc = chunk.mvcc
                with mvcc.lock:
                    mvcc.end_cid[offsets] = cid
                    mvcc.invalid_row_count += len(offsets)
            for chunk, offsets in itertools.chain(ctx.inserted, ctx.locked):
                _release(chunk.mvcc, offsets, ctx.tid)
            for hook in ctx._after_hooks:
                hook(cid)
            with self._registry_lock:
                self.last_cid = cid
                self._active.pop(ctx.tid, None)
        ctx.status = TransactionStatus.COMMITTED
        return cid

    def abort(self, ctx: TransactionContext) -> None:
        if ctx.status is TransactionStatus.ABORTED:
            return
        ctx._require_active()
        for chunk, offsets in ctx.inserted:
            mvcc = chunk.mvcc
            with mvcc.lock:
                mvcc.begin_cid[offsets] = TOMBSTONE_CID
                mvcc.end_cid[offsets] = TOMBSTONE_CID
                mvcc.invalid_row_count += len(offsets)
        for chunk, offsets in itertools.chain(ctx.inserted, ctx.locked):
            _release(chunk.mvcc, offsets, ctx.tid)
        ctx.invalidated.clear()
        ctx._own_invalidations.clear()
        with self._registry_lock:
            self._active.pop(ctx.tid, None)
        ctx.status = TransactionStatus.ABORTED


def _release(mvcc: ChunkMvcc, offsets: np.ndarray, tid: int) -> None:
    with mvcc.lock:
        held = mvcc.tid[offsets] == tid
        mvcc.tid[offsets[held]] = 0


def begin_transaction(manager: TransactionManager) -> TransactionContext:
    return manager.begin()


def commit(ctx: TransactionContext) -> int:
    return ctx.commit()


def abort(ctx: TransactionContext) -> None:
    ctx.abort()


# ------------------------------------------------------------- visibility

def is_visible(meta: MvccRowMeta, ctx: TransactionContext, invalidated_by_ctx: bool = False) -> bool:
    if invalidated_by_ctx:
        return False
    if meta.tid == ctx.tid and meta.begin_cid == UNSET:
        return True
    return meta.begin_cid <= ctx.snapshot_cid < meta.end_cid


def visible_mask(chunk, ctx: TransactionContext, n: int | None = None) -> np.ndarray:
    """Boolean visibility of the first ``n`` rows of ``chunk`` for ``ctx``."""
    mvcc = chunk.mvcc
    n = chunk.size if n is None else n
    begin = mvcc.begin_cid[:n]
    snap = ctx.snapshot_cid
    mask = (begin <= snap) & (mvcc.end_cid[:n] > snap)
    if ctx.inserted:
        mask |= (mvcc.tid[:n] == ctx.tid) & (begin == UNSET)
    for offsets in ctx.own_invalidations(mvcc):
        mask[offsets[offsets < n]] = False
    return mask


def row_visible(chunk, offset: int, ctx: TransactionContext) -> bool:
    """Visibility of a single row; constant time."""
    mvcc = chunk.mvcc
    begin = int(mvcc.begin_cid[offset])
    if begin == UNSET:
        return int(mvcc.tid[offset]) == ctx.tid and not _own_invalidated(ctx, mvcc, offset)
    if not begin <= ctx.snapshot_cid < int(mvcc.end_cid[offset]):
        return False
    return not _own_invalidated(ctx, mvcc, offset)


def _own_invalidated(ctx, mvcc, offset) -> bool:
    return any(np.any(o == offset) for o in ctx.own_invalidations(mvcc))


# ---------------------------------------------------------------- locking

def try_lock_rows(chunk, offsets, ctx: TransactionContext) -> bool:
    """Claim all ``offsets`` for ``ctx``; all-or-nothing.

    Fails if any row is held by another transaction or has been invalidated
    (invalidated rows count as under modification). Rows already held by
    ``ctx`` succeed without being recorded twice.
    """
    ctx._require_active()
    offsets = np.asarray(offsets, dtype=np.int64)
    mvcc = chunk.mvcc
    with mvcc.lock:
        tids = mvcc.tid[offsets]
        own = tids == ctx.tid
        free = (tids == 0) & (mvcc.end_cid[offsets] == UNSET)
        if not np.all(own | free):
            return False
        fresh = offsets[free]
        mvcc.tid[fresh] = ctx.tid
    if len(fresh):
        ctx.locked.append((chunk, fresh))
    return True


def try_lock_row(chunk, offset: int, ctx: TransactionContext) -> bool:
    return try_lock_rows(chunk, [offset], ctx)


def lock_valid_rows(chunk, ctx: TransactionContext) -> tuple[bool, int]:
    """Lock every row of ``chunk`` whose end cid is unset.

    Returns (success, rows locked). On failure nothing new is held.
    """
    mvcc = chunk.mvcc
    n = chunk.size
    with mvcc.lock:
        offsets = np.flatnonzero(mvcc.end_cid[:n] == UNSET).astype(np.int64)
    if len(offsets) and not try_lock_rows(chunk, offsets, ctx):
        return False, 0
    return True, len(offsets)


def invalidate_rows(ctx: TransactionContext, chunk, offsets) -> None:
    """Queue invalidation of rows previously locked by ``ctx``."""
    if ctx.status is not TransactionStatus.COMMITTING:
        ctx._require_active()
    offsets = np.asarray(offsets, dtype=np.int64)
    if len(offsets) == 0:
        return
    if not np.all(chunk.mvcc.tid[offsets] == ctx.tid):
        raise TransactionError("row is not locked by this transaction")
    ctx.invalidated.append((chunk, offsets))
    ctx._own_invalidations.setdefault(id(chunk.mvcc), []).append(offsets)


def invalidate_row(ctx: TransactionContext, chunk, offset: int) -> bool:
    invalidate_rows(ctx, chunk, [offset])
    return True


# ---------------------------------------------------------------- inserts

def append_to_chunk(ctx: TransactionContext, chunk, columns) -> np.ndarray:
    """Write column arrays into a specific mutable chunk on behalf of ``ctx``.

    ``columns`` is a list of (values, nulls) per column. The caller must make
    sure the chunk has room (and hold the table append lock when the chunk is
    shared).
    """
    if ctx.status not in (TransactionStatus.ACTIVE, TransactionStatus.COMMITTING):
        raise TransactionError(f"transaction {ctx.tid} is {ctx.status.value}")
    n = len(columns[0][0])
    start = chunk.reserve(n)
    offsets = np.arange(start, start + n, dtype=np.int64)
    chunk.mvcc.tid[offsets] = ctx.tid
    chunk.write_columns(start, columns)
    ctx.inserted.append((chunk, offsets))
    return offsets


def insert_rows(ctx: TransactionContext, table, rows, target_chunk: int | None = None) -> list[tuple[int, int]]:
    """Insert row tuples; returns (chunk id, offset) per row.

    Without ``target_chunk`` the table's insert chunk is used and new insert
    chunks are appended (and the full one finalized) as it fills up.
    """
    from .storage import StorageError

    ctx._require_active()
    rows = [tuple(r) for r in rows]
    locations = []
    with table.append_lock:
        pos = 0
        while pos < len(rows):
            chunk_id = table.insert_chunk_id if target_chunk is None else target_chunk
            chunk = table.chunks[chunk_id]
            if chunk is None or not chunk.mutable:
                raise StorageError("target chunk is not mutable")
            room = chunk.capacity - chunk.size
            if room == 0:
                if target_chunk is not None:
                    raise StorageError("target chunk is full")
                chunk.finalize()
                table.append_mutable_chunk(use_for_inserts=True)
                continue
            batch = rows[pos:pos + room]
            start = chunk.reserve(len(batch))
            offsets = np.arange(start, start + len(batch), dtype=np.int64)
            chunk.mvcc.tid[offsets] = ctx.tid
            chunk.write_rows(start, batch)
            ctx.inserted.append((chunk, offsets))
            locations.extend((chunk_id, int(o)) for o in offsets)
            pos += len(batch)
            if chunk.is_full and target_chunk is None:
                chunk.finalize()
                table.append_mutable_chunk(use_for_inserts=True)
    return locations


def update_row(ctx: TransactionContext, table, chunk_id: int, offset: int, new_values) -> bool:
    """Invalidate a row and insert its replacement; False on lock conflict."""
    chunk = table.chunks[chunk_id]
    if chunk is None or not try_lock_row(chunk, offset, ctx):
        return False
    if not row_visible(chunk, offset, ctx):
        # locked but not part of our snapshot (inserted after it began)
        return False
    invalidate_rows(ctx, chunk, [offset])
    insert_rows(ctx, table, [new_values])
    return True


# ---------------------------------------------------------------- cleanup

def mark_chunk_cleanup(chunk, cid: int) -> None:
    from .storage import StorageError

    mvcc = chunk.mvcc
    if np.any(mvcc.end_cid[:chunk.size] == UNSET):
        raise StorageError("chunk still contains live rows")
    mvcc.cleanup_commit_id = cid


def fully_invalidated(chunk) -> bool:
    return chunk.size > 0 and not np.any(chunk.mvcc.end_cid[:chunk.size] == UNSET)


def physically_delete_if_safe(table, chunk_id: int) -> bool:
    chunk = table.chunks[chunk_id]
    if chunk is None:
        return False
    cleanup = chunk.mvcc.cleanup_commit_id
    if cleanup == UNSET or cleanup >= table.manager.lowest_active_snapshot:
        return False
    table.remove_chunk(chunk_id)
    return True


def cleanup_table(table) -> int:
    """Physically delete every safely removable chunk; returns the count."""
    return sum(physically_delete_if_safe(table, i) for i, _ in table.live_chunks())
