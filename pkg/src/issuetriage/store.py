"""Embedded single-file issue store.

One SQLite database holds the issue index, per-repo sync state, the
webhook idempotency ledger, the durable delivery queue, the operations
log, and the feedback audit. A store handle is safe to share across
threads: every operation takes an internal lock, so writes are serialized
and readers never observe partial writes. Multi-process access is out of
scope.
"""

from __future__ import annotations

import enum
import json
import sqlite3
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterator

from issuetriage.model import (
    IssueRecord,
    RepoRef,
    ValidationError,
    ensure_utc,
    parse_timestamp,
    utc_now,
)

SCHEMA_VERSION = 1

_SCHEMA = """
CREATE TABLE IF NOT EXISTS schema_version (version INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS repos (
    repo_key TEXT PRIMARY KEY,
    owner TEXT NOT NULL,
    name TEXT NOT NULL,
    default_branch TEXT NOT NULL,
    installed_at TEXT NOT NULL,
    backfill_cursor INTEGER,
    backfill_complete INTEGER NOT NULL DEFAULT 0,
    last_sync_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS issues (
    repo_key TEXT NOT NULL,
    number INTEGER NOT NULL,
    owner TEXT NOT NULL,
    name TEXT NOT NULL,
    default_branch TEXT NOT NULL,
    title TEXT NOT NULL,
    body TEXT NOT NULL,
    state TEXT NOT NULL,
    labels TEXT NOT NULL,
    url TEXT NOT NULL,
    created_at TEXT NOT NULL,
    indexed_at TEXT NOT NULL,
    PRIMARY KEY (repo_key, number)
);
CREATE TABLE IF NOT EXISTS deliveries (
    delivery_id TEXT PRIMARY KEY,
    event TEXT NOT NULL,
    received_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS queue (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    delivery_id TEXT NOT NULL,
    event TEXT NOT NULL,
    raw_body BLOB NOT NULL,
    received_at TEXT NOT NULL,
    done INTEGER NOT NULL DEFAULT 0,
    done_at TEXT
);
CREATE TABLE IF NOT EXISTS ops_log (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    at TEXT NOT NULL,
    repo_key TEXT,
    issue_number INTEGER,
    kind TEXT NOT NULL,
    outcome TEXT NOT NULL,
    message TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS feedback (
    repo_key TEXT NOT NULL,
    number INTEGER NOT NULL,
    posted_at TEXT NOT NULL,
    summary TEXT NOT NULL,
    PRIMARY KEY (repo_key, number)
);
"""


class StoreUnavailableError(RuntimeError):
    """Storage could not be reached or written; safe to retry."""


class NotInstalledError(LookupError):
    """The repository was never installed."""


class QueueFullError(RuntimeError):
    """The durable delivery queue is at capacity; retry later."""


class UpsertResult(enum.Enum):
    INSERTED = "inserted"
    UPDATED = "updated"
    UNCHANGED = "unchanged"


@dataclass
class SyncState:
    """Installation and backfill progress for one repository."""

    repo: RepoRef
    installed_at: datetime
    backfill_cursor: int | None
    backfill_complete: bool
    last_sync_at: datetime


@dataclass(frozen=True)
class QueuedDelivery:
    queue_id: int
    delivery_id: str
    event: str
    raw_body: bytes
    received_at: datetime


@dataclass(frozen=True)
class OperationRecord:
    at: datetime
    repo_key: str | None
    issue_number: int | None
    kind: str
    outcome: str
    message: str


def _dump_labels(labels: frozenset[str]) -> str:
    return json.dumps(sorted(labels))


class IssueStore:
    """Handle on the embedded store. Open once, share across threads."""

    def __init__(self, path: str | Path):
        self._path = str(path)
        self._lock = threading.RLock()
        self._claimed: set[int] = set()
        try:
            self._conn = sqlite3.connect(self._path, check_same_thread=False)
            self._conn.execute("PRAGMA journal_mode=WAL")
            self._conn.execute("PRAGMA synchronous=FULL")
            self._conn.executescript(_SCHEMA)
            cur = self._conn.execute("SELECT version FROM schema_version")
            row = cur.fetchone()
            if row is None:
                self._conn.execute(
                    "INSERT INTO schema_version (version) VALUES (?)", (SCHEMA_VERSION,)
                )
            elif row[0] != SCHEMA_VERSION:
                raise StoreUnavailableError(
                    f"store schema version {row[0]} != supported {SCHEMA_VERSION}"
                )
            self._conn.commit()
        except sqlite3.Error as exc:
            raise StoreUnavailableError(f"cannot open store at {self._path}: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def __enter__(self) -> "IssueStore":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    # -- issues ------------------------------------------------------------

    def upsert_issue(self, record: IssueRecord) -> UpsertResult:
        """Insert or replace the record for (repo, number); last write wins."""
        if not isinstance(record, IssueRecord):
            raise ValidationError("upsert_issue expects an IssueRecord")
        row = (
            record.repo.key,
            record.number,
            record.repo.owner,
            record.repo.name,
            record.repo.default_branch,
            record.title,
            record.body,
            record.state,
            _dump_labels(record.labels),
            record.url,
            record.created_at.isoformat(),
            record.indexed_at.isoformat(),
        )
        with self._lock:
            try:
                cur = self._conn.execute(
                    "SELECT owner, name, default_branch, title, body, state, labels, url,"
                    " created_at, indexed_at FROM issues WHERE repo_key = ? AND number = ?",
                    (record.repo.key, record.number),
                )
                existing = cur.fetchone()
                if existing is not None and tuple(existing) == row[2:]:
                    return UpsertResult.UNCHANGED
                self._conn.execute(
                    "INSERT INTO issues (repo_key, number, owner, name, default_branch,"
                    " title, body, state, labels, url, created_at, indexed_at)"
                    " VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)"
                    " ON CONFLICT (repo_key, number) DO UPDATE SET"
                    " owner=excluded.owner, name=excluded.name,"
                    " default_branch=excluded.default_branch, title=excluded.title,"
                    " body=excluded.body, state=excluded.state, labels=excluded.labels,"
                    " url=excluded.url, created_at=excluded.created_at,"
                    " indexed_at=excluded.indexed_at",
                    row,
                )
                self._conn.commit()
            except sqlite3.Error as exc:
                raise StoreUnavailableError(f"upsert failed: {exc}") from exc
        return UpsertResult.UPDATED if existing is not None else UpsertResult.INSERTED

    def _record_from_row(self, row: sqlite3.Row | tuple) -> IssueRecord:
        (number, owner, name, branch, title, body, state, labels, url, created, indexed) = row
        return IssueRecord(
            repo=RepoRef(owner=owner, name=name, default_branch=branch),
            number=number,
            title=title,
            body=body,
            state=state,
            labels=frozenset(json.loads(labels)),
            url=url,
            created_at=parse_timestamp(created),
            indexed_at=parse_timestamp(indexed),
        )

    def get_issue(self, repo: RepoRef, number: int) -> IssueRecord | None:
        with self._lock:
            try:
                cur = self._conn.execute(
                    "SELECT number, owner, name, default_branch, title, body, state,"
                    " labels, url, created_at, indexed_at FROM issues"
                    " WHERE repo_key = ? AND number = ?",
                    (repo.key, number),
                )
                row = cur.fetchone()
            except sqlite3.Error as exc:
                raise StoreUnavailableError(f"query failed: {exc}") from exc
        return self._record_from_row(row) if row is not None else None

    def query_issues(
        self,
        repo: RepoRef,
        state: str | None = None,
        exclude_number: int | None = None,
    ) -> list[IssueRecord]:
        """All matching issues, sorted by number ascending."""
        sql = (
            "SELECT number, owner, name, default_branch, title, body, state, labels,"
            " url, created_at, indexed_at FROM issues WHERE repo_key = ?"
        )
        args: list[object] = [repo.key]
        if state is not None:
            sql += " AND state = ?"
            args.append(state)
        if exclude_number is not None:
            sql += " AND number != ?"
            args.append(exclude_number)
        sql += " ORDER BY number ASC"
        with self._lock:
            try:
                rows = self._conn.execute(sql, args).fetchall()
            except sqlite3.Error as exc:
                raise StoreUnavailableError(f"query failed: {exc}") from exc
        return [self._record_from_row(r) for r in rows]

    def issue_count(self, repo: RepoRef) -> int:
        with self._lock:
            cur = self._conn.execute(
                "SELECT COUNT(*) FROM issues WHERE repo_key = ?", (repo.key,)
            )
            return int(cur.fetchone()[0])

    # -- installation / sync state ------------------------------------------

    def register_repo(self, repo: RepoRef, installed_at: datetime | None = None) -> SyncState:
        """Record installation; idempotent for an already-registered repo."""
        existing = self.get_sync_state(repo)
        if existing is not None:
            return existing
        now = ensure_utc(installed_at) if installed_at is not None else utc_now()
        state = SyncState(
            repo=repo,
            installed_at=now,
            backfill_cursor=None,
            backfill_complete=False,
            last_sync_at=now,
        )
        self.save_sync_state(state)
        return state

    def save_sync_state(self, state: SyncState) -> None:
        if state.backfill_complete and state.backfill_cursor is not None:
            raise ValidationError("completed backfill must not keep a cursor")
        with self._lock:
            try:
                self._conn.execute(
                    "INSERT INTO repos (repo_key, owner, name, default_branch, installed_at,"
                    " backfill_cursor, backfill_complete, last_sync_at)"
                    " VALUES (?, ?, ?, ?, ?, ?, ?, ?)"
                    " ON CONFLICT (repo_key) DO UPDATE SET"
                    " owner=excluded.owner, name=excluded.name,"
                    " default_branch=excluded.default_branch,"
                    " installed_at=excluded.installed_at,"
                    " backfill_cursor=excluded.backfill_cursor,"
                    " backfill_complete=excluded.backfill_complete,"
                    " last_sync_at=excluded.last_sync_at",
                    (
                        state.repo.key,
                        state.repo.owner,
                        state.repo.name,
                        state.repo.default_branch,
                        state.installed_at.isoformat(),
                        state.backfill_cursor,
                        1 if state.backfill_complete else 0,
                        state.last_sync_at.isoformat(),
                    ),
                )
                self._conn.commit()
            except sqlite3.Error as exc:
                raise StoreUnavailableError(f"sync-state write failed: {exc}") from exc

    def get_sync_state(self, repo: RepoRef) -> SyncState | None:
        with self._lock:
            try:
                cur = self._conn.execute(
                    "SELECT owner, name, default_branch, installed_at, backfill_cursor,"
                    " backfill_complete, last_sync_at FROM repos WHERE repo_key = ?",
                    (repo.key,),
                )
                row = cur.fetchone()
            except sqlite3.Error as exc:
                raise StoreUnavailableError(f"sync-state read failed: {exc}") from exc
        if row is None:
            return None
        owner, name, branch, installed, cursor, complete, last_sync = row
        return SyncState(
            repo=RepoRef(owner=owner, name=name, default_branch=branch),
            installed_at=parse_timestamp(installed),
            backfill_cursor=cursor,
            backfill_complete=bool(complete),
            last_sync_at=parse_timestamp(last_sync),
        )

    def list_installed(self) -> list[SyncState]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT repo_key FROM repos ORDER BY repo_key"
            ).fetchall()
        states = []
        for (key,) in rows:
            owner, name = key.split("/", 1)
            state = self.get_sync_state(RepoRef(owner=owner, name=name))
            if state is not None:
                states.append(state)
        return states

    def installation_cutoff(self, repo: RepoRef) -> datetime:
        """Issues created before this instant never receive feedback."""
        state = self.get_sync_state(repo)
        if state is None:
            raise NotInstalledError(f"repository {repo.full_name} is not installed")
        return state.installed_at

    # -- idempotency ledger and durable queue --------------------------------

    def record_delivery(self, delivery_id: str, event: str, received_at: datetime) -> bool:
        """Record a delivery id; False when it was already seen (replay)."""
        with self._lock:
            try:
                self._conn.execute(
                    "INSERT INTO deliveries (delivery_id, event, received_at) VALUES (?, ?, ?)",
                    (delivery_id, event, received_at.isoformat()),
                )
                self._conn.commit()
            except sqlite3.IntegrityError:
                return False
            except sqlite3.Error as exc:
                raise StoreUnavailableError(f"ledger write failed: {exc}") from exc
        return True

    def enqueue_delivery(
        self,
        delivery_id: str,
        event: str,
        raw_body: bytes,
        received_at: datetime,
        limit: int | None = None,
    ) -> int:
        """Persist an accepted delivery before it is acknowledged."""
        with self._lock:
            try:
                if limit is not None:
                    pending = self._conn.execute(
                        "SELECT COUNT(*) FROM queue WHERE done = 0"
                    ).fetchone()[0]
                    if pending >= limit:
                        raise QueueFullError(f"queue holds {pending} pending deliveries")
                cur = self._conn.execute(
                    "INSERT INTO queue (delivery_id, event, raw_body, received_at)"
                    " VALUES (?, ?, ?, ?)",
                    (delivery_id, event, raw_body, received_at.isoformat()),
                )
                self._conn.commit()
            except sqlite3.Error as exc:
                raise StoreUnavailableError(f"queue write failed: {exc}") from exc
        return int(cur.lastrowid)

    def accept_delivery(
        self,
        delivery_id: str,
        event: str,
        raw_body: bytes,
        received_at: datetime,
        limit: int | None = None,
    ) -> int | None:
        """Ledger the delivery id and enqueue the body in one transaction.

        Returns the queue id, or None for a replayed delivery id. Raises
        QueueFullError without consuming the delivery id, so a later
        redelivery still gets processed.
        """
        with self._lock:
            try:
                if limit is not None:
                    pending = self._conn.execute(
                        "SELECT COUNT(*) FROM queue WHERE done = 0"
                    ).fetchone()[0]
                    if pending >= limit:
                        raise QueueFullError(f"queue holds {pending} pending deliveries")
                try:
                    self._conn.execute(
                        "INSERT INTO deliveries (delivery_id, event, received_at)"
                        " VALUES (?, ?, ?)",
                        (delivery_id, event, received_at.isoformat()),
                    )
                except sqlite3.IntegrityError:
                    self._rollback_quietly()
                    return None
                cur = self._conn.execute(
                    "INSERT INTO queue (delivery_id, event, raw_body, received_at)"
                    " VALUES (?, ?, ?, ?)",
                    (delivery_id, event, raw_body, received_at.isoformat()),
                )
                self._conn.commit()
            except QueueFullError:
                raise
            except sqlite3.Error as exc:
                self._rollback_quietly()
                raise StoreUnavailableError(f"delivery accept failed: {exc}") from exc
        return int(cur.lastrowid)

    def _rollback_quietly(self) -> None:
        # Rolling back on a closed or broken connection raises again;
        # the caller's StoreUnavailableError must win.
        try:
            self._conn.rollback()
        except sqlite3.Error:
            pass

    def claim_pending(self) -> QueuedDelivery | None:
        """Pop the oldest unclaimed pending delivery; None when drained.

        Claims live in process memory only: rows stay pending in storage
        until mark_done, so a crash between claim and completion re-runs
        the delivery on restart.
        """
        with self._lock:
            claimed = sorted(self._claimed)
            sql = (
                "SELECT id, delivery_id, event, raw_body, received_at FROM queue"
                " WHERE done = 0"
            )
            if claimed:
                sql += f" AND id NOT IN ({','.join('?' * len(claimed))})"
            sql += " ORDER BY id ASC LIMIT 1"
            row = self._conn.execute(sql, claimed).fetchone()
            if row is None:
                return None
            self._claimed.add(row[0])
            return QueuedDelivery(
                queue_id=row[0],
                delivery_id=row[1],
                event=row[2],
                raw_body=row[3],
                received_at=parse_timestamp(row[4]),
            )

    def release_claim(self, queue_id: int) -> None:
        """Return a claimed delivery to the pending pool (retry later)."""
        with self._lock:
            self._claimed.discard(queue_id)

    def mark_done(self, queue_id: int) -> None:
        with self._lock:
            self._conn.execute(
                "UPDATE queue SET done = 1, done_at = ? WHERE id = ?",
                (utc_now().isoformat(), queue_id),
            )
            self._conn.commit()
            self._claimed.discard(queue_id)

    def pending_count(self) -> int:
        with self._lock:
            return int(
                self._conn.execute("SELECT COUNT(*) FROM queue WHERE done = 0").fetchone()[0]
            )

    # -- operations log and feedback audit -----------------------------------

    def log_operation(
        self,
        kind: str,
        outcome: str,
        message: str,
        repo: RepoRef | None = None,
        issue_number: int | None = None,
    ) -> None:
        with self._lock:
            try:
                self._conn.execute(
                    "INSERT INTO ops_log (at, repo_key, issue_number, kind, outcome, message)"
                    " VALUES (?, ?, ?, ?, ?, ?)",
                    (
                        utc_now().isoformat(),
                        repo.key if repo is not None else None,
                        issue_number,
                        kind,
                        outcome,
                        message,
                    ),
                )
                self._conn.commit()
            except sqlite3.Error as exc:
                raise StoreUnavailableError(f"ops-log write failed: {exc}") from exc

    def list_operations(self, limit: int = 100) -> list[OperationRecord]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT at, repo_key, issue_number, kind, outcome, message FROM ops_log"
                " ORDER BY id DESC LIMIT ?",
                (limit,),
            ).fetchall()
        return [
            OperationRecord(
                at=parse_timestamp(at),
                repo_key=repo_key,
                issue_number=issue_number,
                kind=kind,
                outcome=outcome,
                message=message,
            )
            for at, repo_key, issue_number, kind, outcome, message in rows
        ]

    def record_feedback(self, repo: RepoRef, number: int, summary: str) -> None:
        with self._lock:
            try:
                self._conn.execute(
                    "INSERT OR REPLACE INTO feedback (repo_key, number, posted_at, summary)"
                    " VALUES (?, ?, ?, ?)",
                    (repo.key, number, utc_now().isoformat(), summary),
                )
                self._conn.commit()
            except sqlite3.Error as exc:
                raise StoreUnavailableError(f"feedback write failed: {exc}") from exc

    def has_feedback(self, repo: RepoRef, number: int) -> bool:
        with self._lock:
            cur = self._conn.execute(
                "SELECT 1 FROM feedback WHERE repo_key = ? AND number = ?",
                (repo.key, number),
            )
            return cur.fetchone() is not None

    def feedback_count(self, repo: RepoRef) -> int:
        with self._lock:
            cur = self._conn.execute(
                "SELECT COUNT(*) FROM feedback WHERE repo_key = ?", (repo.key,)
            )
            return int(cur.fetchone()[0])


def iter_repo_issues(store: IssueStore, repo: RepoRef) -> Iterator[IssueRecord]:
    yield from store.query_issues(repo)
