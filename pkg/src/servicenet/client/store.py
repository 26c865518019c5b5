"""Per-peer local persistence.

Each peer stores its own marketplace data: known peers, wanteds, quotes,
ratings and chat history. `peer_id` columns in ratings and wanteds are
deliberately not foreign keys; peers are queried by PID on the broker,
so a local record may reference a peer the local database has never
seen, and such dangling references must not break queries.

Timestamps are persisted as ISO-8601 UTC strings and parsed back on
load.
"""

from __future__ import annotations

import secrets
import sqlite3
from dataclasses import dataclass
from datetime import datetime, timezone

from servicenet.errors import StorageError, ValidationError
from servicenet.model.geo import GeoPoint

WANTED_STATUSES = ("OPEN", "ACCEPTED", "CLOSED")
_STATUS_NEXT = {"OPEN": {"ACCEPTED"}, "ACCEPTED": {"CLOSED"}, "CLOSED": set()}

_SCHEMA = """
CREATE TABLE IF NOT EXISTS peers (
    peer_id   TEXT PRIMARY KEY,
    nickname  TEXT NOT NULL,
    last_seen TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS wanted (
    wanted_id      TEXT PRIMARY KEY,
    requester      TEXT NOT NULL,
    category       TEXT NOT NULL,
    description    TEXT NOT NULL,
    lat            REAL NOT NULL,
    lon            REAL NOT NULL,
    remote_capable INTEGER NOT NULL,
    budget_cents   INTEGER NOT NULL,
    currency       TEXT NOT NULL,
    status         TEXT NOT NULL,
    created_at     TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS quotes (
    quote_id    TEXT PRIMARY KEY,
    wanted_id   TEXT NOT NULL,
    provider    TEXT NOT NULL,
    price_cents INTEGER NOT NULL,
    currency    TEXT NOT NULL,
    note        TEXT NOT NULL,
    received_at TEXT NOT NULL,
    UNIQUE (wanted_id, provider)
);
CREATE TABLE IF NOT EXISTS ratings (
    rating_id  TEXT PRIMARY KEY,
    ratee      TEXT NOT NULL,
    score      INTEGER NOT NULL,
    comment    TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS chat_messages (
    msg_id    TEXT PRIMARY KEY,
    thread    TEXT NOT NULL,
    author    TEXT NOT NULL,
    body      TEXT NOT NULL,
    lamport   INTEGER NOT NULL,
    wall_time TEXT NOT NULL
);
"""


def ts_to_str(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def ts_from_str(s: str) -> datetime:
    return datetime.fromisoformat(s.replace("Z", "+00:00"))


def now_utc() -> datetime:
    return datetime.now(timezone.utc)


def new_id() -> str:
    return secrets.token_hex(16)


@dataclass(frozen=True)
class PeerRecord:
    peer_id: str
    nickname: str
    last_seen: datetime


@dataclass(frozen=True)
class Wanted:
    wanted_id: str
    requester: str
    category: str
    description: str
    location: GeoPoint
    remote_capable: bool
    budget_cents: int
    currency: str
    status: str
    created_at: datetime

    def __post_init__(self):
        if self.status not in WANTED_STATUSES:
            raise ValidationError(f"bad wanted status {self.status!r}")
        if len(self.description.encode()) > 2048:
            raise ValidationError("description over 2 KiB")
        if self.budget_cents < 0:
            raise ValidationError("budget must be non-negative")
        if len(self.currency) != 3:
            raise ValidationError(f"bad currency code {self.currency!r}")


@dataclass(frozen=True)
class Quote:
    quote_id: str
    wanted_id: str
    provider: str
    price_cents: int
    currency: str
    note: str
    received_at: datetime

    def __post_init__(self):
        if self.price_cents < 0:
            raise ValidationError("price must be non-negative")
        if len(self.currency) != 3:
            raise ValidationError(f"bad currency code {self.currency!r}")


@dataclass(frozen=True)
class Rating:
    rating_id: str
    ratee: str
    score: int
    comment: str
    created_at: datetime

    def __post_init__(self):
        if not isinstance(self.score, int) or not 1 <= self.score <= 5:
            raise ValidationError(f"score must be an integer in [1,5], got {self.score!r}")
        if len(self.comment.encode()) > 1024:
            raise ValidationError("comment over 1 KiB")


@dataclass(frozen=True)
class StoredChatMessage:
    msg_id: str
    thread: str       # the remote peer's PID
    author: str
    body: str
    lamport: int
    wall_time: datetime

    def __post_init__(self):
        if len(self.body.encode()) > 4096:
            raise ValidationError("chat body over 4 KiB")


class Store:
    def __init__(self, path: str):
        try:
            self._db = sqlite3.connect(path)
        except sqlite3.OperationalError as exc:
            raise StorageError(f"cannot open store at {path}: {exc}") from exc
        try:
            self._db.executescript(_SCHEMA)
            self._db.commit()
        except sqlite3.OperationalError as exc:
            raise StorageError(f"cannot initialize store at {path}: {exc}") from exc

    def close(self) -> None:
        self._db.close()

    def table_names(self) -> set[str]:
        rows = self._db.execute("SELECT name FROM sqlite_master WHERE type='table'")
        return {r[0] for r in rows}

    # -- put ---------------------------------------------------------------

    def put(self, entity) -> str:
        """Insert (idempotently for duplicate ids) and return the entity id."""
        if isinstance(entity, PeerRecord):
            self._db.execute(
                "INSERT OR REPLACE INTO peers VALUES (?,?,?)",
                (entity.peer_id, entity.nickname, ts_to_str(entity.last_seen)))
            key = entity.peer_id
        elif isinstance(entity, Wanted):
            self._db.execute(
                "INSERT OR REPLACE INTO wanted VALUES (?,?,?,?,?,?,?,?,?,?,?)",
                (entity.wanted_id, entity.requester, entity.category,
                 entity.description, entity.location.lat, entity.location.lon,
                 int(entity.remote_capable), entity.budget_cents, entity.currency,
                 entity.status, ts_to_str(entity.created_at)))
            key = entity.wanted_id
        elif isinstance(entity, Quote):
            # One quote per (wanted, provider): a provider's newer quote replaces
            # the old one.
            self._db.execute(
                "INSERT INTO quotes VALUES (?,?,?,?,?,?,?) "
                "ON CONFLICT (wanted_id, provider) DO UPDATE SET "
                "quote_id=excluded.quote_id, price_cents=excluded.price_cents, "
                "currency=excluded.currency, note=excluded.note, "
                "received_at=excluded.received_at",
                (entity.quote_id, entity.wanted_id, entity.provider,
                 entity.price_cents, entity.currency, entity.note,
                 ts_to_str(entity.received_at)))
            key = entity.quote_id
        elif isinstance(entity, Rating):
            self._db.execute(
                "INSERT OR IGNORE INTO ratings VALUES (?,?,?,?,?)",
                (entity.rating_id, entity.ratee, entity.score, entity.comment,
                 ts_to_str(entity.created_at)))
            key = entity.rating_id
        elif isinstance(entity, StoredChatMessage):
            self._db.execute(
                "INSERT OR IGNORE INTO chat_messages VALUES (?,?,?,?,?,?)",
                (entity.msg_id, entity.thread, entity.author, entity.body,
                 entity.lamport, ts_to_str(entity.wall_time)))
            key = entity.msg_id
        else:
            raise ValidationError(f"unknown entity type {type(entity).__name__}")
        self._db.commit()
        return key

    # -- queries -----------------------------------------------------------

    def peer(self, peer_id: str) -> PeerRecord | None:
        row = self._db.execute("SELECT * FROM peers WHERE peer_id=?", (peer_id,)).fetchone()
        return PeerRecord(row[0], row[1], ts_from_str(row[2])) if row else None

    def wanted(self, wanted_id: str) -> Wanted | None:
        row = self._db.execute("SELECT * FROM wanted WHERE wanted_id=?", (wanted_id,)).fetchone()
        return self._row_to_wanted(row) if row else None

    def wanteds(self, requester: str | None = None, status: str | None = None) -> list[Wanted]:
        sql, args = "SELECT * FROM wanted WHERE 1=1", []
        if requester is not None:
            sql += " AND requester=?"
            args.append(requester)
        if status is not None:
            sql += " AND status=?"
            args.append(status)
        sql += " ORDER BY created_at"
        return [self._row_to_wanted(r) for r in self._db.execute(sql, args)]

    @staticmethod
    def _row_to_wanted(row) -> Wanted:
        return Wanted(
            wanted_id=row[0], requester=row[1], category=row[2], description=row[3],
            location=GeoPoint(row[4], row[5]), remote_capable=bool(row[6]),
            budget_cents=row[7], currency=row[8], status=row[9],
            created_at=ts_from_str(row[10]))

    def set_wanted_status(self, wanted_id: str, status: str) -> None:
        current = self.wanted(wanted_id)
        if current is None:
            raise ValidationError(f"unknown wanted {wanted_id}")
        if status not in _STATUS_NEXT[current.status]:
            raise ValidationError(
                f"illegal status transition {current.status} -> {status}")
        self._db.execute("UPDATE wanted SET status=? WHERE wanted_id=?",
                         (status, wanted_id))
        self._db.commit()

    def quotes_for(self, wanted_id: str) -> list[Quote]:
        rows = self._db.execute(
            "SELECT * FROM quotes WHERE wanted_id=?", (wanted_id,))
        return [Quote(r[0], r[1], r[2], r[3], r[4], r[5], ts_from_str(r[6]))
                for r in rows]

    def ratings_for(self, ratee: str) -> list[Rating]:
        rows = self._db.execute("SELECT * FROM ratings WHERE ratee=?", (ratee,))
        return [Rating(r[0], r[1], r[2], r[3], ts_from_str(r[4])) for r in rows]

    def mean_rating(self, ratee: str) -> float | None:
        row = self._db.execute(
            "SELECT AVG(score) FROM ratings WHERE ratee=?", (ratee,)).fetchone()
        return row[0]

    def chat_history(self, thread: str) -> list[StoredChatMessage]:
        rows = self._db.execute(
            "SELECT * FROM chat_messages WHERE thread=? ORDER BY lamport, author, msg_id",
            (thread,))
        return [StoredChatMessage(r[0], r[1], r[2], r[3], r[4], ts_from_str(r[5]))
                for r in rows]
