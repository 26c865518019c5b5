"""Persistent peer registry.

The broker stores nothing beyond basic peer identity: PID, nickname,
email and the device-binding uuid. Marketplace data (wanteds, quotes,
ratings, chats) lives only on peers.
"""

from __future__ import annotations

import sqlite3
import time
from dataclasses import dataclass

from servicenet.errors import ServiceNetError, ERR_DUPLICATE

_SCHEMA = """
CREATE TABLE IF NOT EXISTS peers (
    pid        TEXT PRIMARY KEY,
    nickname   TEXT NOT NULL,
    email      TEXT NOT NULL UNIQUE,
    uuid       BLOB NOT NULL,
    created_at REAL NOT NULL
);
"""


@dataclass(frozen=True)
class RegistryRecord:
    pid: str
    nickname: str
    email: str
    uuid: bytes
    created_at: float


class DuplicateEmail(ServiceNetError):
    code = ERR_DUPLICATE


class Registry:
    """Sqlite-backed registry; all calls are synchronous and cheap.

    The broker accounts for database service time separately via DbPool,
    so callers must hold a pool slot around every logical query.
    """

    def __init__(self, path: str = ":memory:"):
        self._db = sqlite3.connect(path)
        self._db.execute(_SCHEMA)
        self._db.commit()

    def insert(self, record: RegistryRecord) -> None:
        try:
            self._db.execute(
                "INSERT INTO peers (pid, nickname, email, uuid, created_at) VALUES (?,?,?,?,?)",
                (record.pid, record.nickname, record.email, record.uuid, record.created_at),
            )
            self._db.commit()
        except sqlite3.IntegrityError as exc:
            raise DuplicateEmail(f"email already registered: {record.email}") from exc

    def by_email(self, email: str) -> RegistryRecord | None:
        row = self._db.execute(
            "SELECT pid, nickname, email, uuid, created_at FROM peers WHERE email = ?",
            (email,),
        ).fetchone()
        return RegistryRecord(*row) if row else None

    def by_pid(self, pid: str) -> RegistryRecord | None:
        row = self._db.execute(
            "SELECT pid, nickname, email, uuid, created_at FROM peers WHERE pid = ?",
            (pid,),
        ).fetchone()
        return RegistryRecord(*row) if row else None

    def all_pids(self) -> set[str]:
        return {r[0] for r in self._db.execute("SELECT pid FROM peers")}

    def count(self) -> int:
        return self._db.execute("SELECT COUNT(*) FROM peers").fetchone()[0]

    def table_names(self) -> set[str]:
        rows = self._db.execute("SELECT name FROM sqlite_master WHERE type='table'")
        return {r[0] for r in rows}

    def close(self) -> None:
        self._db.close()


def make_record(pid: str, nickname: str, email: str, uuid: bytes) -> RegistryRecord:
    return RegistryRecord(pid=pid, nickname=nickname, email=email, uuid=uuid,
                          created_at=time.time())
